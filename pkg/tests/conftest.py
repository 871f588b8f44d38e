import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cavswarm.sim import (ScenarioConfig, compute_moes, run_hv_reference,
                          run_scenario)


@pytest.fixture(scope="session")
def paper_runs():
    """One paired run of the shipped scenario, shared across the suite."""
    import time
    cfg = ScenarioConfig()
    cfg_base = ScenarioConfig(controller="baseline-cacc")
    t0 = time.perf_counter()
    swarm = run_scenario(cfg)
    baseline = run_scenario(cfg_base)
    paired_seconds = time.perf_counter() - t0
    reference = run_hv_reference(cfg)
    return {
        "cfg": cfg,
        "cfg_base": cfg_base,
        "swarm": swarm,
        "baseline": baseline,
        "reference": reference,
        "paired_seconds": paired_seconds,
        "swarm_moes": compute_moes(swarm, reference, cfg),
        "baseline_moes": compute_moes(baseline, reference, cfg_base),
    }
