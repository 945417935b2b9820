import pytest

from smartfarm.agents import PpoConfig
from smartfarm.config import ExperimentConfig

CRITERIA = range(1, 11)
_verdicts: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def tiny_cfg():
    """Ten-minute episodes on the default farm, with small PPO batches."""
    return ExperimentConfig().replace(
        farm={"duration_s": 600},
        agents={"pretrain_episodes": 2, "ppo": PpoConfig(batch_size=16, minibatch_size=8)},
        experiment={"episodes": 2, "runs": 1},
    )


@pytest.fixture
def verdict():
    """Record an acceptance outcome, print its line, then assert it."""
    def record(n: int, ok: bool, detail: str) -> None:
        _verdicts[n] = (bool(ok), detail)
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    ran = terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", [])
    if not any("test_acceptance" in r.nodeid for r in ran):
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        ok, detail = _verdicts.get(n, (False, "not run or errored"))
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
