import numpy as np
import pytest

from phimdp.envs import TinyExampleEnv
from phimdp.history import History


def tiny_history(n: int, seed: int = 0) -> History:
    """n observations of the fair-coin example, rewards 2*o_t + o_{t+1}."""
    env = TinyExampleEnv(seed)
    obs = [env.reset()]
    rew = []
    for _ in range(n - 1):
        o, r = env.step(0)
        obs.append(o)
        rew.append(r)
    return History.from_arrays(env.observations, env.actions, env.rewards, obs, [0] * (n - 1), rew)


@pytest.fixture
def tiny():
    return tiny_history


@pytest.fixture(scope="session", autouse=True)
def _compiled_kernels():
    # trigger (or load) the compiled kernels once, outside any timed region
    from phimdp.agent import AgentConfig, run_seeded
    run_seeded("bandit1", 5, AgentConfig(improve_iters_per_step=2))
    run_seeded("tiny", 5, AgentConfig(improve_iters_per_step=2, criterion="cost"))
    yield


def random_history(rng, n, nO=2, nA=2, nR=2):
    from phimdp.history import Alphabet
    return History.from_arrays(Alphabet.range(nO), Alphabet.range(nA), Alphabet.numeric(range(nR)),
                               rng.integers(nO, size=n), rng.integers(nA, size=n - 1),
                               rng.integers(nR, size=n - 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.skipped:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _ACCEPTANCE.append((mark.args[0], rep.passed, getattr(item, "detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
