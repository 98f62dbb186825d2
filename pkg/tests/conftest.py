import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mempate.data import Dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(sizes=(40, 40), p=1, seed=0, effect=1.0, compliance=False, shifts=None):
    """Linear data ``y = effect*a + x.sum + noise`` for sources P, S1, S2, ..."""
    rng = np.random.default_rng(seed)
    labels = ["P"] + [f"S{h}" for h in range(1, len(sizes))]
    ys, as_, xs, srcs, cs = [], [], [], [], []
    for k, (label, n) in enumerate(zip(labels, sizes)):
        x = rng.standard_normal((n, p))
        a = np.zeros(n, dtype=int)
        a[: n // 2] = 1
        rng.shuffle(a)
        eff = effect + (0.0 if shifts is None else shifts[k])
        ys.append(eff * a + x.sum(axis=1) + rng.standard_normal(n))
        as_.append(a)
        xs.append(x)
        srcs += [label] * n
        cs.append(rng.integers(0, 2, n))
    return Dataset(y=np.concatenate(ys), a=np.concatenate(as_), source=np.array(srcs, dtype=object),
                   X=np.vstack(xs), sources=tuple(labels), covariate_names=tuple(f"x{j + 1}" for j in range(p)),
                   c=np.concatenate(cs) if compliance else None)


@pytest.fixture
def linear_data():
    return make_dataset()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
