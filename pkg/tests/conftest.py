import numpy as np
import pytest

from lnrpcc.datasets import LabelConfig, gen_gaussians, load_builtin, zscore_normalize


@pytest.fixture(scope="session")
def iris():
    return zscore_normalize(load_builtin("iris"))


@pytest.fixture(scope="session")
def wine_raw():
    return load_builtin("wine")


@pytest.fixture
def blobs():
    """Two well separated 2-D blobs of 20 points, 3 labels each."""
    d = gen_gaussians(20, 2, 2, 10.0, np.random.default_rng(3))
    idx = np.r_[0:3, 20:23]
    return d, LabelConfig.from_indices(d, idx)


def random_connected_graph(rng, n, extra):
    """Random spanning tree plus ``extra`` random edges, as (src, dst) arrays."""
    perm = rng.permutation(n)
    src = [perm[i] for i in range(1, n)]
    dst = [perm[rng.integers(0, i)] for i in range(1, n)]
    for _ in range(extra):
        a, b = rng.integers(0, n, 2)
        src.append(a)
        dst.append(b)
    return np.asarray(src), np.asarray(dst)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_instance_arrays(rng, n_min=4, n_max=15, c_max=4):
    """Random connected graph with every class labeled at least once."""
    from lnrpcc.datasets import NO_LABEL, LabelConfig
    from lnrpcc.graph import Graph

    n = int(rng.integers(n_min, n_max + 1))
    c = int(rng.integers(2, min(c_max, n - 1) + 1))
    src, dst = random_connected_graph(rng, n, int(rng.integers(0, 2 * n)))
    g = Graph.from_edges(n, src, dst)
    l = int(rng.integers(c, n))  # noqa: E741
    idx = rng.choice(n, l, replace=False)
    given = np.full(n, NO_LABEL)
    given[idx] = np.r_[np.arange(c), rng.integers(0, c, l - c)]
    return g, LabelConfig(given != NO_LABEL, given, np.zeros(n, bool)), c
