import numpy as np
import pytest
from hypothesis import strategies as st

from etposim.topology import build_tree, gen_balanced, BalancedSpec

# 13-node tree whose non-sink subtree sizes are {1: 7, 3: 3, 5: 1, 7: 1}
WORKED_PARENTS = [None, 0, 0, 1, 1, 3, 3, 4, 4, 2, 2, 9, 9]
WORKED_TPO = 8.0859375
WORKED_EXACT = 3.9140625

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def worked():
    return build_tree(WORKED_PARENTS)


@pytest.fixture
def chain3():
    # sink 0 <- A 1 <- B 2
    return build_tree([None, 0, 1])


@pytest.fixture
def bal22():
    return gen_balanced(BalancedSpec(2, 2))


def random_parents(rng: np.random.Generator, n: int) -> list:
    """Random tree with a random sink position and shuffled labels."""
    attach = [None] + [int(rng.integers(0, i)) for i in range(1, n)]
    perm = rng.permutation(n)
    parents = [None] * n
    for v in range(n):
        p = attach[v]
        parents[perm[v]] = None if p is None else int(perm[p])
    return parents


@st.composite
def trees(draw, max_nodes=16):
    n = draw(st.integers(1, max_nodes))
    attach = [None] + [draw(st.integers(0, i - 1)) for i in range(1, n)]
    perm = draw(st.permutations(range(n)))
    parents = [None] * n
    for v in range(n):
        p = attach[v]
        parents[perm[v]] = None if p is None else perm[p]
    return build_tree(parents)
