import numpy as np
import pytest

from sdglm.norms import GroupPartition, NormSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_partition(rng, p, max_groups=4):
    m = int(rng.integers(1, min(max_groups, p) + 1))
    cuts = np.sort(rng.choice(np.arange(1, p), size=m - 1, replace=False)) if m > 1 else []
    sizes = np.diff(np.concatenate([[0], cuts, [p]])).astype(int)
    perm = rng.permutation(p)
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return GroupPartition([perm[a:b] for a, b in zip(edges[:-1], edges[1:])], p)


def random_spec(rng, p):
    if rng.random() < 0.3:
        return NormSpec.l1(p)
    return NormSpec.group_lasso(random_partition(rng, p))


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
