import numpy as np
import pytest

from qperc.lattice import LatticeSpec, build_connectivity, sample_realization

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def random_realizations():
    """Deterministic mix of small lattices and bond counts."""

    def make(count, shapes=((2, 2), (3, 3), (4, 4), (2, 5), (5, 2)), seed=11):
        rng = np.random.default_rng(seed)
        out = []
        for r in range(count):
            nx, ny = shapes[r % len(shapes)]
            spec = LatticeSpec(nx, ny)
            B = int(rng.integers(0, spec.b_max + 1))
            out.append(sample_realization(spec, B, seed, r))
        return out

    return make


def laplacian(real):
    return build_connectivity(real)
