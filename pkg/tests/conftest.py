import numpy as np
import pytest

from fvproj import mesh as meshmod


@pytest.fixture(scope="session")
def kite():
    return meshmod.kite_mesh()


@pytest.fixture(scope="session")
def mesh8():
    return meshmod.generate_structured(8, 8)


@pytest.fixture(scope="session")
def mesh16():
    return meshmod.generate_structured(16, 16)


def make_irregular_mesh(seed=7, amplitude=0.04):
    """Seeded interior-vertex jiggle of the 8x8 mesh, exported and re-imported
    through the text format so it counts as an externally loaded mesh."""
    base = meshmod.generate_structured(8, 8)
    on_boundary = np.zeros(base.n_vertices, dtype=bool)
    on_boundary[base.edge_vertices[~base.interior].ravel()] = True
    rng = np.random.default_rng(seed)
    verts = base.vertices.copy()
    scale = amplitude * base.h
    verts[~on_boundary] += rng.uniform(-scale, scale,
                                       (int((~on_boundary).sum()), 2))
    jiggled = meshmod.build_mesh(verts, base.triangles)
    loaded = meshmod.load_mesh(meshmod.dump_mesh(jiggled))
    report = meshmod.validate_admissibility(loaded)
    assert report.admissible
    return loaded


@pytest.fixture(scope="session")
def irregular():
    return make_irregular_mesh()


# Populated by tests/test_acceptance.py; echoed after the test summary so the
# per-criterion verdicts are visible even though pytest captures stdout.
ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def acceptance_results():
    return ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
