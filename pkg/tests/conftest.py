import os

import numpy as np
import pytest

from temnn.mesh import parse_mesh
from temnn.synthetic import ShapeSpec, _surface_from_cells, gen_shape

CUBE_OFF = """OFF
8 12 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
3 0 2 1
3 0 3 2
3 4 5 6
3 4 6 7
3 0 1 5
3 0 5 4
3 1 2 6
3 1 6 5
3 2 3 7
3 2 7 6
3 3 0 4
3 3 4 7
"""


@pytest.fixture
def cube():
    return parse_mesh(CUBE_OFF)


def random_orthogonal(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    return q * np.sign(np.diag(r))


@pytest.fixture(scope="session")
def plate_shape():
    return gen_shape(ShapeSpec("plate", (24.0, 17.0), (2.0,), 8))


@pytest.fixture(scope="session")
def box_shape():
    return gen_shape(ShapeSpec("hollow_box", (20.0, 17.0, 11.0), (1.5, 2.0, 1.25), 6))


@pytest.fixture(scope="session")
def ribbed_shape():
    return gen_shape(ShapeSpec("ribbed_plate", (26.0, 18.0), (1.5, 1.75), 8, rib_height=7.0))


@pytest.fixture(scope="session")
def fixture_shapes(plate_shape, box_shape, ribbed_shape):
    return [plate_shape, box_shape, ribbed_shape]


def small_plate_mesh():
    """20-node slab: a 5 x 2 vertex grid on each face, unevenly spaced."""
    xs = np.array([0.0, 1.0, 2.3, 3.9, 6.0])
    ys = np.array([0.0, 2.5])
    zs = np.array([0.0, 1.1])
    occ = np.ones((4, 1, 1), dtype=bool)
    mesh, _ = _surface_from_cells((xs, ys, zs), occ)
    return mesh


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 shapes x 3 conditions at low resolution (3 train / 1 val / 5 test)."""
    from temnn.dataset import Dataset
    from temnn.synthetic import gen_dataset

    root = tmp_path_factory.mktemp("tiny")
    gen_dataset(root, n_shapes=3, n_conditions=3, seed=0, resolution=5)
    return Dataset(root)


@pytest.fixture(scope="session")
def one_mesh_dataset(tiny_dataset, tmp_path_factory):
    """The first training bundle alone in every split."""
    import json
    import shutil

    from temnn.dataset import Dataset

    root = tmp_path_factory.mktemp("one")
    name = tiny_dataset.split("train")[0]
    shutil.copytree(os.path.join(tiny_dataset.root, "bundles", name),
                    root / "bundles" / name)
    manifest = dict(tiny_dataset.manifest)
    manifest["splits"] = {"train": [name], "val": [name], "test": [name]}
    (root / "manifest.json").write_text(json.dumps(manifest))
    return Dataset(root)


ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
