import numpy as np
import pytest

from biothdg.mesh import Mesh, build_structured_square, tag_boundary
from biothdg.mms import unit_square_mms_tags


def reference_cell(disp="D", flow="P"):
    """The reference triangle as a one-cell mesh with uniform boundary tags."""
    mesh = Mesh.from_cells(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    return tag_boundary(mesh, {disp: lambda x, y: True}, {flow: lambda x, y: True})


def mms_square(n, diagonal="right"):
    return unit_square_mms_tags(build_structured_square(n, diagonal))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
