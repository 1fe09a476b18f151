import numpy as np
import pytest

from meshparam.errors import MissingMarkerError, ParseError, UnsupportedDimensionError
from meshparam.geometry import naca_generate, signed_area
from meshparam.mesh import (
    AIRFOIL,
    FARFIELD,
    CfdMesh,
    mesh_quality,
    o_mesh,
    read_su2_mesh,
    sample_template,
    write_su2_mesh,
)

SQUARE_SU2 = """\
% a unit square split into two triangles
NDIME= 2
NELEM= 2
5 0 1 2 0
5 0 2 3 1   % trailing comment
NPOIN= 4
0.0 0.0 0
1.0 0.0 1
1.0 1.0 2
0.0 1.0 3
NMARK= 1
MARKER_TAG= airfoil
MARKER_ELEMS= 4
3 0 1
3 1 2
3 2 3
3 3 0
"""


def test_o_mesh_counts_and_orientation():
    foil = naca_generate("0012", 64)
    mesh = o_mesh(foil, n_radial=8)
    assert mesh.n_vertices == 64 * 9
    assert len(mesh.elements) == 64 * 8
    assert len(mesh.markers[AIRFOIL]) == 64 and len(mesh.markers[FARFIELD]) == 64
    rep = mesh_quality(mesh)
    assert rep.inverted_count == 0 and rep.min_signed_area > 0
    tri = o_mesh(foil, n_radial=8, kind="tri")
    assert len(tri.elements) == 2 * 64 * 8
    assert mesh_quality(tri).inverted_count == 0
    with pytest.raises(ValueError):
        o_mesh(foil, kind="hex")


def test_outer_ring_is_circle():
    mesh = o_mesh(naca_generate("2412", 50), n_radial=5, radius=4.0)
    far = mesh.vertices[mesh.marker_vertices(FARFIELD)]
    r = np.linalg.norm(far - [0.5, 0.0], axis=1)
    assert np.allclose(r, 4.0)


def test_surface_loop_ccw_starting_at_trailing_edge():
    foil = naca_generate("2412", 80)
    mesh = o_mesh(foil, n_radial=4)
    loop = mesh.vertices[mesh.surface_loop()]
    assert signed_area(loop) > 0
    assert np.argmax(loop[:, 0]) == 0
    assert np.allclose(loop, foil.points)


def test_su2_round_trip(tmp_path):
    mesh = o_mesh(naca_generate("4412", 40), n_radial=4, kind="tri")
    path = tmp_path / "m.su2"
    write_su2_mesh(mesh, path)
    back = read_su2_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert back.elements == mesh.elements
    assert back.markers == mesh.markers
    assert back.topology_id == mesh.topology_id
    assert "np.float64" not in path.read_text()


def test_su2_comments_and_blank_lines(tmp_path):
    path = tmp_path / "sq.su2"
    path.write_text(SQUARE_SU2.replace("NPOIN", "\n\nNPOIN"))
    mesh = read_su2_mesh(path)
    assert mesh.elements == ((0, 1, 2), (0, 2, 3))
    assert mesh.vertices.shape == (4, 2)
    assert mesh.marker_vertices("airfoil").tolist() == [0, 1, 2, 3]


def test_su2_three_dimensional_rejected(tmp_path):
    path = tmp_path / "m.su2"
    path.write_text(SQUARE_SU2.replace("NDIME= 2", "NDIME= 3"))
    with pytest.raises(UnsupportedDimensionError) as exc:
        read_su2_mesh(path)
    assert exc.value.line == 2


@pytest.mark.parametrize(
    "bad, line",
    [
        ("5 0 2 3 1   % trailing comment", 5),
        ("NPOIN= 4", 6),
        ("3 2 3\n", 16),
    ],
)
def test_su2_parse_errors_carry_line_numbers(tmp_path, bad, line):
    replacement = {
        "5 0 2 3 1   % trailing comment": "12 0 2 3 1",
        "NPOIN= 4": "NPOIN= 5",
        "3 2 3\n": "3 2 x\n",
    }[bad]
    path = tmp_path / "m.su2"
    path.write_text(SQUARE_SU2.replace(bad, replacement))
    with pytest.raises(ParseError) as exc:
        read_su2_mesh(path)
    if bad != "NPOIN= 4":
        assert exc.value.line == line


def test_missing_marker(tmp_path):
    path = tmp_path / "m.su2"
    path.write_text(SQUARE_SU2)
    mesh = read_su2_mesh(path)
    with pytest.raises(MissingMarkerError):
        mesh.require_marker(FARFIELD)
    with pytest.raises(MissingMarkerError):
        sample_template(mesh)


def test_deformation_preserves_topology():
    mesh = o_mesh(naca_generate("0012", 40), n_radial=4)
    moved = mesh.with_vertices(mesh.vertices + 0.01)
    assert moved.topology_id == mesh.topology_id
    assert not moved.vertices.flags.writeable
    with pytest.raises(ValueError):
        mesh.with_vertices(mesh.vertices[:-1])


def test_sample_template_band_and_determinism():
    mesh = o_mesh(naca_generate("0012", 64), n_radial=10)
    s1 = sample_template(mesh, n_volume=200, fixed_band=0.5, seed=3)
    s2 = sample_template(mesh, n_volume=200, fixed_band=0.5, seed=3)
    assert np.array_equal(s1.volume, s2.volume)
    far = mesh.vertices[mesh.marker_vertices(FARFIELD)]
    d = np.min(np.linalg.norm(s1.volume[:, None] - far[None], axis=2), axis=1)
    assert np.all(d[s1.fixed_index] <= 0.5)
    # every candidate inside the band is fixed
    assert np.count_nonzero(d <= 0.5) == len(s1.fixed_index)
    assert len(s1.volume) == 200
    assert len(s1.surface) == 64
    airfoil_ids = set(np.array(mesh.markers[AIRFOIL]).ravel().tolist())
    assert not airfoil_ids & set(s1.volume_ids.tolist())
    resampled = sample_template(mesh, n_surface=100, fixed_band=0.5)
    assert len(resampled.surface) == 100


def test_quality_unit_square():
    mesh = CfdMesh(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float), ((0, 1, 2, 3),))
    rep = mesh_quality(mesh)
    assert rep.min_signed_area == pytest.approx(0.5)
    assert rep.inverted_count == 0
    assert rep.max_skewness == pytest.approx(0.0, abs=1e-12)
    assert rep.min_orthogonality == pytest.approx(1.0)
    assert rep.aspect_ratio_range == pytest.approx((1.0, 1.0))


def test_quality_equilateral_and_inverted():
    h = np.sqrt(3) / 2
    eq = CfdMesh(np.array([[0, 0], [1, 0], [0.5, h]]), ((0, 1, 2),))
    rep = mesh_quality(eq)
    assert rep.max_skewness == pytest.approx(0.0, abs=1e-9)
    assert rep.min_signed_area == pytest.approx(0.5 * h)
    flipped = CfdMesh(eq.vertices, ((0, 2, 1),))
    rep = mesh_quality(flipped)
    assert rep.inverted_count == 1 and rep.min_signed_area < 0


def test_quality_stretched_rectangle():
    mesh = CfdMesh(np.array([[0, 0], [4, 0], [4, 1], [0, 1]], float), ((0, 1, 2, 3),))
    rep = mesh_quality(mesh)
    assert rep.aspect_ratio_range == pytest.approx((4.0, 4.0))
    assert rep.max_skewness == pytest.approx(0.0, abs=1e-12)
