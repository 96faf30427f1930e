import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amghess.mesh import (
    Mesh, MeshFormatError, build_structured_mesh, load_mesh, refine_uniform, save_mesh,
)


def test_single_quad():
    m = build_structured_mesh(2, 1)
    assert (m.n_vertices, m.n_elements) == (4, 1)
    assert len(m.boundary_vertices()) == 4


def test_counts_2d_four_cells():
    m = build_structured_mesh(2, 4)
    assert (m.n_vertices, m.n_elements) == (25, 16)


def test_two_cell_cube_has_one_interior_vertex():
    m = build_structured_mesh(3, 2)
    assert (m.n_vertices, m.n_elements) == (27, 8)
    b = m.boundary_vertices()
    assert len(b) == 26
    interior = np.setdiff1d(np.arange(27), b)
    np.testing.assert_allclose(m.vertices[interior], [[0.5, 0.5, 0.5]])


@pytest.mark.parametrize("dim,n", [(1, 2), (4, 2), (2, 0), (3, -1)])
def test_bad_arguments(dim, n):
    with pytest.raises(ValueError):
        build_structured_mesh(dim, n)


@settings(max_examples=25, deadline=None)
@given(dim=st.sampled_from([2, 3]), n=st.integers(1, 32))
def test_counts_follow_closed_form(dim, n):
    if dim == 3 and n > 12:
        n = n % 12 + 1
    m = build_structured_mesh(dim, n)
    assert m.n_vertices == (n + 1) ** dim
    assert m.n_elements == n**dim
    assert m.boundary_vertices().size == (n + 1) ** dim - max(n - 1, 0) ** dim


@pytest.mark.parametrize("dim", [2, 3])
def test_tags_match_coordinates(dim):
    m = build_structured_mesh(dim, 3)
    for axis in range(dim):
        for side, val in ((0, 0.0), (1, 1.0)):
            face = "xyz"[axis] + str(side)
            expect = np.flatnonzero(np.abs(m.vertices[:, axis] - val) < 1e-12)
            np.testing.assert_array_equal(m.boundary[face], expect)


def test_refine_single_quad():
    m = refine_uniform(build_structured_mesh(2, 1))
    assert (m.n_vertices, m.n_elements) == (9, 4)


def test_refine_hex_count():
    assert refine_uniform(build_structured_mesh(3, 2)).n_elements == 64


def _coord_set(m):
    return {tuple(np.round(v, 12)) for v in m.vertices}


@pytest.mark.parametrize("dim,n", [(2, 1), (2, 3), (3, 1), (3, 2)])
def test_refine_twice_equals_structured(dim, n):
    m = refine_uniform(refine_uniform(build_structured_mesh(dim, n)))
    ref = build_structured_mesh(dim, 4 * n)
    assert _coord_set(m) == _coord_set(ref)
    assert m.n_elements == ref.n_elements


@pytest.mark.parametrize("dim", [2, 3])
def test_refine_preserves_domain(dim):
    m = build_structured_mesh(dim, 2)
    for _ in range(2):
        m = refine_uniform(m)
        assert abs(m.element_volumes().sum() - 1.0) < 1e-12
        m.validate()


def test_refine_keeps_parent_vertices():
    m = build_structured_mesh(2, 3)
    r = refine_uniform(m)
    np.testing.assert_array_equal(r.vertices[: m.n_vertices], m.vertices)


def test_round_trip(tmp_path):
    m = build_structured_mesh(2, 4)
    path = tmp_path / "m.txt"
    save_mesh(m, path)
    assert load_mesh(path) == m
    m3 = refine_uniform(build_structured_mesh(3, 1))
    save_mesh(m3, path)
    assert load_mesh(path) == m3


def test_index_out_of_range_names_line(tmp_path):
    path = tmp_path / "m.txt"
    save_mesh(build_structured_mesh(2, 1), path)
    lines = path.read_text().splitlines()
    k = lines.index("elements 1") + 1
    lines[k] = "0 1 2 99"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshFormatError) as info:
        load_mesh(path)
    assert info.value.lineno == k + 1
    assert f"line {k + 1}" in str(info.value)


def test_truncated_file(tmp_path):
    path = tmp_path / "m.txt"
    save_mesh(build_structured_mesh(2, 2), path)
    text = path.read_text().splitlines()
    path.write_text("\n".join(text[: len(text) // 2]) + "\n")
    with pytest.raises(MeshFormatError):
        load_mesh(path)


def test_wrong_header(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("hello\n")
    with pytest.raises(MeshFormatError) as info:
        load_mesh(path)
    assert info.value.lineno == 1


def test_degenerate_element_rejected():
    m = build_structured_mesh(2, 1)
    el = m.elements.copy()
    el[0, 3] = el[0, 0]
    with pytest.raises(ValueError):
        Mesh(2, m.vertices, el, dict(m.boundary)).validate()


def test_mesh_is_immutable():
    m = build_structured_mesh(2, 2)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0
