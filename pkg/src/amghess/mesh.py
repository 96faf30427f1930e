"""Structured quadrilateral / hexahedral meshes of the unit box.

Elements store their corners in lexicographic (tensor) order: local corner
``k`` sits at offset ``((k >> 0) & 1, (k >> 1) & 1, (k >> 2) & 1)`` inside the
cell.  All elements are axis-aligned boxes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FACES = ("x0", "x1", "y0", "y1", "z0", "z1")
COORD_TOL = 1e-12


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


def _corner_offsets(dim):
    return np.array([[(k >> d) & 1 for d in range(dim)] for k in range(2**dim)])


@dataclass(frozen=True, eq=False)
class Mesh:
    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    boundary: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        elems = np.ascontiguousarray(self.elements, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != self.dim:
            raise ValueError("vertices must have shape (n, dim)")
        if elems.ndim != 2 or elems.shape[1] != 2**self.dim:
            raise ValueError(f"elements must have {2**self.dim} corners")
        verts.flags.writeable = False
        elems.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "elements", elems)
        tags = {}
        for face in FACES[: 2 * self.dim]:
            idx = np.asarray(self.boundary.get(face, ()), dtype=np.int64)
            idx = np.unique(idx)
            idx.flags.writeable = False
            tags[face] = idx
        object.__setattr__(self, "boundary", tags)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def boundary_vertices(self, faces=None):
        """Sorted indices of vertices on the given faces (all faces by default)."""
        faces = self.boundary.keys() if faces is None else faces
        parts = [self.boundary[f] for f in faces]
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def cell_extents(self):
        """Per-element box lower corner and edge lengths, shape (ne, dim) each."""
        lo = self.vertices[self.elements[:, 0]]
        hi = self.vertices[self.elements[:, -1]]
        return lo, hi - lo

    def element_volumes(self):
        return np.prod(self.cell_extents()[1], axis=1)

    def validate(self):
        """Check connectivity and geometry; raises ValueError on the first defect."""
        nv = self.n_vertices
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= nv):
            raise ValueError("element references a vertex index out of range")
        for e, corners in enumerate(self.elements):
            if len(set(corners.tolist())) != len(corners):
                raise ValueError(f"element {e} has repeated vertices")
        lo, h = self.cell_extents()
        if np.any(h <= 0):
            e = int(np.nonzero(np.any(h <= 0, axis=1))[0][0])
            raise ValueError(f"element {e} has non-positive Jacobian")
        expected = lo[:, None, :] + _corner_offsets(self.dim)[None] * h[:, None, :]
        actual = self.vertices[self.elements]
        bad = np.abs(actual - expected).max(axis=(1, 2)) > COORD_TOL * (1 + np.abs(lo).max())
        if np.any(bad):
            e = int(np.nonzero(bad)[0][0])
            raise ValueError(f"element {e} is not an axis-aligned box in lexicographic order")
        for face, idx in self.boundary.items():
            if idx.size and (idx.min() < 0 or idx.max() >= nv):
                raise ValueError(f"boundary tag {face} references a missing vertex")
        return self

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.elements, other.elements)
            and self.boundary.keys() == other.boundary.keys()
            and all(np.array_equal(self.boundary[f], other.boundary[f]) for f in self.boundary)
        )

    __hash__ = None


def tag_boundary(vertices, dim, tol=COORD_TOL):
    """Tag vertices lying on the faces of the bounding box."""
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    tags = {}
    for d in range(dim):
        axis = "xyz"[d]
        tags[axis + "0"] = np.nonzero(np.abs(vertices[:, d] - lo[d]) <= tol)[0]
        tags[axis + "1"] = np.nonzero(np.abs(vertices[:, d] - hi[d]) <= tol)[0]
    return tags


def build_structured_mesh(dim, cells_per_side):
    """Tensor-product grid of ``cells_per_side**dim`` cells on [0, 1]^dim.

    Vertices are numbered with x varying fastest.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    n = int(cells_per_side)
    if n != cells_per_side or n < 1:
        raise ValueError(f"cells_per_side must be a positive integer, got {cells_per_side}")
    ticks = np.linspace(0.0, 1.0, n + 1)
    grids = np.meshgrid(*([ticks] * dim), indexing="ij")
    # x fastest: transpose so that the last axis of the flat index is x
    vertices = np.stack([g.transpose(*range(dim)[::-1]).ravel() for g in grids], axis=1)

    strides = [(n + 1) ** d for d in range(dim)]
    cell = np.stack(
        np.meshgrid(*([np.arange(n)] * dim), indexing="ij"), axis=-1
    ).reshape(-1, dim)[:, ::-1]  # columns: ix, iy, (iz), x fastest
    base = cell @ np.array(strides)
    offsets = _corner_offsets(dim) @ np.array(strides)
    elements = base[:, None] + offsets[None, :]
    return Mesh(dim, vertices, elements, tag_boundary(vertices, dim))


def _coord_keys(points, scale):
    return [tuple(row) for row in np.round(points / scale * 2**20).astype(np.int64)]


def refine_uniform(mesh):
    """Split every quad into 4 (every hex into 8).

    Parent vertices keep their indices; new vertices are appended.
    """
    dim = mesh.dim
    lo, h = mesh.cell_extents()
    scale = float(h.min()) / 2
    index = dict(zip(_coord_keys(mesh.vertices, scale), range(mesh.n_vertices)))
    new_vertices = [mesh.vertices]

    # 3^dim lattice of half-cell points per element
    lattice = np.array(list(itertools.product(range(3), repeat=dim)))[:, ::-1]
    pts = lo[:, None, :] + 0.5 * lattice[None, :, :] * h[:, None, :]
    flat = pts.reshape(-1, dim)
    ids = np.empty(flat.shape[0], dtype=np.int64)
    nv = mesh.n_vertices
    fresh = []
    for i, key in enumerate(_coord_keys(flat, scale)):
        v = index.get(key)
        if v is None:
            v = index[key] = nv
            nv += 1
            fresh.append(flat[i])
        ids[i] = v
    if fresh:
        new_vertices.append(np.array(fresh))
    vertices = np.concatenate(new_vertices)
    ids = ids.reshape(mesh.n_elements, *([3] * dim))  # axes: (e, z, y, x) or (e, y, x)

    children = []
    for sub in itertools.product(range(2), repeat=dim):
        corner_ids = []
        for k in range(2**dim):
            off = [(k >> d) & 1 for d in range(dim)]
            pos = tuple(sub[d] + off[d] for d in range(dim))[::-1]
            corner_ids.append(ids[(slice(None),) + pos])
        children.append(np.stack(corner_ids, axis=1))
    elements = np.stack(children, axis=1).reshape(-1, 2**dim)
    return Mesh(dim, vertices, elements, tag_boundary(vertices, dim))


def save_mesh(mesh, path):
    """Write ``mesh`` in the plain-text format described in the README."""
    lines = ["# amghess mesh v1", f"dim {mesh.dim}", f"vertices {mesh.n_vertices}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines.append(f"elements {mesh.n_elements}")
    lines += [" ".join(str(int(i)) for i in e) for e in mesh.elements]
    lines.append(f"boundary {len(mesh.boundary)}")
    for face, idx in mesh.boundary.items():
        lines.append(" ".join([face, str(idx.size)] + [str(int(i)) for i in idx]))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path):
    """Parse a mesh file written by :func:`save_mesh`.

    Raises
    ------
    MeshFormatError
        On any syntax or consistency problem; the message names the line.
    """
    raw = Path(path).read_text().splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(raw)]
    rows = [(n, toks) for n, toks in rows if toks and not toks[0].startswith("#")]
    it = iter(rows)
    last = [rows[-1][0] if rows else 0]

    def take(what):
        try:
            n, toks = next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file while reading {what}", last[0] + 1) from None
        return n, toks

    def header(keyword):
        n, toks = take(f"'{keyword}' header")
        if len(toks) != 2 or toks[0] != keyword:
            raise MeshFormatError(f"expected '{keyword} <count>', got {' '.join(toks)!r}", n)
        try:
            value = int(toks[1])
        except ValueError:
            raise MeshFormatError(f"bad count {toks[1]!r}", n) from None
        if value < 0:
            raise MeshFormatError(f"negative count {value}", n)
        return n, value

    _, dim = header("dim")
    if dim not in (2, 3):
        raise MeshFormatError(f"dim must be 2 or 3, got {dim}", rows[0][0])
    _, nv = header("vertices")
    vertices = np.empty((nv, dim))
    for i in range(nv):
        n, toks = take("vertex")
        if len(toks) != dim:
            raise MeshFormatError(f"vertex needs {dim} coordinates, got {len(toks)}", n)
        try:
            vertices[i] = [float(t) for t in toks]
        except ValueError:
            raise MeshFormatError(f"bad coordinate in {' '.join(toks)!r}", n) from None
    _, ne = header("elements")
    nc = 2**dim
    elements = np.empty((ne, nc), dtype=np.int64)
    for e in range(ne):
        n, toks = take("element")
        if len(toks) != nc:
            raise MeshFormatError(f"element needs {nc} vertex indices, got {len(toks)}", n)
        try:
            ids = [int(t) for t in toks]
        except ValueError:
            raise MeshFormatError(f"bad vertex index in {' '.join(toks)!r}", n) from None
        if min(ids) < 0 or max(ids) >= nv:
            raise MeshFormatError(f"vertex index out of range [0, {nv})", n)
        elements[e] = ids
    _, nb = header("boundary")
    tags = {}
    for _ in range(nb):
        n, toks = take("boundary tag")
        if len(toks) < 2 or toks[0] not in FACES[: 2 * dim]:
            raise MeshFormatError(f"bad boundary tag line {' '.join(toks)!r}", n)
        try:
            count = int(toks[1])
            ids = [int(t) for t in toks[2:]]
        except ValueError:
            raise MeshFormatError("bad integer in boundary tag", n) from None
        if count != len(ids):
            raise MeshFormatError(f"tag {toks[0]} declares {count} vertices, lists {len(ids)}", n)
        if ids and (min(ids) < 0 or max(ids) >= nv):
            raise MeshFormatError(f"vertex index out of range [0, {nv})", n)
        tags[toks[0]] = ids
    n, toks = take("'end'")
    if toks != ["end"]:
        raise MeshFormatError(f"expected 'end', got {' '.join(toks)!r}", n)
    mesh = Mesh(dim, vertices, elements, tags)
    try:
        mesh.validate()
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from None
    return mesh
