"""Offline sampling meshes, online triangulations and element patches.

The offline mesh is a uniform ``q x q`` grid of squares; each square carries
one sampling point (its barycenter).  Patches grow by repeatedly adding Moore
neighbors until they hold enough sampling points for the least-squares fit.
The online mesh is the usual structured triangulation obtained by cutting every
square of an ``n x n`` grid along its positive-slope diagonal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SNAP_TOL = 1e-12

# threshold number of sampling points per patch, keyed by (m, d)
_N_LOWEST = {(1, 2): 5, (2, 2): 7, (3, 2): 13, (3, 3): 27}


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise MeshError(f"degenerate domain {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def coerce(cls, domain) -> "Rectangle":
        if isinstance(domain, Rectangle):
            return domain
        x0, y0, x1, y1 = (float(v) for v in domain)
        return cls(x0, y0, x1, y1)


UNIT_SQUARE = Rectangle(0.0, 0.0, 1.0, 1.0)


def _snap(s: np.ndarray) -> np.ndarray:
    # grid coordinates within roundoff of a grid line are put on it
    r = np.round(s)
    return np.where(np.abs(s - r) < 1e-10, r, s)


def _grid_locate(domain: Rectangle, nx: int, ny: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Column/row of the grid cell holding each point.

    Points on an interior grid line go to the cell on the lower-index side.
    """
    x = np.asarray(x, dtype=float)
    px, py = x[..., 0], x[..., 1]
    tol = SNAP_TOL * max(domain.width, domain.height, 1.0)
    outside = (px < domain.x0 - tol) | (px > domain.x1 + tol) | (py < domain.y0 - tol) | (py > domain.y1 + tol)
    if np.any(outside):
        bad = np.asarray(x)[outside].reshape(-1, 2)[0]
        raise MeshError(f"point {tuple(bad)} lies outside the domain {domain.as_list()}")
    s = _snap((px - domain.x0) / domain.width * nx)
    t = _snap((py - domain.y0) / domain.height * ny)
    col = np.ceil(s).astype(np.int64) - 1
    row = np.ceil(t).astype(np.int64) - 1
    return np.clip(col, 0, nx - 1), np.clip(row, 0, ny - 1)


@dataclass(frozen=True, eq=False)
class OfflineMesh:
    """Uniform ``q x q`` square sampling mesh.

    Element ``k`` sits in column ``k % q`` and row ``k // q``.
    """

    domain: Rectangle
    q: int
    corners: np.ndarray  # (q*q, 2, 2): lower-left and upper-right corner
    barycenters: np.ndarray  # (q*q, 2)
    diameters: np.ndarray  # (q*q,)
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def n_elements(self) -> int:
        return self.q * self.q

    @property
    def hx(self) -> float:
        return self.domain.width / self.q

    @property
    def hy(self) -> float:
        return self.domain.height / self.q

    @property
    def element_area(self) -> float:
        return self.hx * self.hy

    @property
    def H(self) -> float:
        return float(self.diameters.max())

    def col_row(self, k):
        return np.asarray(k) % self.q, np.asarray(k) // self.q

    def element_id(self, col, row):
        return np.asarray(row) * self.q + np.asarray(col)

    def chunkiness(self) -> float:
        """Diameter over inscribed radius of the cells."""
        return float(math.hypot(self.hx, self.hy) / (0.5 * min(self.hx, self.hy)))

    def to_dict(self) -> dict:
        return {
            "kind": "offline",
            "domain": self.domain.as_list(),
            "q": self.q,
            "corners": self.corners.reshape(-1, 4).tolist(),
            "barycenters": self.barycenters.tolist(),
        }


def build_offline_mesh(domain, q: int) -> OfflineMesh:
    domain = Rectangle.coerce(domain)
    if int(q) != q or q < 1:
        raise MeshError(f"q must be a positive integer, got {q}")
    q = int(q)
    xs = np.linspace(domain.x0, domain.x1, q + 1)
    ys = np.linspace(domain.y0, domain.y1, q + 1)
    col, row = np.meshgrid(np.arange(q), np.arange(q))
    col, row = col.ravel(), row.ravel()
    lo = np.stack([xs[col], ys[row]], axis=-1)
    hi = np.stack([xs[col + 1], ys[row + 1]], axis=-1)
    corners = np.stack([lo, hi], axis=1)
    bary = 0.5 * (lo + hi)
    diam = np.full(q * q, math.hypot(domain.width / q, domain.height / q))
    nbrs = []
    for c, r in zip(col, row):
        ids = [
            (r + dr) * q + (c + dc)
            for dr in (-1, 0, 1)
            for dc in (-1, 0, 1)
            if (dr or dc) and 0 <= c + dc < q and 0 <= r + dr < q
        ]
        nbrs.append(tuple(int(i) for i in ids))
    return OfflineMesh(domain, q, corners, bary, diam, tuple(nbrs))


def locate(mesh: OfflineMesh, x) -> np.ndarray | int:
    """Element id(s) of the cell containing ``x`` (lower id on shared edges)."""
    x = np.asarray(x, dtype=float)
    col, row = _grid_locate(mesh.domain, mesh.q, mesh.q, x)
    ids = row * mesh.q + col
    if x.ndim == 1:
        return int(ids)
    return ids


def sampling_threshold(m: int, d: int = 2) -> int:
    """Least number of patch samples used for a degree-m fit in dimension d."""
    try:
        return _N_LOWEST[(int(m), int(d))]
    except KeyError:
        raise MeshError(f"no sampling threshold for m={m}, d={d}") from None


@dataclass(frozen=True, eq=False)
class OnlineMesh:
    """Structured triangulation of an ``n x n`` grid.

    Square ``(i, j)`` yields triangles ``2*(j*n+i)`` = (v00, v10, v11) and
    ``2*(j*n+i)+1`` = (v00, v11, v01), both counter-clockwise.
    """

    domain: Rectangle
    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray  # boolean per vertex
    h: float

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Triangle ids and reference coordinates of the points ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        i, j = _grid_locate(self.domain, self.n, self.n, x)
        s = (x[:, 0] - self.domain.x0) / self.domain.width * self.n - i
        t = (x[:, 1] - self.domain.y0) / self.domain.height * self.n - j
        upper = t > s
        tri = 2 * (j * self.n + i) + upper
        ref = np.where(upper[:, None], np.stack([s, t - s], -1), np.stack([s - t, t], -1))
        return tri, ref

    def to_dict(self) -> dict:
        return {"kind": "online", "domain": self.domain.as_list(), "n": self.n, "h": self.h}


def build_online_mesh(domain, n: int) -> OnlineMesh:
    domain = Rectangle.coerce(domain)
    if int(n) != n or n < 1:
        raise MeshError(f"n must be a positive integer, got {n}")
    n = int(n)
    xs = np.linspace(domain.x0, domain.x1, n + 1)
    ys = np.linspace(domain.y0, domain.y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.stack([v00, v10, v11], -1)
    tris[1::2] = np.stack([v00, v11, v01], -1)
    vi, vj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    boundary = ((vi == 0) | (vi == n) | (vj == 0) | (vj == n)).ravel()
    h = math.hypot(domain.width / n, domain.height / n)
    return OnlineMesh(domain, n, verts, tris, boundary, h)


@dataclass(frozen=True, eq=False)
class ElementPatch:
    """Patch ``S(K)`` around element ``k`` with its sampling set.

    Members are ordered by element id.  Geometry: ``R`` is the radius of the
    smallest disk enclosing the patch, ``r`` the radius of the largest disk
    centred at the barycenter of ``k`` inside the patch, ``width`` the least
    extent over the directions 0, 45, 90 and 135 degrees.
    """

    k: int
    members: tuple[int, ...]
    points: np.ndarray
    depth: int
    R: float
    r: float
    width: float
    center: np.ndarray  # center of the enclosing disk
    bbox: np.ndarray  # (2, 2) lower-left, upper-right
    cell_area: float
    cell_diameter: float

    @property
    def n_samples(self) -> int:
        return len(self.members)

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.bbox
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "members": list(self.members),
            "points": self.points.tolist(),
            "depth": self.depth,
            "R": self.R,
            "r": self.r,
            "width": self.width,
        }


def _rect_geometry(lo: np.ndarray, hi: np.ndarray, focus: np.ndarray) -> tuple[float, float, float]:
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    # a Moore patch on a uniform grid is an axis-aligned rectangle
    R = 0.5 * float(np.hypot(*(hi - lo)))
    r = float(min(focus[0] - lo[0], hi[0] - focus[0], focus[1] - lo[1], hi[1] - focus[1]))
    dirs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]]) / np.array([1, 1, math.sqrt(2), math.sqrt(2)])[:, None]
    proj = corners @ dirs.T
    width = float((proj.max(0) - proj.min(0)).min())
    return R, r, width


def build_patch(mesh: OfflineMesh, k: int, n_lowest: int, min_extent: int = 1) -> ElementPatch:
    """Grow Moore layers around ``k`` until the patch holds ``n_lowest`` cells.

    ``min_extent`` additionally asks for that many cells along each axis; a
    rectangle of barycenters is P_m-unisolvent exactly when both extents
    exceed ``m``, which can fail next to the boundary.
    """
    q = mesh.q
    if not 0 <= k < mesh.n_elements:
        raise MeshError(f"element id {k} out of range")
    if n_lowest < 1:
        raise MeshError("n_lowest must be >= 1")
    if mesh.n_elements < n_lowest:
        raise MeshError(f"mesh has {mesh.n_elements} elements, fewer than n_lowest={n_lowest}")
    if q < min_extent:
        raise MeshError(f"mesh has {q} cells per side, fewer than the required extent {min_extent}")
    c, r = int(k % q), int(k // q)
    t = 0
    while True:
        c0, c1 = max(c - t, 0), min(c + t, q - 1)
        r0, r1 = max(r - t, 0), min(r + t, q - 1)
        nx, ny = c1 - c0 + 1, r1 - r0 + 1
        if nx * ny >= n_lowest and min(nx, ny) >= min_extent:
            break
        t += 1
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
    members = np.sort((rows * q + cols).ravel())
    lo = mesh.corners[r0 * q + c0, 0]
    hi = mesh.corners[r1 * q + c1, 1]
    R, rin, width = _rect_geometry(lo, hi, mesh.barycenters[k])
    return ElementPatch(
        k=int(k),
        members=tuple(int(i) for i in members),
        points=mesh.barycenters[members].copy(),
        depth=t,
        R=R,
        r=rin,
        width=width,
        center=0.5 * (lo + hi),
        bbox=np.array([lo, hi]),
        cell_area=mesh.element_area,
        cell_diameter=float(mesh.diameters[k]),
    )


def build_all_patches(mesh: OfflineMesh, n_lowest: int, min_extent: int = 1) -> list[ElementPatch]:
    return [build_patch(mesh, k, n_lowest, min_extent) for k in range(mesh.n_elements)]


def moore_layers(mesh: OfflineMesh, k: int, t: int) -> set[int]:
    """``S_t(K)`` by literal recursion over the neighbor table."""
    current = {int(k)}
    for _ in range(t):
        grown = set(current)
        for e in current:
            grown.update(mesh.neighbors[e])
        current = grown
    return current


def mesh_summary_json(mesh: OfflineMesh, patches: list[ElementPatch] | None = None) -> str:
    payload = mesh.to_dict()
    if patches is not None:
        payload["patches"] = [p.to_dict() for p in patches]
    return json.dumps(payload)
