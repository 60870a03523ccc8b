"""Conforming P1/P2 Lagrange finite elements on structured triangulations.

Shared by the cell-problem solver and the macroscopic solver.  Degrees of
freedom live on a lattice of spacing ``h/l``: for P2 the odd lattice sites are
the edge midpoints (the diagonal midpoints are the odd-odd sites).  A periodic
space wraps the lattice indices.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import OnlineMesh, build_online_mesh


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss-Legendre rule on the reference triangle.

    Exact for polynomials of total degree ``degree``; weights sum to 1/2.
    """
    k = max(1, math.ceil((degree + 2) / 2))
    g, w = np.polynomial.legendre.leggauss(k)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    pts = np.stack([u.ravel(), (v * (1.0 - u)).ravel()], axis=-1)
    wts = (wu * wv * (1.0 - u)).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def shape_functions(degree: int, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(..., nloc)`` and reference gradients ``(..., nloc, 2)``.

    Local order: vertices 0, 1, 2, then midpoints of edges (1,2), (0,2), (0,1).
    """
    ref = np.asarray(ref, dtype=float)
    xi, eta = ref[..., 0], ref[..., 1]
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        vals = np.stack([l0, l1, l2], -1)
        grads = np.broadcast_to(dl, vals.shape + (2,)).copy()
        return vals, grads
    if degree != 2:
        raise ValueError(f"unsupported element degree {degree}")
    lam = [l0, l1, l2]
    vals = np.stack(
        [lam[0] * (2 * lam[0] - 1), lam[1] * (2 * lam[1] - 1), lam[2] * (2 * lam[2] - 1),
         4 * lam[1] * lam[2], 4 * lam[0] * lam[2], 4 * lam[0] * lam[1]],
        -1,
    )
    L = [x[..., None] for x in lam]
    grads = np.stack(
        [(4 * L[0] - 1) * dl[0], (4 * L[1] - 1) * dl[1], (4 * L[2] - 1) * dl[2],
         4 * (L[1] * dl[2] + L[2] * dl[1]), 4 * (L[0] * dl[2] + L[2] * dl[0]),
         4 * (L[0] * dl[1] + L[1] * dl[0])],
        -2,
    )
    return vals, grads


class LagrangeSpace:
    """P1 or P2 space on a structured :class:`OnlineMesh`."""

    def __init__(self, mesh: OnlineMesh, degree: int = 1, periodic: bool = False):
        if degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {degree}")
        self.mesh = mesh
        self.degree = degree
        self.periodic = periodic
        n, l = mesh.n, degree
        M = l * n  # lattice intervals per side
        self.lattice = M
        i, j = np.meshgrid(np.arange(n), np.arange(n))
        i, j = l * i.ravel(), l * j.ravel()
        if l == 1:
            lower = [(0, 0), (1, 0), (1, 1)]
            upper = [(0, 0), (1, 1), (0, 1)]
        else:
            lower = [(0, 0), (2, 0), (2, 2), (2, 1), (1, 1), (1, 0)]
            upper = [(0, 0), (2, 2), (0, 2), (1, 2), (0, 1), (1, 1)]
        li = np.empty((2 * n * n, len(lower)), dtype=np.int64)
        lj = np.empty_like(li)
        for a, (di, dj) in enumerate(lower):
            li[0::2, a], lj[0::2, a] = i + di, j + dj
        for a, (di, dj) in enumerate(upper):
            li[1::2, a], lj[1::2, a] = i + di, j + dj
        d = mesh.domain
        self._lattice_coords = (li, lj)
        if periodic:
            self.cell_dofs = (lj % M) * M + (li % M)
            self.n_dofs = M * M
            I, J = np.meshgrid(np.arange(M), np.arange(M))
            self.boundary_dofs = np.zeros(0, dtype=np.int64)
        else:
            self.cell_dofs = lj * (M + 1) + li
            self.n_dofs = (M + 1) ** 2
            I, J = np.meshgrid(np.arange(M + 1), np.arange(M + 1))
            onb = ((I == 0) | (I == M) | (J == 0) | (J == M)).ravel()
            self.boundary_dofs = np.flatnonzero(onb)
        self.dof_coords = np.stack(
            [d.x0 + I.ravel() * d.width / M, d.y0 + J.ravel() * d.height / M], -1
        )
        p = mesh.vertices[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns
        self.origin = p[:, 0]
        self.jac = jac
        self.det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        self.jinv = np.linalg.inv(jac)

    @property
    def n_local(self) -> int:
        return 3 if self.degree == 1 else 6

    @property
    def interior_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)

    def quadrature(self, degree: int, tri: np.ndarray | None = None):
        """Physical quadrature points ``(nT, nq, 2)`` and weights ``(nT, nq)``."""
        ref, w = triangle_rule(degree)
        tri = slice(None) if tri is None else tri
        pts = self.origin[tri][:, None, :] + np.einsum("tij,qj->tqi", self.jac[tri], ref)
        wts = np.abs(self.det[tri])[:, None] * w[None, :]
        return pts, wts

    def stiffness(self, coeff_values: np.ndarray, qdeg: int, tri=None) -> sp.csr_matrix:
        """Assemble ``int A grad(phi_b) . grad(phi_a)`` given ``A`` at quadrature points."""
        ref, w = triangle_rule(qdeg)
        _, gref = shape_functions(self.degree, ref)  # (nq, nloc, 2)
        tri = np.arange(len(self.det)) if tri is None else tri
        nloc = self.n_local
        rows, cols, vals = [], [], []
        for chunk in np.array_split(tri, max(1, len(tri) // 20000)):
            jinv = self.jinv[chunk]
            A = coeff_values[chunk]  # (nt, nq, 2, 2)
            # pull A back to the reference element: J^{-1} A J^{-T}
            B = np.einsum("tki,tqij,tlj->tqkl", jinv, A, jinv, optimize=True)
            B *= (np.abs(self.det[chunk])[:, None] * w[None, :])[..., None, None]
            Ke = np.einsum("tqkl,qak,qbl->tab", B, gref, gref, optimize=True)
            dofs = self.cell_dofs[chunk]
            rows.append(np.repeat(dofs, nloc, axis=1).ravel())
            cols.append(np.tile(dofs, (1, nloc)).ravel())
            vals.append(Ke.ravel())
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_dofs, self.n_dofs),
        )
        return K.tocsr()

    def load(self, f_values: np.ndarray, qdeg: int) -> np.ndarray:
        """Assemble ``int f phi_a`` given ``f`` at quadrature points ``(nT, nq)``."""
        ref, w = triangle_rule(qdeg)
        phi, _ = shape_functions(self.degree, ref)
        Fe = np.einsum("tq,q,qa->ta", f_values, w, phi) * np.abs(self.det)[:, None]
        return np.bincount(self.cell_dofs.ravel(), weights=Fe.ravel(), minlength=self.n_dofs)

    def vector_load(self, g_values: np.ndarray, qdeg: int) -> np.ndarray:
        """Assemble ``int g . grad(phi_a)`` given a vector field ``(nT, nq, 2)``."""
        ref, w = triangle_rule(qdeg)
        _, gref = shape_functions(self.degree, ref)
        gphys = np.einsum("tki,qak->tqai", self.jinv, gref)
        Fe = np.einsum("tqi,tqai,q->ta", g_values, gphys, w) * np.abs(self.det)[:, None]
        return np.bincount(self.cell_dofs.ravel(), weights=Fe.ravel(), minlength=self.n_dofs)

    def gradient_at_quadrature(self, u: np.ndarray, qdeg: int) -> np.ndarray:
        ref, _ = triangle_rule(qdeg)
        _, gref = shape_functions(self.degree, ref)
        ue = u[self.cell_dofs]  # (nT, nloc)
        g_ref = np.einsum("ta,qak->tqk", ue, gref)
        return np.einsum("tki,tqk->tqi", self.jinv, g_ref)

    def values_at_quadrature(self, u: np.ndarray, qdeg: int) -> np.ndarray:
        ref, _ = triangle_rule(qdeg)
        phi, _ = shape_functions(self.degree, ref)
        return u[self.cell_dofs] @ phi.T

    def interpolate(self, func) -> np.ndarray:
        return np.asarray(func(self.dof_coords), dtype=float)

    def evaluate(self, u: np.ndarray, x, gradient: bool = False):
        """Point values (and gradients) of the finite element function ``u``."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        tri, ref = self.mesh.locate(x.reshape(-1, 2))
        phi, gref = shape_functions(self.degree, ref)
        ue = u[self.cell_dofs[tri]]
        vals = np.einsum("pa,pa->p", ue, phi).reshape(shape)
        if not gradient:
            return vals
        g = np.einsum("pki,pak,pa->pi", self.jinv[tri], gref, ue)
        return vals, g.reshape(shape + (2,))


def unit_cell_space(resolution: int, degree: int, periodic: bool) -> LagrangeSpace:
    return _unit_cell_space(int(resolution), int(degree), bool(periodic))


@lru_cache(maxsize=16)
def _unit_cell_space(resolution: int, degree: int, periodic: bool) -> LagrangeSpace:
    return LagrangeSpace(build_online_mesh((0.0, 0.0, 1.0, 1.0), resolution), degree, periodic)
