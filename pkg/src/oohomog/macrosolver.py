"""Online stage: P_l finite elements for ``-div(A grad u) = f`` and error norms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .coeffs import probe_grid
from .fem import LagrangeSpace
from .mesh import Rectangle, build_online_mesh

FemSpace = LagrangeSpace


class SolverError(RuntimeError):
    pass


class IndefiniteCoefficientError(SolverError):
    """The coefficient is not positive definite somewhere on the mesh."""


def fem_space(domain, n: int, degree: int) -> FemSpace:
    return LagrangeSpace(build_online_mesh(domain, n), degree)


@dataclass
class ExactSolution:
    """Analytic solution given by its value and gradient callables."""

    value: Callable
    gradient: Callable

    def evaluate(self, x, gradient: bool = False):
        x = np.asarray(x, dtype=float)
        if gradient:
            return self.value(x), self.gradient(x)
        return self.value(x)


@dataclass
class FemSolution:
    space: FemSpace
    values: np.ndarray
    residual: float = 0.0
    info: dict = field(default_factory=dict)

    def evaluate(self, x, gradient: bool = False):
        return self.space.evaluate(self.values, x, gradient)

    def to_dict(self) -> dict:
        d = self.space.mesh.domain
        return {
            "domain": d.as_list(),
            "n": self.space.mesh.n,
            "degree": self.space.degree,
            "residual": self.residual,
            "info": self.info,
            "dof_coords": self.space.dof_coords.tolist(),
            "values": self.values.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "u"])
            for (x, y), u in zip(self.space.dof_coords, self.values):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(u))])


def _as_callable(f) -> Callable:
    if callable(f):
        return f
    c = float(f)
    return lambda x: np.full(np.asarray(x).shape[:-1], c)


def default_quadrature(degree: int, coefficient) -> int:
    """Exactness ``2l + m``; fields without a polynomial order count as m = 2."""
    m = getattr(coefficient, "m", None)
    return 2 * degree + (2 if m is None else int(m))


def assemble_solve(space: FemSpace, coefficient: Callable, f=1.0, g=None, qdeg: int | None = None) -> FemSolution:
    """Galerkin solution with Dirichlet data ``g`` (zero if omitted)."""
    if qdeg is None:
        qdeg = default_quadrature(space.degree, coefficient)
    pts, _ = space.quadrature(qdeg)
    A = np.asarray(coefficient(pts), dtype=float)
    if A.shape != pts.shape[:-1] + (2, 2):
        raise ValueError(f"coefficient returned shape {A.shape}, expected {pts.shape[:-1] + (2, 2)}")
    if not np.all(np.isfinite(A)):
        raise SolverError("non-finite coefficient values at quadrature points")
    sym = 0.5 * (A + np.swapaxes(A, -1, -2))
    lam_min = np.linalg.eigvalsh(sym)[..., 0]
    if lam_min.min() <= 0:
        t, qp = np.unravel_index(np.argmin(lam_min), lam_min.shape)
        raise IndefiniteCoefficientError(
            f"coefficient not positive definite at {tuple(pts[t, qp])} (min eigenvalue {lam_min.min():.3e})"
        )
    K = space.stiffness(A, qdeg)
    b = space.load(_as_callable(f)(pts), qdeg)
    u = np.zeros(space.n_dofs)
    bnd, free = space.boundary_dofs, space.interior_dofs
    if g is not None:
        u[bnd] = _as_callable(g)(space.dof_coords[bnd])
    rhs = b[free] - K[free][:, bnd] @ u[bnd]
    Kff = K[free][:, free].tocsc()
    try:
        lu = spla.splu(Kff, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"singular system: {exc}") from exc
    if np.any(lu.U.diagonal() <= 0):
        raise IndefiniteCoefficientError("non-positive pivot; the coefficient field is not elliptic enough")
    u[free] = lu.solve(rhs)
    scale = np.linalg.norm(rhs)
    res = np.linalg.norm(Kff @ u[free] - rhs)
    residual = float(res / scale) if scale > 0 else float(res)
    if not residual < 1e-8:
        raise SolverError(f"linear solve residual {residual:.3e} above tolerance")
    info = {"n_dofs": space.n_dofs, "n_free": len(free), "qdeg": qdeg, "min_eigenvalue": float(lam_min.min())}
    return FemSolution(space, u, residual, info)


def relative_errors(sol: FemSolution, ref, qdeg: int = 6) -> tuple[float, float]:
    """Relative H1-seminorm and L2 errors of ``sol`` against ``ref``.

    Integrals use the quadrature of the finer of the two meshes; ``ref`` may
    be a :class:`FemSolution` or an :class:`ExactSolution`.
    """
    host = sol.space
    if isinstance(ref, FemSolution) and ref.space.mesh.n_triangles > host.mesh.n_triangles:
        host = ref.space
    pts, w = host.quadrature(qdeg)
    flat = pts.reshape(-1, 2)
    us, gs = sol.evaluate(flat, gradient=True)
    ur, gr = ref.evaluate(flat, gradient=True)
    w = w.ravel()
    l2_ref = np.sqrt(np.sum(w * ur**2))
    h1_ref = np.sqrt(np.sum(w * np.sum(gr**2, -1)))
    if l2_ref == 0 or h1_ref == 0:
        raise ValueError("reference solution vanishes; relative errors are undefined")
    l2 = np.sqrt(np.sum(w * (us - ur) ** 2)) / l2_ref
    h1 = np.sqrt(np.sum(w * np.sum((gs - gr) ** 2, -1))) / h1_ref
    return float(h1), float(l2)


@dataclass
class EmodReport:
    emod: float
    e1: float
    argmax: tuple[float, float]


def emod_report(field, reference: Callable, probe: int = 512, domain=None) -> EmodReport:
    """Max Frobenius discrepancy on a probe grid (``e(MOD)``) and at the samples (``e1``)."""
    dom = Rectangle.coerce(domain if domain is not None else field.mesh.domain)
    P = probe_grid((dom.x0, dom.y0, dom.x1, dom.y1), probe)
    errs = np.empty(len(P))
    for chunk in np.array_split(np.arange(len(P)), max(1, len(P) // 65536)):
        errs[chunk] = np.linalg.norm(field(P[chunk]) - reference(P[chunk]), axis=(-2, -1))
    i = int(np.argmax(errs))
    e1 = np.linalg.norm(field.sample_matrices - reference(field.sample_points), axis=(-2, -1)).max()
    return EmodReport(float(errs[i]), float(e1), (float(P[i, 0]), float(P[i, 1])))
