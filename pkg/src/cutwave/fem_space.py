"""Discontinuous tensor-product spaces with doubled unknowns on cut elements.

Scalar space: ``Q^p`` per element copy. Vector space: ``Q^{p-1,p} x
Q^{p,p-1}`` per copy. Every factor is a Lagrange basis through the
Gauss-Lobatto-Legendre nodes of its own degree. A cut element carries one
copy per subdomain; both copies use the same polynomials on the full box,
restricted to their fragment by the quadrature.

Local numbering: scalar function ``(a, b)`` with ``a`` the x-index has index
``b * (p + 1) + a``. Vector functions list the x-component block
(``b * p + a``) first, then the y-component block.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import SingularBlock
from .quadrature import MeshQuadrature, mesh_quadrature


@lru_cache(maxsize=None)
def gll_nodes(q: int) -> np.ndarray:
    """Gauss-Lobatto-Legendre nodes of degree ``q`` (``q + 1`` points) on [-1, 1]."""
    if q < 0:
        raise ValueError("degree must be non-negative")
    if q == 0:
        return np.array([0.0])
    if q == 1:
        return np.array([-1.0, 1.0])
    inner = npleg.Legendre.basis(q).deriv().roots()
    nodes = np.concatenate([[-1.0], np.sort(inner.real), [1.0]])
    nodes.setflags(write=False)
    return nodes


class LagrangeBasis1D:
    """Lagrange polynomials of degree ``q`` through the GLL nodes."""

    def __init__(self, q: int):
        self.q = q
        self.nodes = gll_nodes(q)
        V = npleg.legvander(self.nodes, q)
        self._coef = np.linalg.inv(V)          # Legendre coefficients of each ell_a
        self._dcoef = npleg.legder(self._coef, axis=0) if q > 0 else np.zeros((1, 1))

    def __call__(self, x):
        """Values ``(len(x), q+1)`` at reference points ``x``."""
        return npleg.legvander(np.asarray(x, dtype=float), self.q) @ self._coef

    def deriv(self, x):
        if self.q == 0:
            return np.zeros((np.size(x), 1))
        return npleg.legvander(np.asarray(x, dtype=float), self.q - 1) @ self._dcoef


@lru_cache(maxsize=None)
def lagrange_1d(q: int) -> LagrangeBasis1D:
    return LagrangeBasis1D(q)


def to_reference(box, pts):
    """Map physical points to ``[-1, 1]^2`` of ``box``; also returns ``2/hx, 2/hy``."""
    x0, y0, x1, y1 = box
    sx = 2.0 / (x1 - x0)
    sy = 2.0 / (y1 - y0)
    pts = np.asarray(pts, dtype=float)
    return (pts[:, 0] - x0) * sx - 1.0, (pts[:, 1] - y0) * sy - 1.0, sx, sy


def scalar_basis(p: int, box, pts, grad: bool = False):
    """Scalar ``Q^p`` basis of ``box`` at physical points.

    Returns ``phi (n, (p+1)^2)``, and ``(dphi_dx, dphi_dy)`` if ``grad``.
    """
    xi, eta, sx, sy = to_reference(box, pts)
    L = lagrange_1d(p)
    lx, ly = L(xi), L(eta)
    n = lx.shape[0]
    phi = (ly[:, :, None] * lx[:, None, :]).reshape(n, -1)
    if not grad:
        return phi
    dx = (ly[:, :, None] * (L.deriv(xi) * sx)[:, None, :]).reshape(n, -1)
    dy = ((L.deriv(eta) * sy)[:, :, None] * lx[:, None, :]).reshape(n, -1)
    return phi, dx, dy


def vector_basis(p: int, box, pts, div: bool = False):
    """Vector ``Q^{p-1,p} x Q^{p,p-1}`` basis of ``box`` at physical points.

    Returns ``(psi_x, psi_y)`` of shape ``(n, 2p(p+1))`` each, plus the
    divergence if ``div``.
    """
    xi, eta, sx, sy = to_reference(box, pts)
    Lp, Lm = lagrange_1d(p), lagrange_1d(p - 1)
    n = xi.size
    half = p * (p + 1)
    ax = (Lp(eta)[:, :, None] * Lm(xi)[:, None, :]).reshape(n, -1)
    ay = (Lm(eta)[:, :, None] * Lp(xi)[:, None, :]).reshape(n, -1)
    psi_x = np.zeros((n, 2 * half))
    psi_y = np.zeros((n, 2 * half))
    psi_x[:, :half] = ax
    psi_y[:, half:] = ay
    if not div:
        return psi_x, psi_y
    dvx = (Lp(eta)[:, :, None] * (Lm.deriv(xi) * sx)[:, None, :]).reshape(n, -1)
    dvy = ((Lm.deriv(eta) * sy)[:, :, None] * Lp(xi)[:, None, :]).reshape(n, -1)
    return psi_x, psi_y, np.concatenate([dvx, dvy], axis=1)


def scalar_nodes(p: int, box) -> np.ndarray:
    """Physical nodal points of the scalar basis in local order."""
    g = gll_nodes(p)
    x0, y0, x1, y1 = box
    X, Y = np.meshgrid(x0 + (g + 1) * 0.5 * (x1 - x0), y0 + (g + 1) * 0.5 * (y1 - y0),
                       indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def vector_nodes(p: int, box):
    """Nodal points of the x- and y-component blocks of the vector basis."""
    gp, gm = gll_nodes(p), gll_nodes(p - 1)
    x0, y0, x1, y1 = box
    mx = lambda g: x0 + (g + 1) * 0.5 * (x1 - x0)    # noqa: E731
    my = lambda g: y0 + (g + 1) * 0.5 * (y1 - y0)    # noqa: E731
    Xa, Ya = np.meshgrid(mx(gm), my(gp), indexing="xy")
    Xb, Yb = np.meshgrid(mx(gp), my(gm), indexing="xy")
    return (np.column_stack([Xa.ravel(), Ya.ravel()]),
            np.column_stack([Xb.ravel(), Yb.ravel()]))


@dataclass(frozen=True)
class Copy:
    """One copy of an element: element id, subdomain and box."""

    index: int
    element: int
    sub: int
    box: tuple
    is_cut: bool


class DgSpace:
    """Scalar and vector DG spaces with their degree-of-freedom maps.

    Parameters
    ----------
    mesh : InducedMesh
    p : int
        Polynomial degree, at least 1.
    quad_order : int, optional
        Polynomial exactness of volume and face rules (default ``2p + 4``).
    """

    def __init__(self, mesh, p: int, quad_order: Optional[int] = None):
        if p < 1:
            raise ValueError("p must be at least 1")
        self.mesh = mesh
        self.p = p
        self.quad_order = 2 * p + 4 if quad_order is None else int(quad_order)
        self.n_phi = (p + 1) ** 2
        self.n_psi = 2 * p * (p + 1)
        self.copies: list = []
        self.copy_of: dict = {}
        for e in mesh.elements:
            for sub in e.subdomains():
                c = Copy(len(self.copies), e.id, sub, e.box, e.is_cut)
                self.copy_of[(e.id, sub)] = c.index
                self.copies.append(c)
        self.quadrature: MeshQuadrature = mesh_quadrature(mesh, self.quad_order)

    @property
    def n_copies(self) -> int:
        return len(self.copies)

    @property
    def M1(self) -> int:
        return self.n_copies * self.n_phi

    @property
    def M2(self) -> int:
        return self.n_copies * self.n_psi

    @property
    def size(self) -> int:
        return self.M1 + self.M2

    def scalar_dofs(self, c: int) -> np.ndarray:
        return c * self.n_phi + np.arange(self.n_phi)

    def vector_dofs(self, c: int) -> np.ndarray:
        """Indices within the vector block (add ``M1`` for the full state)."""
        return c * self.n_psi + np.arange(self.n_psi)

    def copy_for(self, element: int, sub: int) -> int:
        """Copy of ``element`` that represents subdomain ``sub``.

        Uncut elements have a single copy, returned whatever ``sub`` is.
        """
        c = self.copy_of.get((element, sub))
        if c is None:
            e = self.mesh.elements[element]
            c = self.copy_of[(element, e.subdomains()[0])]
        return c

    def rule(self, c: int):
        cp = self.copies[c]
        return self.quadrature.volume[(cp.element, cp.sub)]

    # projections ---------------------------------------------------------
    def _project(self, fn, vector: bool) -> np.ndarray:
        n_loc = self.n_psi if vector else self.n_phi
        out = np.zeros(self.n_copies * n_loc)
        cache = {}
        for cp in self.copies:
            rule = self.rule(cp.index)
            pts, w = rule.points, rule.weights
            if vector:
                bx, by = vector_basis(self.p, cp.box, pts)
                fx, fy = fn(pts[:, 0], pts[:, 1], np.full(len(w), cp.sub))
                rhs = bx.T @ (w * np.broadcast_to(fx, w.shape)) + by.T @ (w * np.broadcast_to(fy, w.shape))
            else:
                ph = scalar_basis(self.p, cp.box, pts)
                fv = fn(pts[:, 0], pts[:, 1], np.full(len(w), cp.sub))
                rhs = ph.T @ (w * np.broadcast_to(fv, w.shape))
            key = None if cp.is_cut else _shape_key(cp.box)
            if key is not None and key in cache:
                solve = cache[key]
            else:
                if vector:
                    M = (bx.T * w) @ bx + (by.T * w) @ by
                else:
                    M = (ph.T * w) @ ph
                solve = _block_solver(M, cp.index)
                if key is not None:
                    cache[key] = solve
            out[cp.index * n_loc:(cp.index + 1) * n_loc] = solve(rhs)
        return out

    def project_scalar(self, v: Callable) -> np.ndarray:
        """L2 projection of ``v(x, y, sub)`` onto the scalar space."""
        return self._project(v, vector=False)

    def project_vector(self, sigma: Callable) -> np.ndarray:
        """L2 projection of ``sigma(x, y, sub) -> (sx, sy)`` onto the vector space."""
        return self._project(sigma, vector=True)

    # evaluation ----------------------------------------------------------
    def locate(self, pts) -> np.ndarray:
        """Element id containing each point (points on faces go to either side)."""
        pts = np.asarray(pts, dtype=float)
        m = self.mesh
        st = m.stats
        x0, y0 = m.domain[0], m.domain[1]
        out = np.full(len(pts), -1)
        top = max(m.leaf_level.values())
        nx = round((m.domain[2] - m.domain[0]) / st["hx0"])
        ny = round((m.domain[3] - m.domain[1]) / st["hy0"])
        for lev in range(top + 1):
            i = np.clip(((pts[:, 0] - x0) / (st["hx0"] / 2 ** lev)).astype(int), 0, (nx << lev) - 1)
            j = np.clip(((pts[:, 1] - y0) / (st["hy0"] / 2 ** lev)).astype(int), 0, (ny << lev) - 1)
            for k in np.nonzero(out < 0)[0]:
                e = m.leaf_to_element.get((lev, int(i[k]), int(j[k])))
                if e is not None:
                    out[k] = e
        return out

    def evaluate(self, coeffs: np.ndarray, pts, sub=None):
        """Evaluate ``u_h`` and ``q_h`` from a full state vector at points.

        Parameters
        ----------
        coeffs : ndarray (M1 + M2,)
        pts : ndarray (n, 2)
        sub : ndarray (n,), optional
            Subdomain of each point; taken from the level set if omitted.

        Returns
        -------
        u, qx, qy, sub : ndarray (n,)
        """
        pts = np.asarray(pts, dtype=float)
        if sub is None:
            ls = self.mesh.level_set
            sub = np.ones(len(pts), dtype=int) if ls is None else ls.subdomain(pts[:, 0], pts[:, 1])
        el = self.locate(pts)
        u = np.zeros(len(pts))
        qx = np.zeros(len(pts))
        qy = np.zeros(len(pts))
        U, Q = coeffs[:self.M1], coeffs[self.M1:]
        copies = np.array([self.copy_for(e, s) for e, s in zip(el, sub)], dtype=int)
        for c in np.unique(copies):
            idx = np.nonzero(copies == c)[0]
            box = self.copies[c].box
            u[idx] = scalar_basis(self.p, box, pts[idx]) @ U[self.scalar_dofs(c)]
            bx, by = vector_basis(self.p, box, pts[idx])
            qc = Q[self.vector_dofs(c)]
            qx[idx] = bx @ qc
            qy[idx] = by @ qc
        return u, qx, qy, np.asarray(sub)

    def count_dofs(self) -> tuple:
        """``(M1, M2)`` counted element by element."""
        m1 = m2 = 0
        for e in self.mesh.elements:
            k = 2 if e.is_cut else 1
            m1 += k * (self.p + 1) ** 2
            m2 += k * 2 * self.p * (self.p + 1)
        return m1, m2


def _shape_key(box) -> tuple:
    return (round((box[2] - box[0]) * 1e12), round((box[3] - box[1]) * 1e12))


def _block_solver(M: np.ndarray, copy_index: int):
    """Solver for a small SPD block; raises ``SingularBlock`` if ill-conditioned."""
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularBlock(f"mass block of copy {copy_index} has condition {cond:.3e}")
    L = np.linalg.cholesky(M)
    return lambda b: np.linalg.solve(L.T, np.linalg.solve(L, b))
