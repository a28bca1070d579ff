"""Mass matrices, alternating-flux stiffness and the semi-discrete operator.

The state is ``Y = (U; Q)`` with ``U`` the scalar and ``Q`` the vector
coefficients. The semi-discrete system reads ``Mrc Y' = A Y + (b(t); 0)``
with ``A = [[0, Dminus], [Dplus, 0]]`` and ``Dminus = -Dplus^T``, so
``A + A^T`` vanishes exactly.

Face conventions: on side faces the minus element is left or below and the
normal points from minus to plus; on the interface the minus copy lies in
subdomain 1 and the normal points out of subdomain 1. Jumps are
``[[v]] = v_minus - v_plus`` and ``[[v]] = v_minus`` on the boundary. The
flux for ``u`` is taken from the plus side and vanishes on the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NotSPD
from .fem_space import DgSpace, scalar_basis, vector_basis
from .quadrature import segment_rule


@dataclass(frozen=True)
class MaterialParams:
    """Piecewise constant density and wave speed, indexed by subdomain."""

    rho1: float = 1.0
    rho2: float = 1.0
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        for name in ("rho1", "rho2", "c1", "c2"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")

    def rho(self, sub: int) -> float:
        return self.rho1 if sub == 1 else self.rho2

    def c(self, sub: int) -> float:
        return self.c1 if sub == 1 else self.c2

    def inv_rho_c2(self, sub: int) -> float:
        return 1.0 / (self.rho(sub) * self.c(sub) ** 2)


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty ``alpha = alpha0 * p / h_e`` on every face."""

    alpha0: float = 1.0

    def __post_init__(self):
        if not self.alpha0 > 0.0:
            raise ValueError("alpha0 must be positive")

    def alpha(self, p: int, h_e: float) -> float:
        return self.alpha0 * p / h_e


@dataclass
class FacePiece:
    """A face portion lying in one subdomain, with its quadrature.

    ``cm`` and ``cp`` are the minus and plus copies (``cp = -1`` on the
    boundary). ``normals`` point from minus to plus.
    """

    kind: str
    cm: int
    cp: int
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    alpha: float
    key: Optional[tuple] = None


def face_pieces(space: DgSpace, penalty: PenaltyConfig) -> list:
    """Split all mesh faces into single-copy pieces with quadrature rules."""
    mesh, p, order = space.mesh, space.p, space.quad_order
    out = []
    for f in mesh.faces:
        if f.kind == "interface":
            rule = space.quadrature.interface[f.minus]
            out.append(FacePiece("interface", space.copy_for(f.minus, 1),
                                 space.copy_for(f.minus, 2), rule.points, rule.weights,
                                 rule.normals, penalty.alpha(p, f.h_e)))
            continue
        alpha = penalty.alpha(p, f.h_e)
        n = np.asarray(f.normal, dtype=float)
        for a, b, sub in f.segments:
            rule = segment_rule(a, b, order)
            cm = space.copy_for(f.minus, sub)
            cp = -1 if f.kind == "boundary" else space.copy_for(f.plus, sub)
            normals = np.broadcast_to(n, rule.points.shape)
            out.append(FacePiece(f.kind, cm, cp, rule.points, rule.weights, normals,
                                 alpha, _piece_key(space, cm, cp, a, b, n, alpha)))
    return out


def _piece_key(space, cm, cp, a, b, n, alpha):
    """Geometry of a straight piece relative to its minus box, for caching."""
    bm = space.copies[cm].box
    ref = np.array(bm[:2])
    scale = 1e10 / max(bm[2] - bm[0], bm[3] - bm[1])
    vals = [bm[2] - bm[0], bm[3] - bm[1], *(np.asarray(a) - ref), *(np.asarray(b) - ref), *n]
    if cp >= 0:
        bp = space.copies[cp].box
        vals += [bp[0] - ref[0], bp[1] - ref[1], bp[2] - ref[0], bp[3] - ref[1]]
    vals.append(alpha * (bm[2] - bm[0]))
    return (cp >= 0, tuple(int(round(v * scale)) for v in vals))


def _face_blocks(space: DgSpace, piece: FacePiece):
    """Local face matrices of one piece.

    Returns a dict with penalty blocks ``P_mm, P_mp, P_pp``, flux blocks of
    ``Dplus`` (``F_mp``: psi minus by phi plus, ``F_pp``) and of the
    independent ``Hminus`` (``G_mm``: phi minus by psi minus, ``G_pm``).
    """
    p = space.p
    w = piece.weights
    nx, ny = piece.normals[:, 0], piece.normals[:, 1]
    bm = space.copies[piece.cm].box
    Pm = scalar_basis(p, bm, piece.points)
    Sx, Sy = vector_basis(p, bm, piece.points)
    Sm = Sx * nx[:, None] + Sy * ny[:, None]
    Wa = w * piece.alpha
    out = {"P_mm": (Pm.T * Wa) @ Pm, "G_mm": (Pm.T * w) @ Sm}
    if piece.cp >= 0:
        bp = space.copies[piece.cp].box
        Pp = scalar_basis(p, bp, piece.points)
        Sx, Sy = vector_basis(p, bp, piece.points)
        Sp = Sx * nx[:, None] + Sy * ny[:, None]
        out["P_mp"] = -(Pm.T * Wa) @ Pp
        out["P_pp"] = (Pp.T * Wa) @ Pp
        out["F_mp"] = (Sm.T * w) @ Pp
        out["F_pp"] = -(Sp.T * w) @ Pp
        out["G_pm"] = -(Pp.T * w) @ Sm
    return out


def _volume_blocks(space: DgSpace, c: int):
    """Unweighted local volume matrices of copy ``c`` and its load block."""
    p = space.p
    rule = space.rule(c)
    box = space.copies[c].box
    w = rule.weights
    Phi, Dx, Dy = scalar_basis(p, box, rule.points, grad=True)
    Sx, Sy, Div = vector_basis(p, box, rule.points, div=True)
    return {
        "Mu": (Phi.T * w) @ Phi,
        "Mq": (Sx.T * w) @ Sx + (Sy.T * w) @ Sy,
        "Dvol": -(Div.T * w) @ Phi,                       # psi rows, phi cols
        "Hvol": -((Dx.T * w) @ Sx + (Dy.T * w) @ Sy),     # phi rows, psi cols
        "B": Phi.T * w,
    }


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, ri, ci, block):
        self.rows.append(np.repeat(ri, len(ci)))
        self.cols.append(np.tile(ci, len(ri)))
        self.vals.append(np.asarray(block).ravel())

    def matrix(self, shape) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        r = np.concatenate(self.rows).astype(np.int32)
        c = np.concatenate(self.cols).astype(np.int32)
        v = np.concatenate(self.vals)
        return sp.coo_matrix((v, (r, c)), shape=shape).tocsr()


def _symmetrize(M: sp.spmatrix) -> sp.csr_matrix:
    """Exactly symmetric part (floating point addition commutes)."""
    return ((M + M.T) * 0.5).tocsr()


@dataclass
class Assembled:
    """Raw assembled matrices; see :func:`assemble`."""

    Mu: sp.csr_matrix
    Mq: sp.csr_matrix
    Mu_plain: sp.csr_matrix
    Mq_plain: sp.csr_matrix
    Dplus: sp.csr_matrix
    Hminus: sp.csr_matrix
    B: sp.csr_matrix
    load_points: np.ndarray
    load_sub: np.ndarray
    pieces: list = field(default_factory=list)


def assemble(space: DgSpace, materials: MaterialParams, penalty: PenaltyConfig,
             with_hminus: bool = True) -> Assembled:
    """Assemble all matrices of the scheme on ``space``.

    ``Hminus`` is the independent assembly of the ``q``-equation bilinear
    form (rows scalar, columns vector). It is used only for validation.
    """
    M1, M2 = space.M1, space.M2
    nphi, npsi = space.n_phi, space.n_psi
    tu, tq, tup, tqp, td, th = (_Triplets() for _ in range(6))
    cache = {}
    brows, bcols, bvals = [], [], []
    pts, subs = [], []
    offset = 0
    for cp in space.copies:
        key = None if cp.is_cut else (round((cp.box[2] - cp.box[0]) * 1e12),
                                      round((cp.box[3] - cp.box[1]) * 1e12))
        blocks = cache.get(key) if key is not None else None
        if blocks is None:
            blocks = _volume_blocks(space, cp.index)
            if key is not None:
                cache[key] = blocks
        su = space.scalar_dofs(cp.index)
        sq = space.vector_dofs(cp.index)
        w_u = materials.inv_rho_c2(cp.sub)
        w_q = materials.rho(cp.sub)
        tu.add(su, su, w_u * blocks["Mu"])
        tup.add(su, su, blocks["Mu"])
        tq.add(sq, sq, w_q * blocks["Mq"])
        tqp.add(sq, sq, blocks["Mq"])
        td.add(sq, su, blocks["Dvol"])
        if with_hminus:
            th.add(su, sq, blocks["Hvol"])
        rule = space.rule(cp.index)
        nq = len(rule.weights)
        brows.append(np.repeat(su, nq))
        bcols.append(np.tile(offset + np.arange(nq), nphi))
        bvals.append(blocks["B"].ravel())
        pts.append(rule.points)
        subs.append(np.full(nq, cp.sub))
        offset += nq

    pieces = face_pieces(space, penalty)
    fcache = {}
    for pc in pieces:
        blocks = fcache.get(pc.key) if pc.key is not None else None
        if blocks is None:
            blocks = _face_blocks(space, pc)
            if pc.key is not None:
                fcache[pc.key] = blocks
        um = space.scalar_dofs(pc.cm)
        qm = space.vector_dofs(pc.cm)
        tu.add(um, um, blocks["P_mm"])
        if with_hminus:
            th.add(um, qm, blocks["G_mm"])
        if pc.cp < 0:
            continue
        up = space.scalar_dofs(pc.cp)
        qp = space.vector_dofs(pc.cp)
        tu.add(um, up, blocks["P_mp"])
        tu.add(up, um, blocks["P_mp"].T)
        tu.add(up, up, blocks["P_pp"])
        td.add(qm, up, blocks["F_mp"])
        td.add(qp, up, blocks["F_pp"])
        if with_hminus:
            th.add(up, qm, blocks["G_pm"])

    B = sp.csr_matrix((np.concatenate(bvals),
                       (np.concatenate(brows).astype(np.int32),
                        np.concatenate(bcols).astype(np.int32))), shape=(M1, offset))
    return Assembled(
        Mu=_symmetrize(tu.matrix((M1, M1))),
        Mq=_symmetrize(tq.matrix((M2, M2))),
        Mu_plain=_symmetrize(tup.matrix((M1, M1))),
        Mq_plain=_symmetrize(tqp.matrix((M2, M2))),
        Dplus=td.matrix((M2, M1)),
        Hminus=th.matrix((M1, M2)) if with_hminus else None,
        B=B,
        load_points=np.concatenate(pts),
        load_sub=np.concatenate(subs),
        pieces=pieces,
    )


def assemble_mass(space: DgSpace, materials: MaterialParams, penalty: PenaltyConfig):
    """``(Mrc, Mplain)`` as full ``(M1 + M2)`` square matrices."""
    a = assemble(space, materials, penalty, with_hminus=False)
    return sp.block_diag([a.Mu, a.Mq], format="csr"), \
        sp.block_diag([a.Mu_plain, a.Mq_plain], format="csr")


def assemble_stiffness(space: DgSpace, penalty: Optional[PenaltyConfig] = None):
    """``(Dplus, Dminus)`` with ``Dminus = -Dplus^T``."""
    a = assemble(space, MaterialParams(), penalty or PenaltyConfig(), with_hminus=False)
    return a.Dplus, (-a.Dplus.T).tocsr()


def block_matrix_A(Dplus: sp.spmatrix) -> sp.csr_matrix:
    """``[[0, -Dplus^T], [Dplus, 0]]``."""
    return sp.bmat([[None, -Dplus.T], [Dplus, None]], format="csr")


class SpdFactor:
    """Sparse LU factorization of an SPD matrix with symmetric pivoting.

    Positivity of the pivots is checked; a non-positive pivot raises
    :class:`NotSPD`.
    """

    def __init__(self, M: sp.spmatrix):
        M = sp.csc_matrix(M)
        if M.shape[0] == 0:
            raise NotSPD("empty matrix")
        try:
            self._lu = splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        except RuntimeError as err:
            raise NotSPD(f"factorization failed: {err}") from err
        d = self._lu.U.diagonal()
        if not np.all(d > 0.0):
            raise NotSPD(f"non-positive pivot {d.min():.3e}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(b)


def block_inverse(M: sp.csr_matrix, block: int) -> sp.csr_matrix:
    """Inverse of a block-diagonal matrix with equal square blocks."""
    n = M.shape[0]
    if n % block:
        raise ValueError("size is not a multiple of the block size")
    nb = n // block
    dense = np.zeros((nb, block, block))
    coo = M.tocoo()
    bi = coo.row // block
    if np.any(bi != coo.col // block):
        raise ValueError("matrix is not block diagonal")
    dense[bi, coo.row % block, coo.col % block] = coo.data
    try:
        L = np.linalg.cholesky(dense)
    except np.linalg.LinAlgError as err:
        raise NotSPD("vector mass block is not positive definite") from err
    eye = np.broadcast_to(np.eye(block), dense.shape)
    Linv = np.linalg.solve(L, eye)
    inv = np.einsum("kji,kjl->kil", Linv, Linv)
    rows = (np.arange(nb)[:, None, None] * block + np.arange(block)[None, :, None])
    rows = np.broadcast_to(rows, inv.shape)
    cols = np.swapaxes(rows, 1, 2)
    return sp.csr_matrix((inv.ravel(), (rows.ravel().astype(np.int32),
                                        cols.ravel().astype(np.int32))), shape=M.shape)


class DgSystem:
    """Assembled semi-discrete system with factorized mass matrix.

    Parameters
    ----------
    space : DgSpace
    materials : MaterialParams
    penalty : PenaltyConfig
    with_hminus : bool
        Also assemble the independent ``Hminus`` for validation.
    """

    def __init__(self, space: DgSpace, materials: MaterialParams = MaterialParams(),
                 penalty: PenaltyConfig = PenaltyConfig(), with_hminus: bool = False):
        self.space = space
        self.materials = materials
        self.penalty = penalty
        a = assemble(space, materials, penalty, with_hminus)
        self.assembled = a
        self.M1, self.M2 = space.M1, space.M2
        self.Dplus = a.Dplus
        self.Dminus = (-a.Dplus.T).tocsr()
        self.Hminus = a.Hminus
        self.Mrc = sp.block_diag([a.Mu, a.Mq], format="csr")
        self.Mplain = sp.block_diag([a.Mu_plain, a.Mq_plain], format="csr")
        self.B = a.B
        self.load_points = a.load_points
        self.load_sub = a.load_sub
        # persistent coordinate arrays let callers cache spatial factors
        self._load_x = np.ascontiguousarray(a.load_points[:, 0])
        self._load_y = np.ascontiguousarray(a.load_points[:, 1])
        self.pieces = a.pieces
        self._Mu = SpdFactor(a.Mu)
        self._Mq_inv = block_inverse(a.Mq, space.n_psi)
        self._opnorm = None

    @property
    def A(self) -> sp.csr_matrix:
        return sp.bmat([[None, self.Dminus], [self.Dplus, None]], format="csr")

    @property
    def size(self) -> int:
        return self.M1 + self.M2

    def solve_mass(self, Y: np.ndarray) -> np.ndarray:
        """``Mrc^{-1} Y`` for arrays of shape ``(n,)`` or ``(n, k)``."""
        Y = np.asarray(Y, dtype=float)
        out = np.empty_like(Y)
        out[:self.M1] = self._Mu.solve(Y[:self.M1])
        out[self.M1:] = self._Mq_inv @ Y[self.M1:]
        return out

    def op(self, Y: np.ndarray) -> np.ndarray:
        """``Mrc^{-1} A Y`` for arrays of shape ``(n,)`` or ``(n, k)``."""
        Y = np.asarray(Y, dtype=float)
        U, Q = Y[:self.M1], Y[self.M1:]
        out = np.empty_like(Y)
        out[:self.M1] = self._Mu.solve(self.Dminus @ Q)
        out[self.M1:] = self._Mq_inv @ (self.Dplus @ U)
        return out

    def load(self, f: Callable, t: float) -> np.ndarray:
        """Scalar load ``(f(t), phi_i)`` for ``f(x, y, t, sub)``."""
        x, y = self._load_x, self._load_y
        vals = np.broadcast_to(f(x, y, t, self.load_sub), x.shape)
        return self.B @ vals

    def apply_system(self, Y: np.ndarray, F: Optional[np.ndarray] = None) -> np.ndarray:
        """``Mrc^{-1} (A Y + Mplain (F; 0))`` with ``F`` scalar coefficients."""
        out = self.op(Y)
        if F is not None:
            out[:self.M1] += self._Mu.solve(self.assembled.Mu_plain @ F)
        return out

    def source_coeffs(self, f: Callable, t0: float, tau: float, r: int) -> np.ndarray:
        """Temporal Legendre coefficients of ``Mrc^{-1} (P_h f; 0)`` on one slab."""
        from numpy.polynomial import legendre as npleg
        from .time_integrator import legendre_project_samples

        xi, w = npleg.leggauss(r + 2)
        vals = np.stack([self.load(f, t0 + 0.5 * tau * (x + 1.0)) for x in xi], axis=-1)
        b = legendre_project_samples(vals, xi, w, r)
        out = np.zeros((self.size, r))
        out[:self.M1] = self._Mu.solve(b)
        return out

    def energy(self, Y: np.ndarray) -> float:
        """Discrete energy ``Y^T Mrc Y``."""
        return float(Y @ (self.Mrc @ Y))

    def norm(self, Y: np.ndarray) -> float:
        return float(np.sqrt(self.energy(Y)))

    def opnorm(self, max_iter: int = 200, rtol: float = 1e-6, seed: int = 0) -> float:
        """Power iteration estimate of ``||D||`` in the ``Mrc`` inner product.

        Iterates ``Y -> -op(op(Y))``, which is self-adjoint and positive
        semidefinite in that inner product with top eigenvalue ``||D||^2``.
        """
        if self._opnorm is not None:
            return self._opnorm
        rng = np.random.default_rng(seed)
        Y = rng.standard_normal(self.size)
        Y /= self.norm(Y)
        est = 0.0
        for _ in range(max_iter):
            Z = self.op(Y)
            new = self.norm(Z)           # ||op Y|| with ||Y|| = 1
            Y = -self.op(Z)
            nY = self.norm(Y)
            if nY == 0.0:
                break
            Y /= nY
            if est > 0.0 and abs(new - est) <= rtol * new:
                est = new
                break
            est = new
        self._opnorm = float(est)
        return self._opnorm

    def dump(self, path, which: str = "A") -> None:
        """Write a matrix in coordinate text format ``row col value``."""
        M = {"A": self.A, "Mrc": self.Mrc, "Dplus": self.Dplus}[which].tocoo()
        np.savetxt(path, np.column_stack([M.row, M.col, M.data]), fmt=["%d", "%d", "%.17g"])
