"""Strongly stable explicit time stepping via Legendre coefficient recursions.

The integrator advances ``Y' = D Y + R(t)`` over one slab ``(t0, t0 + tau)``
where ``D`` is any operator that is skew-adjoint in some inner product.
Within a slab every stage ``Y_m`` is a polynomial in time stored through its
coefficients in the shifted Legendre basis ``L_j(2 (t - t0) / tau - 1)``.

Operators are callables acting column-wise on arrays of shape ``(n, k)``.
A dense or sparse matrix can be wrapped with :func:`as_operator`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import Legendre, Polynomial

from .errors import CflViolation, CflWarning, OutOfSlab

Operator = Callable[[np.ndarray], np.ndarray]


def as_operator(matrix) -> Operator:
    """Wrap a (dense or sparse) matrix as a column-wise operator."""
    return lambda x: matrix @ x


def _check_order(r: int) -> int:
    if int(r) != r or r < 1:
        raise ValueError(f"order r must be a positive integer, got {r!r}")
    return int(r)


def cfl_limit(r: int, gamma: float = 0.1) -> float:
    """Return the CFL constant lambda(r, gamma).

    Parameters
    ----------
    r : int
        Order of the scheme, ``r >= 1``.
    gamma : float
        Stabilization parameter in ``(0, 1)``. Ignored when ``r % 4`` is 0 or 3.

    Returns
    -------
    float
        Largest admissible ``tau * ||D||`` for strong stability.
    """
    r = _check_order(r)
    if r % 4 in (1, 2) and not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma!r}")
    return _lambda(r, float(gamma))


def _lambda(r: int, g: float) -> float:
    cls = r % 4
    if cls == 0:
        return math.sqrt(6.0)
    if cls == 3:
        return math.sqrt(2.0)
    if cls == 1:
        if r == 1:
            return math.sqrt((1.0 - g * g) / 2.0)
        return math.sqrt(2.0 * (1.0 - g) / (3.0 - g))
    if r == 2:
        return math.sqrt(2.0 * (4.0 - g * g) / 3.0)
    return math.sqrt(6.0 * (2.0 - g) / (4.0 - g))


def is_stabilized(r: int) -> bool:
    """True when the scheme of order ``r`` carries the extra stabilizing term."""
    return _check_order(r) % 4 in (1, 2)


def gamma_mr(m: int, r: int, gamma: float = 0.1) -> float:
    """Stage blending weight ``gamma_m^r`` (zero when ``r % 4`` is 0 or 3)."""
    r = _check_order(r)
    if not 1 <= m <= r:
        raise ValueError(f"stage index m must satisfy 1 <= m <= r, got m={m}, r={r}")
    if not is_stabilized(r):
        return 0.0
    return (m + 1) * (m - 1 + gamma) / (m * (m + gamma))


@dataclass(frozen=True)
class CflParams:
    """Order, stabilization parameter and safety factor of a run."""

    r: int
    gamma: float = 0.1
    safety: float = 0.1

    def __post_init__(self):
        _check_order(self.r)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if not 0.0 < self.safety <= 1.0:
            raise ValueError(f"safety must lie in (0, 1], got {self.safety!r}")

    @property
    def lam(self) -> float:
        return cfl_limit(self.r, self.gamma)

    def tau_for(self, opnorm: float) -> float:
        """Step size ``safety * lambda / ||D||``."""
        return self.safety * self.lam / opnorm


def _to_xi(t, t0, tau):
    return 2.0 * (np.asarray(t, dtype=float) - t0) / tau - 1.0


def project_source_legendre(R, t0: float, tau: float, r: int,
                            n_quad: Optional[int] = None) -> np.ndarray:
    """Legendre coefficients of the L2 projection of ``R`` onto degree ``r-1``.

    Parameters
    ----------
    R : callable
        ``R(t)`` returns an array of shape ``(n,)``.
    t0, tau : float
        Slab start and length.
    r : int
        Scheme order; ``r`` coefficients are returned.
    n_quad : int, optional
        Number of Gauss points, at least ``r + 2`` (the default).

    Returns
    -------
    ndarray, shape (n, r)
        Column ``j`` holds ``(2j+1)/tau * int R(t) L_j(t) dt``.
    """
    r = _check_order(r)
    nq = r + 2 if n_quad is None else max(int(n_quad), r + 2)
    xi, w = npleg.leggauss(nq)
    vals = np.stack([np.asarray(R(t0 + 0.5 * tau * (x + 1.0)), dtype=float)
                     for x in xi], axis=-1)
    return legendre_project_samples(vals, xi, w, r)


def legendre_project_samples(vals: np.ndarray, xi: np.ndarray, w: np.ndarray,
                             r: int) -> np.ndarray:
    """Legendre projection from samples ``vals[..., q]`` at Gauss nodes ``xi``."""
    V = npleg.legvander(xi, r - 1)                    # (nq, r)
    scale = (2.0 * np.arange(r) + 1.0) / 2.0
    return (vals * w) @ V * scale


@dataclass(frozen=True)
class SlabState:
    """Result of one slab: the Legendre coefficients of the final stage.

    Attributes
    ----------
    t0, tau : float
        Slab start and length.
    coeffs : ndarray, shape (n, nc)
        Coefficients of the output polynomial in the shifted Legendre basis.
    source_coeffs : ndarray or None
        Temporal Legendre coefficients of the projected source.
    stages : list or None
        ``(a^m, atilde^m)`` coefficient pairs for ``m = 0..r`` if requested.
    """

    t0: float
    tau: float
    coeffs: np.ndarray
    source_coeffs: Optional[np.ndarray] = None
    stages: Optional[list] = field(default=None, repr=False)

    @property
    def t1(self) -> float:
        return self.t0 + self.tau

    def evaluate(self, t) -> np.ndarray:
        """Value at time(s) ``t`` inside the slab.

        Returns shape ``(n,)`` for scalar ``t`` and ``(n, len(t))`` otherwise.
        """
        tt = np.asarray(t, dtype=float)
        slack = 1e-12 * max(abs(self.t0), abs(self.t1), self.tau)
        if np.any(tt < self.t0 - slack) or np.any(tt > self.t1 + slack):
            raise OutOfSlab(f"t={t} outside slab [{self.t0}, {self.t1}]")
        xi = np.clip(_to_xi(tt, self.t0, self.tau), -1.0, 1.0)
        V = npleg.legvander(np.atleast_1d(xi), self.coeffs.shape[1] - 1)
        out = self.coeffs @ V.T
        return out[:, 0] if tt.ndim == 0 else out

    def endpoint(self) -> np.ndarray:
        """Value at ``t0 + tau``, where every Legendre polynomial equals one."""
        return self.coeffs.sum(axis=1)

    def start(self) -> np.ndarray:
        signs = (-1.0) ** np.arange(self.coeffs.shape[1])
        return self.coeffs @ signs


def _legendre_step(DX: np.ndarray, tau: float, ncol: int) -> np.ndarray:
    """Coefficients k = 1..ncol-1 of the antiderivative-type recursion.

    Returns ``out`` with ``out[:, k] = tau/2 (X[k-1]/(2k-1) - X[k+1]/(2k+3))``
    for ``1 <= k < ncol`` where missing entries of ``X`` count as zero.
    """
    n = DX.shape[0]
    pad = np.zeros((n, ncol + 1))
    m = min(DX.shape[1], ncol + 1)
    pad[:, :m] = DX[:, :m]
    k = np.arange(1, ncol)
    out = np.zeros((n, ncol))
    out[:, 1:] = 0.5 * tau * (pad[:, k - 1] / (2 * k - 1) - pad[:, k + 1] / (2 * k + 3))
    return out


def _close_start(coeffs: np.ndarray, y: np.ndarray) -> None:
    """Fix the zeroth coefficient so the polynomial equals ``y`` at the slab start."""
    signs = (-1.0) ** np.arange(1, coeffs.shape[1])
    coeffs[:, 0] = y - coeffs[:, 1:] @ signs


def step_slab(op: Operator, y, t0: float, tau: float, r: int,
              gamma: float = 0.1, source_coeffs=None,
              opnorm: Optional[float] = None, safety: float = 1.0,
              on_violation: str = "warn", keep_stages: bool = False) -> SlabState:
    """Advance ``Y' = D Y + R`` over one slab.

    Parameters
    ----------
    op : callable
        Applies ``D`` to an array of shape ``(n, k)``.
    y : array_like, shape (n,)
        State at ``t0``.
    t0, tau : float
        Slab start and length.
    r : int
        Order of the scheme.
    gamma : float
        Stabilization parameter (used when ``r % 4`` is 1 or 2).
    source_coeffs : array_like, shape (n, r), optional
        Temporal Legendre coefficients of the projected source.
    opnorm : float, optional
        Estimate of ``||D||`` in the inner product where ``D`` is skew. When
        given, ``tau * opnorm <= safety * lambda(r, gamma)`` is checked.
    on_violation : {"warn", "raise", "ignore"}
        Action on a CFL violation.
    keep_stages : bool
        Store all intermediate coefficient arrays on the result.

    Returns
    -------
    SlabState
    """
    r = _check_order(r)
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if opnorm is not None:
        _check_cfl(tau * opnorm, safety, r, gamma, on_violation)

    r_m = lambda m: m + r - 1                      # noqa: E731
    rt_m = lambda m: max(m + r - 1, m + 1)         # noqa: E731
    stab = is_stabilized(r)

    if source_coeffs is None:
        R = None
        deg_R = -1
    else:
        R = np.zeros((n, r))
        src = np.asarray(source_coeffs, dtype=float).reshape(n, -1)
        R[:, :min(r, src.shape[1])] = src[:, :r]
        deg_R = r - 1

    ncol_a = r_m(0) + 1
    a = np.zeros((n, ncol_a))
    a[:, 0] = y
    deg_a = 0
    stages = [] if keep_stages else None

    # The stabilized stage is carried as atilde^m = a^m + e^m. Subtracting the
    # recursions for a and atilde shows that e obeys the same recursion with
    # D applied to gamma_m * e^{m-1}, no source, and e^m(t0) = 0.
    if stab:
        Dy = op(y[:, None])[:, 0]
        e = np.zeros((n, rt_m(0) + 1))
        e[:, 0] = 0.5 * tau / gamma * Dy
        e[:, 1] = 0.5 * tau / gamma * Dy
        deg_e = 1
    if keep_stages:
        stages.append((a.copy(), (a_plus(a, e) if stab else a.copy())))

    for m in range(1, r + 1):
        ncol = r_m(m) + 1
        DA = op(a[:, :deg_a + 1]) if deg_a >= 0 else np.zeros((n, 0))
        a_new = _legendre_step(DA, tau, ncol)
        if R is not None:
            a_new += _legendre_step(R, tau, ncol)
        _close_start(a_new, y)
        new_deg_a = min(ncol - 1, max(deg_a, deg_R) + 1)

        if stab:
            ncol_t = rt_m(m) + 1
            g = gamma_mr(m, r, gamma)
            DE = g * op(e[:, :deg_e + 1])
            e_new = _legendre_step(DE, tau, ncol_t)
            _close_start(e_new, np.zeros(n))
            deg_e = min(ncol_t - 1, deg_e + 1)
            e = e_new
        a, deg_a = a_new, new_deg_a
        if keep_stages:
            stages.append((a.copy(), (a_plus(a, e) if stab else a.copy())))

    final = a_plus(a, e) if stab else a
    return SlabState(float(t0), float(tau), final,
                     None if R is None else R, stages)


def a_plus(a: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Sum of two coefficient arrays of possibly different lengths."""
    nc = max(a.shape[1], e.shape[1])
    out = np.zeros((a.shape[0], nc))
    out[:, :a.shape[1]] += a
    out[:, :e.shape[1]] += e
    return out


def _check_cfl(lam: float, safety: float, r: int, gamma: float, mode: str):
    limit = safety * _lambda(r, gamma)
    if lam <= limit * (1.0 + 1e-12) or mode == "ignore":
        return
    msg = f"tau*||D|| = {lam:.6g} exceeds safety*lambda(r={r}) = {limit:.6g}"
    if mode == "raise":
        raise CflViolation(msg)
    warnings.warn(msg, CflWarning, stacklevel=3)


def integrate(op: Operator, y0, t_end: float, tau: float, r: int,
              gamma: float = 0.1, source=None, opnorm=None, safety: float = 1.0,
              on_violation: str = "warn", t_start: float = 0.0,
              callback=None) -> np.ndarray:
    """Run ``step_slab`` from ``t_start`` to ``t_end`` with step ``tau``.

    The last slab is truncated to land on ``t_end``. ``source(t)``, if given,
    returns the source vector at time ``t``. ``callback(state)`` is called
    after every slab.
    """
    y = np.asarray(y0, dtype=float).copy()
    t = t_start
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        h = min(tau, t_end - t)
        coeffs = None if source is None else project_source_legendre(source, t, h, r)
        state = step_slab(op, y, t, h, r, gamma, coeffs, opnorm, safety, on_violation)
        if callback is not None:
            callback(state)
        y = state.endpoint()
        t = state.t1
    return y


def _monomial_source(source_coeffs: np.ndarray, tau: float) -> np.ndarray:
    """Monomial coefficients in ``s = t - t0`` of the Legendre source expansion."""
    n, nr = source_coeffs.shape
    out = np.zeros((n, nr))
    for i in range(nr):
        poly = Legendre.basis(i, domain=[0.0, tau]).convert(kind=Polynomial)
        c = poly.coef
        out[:, :c.size] += np.outer(source_coeffs[:, i], c)
    return out


def closed_form_reference(D: np.ndarray, y, t0: float, tau: float, r: int,
                          gamma: float, source_coeffs, t: float):
    """Direct evaluation of the stage polynomials (test oracle).

    Uses the truncated exponential series with the exact polynomial
    convolution of the projected source.

    Returns
    -------
    Y, Yt : list of ndarray
        ``Y[m]`` and ``Yt[m]`` for ``m = 0..r`` evaluated at time ``t``.
    """
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    s = float(t) - t0
    stab = is_stabilized(r)
    powers = [y]
    for _ in range(r + 1):
        powers.append(D @ powers[-1])
    if source_coeffs is None:
        c = np.zeros((n, 0))
    else:
        c = _monomial_source(np.asarray(source_coeffs, dtype=float).reshape(n, -1), tau)
    # D^j applied to each monomial source coefficient
    Dc = [c]
    for _ in range(r):
        Dc.append(D @ Dc[-1])
    Ys, Yts = [], []
    for m in range(r + 1):
        val = sum(powers[j] * s ** j / math.factorial(j) for j in range(m + 1))
        for j in range(m):
            for k in range(c.shape[1]):
                val = val + Dc[j][:, k] * s ** (j + k + 1) * math.factorial(k) / math.factorial(j + k + 1)
        Ys.append(val)
        if stab or m == 0:
            Yts.append(val + powers[m + 1] * s ** (m + 1) / (math.factorial(m) * (m + gamma)))
        else:
            Yts.append(val)
    return Ys, Yts


def random_skew(n: int, rng: np.random.Generator, norm: float = 1.0) -> np.ndarray:
    """Dense random skew-symmetric matrix with spectral norm ``norm``."""
    G = rng.standard_normal((n, n))
    D = G - G.T
    return D * (norm / np.linalg.norm(D, 2))


def max_norm_ratio(op: Operator, y0, tau: float, r: int, gamma: float = 0.1,
                   n_slabs: int = 100, samples: int = 33,
                   norm: Callable = np.linalg.norm) -> float:
    """Largest ``||Y(t)|| / ||Y0||`` over ``samples`` equispaced times per slab."""
    y = np.asarray(y0, dtype=float)
    n0 = norm(y)
    worst = 1.0
    for n in range(n_slabs):
        state = step_slab(op, y, n * tau, tau, r, gamma)
        vals = state.evaluate(np.linspace(state.t0, state.t1, samples))
        worst = max(worst, max(norm(vals[:, k]) for k in range(samples)) / n0)
        y = state.endpoint()
    return worst
