"""Quadrature on reference cells, boxes, straight segments and cut elements.

Cut fragments ``K_i = K cap Omega_i`` are integrated by fanning the
straight-sided cut polygon from its centroid. Each fan triangle is mapped
radially onto its (possibly curved) outer edge, so the curved edge follows
the interface through the parametrization of :func:`geometry.curve_points`.
The same parametrization provides the interface line rule, which keeps the
divergence theorem consistent at the discrete level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import MappingFold
from .geometry import CutTopology, LevelSet, curve_points, DEFAULT_ROOT_TOL


@dataclass(frozen=True)
class QuadRule:
    """Points, positive weights and (for line rules) unit normals."""

    points: np.ndarray
    weights: np.ndarray
    normals: Optional[np.ndarray] = None

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def __len__(self):
        return self.weights.size


def n_points_for_order(order: int) -> int:
    """Number of Gauss points exact for polynomials of degree ``order``."""
    return max(1, math.ceil((order + 1) / 2))


@lru_cache(maxsize=None)
def _gauss(n: int):
    x, w = leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_1d(n: int) -> QuadRule:
    """``n``-point Gauss-Legendre rule on ``[-1, 1]``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x, w = _gauss(n)
    return QuadRule(x.copy(), w.copy())


def gauss_01(n: int):
    """Gauss nodes and weights on ``[0, 1]``."""
    x, w = _gauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def tensor_rule(n: int) -> QuadRule:
    """Tensor Gauss rule with ``n x n`` points on ``[-1, 1]^2``."""
    x, w = _gauss(n)
    X, Y = np.meshgrid(x, x, indexing="xy")
    W = np.outer(w, w)
    return QuadRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel())


def box_rule(box, order: int) -> QuadRule:
    """Tensor Gauss rule on an axis-aligned box."""
    n = n_points_for_order(order)
    x0, y0, x1, y1 = box
    s, w = gauss_01(n)
    X, Y = np.meshgrid(x0 + s * (x1 - x0), y0 + s * (y1 - y0), indexing="xy")
    W = np.outer(w, w) * (x1 - x0) * (y1 - y0)
    return QuadRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel())


def segment_rule(a, b, order: int) -> QuadRule:
    """Gauss rule on the straight segment from ``a`` to ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s, w = gauss_01(n_points_for_order(order))
    L = float(np.hypot(*(b - a)))
    return QuadRule(a + s[:, None] * (b - a), w * L)


def polygon_centroid(verts: np.ndarray) -> np.ndarray:
    """Area centroid of a simple counter-clockwise polygon."""
    x, y = verts[:, 0], verts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    area = 0.5 * cr.sum()
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * area)


def _is_convex_ccw(verts: np.ndarray) -> bool:
    e = np.roll(verts, -1, axis=0) - verts
    en = np.roll(e, -1, axis=0)
    return bool(np.all(e[:, 0] * en[:, 1] - e[:, 1] * en[:, 0] >= -1e-14 * np.abs(e).max() ** 2))


def fan_rule(center: np.ndarray, edges_E: np.ndarray, edges_dE: np.ndarray,
             s_w: np.ndarray, order: int) -> QuadRule:
    """Quadrature over the fan of triangles ``(center, edge)``.

    Parameters
    ----------
    edges_E, edges_dE : ndarray (ne, ns, 2)
        Edge points ``E(s_q)`` and tangents ``E'(s_q)`` at the ``s`` nodes.
    s_w : ndarray (ns,)
        Gauss weights of the ``s`` nodes on ``[0, 1]``.
    """
    t, wt = gauss_01(n_points_for_order(order + 1))
    rel = edges_E - center                                      # (ne, ns, 2)
    cross = rel[..., 0] * edges_dE[..., 1] - rel[..., 1] * edges_dE[..., 0]
    if np.any(cross <= 0.0):
        raise MappingFold("fan map from the polygon centroid folds over")
    pts = center + t[None, None, :, None] * rel[:, :, None, :]
    w = (s_w[None, :, None] * wt[None, None, :] * t[None, None, :]) * cross[:, :, None]
    return QuadRule(pts.reshape(-1, 2), w.ravel())


@dataclass(frozen=True)
class CutRules:
    """Volume rules on both fragments of a cut element and the interface rule."""

    volume: dict
    interface: QuadRule


def _straight_edges(verts: np.ndarray, s: np.ndarray):
    a = verts[:-1]
    b = verts[1:]
    E = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    dE = np.broadcast_to((b - a)[:, None, :], E.shape)
    return E, dE


def cut_rules_many(topos, level_set: LevelSet, order: int,
                   root_tol: float = DEFAULT_ROOT_TOL) -> list:
    """Volume and interface rules for many cut elements.

    The interface points of all elements are located in one batched root
    search.

    Returns
    -------
    list of CutRules
    """
    topos = list(topos)
    if not topos:
        return []
    ns = n_points_for_order(order)
    s, ws = gauss_01(ns)
    m = len(topos)
    p0 = np.array([t.cut_points[0] for t in topos])
    p1 = np.array([t.cut_points[1] for t in topos])
    h = np.array([t.h for t in topos])
    x, dx = curve_points(level_set, np.repeat(p0, ns, axis=0), np.repeat(p1, ns, axis=0),
                         np.tile(s, m), np.repeat(h, ns), root_tol)
    x = x.reshape(m, ns, 2)
    dx = dx.reshape(m, ns, 2)
    out = []
    for k, topo in enumerate(topos):
        speed = np.hypot(dx[k, :, 0], dx[k, :, 1])
        normals = np.column_stack([dx[k, :, 1], -dx[k, :, 0]]) / speed[:, None]
        gamma_rule = QuadRule(x[k].copy(), ws * speed, normals)
        vol = {}
        for sub in (1, 2):
            verts = topo.polygon(sub)
            if not _is_convex_ccw(verts):
                # a rectangle cut by a straight chord is always convex
                raise MappingFold("cut polygon is not convex")
            c = polygon_centroid(verts)
            E, dE = _straight_edges(verts, s)
            if sub == 1:
                cE, cdE = x[k], dx[k]
            else:                       # chord traversed from P1 back to P0
                cE, cdE = x[k, ::-1], -dx[k, ::-1]
            try:
                vol[sub] = fan_rule(c, np.concatenate([E, cE[None]], axis=0),
                                    np.concatenate([dE, cdE[None]], axis=0), ws, order)
            except MappingFold:
                # thin fragment with the interface bulging past the centroid
                vol[sub] = _chord_strip_rule(verts, c, x[k], s, ws, order, sub)
        out.append(CutRules(vol, gamma_rule))
    return out


def _chord_strip_rule(verts, center, curve, s, ws, order, sub) -> QuadRule:
    """Straight cut polygon plus or minus the strip between chord and interface.

    The strip is ``{P0 + s (P1 - P0) + delta n : delta between 0 and D(s)}``
    with ``n`` the outward normal of the subdomain 1 polygon on the chord.
    Weights on the subtracted strip are negative.
    """
    closed = np.concatenate([verts, verts[:1]])
    E, dE = _straight_edges(closed, s)
    straight = fan_rule(center, E, dE, ws, order)
    p0, p1 = verts[-1], verts[0]
    if sub == 2:
        p0, p1 = p1, p0
    t = p1 - p0
    L = float(np.hypot(*t))
    n = np.array([t[1], -t[0]]) / L
    chord = p0 + s[:, None] * t
    D = (curve - chord) @ n
    tau, wt = gauss_01(n_points_for_order(order))
    pts = chord[:, None, :] + (D[:, None] * tau[None, :])[..., None] * n
    w = (ws * D * L)[:, None] * wt[None, :]
    if sub == 2:
        w = -w
    return QuadRule(np.concatenate([straight.points, pts.reshape(-1, 2)]),
                    np.concatenate([straight.weights, w.ravel()]))


def cut_volume_rule(topo: CutTopology, level_set: LevelSet, order: int,
                    sub: Optional[int] = None, root_tol: float = DEFAULT_ROOT_TOL):
    """Volume rule on ``K cap Omega_sub`` (both fragments as a dict if ``sub`` is None)."""
    if not topo.is_cut:
        rule = box_rule(topo.box, order)
        return rule if sub is not None else {topo.subdomains()[0]: rule}
    rules = cut_rules_many([topo], level_set, order, root_tol)[0].volume
    return rules if sub is None else rules[sub]


def interface_curve_rule(topo: CutTopology, level_set: LevelSet, order: int,
                         root_tol: float = DEFAULT_ROOT_TOL) -> QuadRule:
    """Line rule on the interface piece inside ``K`` with normals pointing out of subdomain 1."""
    if not topo.is_cut:
        raise ValueError("element is not cut")
    return cut_rules_many([topo], level_set, order, root_tol)[0].interface


@dataclass
class MeshQuadrature:
    """Volume and interface rules for every element of an induced mesh.

    ``volume[(e, sub)]`` is the rule on ``K_e cap Omega_sub``;
    ``interface[e]`` the interface rule of cut element ``e``. Uncut elements
    carry their tensor box rule.
    """

    order: int
    volume: dict
    interface: dict


def mesh_quadrature(mesh, order: int) -> MeshQuadrature:
    """Build all volume and interface rules of ``mesh`` for polynomial ``order``."""
    volume, interface = {}, {}
    cut = [e for e in mesh.elements if e.is_cut]
    rules = cut_rules_many([e.topo for e in cut], mesh.level_set, order, mesh.root_tol)
    for e, cr in zip(cut, rules):
        volume[(e.id, 1)] = cr.volume[1]
        volume[(e.id, 2)] = cr.volume[2]
        interface[e.id] = cr.interface
    for e in mesh.elements:
        if not e.is_cut:
            volume[(e.id, e.subdomains()[0])] = box_rule(e.box, order)
    return MeshQuadrature(order, volume, interface)
