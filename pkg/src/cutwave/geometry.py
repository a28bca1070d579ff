"""Level-set interfaces, cut-element classification and interface deviation.

Conventions
-----------
``phi < 0`` in subdomain 1 and ``phi > 0`` in subdomain 2. Boxes are tuples
``(x0, y0, x1, y1)``. Corners are numbered counter-clockwise starting at the
lower-left one; side ``k`` runs from corner ``k`` to corner ``k + 1`` so the
sides are south, east, north, west.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import elementwise

from .errors import (DegenerateChord, GeometryError, MoreThanTwoCuts,
                     RootFindingError, SameSideCuts, TangentialContact)

INTERIOR1 = "interior1"
INTERIOR2 = "interior2"
CUT = "cut"

DEFAULT_ROOT_TOL = 1e-12
DEFAULT_SIDE_SAMPLES = 16
DEFAULT_ETA_SAMPLES = 64
# "distance": anchor distance is the distance from the vertex to the chord;
# "max": the largest distance from the vertex to any chord point.
ETA_ANCHORS = ("distance", "max")
DEFAULT_ETA_ANCHOR = "distance"


# ---------------------------------------------------------------------------
# level sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelSet:
    """Implicit interface description.

    Parameters
    ----------
    phi : callable
        Vectorized ``phi(x, y)``; negative in subdomain 1.
    grad_phi : callable, optional
        Vectorized ``grad_phi(x, y) -> (gx, gy)``. Central differences are
        used when omitted.
    name : str
    params : dict
    """

    phi: Callable
    grad_phi: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x, y):
        return self.phi(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def gradient(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.grad_phi is not None:
            gx, gy = self.grad_phi(x, y)
            return np.asarray(gx, dtype=float), np.asarray(gy, dtype=float)
        hx = 1e-6 * np.maximum(1.0, np.abs(x))
        hy = 1e-6 * np.maximum(1.0, np.abs(y))
        gx = (self.phi(x + hx, y) - self.phi(x - hx, y)) / (2 * hx)
        gy = (self.phi(x, y + hy) - self.phi(x, y - hy)) / (2 * hy)
        return gx, gy

    def subdomain(self, x, y):
        """1 where ``phi < 0`` and 2 elsewhere."""
        return np.where(self(x, y) < 0.0, 1, 2)


def circle(cx: float = 0.0, cy: float = 0.0, radius: float = 1.0) -> LevelSet:
    """Signed distance to a circle; the disk is subdomain 1."""

    def phi(x, y):
        return np.hypot(x - cx, y - cy) - radius

    def grad(x, y):
        d = np.hypot(x - cx, y - cy)
        d = np.where(d == 0.0, 1.0, d)
        return (x - cx) / d, (y - cy) / d

    return LevelSet(phi, grad, "circle", dict(cx=cx, cy=cy, radius=radius))


def line(a: float = 0.0, b: float = 1.0, c: float = 0.0) -> LevelSet:
    """Half-plane ``a x + b y + c < 0`` as subdomain 1 (normalized)."""
    nrm = math.hypot(a, b)
    if nrm == 0.0:
        raise ValueError("line needs a nonzero normal (a, b)")
    a, b, c = a / nrm, b / nrm, c / nrm

    def phi(x, y):
        return a * x + b * y + c

    def grad(x, y):
        return np.full(np.shape(x), a), np.full(np.shape(x), b)

    return LevelSet(phi, grad, "line", dict(a=a, b=b, c=c))


def two_circles(r: float = 0.51, x1: float = -0.52, x2: float = 0.52) -> LevelSet:
    """Union of two disks of radius ``r`` centred at ``(x1, 0)`` and ``(x2, 0)``."""

    def phi(x, y):
        return np.minimum(np.hypot(x - x1, y), np.hypot(x - x2, y)) - r

    def grad(x, y):
        d1 = np.hypot(x - x1, y)
        d2 = np.hypot(x - x2, y)
        near1 = d1 <= d2
        cx = np.where(near1, x1, x2)
        d = np.where(near1, d1, d2)
        d = np.where(d == 0.0, 1.0, d)
        return (x - cx) / d, y / d

    return LevelSet(phi, grad, "two_circles", dict(r=r, x1=x1, x2=x2))


_BUILTINS = {"circle": circle, "line": line, "two_circles": two_circles}


def from_config(spec: dict) -> Optional[LevelSet]:
    """Build a builtin level set from ``{"shape": name, **params}``.

    ``shape = "none"`` returns ``None`` (no interface).
    """
    spec = dict(spec)
    shape = spec.pop("shape", "none")
    if shape in (None, "none"):
        return None
    if shape not in _BUILTINS:
        raise ValueError(f"unknown interface shape {shape!r}; "
                         f"expected one of {sorted(_BUILTINS)} or 'none'")
    return _BUILTINS[shape](**{k: float(v) for k, v in spec.items()})


# ---------------------------------------------------------------------------
# Theta factor
# ---------------------------------------------------------------------------

def chebyshev_t(s):
    """``T(s) = s + sqrt(s^2 - 1)`` for ``s >= 1``."""
    s = np.asarray(s, dtype=float)
    return s + np.sqrt(np.maximum(s * s - 1.0, 0.0))


def theta_factor(eta, p: int):
    """Inverse-inequality inflation factor for interface deviation ``eta``."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0.0) or np.any(eta >= 1.0):
        raise ValueError("eta must lie in [0, 1)")
    out = chebyshev_t((1.0 + 3.0 * eta) / (1.0 - eta)) ** (4 * p)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# cut topology
# ---------------------------------------------------------------------------

def box_corners(box) -> np.ndarray:
    x0, y0, x1, y1 = box
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def box_size(box) -> float:
    """Element size ``h_K``: the longer side of the box."""
    return max(box[2] - box[0], box[3] - box[1])


@dataclass(frozen=True)
class CutTopology:
    """Classification of one element against the interface.

    Attributes
    ----------
    element_id : int
    box : tuple
    kind : {"interior1", "interior2", "cut"}
    cut_points : ndarray (2, 2) or None
        ``P0`` where ``phi`` changes from negative to positive along the
        counter-clockwise boundary traversal, then ``P1``.
    cut_sides : tuple of int or None
        Side index of ``P0`` and ``P1``.
    cut_params : tuple of float or None
        Position of each cut point along its side, in ``[0, 1]``.
    chord : float
        Length of the straight segment ``P0 P1`` (0 if uncut).
    eta, theta : float
    side_fractions : ndarray (4, 2)
        ``|e cap Omega_i| / |e|`` per side ``e`` and subdomain ``i``.
    corner_sub : ndarray (4,)
        Subdomain (1 or 2) of each corner.
    """

    element_id: int
    box: tuple
    kind: str
    cut_points: Optional[np.ndarray]
    cut_sides: Optional[tuple]
    cut_params: Optional[tuple]
    chord: float
    eta: float
    theta: float
    side_fractions: np.ndarray
    corner_sub: np.ndarray

    @property
    def is_cut(self) -> bool:
        return self.kind == CUT

    @property
    def h(self) -> float:
        return box_size(self.box)

    def subdomains(self) -> tuple:
        """Subdomains present in the element, in copy order."""
        if self.kind == CUT:
            return (1, 2)
        return (1,) if self.kind == INTERIOR1 else (2,)

    def polygon(self, sub: int) -> np.ndarray:
        """Counter-clockwise straight-sided cut polygon of ``K cap Omega_sub``.

        For subdomain 1 the last edge runs from ``P0`` to ``P1`` and for
        subdomain 2 from ``P1`` to ``P0``; that edge is the chord.
        """
        corners = box_corners(self.box)
        if self.kind != CUT:
            return corners
        p0, p1 = self.cut_points
        s0, s1 = self.cut_sides
        if sub == 1:
            start, stop, first, last = s1, s0, p1, p0
        else:
            start, stop, first, last = s0, s1, p0, p1
        verts = [first]
        k = start
        while k != stop:
            k = (k + 1) % 4
            verts.append(corners[k])
        verts.append(last)
        return np.array(verts)


def is_large_element(topo: CutTopology, delta0: float = 0.1) -> dict:
    """Large-element test for each subdomain.

    Returns ``{1: bool, 2: bool}``. A subdomain absent from the element is
    reported as large (there is nothing to test).
    """
    out = {}
    for i in (1, 2):
        f = topo.side_fractions[:, i - 1]
        present = f > 0.0
        out[i] = bool(np.all(f[present] >= delta0))
    return out


def min_side_fraction(topo: CutTopology) -> float:
    """Smallest nonzero side fraction over both subdomains (1 if uncut)."""
    f = topo.side_fractions
    nz = f[f > 0.0]
    return float(nz.min()) if nz.size else 1.0


def _side_geometry(boxes: np.ndarray):
    """Start points and edge vectors of the four sides: (N, 4, 2) each."""
    x0, y0, x1, y1 = boxes.T
    start = np.stack([np.stack([x0, y0], -1), np.stack([x1, y0], -1),
                      np.stack([x1, y1], -1), np.stack([x0, y1], -1)], axis=1)
    end = np.roll(start, -1, axis=1)
    return start, end - start


def find_segment_roots(level_set: LevelSet, a: np.ndarray, e: np.ndarray,
                       ul: np.ndarray, ur: np.ndarray,
                       xatol: float = DEFAULT_ROOT_TOL) -> np.ndarray:
    """Roots ``u`` in ``[ul, ur]`` of ``phi(a + u e)`` for many segments at once.

    Each bracket must contain a sign change. ``xatol`` is relative to the
    segment length, which never exceeds the element size.
    """
    if len(ul) == 0:
        return np.zeros(0)
    phi = level_set.phi

    def f(u, ax, ay, ex, ey):
        return phi(ax + u * ex, ay + u * ey)

    res = elementwise.find_root(
        f, (ul, ur), args=(a[:, 0], a[:, 1], e[:, 0], e[:, 1]),
        tolerances=dict(xatol=xatol, xrtol=0.0, fatol=0.0, frtol=0.0))
    if np.any(res.status < 0) or not np.all(np.isfinite(res.x)):
        raise RootFindingError("bracketed root search failed on a segment")
    return res.x


def classify_many(level_set: LevelSet, boxes, root_tol: float = DEFAULT_ROOT_TOL,
                  p: int = 1, element_ids=None, n_side: int = DEFAULT_SIDE_SAMPLES,
                  n_eta: int = DEFAULT_ETA_SAMPLES, with_eta: bool = True,
                  eta_anchor: str = DEFAULT_ETA_ANCHOR):
    """Classify many boxes at once.

    Returns
    -------
    topologies : list
        ``CutTopology`` for every box, or the exception instance describing
        why the box could not be classified.
    """
    boxes = np.atleast_2d(np.asarray(boxes, dtype=float))
    nb = boxes.shape[0]
    ids = np.arange(nb) if element_ids is None else np.asarray(element_ids)
    if np.any(boxes[:, 2] <= boxes[:, 0]) or np.any(boxes[:, 3] <= boxes[:, 1]):
        raise ValueError("degenerate element box")
    if root_tol <= 0:
        raise ValueError("root_tol must be positive")
    h = np.maximum(boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1])
    start, edge = _side_geometry(boxes)
    u = np.linspace(0.0, 1.0, n_side + 1)
    px = start[..., 0, None] + u * edge[..., 0, None]        # (N, 4, ns+1)
    py = start[..., 1, None] + u * edge[..., 1, None]
    vals = level_set(px, py)
    corner_vals = vals[:, :, 0]                              # (N, 4)
    pos = vals > 0.0
    flips = pos[..., 1:] != pos[..., :-1]                    # (N, 4, ns)
    nflip_side = flips.sum(axis=2)
    nflip = nflip_side.sum(axis=1)

    results: list = [None] * nb
    tangent = np.any(np.abs(corner_vals) <= root_tol * h[:, None], axis=1)
    for b in np.nonzero(tangent)[0]:
        results[b] = TangentialContact(
            f"element {ids[b]}: level set vanishes at a corner of {tuple(boxes[b])}")
    corner_sub = np.where(corner_vals > 0.0, 2, 1)

    for b in np.nonzero(~tangent & (nflip == 0))[0]:
        kind = INTERIOR1 if corner_sub[b, 0] == 1 else INTERIOR2
        frac = np.zeros((4, 2))
        frac[:, corner_sub[b, 0] - 1] = 1.0
        results[b] = CutTopology(int(ids[b]), tuple(boxes[b]), kind, None, None, None,
                                 0.0, 0.0, 1.0, frac, corner_sub[b].copy())
    for b in np.nonzero(~tangent & (nflip > 2))[0]:
        results[b] = MoreThanTwoCuts(
            f"element {ids[b]}: {nflip[b]} sign changes on the boundary")
    same = ~tangent & (nflip == 2) & np.any(nflip_side >= 2, axis=1)
    for b in np.nonzero(same)[0]:
        results[b] = SameSideCuts(f"element {ids[b]}: both cuts on one side")
    cut = np.nonzero(~tangent & (nflip == 2) & ~same)[0]
    if cut.size == 0:
        return results

    # one root per flipping side
    bi, si, ki = np.nonzero(flips[cut])
    bi = cut[bi]
    roots = find_segment_roots(level_set, start[bi, si], edge[bi, si],
                               u[ki], u[ki + 1], root_tol)
    rising = ~pos[bi, si, ki]                # negative -> positive along ccw
    pts = start[bi, si] + roots[:, None] * edge[bi, si]

    topo_args = {}
    for b, s, t, rise, pt in zip(bi, si, roots, rising, pts):
        d = topo_args.setdefault(int(b), {})
        d["P0" if rise else "P1"] = (int(s), float(t), pt)
    for b, d in topo_args.items():
        s0, t0, p0 = d["P0"]
        s1, t1, p1 = d["P1"]
        frac = np.zeros((4, 2))
        for s in range(4):
            if s == s0:      # phi goes - to + : first part is subdomain 1
                f1 = t0
            elif s == s1:
                f1 = 1.0 - t1
            else:
                f1 = 1.0 if corner_sub[b, s] == 1 else 0.0
            frac[s] = (f1, 1.0 - f1)
        chord = float(np.hypot(*(p1 - p0)))
        if chord < root_tol * h[b]:
            results[b] = DegenerateChord(f"element {ids[b]}: chord length {chord:.3e}")
            continue
        results[b] = CutTopology(int(ids[b]), tuple(boxes[b]), CUT, np.array([p0, p1]),
                                 (s0, s1), (t0, t1), chord, 0.0, 1.0, frac,
                                 corner_sub[b].copy())
    if with_eta:
        cut_ok = [b for b in topo_args if isinstance(results[b], CutTopology)]
        if cut_ok:
            etas = deviation_many(level_set, [results[b] for b in cut_ok], root_tol, n_eta,
                                  eta_anchor)
            for b, eta in zip(cut_ok, etas):
                t = results[b]
                theta = theta_factor(eta, p) if eta < 1.0 else math.inf
                results[b] = _replace(t, eta=float(eta), theta=float(theta))
    return results


def _replace(topo: CutTopology, **kw) -> CutTopology:
    from dataclasses import replace
    return replace(topo, **kw)


def classify_element(level_set: LevelSet, element_box, root_tol: float = DEFAULT_ROOT_TOL,
                     p: int = 1, element_id: int = 0, **kw) -> CutTopology:
    """Classify one element; raises the relevant ``GeometryError`` on failure."""
    out = classify_many(level_set, [element_box], root_tol, p, [element_id], **kw)[0]
    if isinstance(out, Exception):
        raise out
    return out


# ---------------------------------------------------------------------------
# interface curve over the chord
# ---------------------------------------------------------------------------

def chord_frame(p0: np.ndarray, p1: np.ndarray):
    """Chord vectors ``P1 - P0`` and unit normals (rotated +90 degrees)."""
    t = p1 - p0
    L = np.linalg.norm(t, axis=-1, keepdims=True)
    nu = np.stack([-t[..., 1], t[..., 0]], axis=-1) / L
    return t, nu


def normal_offsets(level_set: LevelSet, p0: np.ndarray, p1: np.ndarray, s: np.ndarray,
                   h: np.ndarray, root_tol: float = DEFAULT_ROOT_TOL) -> np.ndarray:
    """Signed offsets ``d(s)`` such that ``P0 + s (P1 - P0) + d nu`` lies on the interface.

    All arrays are flat with one entry per query; ``h`` sets the length scale
    (search range ``1.5 h`` and absolute tolerance ``root_tol * h``). The
    root closest to the chord is taken: brackets grow geometrically from a
    small symmetric start.
    """
    t, nu = chord_frame(p0, p1)
    cx = p0[:, 0] + s * t[:, 0]
    cy = p0[:, 1] + s * t[:, 1]
    f0 = level_set(cx, cy)
    todo = f0 != 0.0
    lo = np.zeros(s.shape)
    hi = np.zeros(s.shape)
    found = ~todo
    prev = 0.0
    step = 1e-3
    phi = level_set.phi
    while not np.all(found):
        if step > 6.0:
            raise RootFindingError("no interface point along a chord normal")
        act = ~found
        for sign in (1.0, -1.0):
            d = sign * step * h
            fv = phi(cx + d * nu[:, 0], cy + d * nu[:, 1])
            hit = act & ~found & (np.sign(fv) != np.sign(f0))
            lo[hit] = min(sign * prev, sign * step)
            hi[hit] = max(sign * prev, sign * step)
            found |= hit
        prev = step
        step *= 2.0
    out = np.zeros(s.shape)
    idx = np.nonzero(todo)[0]
    if idx.size:

        def f(dl, cx, cy, nx, ny, hh):
            return phi(cx + dl * hh * nx, cy + dl * hh * ny)

        res = elementwise.find_root(
            f, (lo[idx], hi[idx]),
            args=(cx[idx], cy[idx], nu[idx, 0], nu[idx, 1], h[idx]),
            tolerances=dict(xatol=root_tol, xrtol=0.0, fatol=0.0, frtol=0.0))
        if np.any(res.status < 0):
            raise RootFindingError("root search along chord normal failed")
        out[idx] = res.x * h[idx]
    return out


def curve_points(level_set: LevelSet, p0: np.ndarray, p1: np.ndarray, s: np.ndarray,
                 h: np.ndarray, root_tol: float = DEFAULT_ROOT_TOL):
    """Points and tangents of the interface parametrized over its chord.

    ``x(s) = P0 + s (P1 - P0) + d(s) nu`` for ``s`` in ``[0, 1]``. The
    tangent ``x'(s)`` uses ``d'(s)`` from implicit differentiation of
    ``phi(x(s)) = 0``.

    Parameters
    ----------
    p0, p1 : ndarray (m, 2)
    s : ndarray (m,)
    h : ndarray (m,)
        Element sizes, used for tolerances and search ranges.

    Returns
    -------
    x, dx : ndarray (m, 2)
    """
    p0 = np.atleast_2d(p0)
    p1 = np.atleast_2d(p1)
    s = np.asarray(s, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), s.shape)
    d = normal_offsets(level_set, p0, p1, s, h, root_tol)
    t, nu = chord_frame(p0, p1)
    x = p0 + s[:, None] * t + d[:, None] * nu
    gx, gy = level_set.gradient(x[:, 0], x[:, 1])
    g_t = gx * t[:, 0] + gy * t[:, 1]
    g_n = gx * nu[:, 0] + gy * nu[:, 1]
    if np.any(np.abs(g_n) < 1e-14 * np.hypot(gx, gy)):
        raise GeometryError("interface is not a graph over its chord")
    dd = -g_t / g_n
    dx = t + dd[:, None] * nu
    return x, dx


# ---------------------------------------------------------------------------
# interface deviation
# ---------------------------------------------------------------------------

def _anchor_distance(topo: CutTopology, anchor: str = DEFAULT_ETA_ANCHOR) -> np.ndarray:
    """Distance of the extremal vertex of each subdomain from the chord.

    With ``anchor="distance"`` the vertex farthest from the chord segment is
    used with its distance to the segment; with ``anchor="max"`` the largest
    ``|A - y|`` over chord points ``y`` and vertices ``A`` of the subdomain.
    """
    corners = box_corners(topo.box)
    p0, p1 = topo.cut_points
    if anchor == "max":
        d = np.maximum(np.linalg.norm(corners - p0, axis=1),
                       np.linalg.norm(corners - p1, axis=1))
    elif anchor == "distance":
        t = p1 - p0
        s = np.clip((corners - p0) @ t / (t @ t), 0.0, 1.0)
        d = np.linalg.norm(corners - (p0 + s[:, None] * t), axis=1)
    else:
        raise ValueError(f"eta anchor must be one of {ETA_ANCHORS}, got {anchor!r}")
    out = np.empty(2)
    for i in (1, 2):
        out[i - 1] = d[topo.corner_sub == i].max()
    return out


def deviation_many(level_set: LevelSet, topos, root_tol: float = DEFAULT_ROOT_TOL,
                   n_samples: int = DEFAULT_ETA_SAMPLES,
                   anchor: str = DEFAULT_ETA_ANCHOR) -> np.ndarray:
    """Interface deviation ``eta`` for a list of cut topologies."""
    m = len(topos)
    if m == 0:
        return np.zeros(0)
    p0 = np.array([t.cut_points[0] for t in topos])
    p1 = np.array([t.cut_points[1] for t in topos])
    h = np.array([t.h for t in topos])
    s = np.linspace(0.0, 1.0, n_samples + 1)[1:-1]
    ns = s.size
    rep = lambda a: np.repeat(a, ns, axis=0)       # noqa: E731
    d = normal_offsets(level_set, rep(p0), rep(p1), np.tile(s, m),
                       rep(h), root_tol).reshape(m, ns)
    absd = np.abs(d)
    k = absd.argmax(axis=1)
    ds = 1.0 / n_samples
    lo = np.clip(s[k] - ds, 0.0, 1.0)
    hi = np.clip(s[k] + ds, 0.0, 1.0)

    def neg_abs_offset(sv, p0x, p0y, p1x, p1y, hh):
        a = np.stack([p0x, p0y], -1)
        b = np.stack([p1x, p1y], -1)
        return -np.abs(normal_offsets(level_set, a, b, sv, hh, root_tol))

    res = elementwise.find_minimum(
        neg_abs_offset, (lo, s[k], hi), args=(p0[:, 0], p0[:, 1], p1[:, 0], p1[:, 1], h),
        tolerances=dict(xatol=1e-9, xrtol=0.0, fatol=0.0, frtol=0.0))
    num = np.maximum(absd.max(axis=1), np.where(res.status >= 0, -res.f_x, 0.0))
    den = np.array([_anchor_distance(t, anchor) for t in topos])
    return np.max(num[:, None] / den, axis=1)


def interface_deviation(cut_points, level_set: LevelSet, element_box, vertices=None,
                        root_tol: float = DEFAULT_ROOT_TOL,
                        n_samples: int = DEFAULT_ETA_SAMPLES,
                        anchor: str = DEFAULT_ETA_ANCHOR) -> float:
    """Interface deviation of one cut element.

    Parameters
    ----------
    cut_points : array_like (2, 2)
        ``P0`` and ``P1`` as returned by :func:`classify_element`.
    vertices : array_like (4,), optional
        Subdomain (1 or 2) of each corner; evaluated from ``phi`` if omitted.
    """
    cp = np.asarray(cut_points, dtype=float)
    h = box_size(element_box)
    if np.hypot(*(cp[1] - cp[0])) < root_tol * h:
        raise DegenerateChord("cut points coincide")
    corners = box_corners(element_box)
    if vertices is None:
        vertices = level_set.subdomain(corners[:, 0], corners[:, 1])
    topo = CutTopology(0, tuple(element_box), CUT, cp, None, None,
                       float(np.hypot(*(cp[1] - cp[0]))), 0.0, 1.0,
                       np.zeros((4, 2)), np.asarray(vertices))
    return float(deviation_many(level_set, [topo], root_tol, n_samples, anchor)[0])
