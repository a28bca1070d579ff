"""Cartesian quadtree meshes, cell merging and face enumeration.

Leaves are addressed by keys ``(level, i, j)`` on a base grid of
``nx x ny`` cells; level ``l`` cells are ``2**l`` times smaller than base
cells. Refinement keeps a 2:1 balance across faces.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as geo
from .errors import (DegenerateChord, GeometryError, MaxLevelExceeded, MergeFailed,
                     MoreThanTwoCuts, TangentialContact, EtaTooLarge)

SOUTH, EAST, NORTH, WEST = range(4)
_DIRS = {SOUTH: (0, -1), EAST: (1, 0), NORTH: (0, 1), WEST: (-1, 0)}
_OUTWARD = {SOUTH: (0.0, -1.0), EAST: (1.0, 0.0), NORTH: (0.0, 1.0), WEST: (-1.0, 0.0)}


class CartesianMesh:
    """Quadtree of axis-aligned boxes over a rectangular domain.

    Parameters
    ----------
    domain_box : tuple
        ``(x0, y0, x1, y1)``.
    nx, ny : int
        Base grid dimensions.
    """

    def __init__(self, domain_box, nx: int, ny: Optional[int] = None):
        ny = nx if ny is None else ny
        if nx < 1 or ny < 1:
            raise ValueError("base grid needs at least one cell per direction")
        self.domain = tuple(float(v) for v in domain_box)
        x0, y0, x1, y1 = self.domain
        if x1 <= x0 or y1 <= y0:
            raise ValueError("degenerate domain box")
        self.nx, self.ny = int(nx), int(ny)
        self.hx0 = (x1 - x0) / self.nx
        self.hy0 = (y1 - y0) / self.ny
        self.leaves = {(0, i, j) for i in range(self.nx) for j in range(self.ny)}
        self.topologies: dict = {}
        self.eta_anchor = geo.DEFAULT_ETA_ANCHOR

    # geometry ---------------------------------------------------------------
    def box(self, key) -> tuple:
        lev, i, j = key
        hx = self.hx0 / 2 ** lev
        hy = self.hy0 / 2 ** lev
        x0, y0 = self.domain[0], self.domain[1]
        return (x0 + i * hx, y0 + j * hy, x0 + (i + 1) * hx, y0 + (j + 1) * hy)

    def sorted_leaves(self) -> list:
        """Leaves ordered by position (row-major on the finest grid), then level."""
        top = max(k[0] for k in self.leaves)
        return sorted(self.leaves, key=lambda k: (k[2] << (top - k[0]), k[1] << (top - k[0]), k[0]))

    def in_domain(self, key) -> bool:
        lev, i, j = key
        return 0 <= i < self.nx << lev and 0 <= j < self.ny << lev

    @property
    def max_level(self) -> int:
        return max(k[0] for k in self.leaves)

    # topology ---------------------------------------------------------------
    def find_leaf(self, key):
        """Leaf equal to or containing the cell ``key``; None if it is subdivided."""
        lev, i, j = key
        for up in range(lev + 1):
            k = (lev - up, i >> up, j >> up)
            if k in self.leaves:
                return k
        return None

    def neighbors(self, key, side: int) -> list:
        """Leaves across ``side`` of leaf ``key`` (empty on the domain boundary)."""
        lev, i, j = key
        di, dj = _DIRS[side]
        nk = (lev, i + di, j + dj)
        if not self.in_domain(nk):
            return []
        leaf = self.find_leaf(nk)
        if leaf is not None:
            return [leaf]
        return self._descend(nk, side)

    def _descend(self, key, side: int) -> list:
        lev, i, j = key
        # children of ``key`` touching the face opposite to ``side``
        if side == EAST:
            kids = [(lev + 1, 2 * i, 2 * j), (lev + 1, 2 * i, 2 * j + 1)]
        elif side == WEST:
            kids = [(lev + 1, 2 * i + 1, 2 * j), (lev + 1, 2 * i + 1, 2 * j + 1)]
        elif side == NORTH:
            kids = [(lev + 1, 2 * i, 2 * j), (lev + 1, 2 * i + 1, 2 * j)]
        else:
            kids = [(lev + 1, 2 * i, 2 * j + 1), (lev + 1, 2 * i + 1, 2 * j + 1)]
        out = []
        for k in kids:
            if k in self.leaves:
                out.append(k)
            else:
                out.extend(self._descend(k, side))
        return out

    # modification -----------------------------------------------------------
    def refine(self, keys) -> None:
        for key in keys:
            if key not in self.leaves:
                continue
            self.leaves.remove(key)
            self.topologies.pop(key, None)
            lev, i, j = key
            for di in (0, 1):
                for dj in (0, 1):
                    self.leaves.add((lev + 1, 2 * i + di, 2 * j + dj))

    def balance(self) -> int:
        """Refine until neighbouring leaves differ by at most one level.

        Returns the number of refinements performed.
        """
        count = 0
        work = set(self.leaves)
        while work:
            nxt = set()
            for key in work:
                if key not in self.leaves:
                    continue
                for side in range(4):
                    for nb in self.neighbors(key, side):
                        if nb[0] < key[0] - 1:
                            self.refine([nb])
                            count += 1
                            lev, i, j = nb
                            kids = [(lev + 1, 2 * i + a, 2 * j + b) for a in (0, 1) for b in (0, 1)]
                            nxt.update(kids)
                            for s2 in range(4):
                                for k2 in kids:
                                    nxt.update(self.neighbors(k2, s2))
            work = nxt
        return count

    def is_balanced(self) -> bool:
        return all(abs(nb[0] - key[0]) <= 1 for key in self.leaves
                   for side in range(4) for nb in self.neighbors(key, side))

    def classify(self, level_set, p: int = 1, root_tol: float = geo.DEFAULT_ROOT_TOL) -> dict:
        """Classify leaves that have no cached topology; returns failures by key."""
        todo = [k for k in self.sorted_leaves() if k not in self.topologies]
        failures = {}
        if not todo or level_set is None:
            for k in todo:
                self.topologies[k] = _uncut_topology(self.box(k))
            return failures
        res = geo.classify_many(level_set, [self.box(k) for k in todo], root_tol, p,
                                eta_anchor=self.eta_anchor)
        for k, r in zip(todo, res):
            if isinstance(r, Exception):
                failures[k] = r
            else:
                self.topologies[k] = r
        return failures


def _uncut_topology(box, element_id: int = 0) -> geo.CutTopology:
    frac = np.zeros((4, 2))
    frac[:, 0] = 1.0
    return geo.CutTopology(element_id, tuple(box), geo.INTERIOR1, None, None, None,
                           0.0, 0.0, 1.0, frac, np.ones(4, dtype=int))


def build_mesh(domain_box, base_n: int, level_set=None, eta0: float = 0.5,
               max_levels: int = 6, p: int = 1, root_tol: float = geo.DEFAULT_ROOT_TOL,
               base_ny: Optional[int] = None,
               eta_anchor: str = geo.DEFAULT_ETA_ANCHOR) -> CartesianMesh:
    """Quadtree mesh resolving the interface.

    Leaves whose boundary is crossed more than twice, or twice on one side,
    or whose interface deviation exceeds ``eta0`` are refined. The result is
    2:1 balanced and every leaf is classified (``mesh.topologies``).

    Raises
    ------
    MaxLevelExceeded
        If a leaf at level ``max_levels`` still needs refinement.
    TangentialContact, DegenerateChord
        Contact configurations that refinement cannot resolve.
    """
    if base_n < 2:
        raise ValueError("base_n must be at least 2")
    if not 0.0 < eta0 <= 0.5:
        raise ValueError("eta0 must lie in (0, 1/2]")
    if eta_anchor not in geo.ETA_ANCHORS:
        raise ValueError(f"eta_anchor must be one of {geo.ETA_ANCHORS}")
    mesh = CartesianMesh(domain_box, base_n, base_ny)
    mesh.eta_anchor = eta_anchor
    return _reresolve(mesh, level_set, eta0, max_levels, p, root_tol)


# ---------------------------------------------------------------------------
# induced mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MacroElement:
    """Element of the induced mesh: one leaf or a rectangular union of leaves."""

    id: int
    box: tuple
    leaves: tuple
    topo: geo.CutTopology

    @property
    def is_cut(self) -> bool:
        return self.topo.is_cut

    @property
    def h(self) -> float:
        return geo.box_size(self.box)

    def subdomains(self) -> tuple:
        return self.topo.subdomains()


@dataclass(frozen=True)
class Face:
    """A face of the induced mesh.

    For ``kind == "side"`` the normal points from ``minus`` to ``plus``
    (``+x`` or ``+y``); for ``"boundary"`` it is the outward normal and
    ``plus == -1``; for ``"interface"`` both ids name the cut element whose
    copy 1 is the minus side, and the normal field lives on the quadrature
    rule.

    ``segments`` lists ``(a, b, sub)`` straight pieces lying in one
    subdomain each.
    """

    kind: str
    minus: int
    plus: int
    normal: tuple
    h_e: float
    segments: tuple = ()

    @property
    def length(self) -> float:
        return float(sum(np.hypot(*(b - a)) for a, b, _ in self.segments))


@dataclass
class InducedMesh:
    """Merged mesh with faces; treat as immutable once built."""

    domain: tuple
    elements: list
    faces: list
    level_set: object
    p: int
    leaf_to_element: dict
    leaf_level: dict
    base_h: float
    root_tol: float = geo.DEFAULT_ROOT_TOL
    stats: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def h_min(self) -> float:
        return min(e.h for e in self.elements)

    @property
    def h_max(self) -> float:
        return max(e.h for e in self.elements)

    @property
    def theta_max(self) -> float:
        return max(e.topo.theta for e in self.elements)

    @property
    def eta_max(self) -> float:
        return max(e.topo.eta for e in self.elements)

    @property
    def c0(self) -> float:
        """Largest ratio between a macro-element and its finest constituent leaf."""
        ratio = 1.0
        for e in self.elements:
            leaf_h = min(max(self._leaf_box_size(k)) for k in e.leaves)
            ratio = max(ratio, e.h / leaf_h)
        return ratio

    def _leaf_box_size(self, key):
        lev = key[0]
        return (self.stats["hx0"] / 2 ** lev, self.stats["hy0"] / 2 ** lev)

    def faces_of_kind(self, kind: str) -> list:
        return [f for f in self.faces if f.kind == kind]

    def summary_csv(self) -> str:
        """Element table: id, box, kind, eta, theta, leaves."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "x0", "y0", "x1", "y1", "kind", "eta", "theta", "n_leaves", "leaves"])
        for e in self.elements:
            w.writerow([e.id, *(f"{v:.6g}" for v in e.box), e.topo.kind,
                        f"{e.topo.eta:.6g}", f"{e.topo.theta:.6g}", len(e.leaves),
                        " ".join(f"{l}:{i}:{j}" for l, i, j in e.leaves)])
        return buf.getvalue()


def _union_box(boxes) -> tuple:
    b = np.array(boxes)
    return (b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max())


def _candidate_groups(key, leaves):
    """1x2 / 2x1 groups first, then 2x2 groups containing ``key``."""
    lev, i, j = key
    pairs = [[(lev, i + di, j + dj)] for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))]
    quads = []
    for di in (0, -1):
        for dj in (0, -1):
            cells = [(lev, i + di + a, j + dj + b) for a in (0, 1) for b in (0, 1)]
            quads.append([c for c in cells if c != key])
    return pairs, quads


def merge_small_cells(mesh: CartesianMesh, delta0: float = 0.1, level_set=None,
                      p: int = 1, root_tol: float = geo.DEFAULT_ROOT_TOL) -> list:
    """Group leaves into macro-elements that are large for both subdomains.

    Each cut leaf failing the large-element test is merged with axis-adjacent
    leaves of the same level into a 1x2 or 2x1 rectangle, or a 2x2 one when
    no pair is admissible. Among admissible unions of a leaf the one with the
    largest minimum side fraction wins; ties go to the partner set with the
    lowest leaf index. Leaves with the fewest admissible unions left are
    served first so that neighbouring slivers do not block each other.

    Returns
    -------
    list of (leaf keys, CutTopology)
        Macro-element groups ordered by their first leaf.

    Raises
    ------
    MergeFailed
        With ``.key`` set to the leaf that could not be merged.
    """
    if not 0.0 < delta0 < 0.5:
        raise ValueError("delta0 must lie in (0, 1/2)")
    order = mesh.sorted_leaves()
    index = {k: n for n, k in enumerate(order)}
    topos = mesh.topologies
    failing = []
    for key in order:
        topo = topos[key]
        if topo.is_cut:
            large = geo.is_large_element(topo, delta0)
            if not (large[1] and large[2]):
                failing.append(key)
    cache = _classify_unions(mesh, failing, index, delta0, level_set, p, root_tol)
    cands = {key: _admissible_unions(mesh, key, index, cache) for key in failing}
    assigned: dict = {}
    groups: list = []
    remaining = list(failing)
    while remaining:
        avail = {k: [c for c in cands[k] if not any(m in assigned for m in c[1])]
                 for k in remaining}
        blocked = [k for k in remaining if not avail[k]]
        if blocked:
            key = blocked[0]
            err = MergeFailed(f"no admissible merge for leaf {key} box {mesh.box(key)}")
            err.key = key
            raise err
        key = min(remaining, key=lambda k: (len(avail[k]), index[k]))
        _, members, cand = avail[key][0]
        for c in members:
            assigned[c] = len(groups)
        groups.append((members, cand))
        remaining = [k for k in remaining if k not in assigned]
    for key in order:
        if key not in assigned:
            assigned[key] = len(groups)
            groups.append(((key,), topos[key]))
    groups.sort(key=lambda g: index[g[0][0]])
    return groups


def _union_members(mesh, key, index):
    pairs, quads = _candidate_groups(key, mesh.leaves)
    for family, groups in enumerate((pairs, quads)):
        for partners in groups:
            if all(c in mesh.leaves for c in partners):
                yield family, partners, tuple(sorted([key] + partners, key=index.__getitem__))


def _classify_unions(mesh, failing, index, delta0, level_set, p, root_tol) -> dict:
    """Topology of every candidate union, or None when it is not admissible."""
    sets = sorted({members for key in failing for _, _, members in _union_members(mesh, key, index)},
                  key=lambda m: [index[c] for c in m])
    boxes = [_union_box([mesh.box(c) for c in members]) for members in sets]
    res = geo.classify_many(level_set, boxes, root_tol, p, eta_anchor=mesh.eta_anchor) \
        if sets else []
    out = {}
    for members, cand in zip(sets, res):
        if isinstance(cand, Exception) or not cand.is_cut or cand.eta > 0.5:
            out[members] = None
            continue
        lg = geo.is_large_element(cand, delta0)
        out[members] = cand if (lg[1] and lg[2]) else None
    return out


def _admissible_unions(mesh, key, index, cache):
    """Admissible unions for ``key``, best first: ``(rank, members, topology)``."""
    out = []
    for family, partners, members in _union_members(mesh, key, index):
        cand = cache[members]
        if cand is None:
            continue
        rank = (family, -geo.min_side_fraction(cand), min(index[c] for c in partners))
        out.append((rank, members, cand))
    out.sort(key=lambda c: c[0])
    return out


def _face_roots(level_set, faces_raw, root_tol):
    """Split raw faces ``(a, b)`` at interface crossings into labelled pieces."""
    n = len(faces_raw)
    if n == 0:
        return []
    a = np.array([f[0] for f in faces_raw])
    b = np.array([f[1] for f in faces_raw])
    if level_set is None:
        return [[(a[k], b[k], 1)] for k in range(n)]
    ns = geo.DEFAULT_SIDE_SAMPLES
    u = np.linspace(0.0, 1.0, ns + 1)
    pts = a[:, None, :] + u[None, :, None] * (b - a)[:, None, :]
    vals = level_set(pts[..., 0], pts[..., 1])
    pos = vals > 0.0
    flips = pos[:, 1:] != pos[:, :-1]
    nflip = flips.sum(axis=1)
    if np.any(nflip > 1):
        raise MoreThanTwoCuts("a face is crossed more than once by the interface")
    fi, ki = np.nonzero(flips)
    roots = geo.find_segment_roots(level_set, a[fi], b[fi] - a[fi], u[ki], u[ki + 1], root_tol)
    root_of = dict(zip(fi.tolist(), roots))
    out = []
    for k in range(n):
        sub_a = 2 if vals[k, 0] > 0.0 else 1
        if k in root_of:
            m = a[k] + root_of[k] * (b[k] - a[k])
            out.append([(a[k], m, sub_a), (m, b[k], 3 - sub_a)])
        else:
            mid = vals[k, ns // 2]
            out.append([(a[k], b[k], 2 if mid > 0.0 else 1)])
    return out


def enumerate_faces(mesh: CartesianMesh, groups, level_set=None,
                    root_tol: float = geo.DEFAULT_ROOT_TOL) -> list:
    """Side, boundary and interface faces of the induced mesh.

    Faces are enumerated on leaf sides, so a coarse side next to two finer
    leaves yields two faces. Sides internal to a macro-element are dropped.
    """
    leaf_to_el = {k: e for e, (members, _) in enumerate(groups) for k in members}
    raw = []            # (a, b, kind, minus, plus, normal)
    for key in mesh.sorted_leaves():
        x0, y0, x1, y1 = mesh.box(key)
        corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        for side in range(4):
            nbs = mesh.neighbors(key, side)
            if not nbs:
                a, b = corners[side], corners[(side + 1) % 4]
                if side in (NORTH, WEST):   # store in increasing coordinate order
                    a, b = b, a
                raw.append((a, b, "boundary", leaf_to_el[key], -1, _OUTWARD[side]))
                continue
            if side not in (EAST, NORTH):
                continue
            for nb in nbs:
                em, ep = leaf_to_el[key], leaf_to_el[nb]
                if em == ep:
                    continue
                fine = key if key[0] >= nb[0] else nb
                fx0, fy0, fx1, fy1 = mesh.box(fine)
                if side == EAST:
                    xf = x1
                    a, b = np.array([xf, fy0]), np.array([xf, fy1])
                else:
                    yf = y1
                    a, b = np.array([fx0, yf]), np.array([fx1, yf])
                raw.append((a, b, "side", em, ep, _OUTWARD[side]))
    pieces = _face_roots(level_set, [(r[0], r[1]) for r in raw], root_tol)
    faces = []
    for r, segs in zip(raw, pieces):
        a, b = r[0], r[1]
        faces.append(Face(r[2], r[3], r[4], r[5], float(np.hypot(*(b - a))),
                          tuple((sa, sb, sub) for sa, sb, sub in segs)))
    for e, (_, topo) in enumerate(groups):
        if topo.is_cut:
            faces.append(Face("interface", e, e, (np.nan, np.nan), float(topo.chord), ()))
    return faces


def build_induced_mesh(domain_box, base_n: int, level_set=None, eta0: float = 0.5,
                       delta0: float = 0.1, max_levels: int = 6, p: int = 1,
                       root_tol: float = geo.DEFAULT_ROOT_TOL,
                       base_ny: Optional[int] = None,
                       eta_anchor: str = geo.DEFAULT_ETA_ANCHOR) -> InducedMesh:
    """Refine, merge and enumerate faces.

    When merging fails for a leaf, its coarser neighbours are refined (or
    the leaf itself when all neighbours share its level) and the whole
    procedure repeats.
    """
    mesh = build_mesh(domain_box, base_n, level_set, eta0, max_levels, p, root_tol, base_ny,
                      eta_anchor)
    while True:
        try:
            groups = merge_small_cells(mesh, delta0, level_set, p, root_tol)
            break
        except MergeFailed as err:
            # Coarser neighbours leave the sliver without same-level partners;
            # refining them first avoids chasing a near-corner cut downwards.
            coarse = sorted({nb for side in range(4) for nb in mesh.neighbors(err.key, side)
                             if nb[0] < err.key[0]})
            if coarse:
                mesh.refine(coarse)
            elif err.key[0] >= max_levels:
                raise MaxLevelExceeded(f"merging failed at level {max_levels}: {err}") from err
            else:
                mesh.refine([err.key])
            mesh.balance()
            mesh = _reresolve(mesh, level_set, eta0, max_levels, p, root_tol)
    elements = []
    for e, (members, topo) in enumerate(groups):
        box = _union_box([mesh.box(k) for k in members])
        topo = geo._replace(topo, element_id=e, box=tuple(float(v) for v in box))
        if topo.is_cut and topo.eta > 0.5:
            raise EtaTooLarge(f"element {e} has eta = {topo.eta:.3f} > 1/2")
        elements.append(MacroElement(e, topo.box, members, topo))
    faces = enumerate_faces(mesh, groups, level_set, root_tol)
    leaf_to_el = {k: e for e, (members, _) in enumerate(groups) for k in members}
    stats = dict(hx0=mesh.hx0, hy0=mesh.hy0, n_leaves=len(mesh.leaves),
                 max_level=mesh.max_level, eta_anchor=mesh.eta_anchor,
                 n_merged=sum(1 for m, _ in groups if len(m) > 1))
    return InducedMesh(mesh.domain, elements, faces, level_set, p, leaf_to_el,
                       {k: k[0] for k in mesh.leaves}, max(mesh.hx0, mesh.hy0), root_tol, stats)


def _reresolve(mesh, level_set, eta0, max_levels, p, root_tol):
    """Refine until every leaf is classified as uncut or resolved by a valid cut."""
    while True:
        failures = mesh.classify(level_set, p, root_tol)
        for err in failures.values():
            if isinstance(err, (TangentialContact, DegenerateChord)):
                raise err
        bad = list(failures)
        bad += [k for k, t in mesh.topologies.items() if t.is_cut and t.eta > eta0]
        if not bad:
            return mesh
        too_deep = [k for k in bad if k[0] >= max_levels]
        if too_deep:
            raise MaxLevelExceeded(
                f"{len(too_deep)} leaves still unresolved at level {max_levels}, "
                f"e.g. box {mesh.box(too_deep[0])}")
        mesh.refine(sorted(bad))
        mesh.balance()
