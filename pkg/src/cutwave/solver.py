"""Fully discrete runs: mesh, spaces, assembly, time loop and error report."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from .assembly import DgSystem, MaterialParams, PenaltyConfig
from .errors import Diverged
from .fem_space import DgSpace, scalar_basis, vector_basis
from .mesh import InducedMesh, build_induced_mesh
from .time_integrator import CflParams, cfl_limit, step_slab

log = logging.getLogger(__name__)

CFL_MODES = ("measured_norm", "paper_heuristic")


@dataclass
class ProblemSpec:
    """Problem data; fields have signature ``g(x, y, t, sub)``.

    ``f`` may be None for the source-free equation. ``exact_u`` and
    ``exact_q`` are needed only for error measurement.
    """

    domain_box: tuple
    level_set: Optional[geo.LevelSet]
    materials: MaterialParams
    u0: Callable
    q0: Callable
    T: float
    f: Optional[Callable] = None
    exact_u: Optional[Callable] = None
    exact_q: Optional[Callable] = None
    name: str = "custom"

    @classmethod
    def from_case(cls, case, T: Optional[float] = None, source: bool = True):
        return cls(case.domain, case.level_set, case.materials, case.u0, case.q0,
                   case.T if T is None else T, case.f if source else None,
                   case.u, case.q, case.name)


@dataclass
class SolverConfig:
    """Discretization and time-stepping parameters of one run."""

    p: int = 1
    r: Optional[int] = None
    gamma: float = 0.1
    alpha0: float = 1.0
    base_n: int = 20
    eta0: float = 0.5
    delta0: float = 0.1
    eta_anchor: str = geo.DEFAULT_ETA_ANCHOR
    max_levels: int = 6
    quad_order: Optional[int] = None
    cfl_mode: str = "measured_norm"
    safety: float = 0.1
    samples_per_slab: int = 0
    on_violation: str = "warn"

    def __post_init__(self):
        if self.r is None:
            self.r = self.p + 1
        if self.quad_order is None:
            self.quad_order = 2 * self.p + 4
        if self.p < 1 or self.r < 1:
            raise ValueError("p and r must be at least 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.eta0 <= 0.5:
            raise ValueError("eta0 must lie in (0, 1/2]")
        if not 0.0 < self.delta0 < 0.5:
            raise ValueError("delta0 must lie in (0, 1/2)")
        if self.eta_anchor not in geo.ETA_ANCHORS:
            raise ValueError(f"eta_anchor must be one of {geo.ETA_ANCHORS}")
        if self.cfl_mode not in CFL_MODES:
            raise ValueError(f"cfl_mode must be one of {CFL_MODES}")
        if not 0.0 < self.safety <= 1.0:
            raise ValueError("safety must lie in (0, 1]")


@dataclass
class EnergyReport:
    """Energy history and terminal errors of a run."""

    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    E_en: float = float("nan")
    err_u_dg: float = float("nan")
    err_u_l2: float = float("nan")
    err_q: float = float("nan")
    tau: float = float("nan")
    n_slabs: int = 0
    opnorm: float = float("nan")


@dataclass
class RunResult:
    mesh: InducedMesh
    space: DgSpace
    system: DgSystem
    Y: np.ndarray
    report: EnergyReport
    config: SolverConfig

    def manifest(self) -> dict:
        m, s, rep = self.mesh, self.space, self.report
        return {
            "config": asdict(self.config),
            "mesh": {"n_elements": m.n_elements, "h": m.base_h, "h_min": m.h_min,
                     "theta_max": m.theta_max, "eta_max": m.eta_max,
                     "n_cut": sum(e.is_cut for e in m.elements), **m.stats},
            "dofs": {"M1": s.M1, "M2": s.M2, "total": s.size},
            "time": {"tau": rep.tau, "n_slabs": rep.n_slabs, "opnorm": rep.opnorm,
                     "lambda": cfl_limit(self.config.r, self.config.gamma)},
            "results": {"E_en": rep.E_en, "err_u_dg": rep.err_u_dg,
                        "err_u_l2": rep.err_u_l2, "err_q": rep.err_q,
                        "E_h_initial": rep.energies[0] if rep.energies else None,
                        "E_h_final": rep.energies[-1] if rep.energies else None},
        }


def initialize(problem: ProblemSpec, space: DgSpace) -> np.ndarray:
    """``Y0 = (P_h u0; P_h q0)``."""
    U = space.project_scalar(problem.u0)
    Q = space.project_vector(problem.q0)
    return np.concatenate([U, Q])


def choose_tau(mode: str, mesh: InducedMesh, cfl: CflParams, p: int,
               opnorm: Optional[float] = None) -> float:
    """Time step from the measured operator norm or the mesh heuristic.

    ``paper_heuristic`` uses ``safety * lambda(p, gamma) * h_min / (p^2 Theta)``
    with ``Theta`` the largest element factor; ``measured_norm`` uses
    ``safety * lambda(r, gamma) / ||D||``.
    """
    if mode == "paper_heuristic":
        return cfl.safety * cfl_limit(p, cfl.gamma) * mesh.h_min / (p ** 2 * mesh.theta_max)
    if mode == "measured_norm":
        if opnorm is None or not opnorm > 0.0:
            raise ValueError("measured_norm mode needs a positive operator norm estimate")
        return cfl.tau_for(opnorm)
    raise ValueError(f"unknown cfl mode {mode!r}")


def build(problem: ProblemSpec, config: SolverConfig, with_hminus: bool = False):
    """Mesh, space and assembled system for ``problem``."""
    mesh = build_induced_mesh(problem.domain_box, config.base_n, problem.level_set,
                              eta0=config.eta0, delta0=config.delta0,
                              max_levels=config.max_levels, p=config.p,
                              eta_anchor=config.eta_anchor)
    space = DgSpace(mesh, config.p, config.quad_order)
    system = DgSystem(space, problem.materials, PenaltyConfig(config.alpha0), with_hminus)
    return mesh, space, system


def run(problem: ProblemSpec, config: SolverConfig, built=None,
        callback: Optional[Callable] = None) -> RunResult:
    """Integrate ``problem`` to ``problem.T`` and measure the terminal error.

    Raises
    ------
    Diverged
        If the energy of a source-free run grows tenfold or becomes non-finite.
    """
    mesh, space, system = built if built is not None else build(problem, config)
    cfl = CflParams(config.r, config.gamma, config.safety)
    Y = initialize(problem, space)
    opnorm = system.opnorm()
    tau = choose_tau(config.cfl_mode, mesh, cfl, config.p, opnorm)
    report = EnergyReport(tau=tau, opnorm=opnorm)
    E0 = system.energy(Y)
    report.times.append(0.0)
    report.energies.append(E0)
    log.info("run %s: p=%d r=%d dofs=%d tau=%.3e ||D||=%.3e", problem.name, config.p,
             config.r, space.size, tau, opnorm)
    t, T = 0.0, problem.T
    sample = np.linspace(0.0, 1.0, config.samples_per_slab + 2)[1:-1] \
        if config.samples_per_slab > 0 else None
    while t < T - 1e-12 * max(1.0, T):
        h = min(tau, T - t)
        src = None if problem.f is None else system.source_coeffs(problem.f, t, h, config.r)
        state = step_slab(system.op, Y, t, h, config.r, config.gamma, src,
                          opnorm=opnorm, safety=1.0, on_violation=config.on_violation)
        if sample is not None:
            for s in sample:
                ts = t + s * h
                report.times.append(ts)
                report.energies.append(system.energy(state.evaluate(ts)))
        Y = state.endpoint()
        t = state.t1
        report.n_slabs += 1
        E = system.energy(Y)
        report.times.append(t)
        report.energies.append(E)
        if not math.isfinite(E) or (problem.f is None and E > 10.0 * E0):
            raise Diverged(f"energy {E:.3e} at t = {t:.4g} (initial {E0:.3e})")
        if callback is not None:
            callback(t, Y)
    if problem.exact_u is not None and problem.exact_q is not None:
        errs = energy_error(system, Y, problem.exact_u, problem.exact_q, T)
        report.E_en = errs["E_en"]
        report.err_u_dg = errs["u_dg"]
        report.err_u_l2 = errs["u_l2"]
        report.err_q = errs["q"]
    return RunResult(mesh, space, system, Y, report, config)


def energy_error(system: DgSystem, Y: np.ndarray, u: Callable, q: Callable,
                 t: float) -> dict:
    """Energy-norm error ``(||u - u_h||_DG^2 + ||q - q_h||^2)^(1/2)`` at time ``t``.

    The DG norm includes the penalty-weighted jumps of ``u - u_h`` over all
    faces; the jumps of the exact ``u`` are evaluated side by side.
    """
    space = system.space
    p = space.p
    U, Q = Y[:space.M1], Y[space.M1:]
    # discrete values per copy, exact fields in one batched call each
    pts, w, sub, uh, qhx, qhy = [], [], [], [], [], []
    for cp in space.copies:
        rule = space.rule(cp.index)
        bx, by = vector_basis(p, cp.box, rule.points)
        qc = Q[space.vector_dofs(cp.index)]
        pts.append(rule.points)
        w.append(rule.weights)
        sub.append(np.full(len(rule.weights), cp.sub))
        uh.append(scalar_basis(p, cp.box, rule.points) @ U[space.scalar_dofs(cp.index)])
        qhx.append(bx @ qc)
        qhy.append(by @ qc)
    P = np.concatenate(pts)
    x, y, s_ = P[:, 0], P[:, 1], np.concatenate(sub)
    W = np.concatenate(w)
    qx, qy = q(x, y, t, s_)
    eu = float(W @ (u(x, y, t, s_) - np.concatenate(uh)) ** 2)
    eq = float(W @ ((qx - np.concatenate(qhx)) ** 2 + (qy - np.concatenate(qhy)) ** 2))

    # jumps: evaluate u on both sides of every face piece at once
    xs, ys, ss, disc, wts = [], [], [], [], []
    for k, pc in enumerate(system.pieces):
        n = len(pc.weights)
        for c, sign in ((pc.cm, 1.0), (pc.cp, -1.0)):
            if c < 0:
                continue
            cp = space.copies[c]
            xs.append(pc.points[:, 0])
            ys.append(pc.points[:, 1])
            ss.append(np.full(n, cp.sub))
            disc.append(sign * (scalar_basis(p, cp.box, pc.points) @ U[space.scalar_dofs(c)]))
            wts.append(np.full(n, sign))
    ej = 0.0
    if xs:
        ex = u(np.concatenate(xs), np.concatenate(ys), t, np.concatenate(ss))
        contrib = np.concatenate(wts) * ex - np.concatenate(disc)
        pos = 0
        for pc in system.pieces:
            n = len(pc.weights)
            jump = contrib[pos:pos + n]
            pos += n
            if pc.cp >= 0:
                jump = jump + contrib[pos:pos + n]
                pos += n
            ej += pc.alpha * float(pc.weights @ jump ** 2)
    u_dg = math.sqrt(eu + ej)
    return {"E_en": math.sqrt(eu + ej + eq), "u_dg": u_dg, "u_l2": math.sqrt(eu),
            "q": math.sqrt(eq), "jump": math.sqrt(ej)}


def observed_orders(h, err) -> list:
    """``log(e_k / e_{k+1}) / log(h_k / h_{k+1})`` for successive rows."""
    out = [None]
    for k in range(1, len(h)):
        out.append(math.log(err[k - 1] / err[k]) / math.log(h[k - 1] / h[k]))
    return out
