"""Command line front end: ``run``, ``converge`` and ``stability``.

Configuration comes from an INI file (``--config``) whose keys may be
overridden by flags. Exit codes: 0 on success, 2 on invalid configuration,
3 on numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .cases import get_case, CASES
from .errors import ConfigError, CutwaveError, NumericalFailure
from .geometry import ETA_ANCHORS
from .solver import CFL_MODES, ProblemSpec, SolverConfig, observed_orders, run
from .time_integrator import cfl_limit, max_norm_ratio, random_skew

log = logging.getLogger("cutwave")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _floats(text: str) -> list:
    """Comma separated numbers; fractions such as ``1/7`` are accepted."""
    return [float(Fraction(v.strip())) for v in str(text).split(",") if v.strip()]


def _ints(text: str) -> list:
    out = []
    for v in str(text).split(","):
        v = v.strip()
        if not v:
            continue
        if ".." in v:
            lo, hi = v.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(v))
    return out


@dataclass
class RunConfig:
    """All settings of a CLI invocation."""

    case: str = "traveling_wave"
    p: int = 1
    r: Optional[int] = None
    gamma: float = 0.1
    alpha0: float = 1.0
    h: list = field(default_factory=lambda: [0.2])
    eta0: float = 0.5
    delta0: float = 0.1
    eta_anchor: str = "distance"
    max_levels: int = 6
    quad_order: Optional[int] = None
    cfl_mode: str = "measured_norm"
    safety: float = 0.1
    T: Optional[float] = None
    source: bool = True
    samples_per_slab: int = 0
    raster: int = 101
    output: str = "out"
    seed: int = 0
    # stability sweep
    r_list: list = field(default_factory=lambda: list(range(1, 9)))
    gamma_list: list = field(default_factory=lambda: [0.1, 0.5, 0.9])
    ratios: list = field(default_factory=lambda: [0.5, 0.9, 1.0, 1.1])
    dim: int = 40
    slabs: int = 100
    samples: int = 33

    def __post_init__(self):
        if self.r is None:
            self.r = self.p + 1
        if self.quad_order is None:
            self.quad_order = 2 * self.p + 4

    def validate(self) -> "RunConfig":
        checks = [
            (self.case in CASES, "case", f"unknown case {self.case!r}"),
            (self.p >= 1, "p", "p must be >= 1"),
            (self.r >= 1, "r", "r must be >= 1"),
            (0.0 < self.gamma < 1.0, "gamma", "gamma must lie in (0, 1)"),
            (self.alpha0 > 0.0, "alpha0", "alpha0 must be positive"),
            (0.0 < self.eta0 <= 0.5, "eta0", "eta0 must lie in (0, 1/2]"),
            (0.0 < self.delta0 < 0.5, "delta0", "delta0 must lie in (0, 1/2)"),
            (self.eta_anchor in ETA_ANCHORS, "eta_anchor",
             f"eta_anchor must be one of {ETA_ANCHORS}"),
            (self.cfl_mode in CFL_MODES, "cfl_mode", f"cfl_mode must be one of {CFL_MODES}"),
            (0.0 < self.safety <= 1.0, "safety", "safety must lie in (0, 1]"),
            (len(self.h) > 0 and all(v > 0 for v in self.h), "h", "h must be positive"),
            (self.quad_order >= 1, "quad_order", "quad_order must be >= 1"),
            (self.T is None or self.T > 0, "T", "T must be positive"),
            (all(0.0 < g < 1.0 for g in self.gamma_list), "gamma_list",
             "gammas must lie in (0, 1)"),
            (all(r >= 1 for r in self.r_list), "r_list", "orders must be >= 1"),
            (self.dim >= 2 and self.slabs >= 1 and self.samples >= 2, "dim",
             "dim >= 2, slabs >= 1, samples >= 2 required"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(f"invalid value for '{key}': {msg}")
        return self

    def solver_config(self, h: float) -> SolverConfig:
        try:
            base_n = get_case(self.case).base_n(h)
        except ValueError as err:
            raise ConfigError(f"invalid value for 'h': {err}") from err
        return SolverConfig(p=self.p, r=self.r, gamma=self.gamma, alpha0=self.alpha0,
                            base_n=base_n, eta0=self.eta0, delta0=self.delta0,
                            eta_anchor=self.eta_anchor,
                            max_levels=self.max_levels, quad_order=self.quad_order,
                            cfl_mode=self.cfl_mode, safety=self.safety,
                            samples_per_slab=self.samples_per_slab)


_PARSERS = {
    "case": str, "p": int, "r": int, "gamma": float, "alpha0": float, "h": _floats,
    "eta0": float, "delta0": float, "eta_anchor": str, "max_levels": int, "quad_order": int,
    "cfl_mode": str, "safety": float, "T": float, "source": None,
    "samples_per_slab": int, "raster": int, "output": str, "seed": int,
    "r_list": _ints, "gamma_list": _floats, "ratios": _floats, "dim": int,
    "slabs": int, "samples": int,
}


def _parse_bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, value):
    parser = _PARSERS[key]
    if parser is None:
        return _parse_bool(value)
    return parser(value)


def read_config(path: Optional[str]) -> dict:
    """Flatten all sections of an INI file into ``{key: value}``.

    Unknown keys and unparsable values raise :class:`ConfigError` naming the
    section, key and line.
    """
    if path is None:
        return {}
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as err:
        raise ConfigError(f"config parse error: {err}") from err
    lines = text.splitlines()
    out = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            line = next((i + 1 for i, ln in enumerate(lines)
                         if ln.split("=")[0].strip() == key), "?")
            if key not in _PARSERS:
                raise ConfigError(f"{path}:{line}: unknown key '{key}' in [{section}]")
            try:
                out[key] = _convert(key, raw)
            except (ValueError, ZeroDivisionError) as err:
                raise ConfigError(f"{path}:{line}: bad value for '{key}' in [{section}]: {err}") from err
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config(args.config)
    for key in _PARSERS:
        v = getattr(args, key, None)
        if v is not None:
            try:
                values[key] = _convert(key, v)
            except (ValueError, ZeroDivisionError) as err:
                raise ConfigError(f"bad value for --{key.replace('_', '-')}: {err}") from err
    known = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in values.items() if k in known}).validate()


# output helpers --------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def write_manifest(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _problem(cfg: RunConfig) -> ProblemSpec:
    return ProblemSpec.from_case(get_case(cfg.case), T=cfg.T, source=cfg.source)


def raster_fields(result, n: int):
    """Sample ``u_h`` and ``q_h`` on an ``n x n`` raster of the domain."""
    x0, y0, x1, y1 = result.mesh.domain
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    u, qx, qy, sub = result.space.evaluate(result.Y, pts)
    return pts, sub, u, qx, qy


# commands -------------------------------------------------------------------

def cmd_run(cfg: RunConfig) -> dict:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    res = run(_problem(cfg), cfg.solver_config(cfg.h[0]))
    rep = res.report
    write_csv(out / "energy.csv", ["t", "E_h"], zip(rep.times, rep.energies))
    pts, sub, u, qx, qy = raster_fields(res, cfg.raster)
    write_csv(out / "fields.csv", ["x", "y", "subdomain", "u", "qx", "qy"],
              zip(pts[:, 0], pts[:, 1], sub.astype(int), u, qx, qy))
    manifest = {"command": "run", "settings": asdict(cfg), **res.manifest()}
    write_manifest(out / "manifest.json", manifest)
    log.info("E_en = %.6g", rep.E_en)
    return manifest


def cmd_converge(cfg: RunConfig) -> dict:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rows, runs = [], []
    for h in cfg.h:
        res = run(_problem(cfg), cfg.solver_config(h))
        rows.append([h, res.mesh.h_min, res.space.size, res.report.E_en])
        runs.append(res.manifest())
        log.info("h = %.6g: E_en = %.6g", h, res.report.E_en)
    orders = observed_orders([r[0] for r in rows], [r[3] for r in rows])
    table = [r + [o] for r, o in zip(rows, orders)]
    write_csv(out / "table.csv", ["h", "h_min", "DoFs", "E_en", "order"], table)
    manifest = {"command": "converge", "settings": asdict(cfg), "runs": runs,
                "table": [dict(zip(["h", "h_min", "DoFs", "E_en", "order"], r)) for r in table]}
    write_manifest(out / "manifest.json", manifest)
    return manifest


def cmd_stability(cfg: RunConfig) -> dict:
    """Max ``||Y(t)|| / ||Y0||`` on random skew systems over ``r``, ``gamma`` and ratio."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    D = random_skew(cfg.dim, rng)
    y0 = rng.standard_normal(cfg.dim)
    op = lambda Y: D @ Y                      # noqa: E731
    rows = []
    for r in cfg.r_list:
        gammas = cfg.gamma_list if r % 4 in (1, 2) else [cfg.gamma_list[0]]
        for g in gammas:
            lam = cfl_limit(r, g)
            for ratio in cfg.ratios:
                worst = max_norm_ratio(op, y0, ratio * lam, r, g, cfg.slabs, cfg.samples)
                rows.append([r, g, ratio, ratio * lam, worst])
    write_csv(out / "stability.csv", ["r", "gamma", "ratio", "tau_norm", "max_ratio"], rows)
    manifest = {"command": "stability", "settings": asdict(cfg),
                "rows": [dict(zip(["r", "gamma", "ratio", "tau_norm", "max_ratio"], r))
                         for r in rows]}
    write_manifest(out / "manifest.json", manifest)
    return manifest


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "stability": cmd_stability}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cutwave", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--case", choices=sorted(CASES))
        for key in ("p", "r", "gamma", "alpha0", "h", "eta0", "delta0", "max_levels",
                    "quad_order", "safety", "T", "source", "samples_per_slab", "raster",
                    "output", "seed", "r_list", "gamma_list", "ratios", "dim", "slabs",
                    "samples"):
            p.add_argument("--" + key.replace("_", "-"), dest=key)
        p.add_argument("--cfl-mode", dest="cfl_mode", choices=CFL_MODES)
        p.add_argument("--eta-anchor", dest="eta_anchor", choices=ETA_ANCHORS)
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CutwaveError as err:
        print(f"failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
