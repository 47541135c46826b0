"""Command line interface: ``delaybounds <command> --config run.json``.

Every command writes CSV files whose first line is ``# `` followed by a JSON
object with the run metadata (command, file kind, config hash, version).
Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .bounds import NONLINEAR_SCALES, CONVENTIONS, bilateral_bounds, integrate_majorant, residual_majorant, resolve_convention
from .cascade import check_decay, solve_cascade
from .domain import METHODS, Prober, sweep
from .engine import StepperConfig, integrate
from .errors import (
    ConfigError,
    DefectiveMatrix,
    DelayBoundsError,
    MeshMismatch,
    NonFiniteState,
    NotHurwitz,
    StepExceedsMinDelay,
    UnsupportedNonlinearity,
)
from .models import MODELS, OscillatorParams, build_model
from .spectral import eigen_decompose

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# physical parameters a config must state explicitly
REQUIRED_PARAMS = ("d", "mu1", "mu2", "h0", "h1")
EXTRA_REQUIRED = {"gauss": ("mu3", "mu4"), "tanh": ("mu3", "mu4")}

METHOD_ALIASES = {"reference": "reference", "scalar": "scalar_bound", "scalar_bound": "scalar_bound", "y_threshold": "y_threshold"}


@dataclass(frozen=True)
class SweepConfig:
    theta_step: float = math.pi / 48
    ray_weights: Tuple[float, float] = (1.0, 0.0)
    rho_max: float = 64.0
    tol_rho: float = 1e-2
    projection_mode: str = "slice"
    theta2: float = 0.0
    seed: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "ray_weights", tuple(float(w) for w in self.ray_weights))
        if len(self.ray_weights) != 2 or min(self.ray_weights) < 0:
            raise ConfigError("sweep.ray_weights must be two nonnegative numbers")
        if self.projection_mode not in ("slice", "envelope"):
            raise ConfigError("sweep.projection_mode must be 'slice' or 'envelope'")
        if not (self.tol_rho > 0 and self.rho_max > 0 and 0 < self.seed <= self.rho_max):
            raise ConfigError("sweep needs tol_rho > 0 and 0 < seed <= rho_max")
        count = 2 * math.pi / self.theta_step
        if not math.isclose(count, round(count), rel_tol=1e-9):
            raise ConfigError("sweep.theta_step must divide 2*pi")


@dataclass(frozen=True)
class RunConfig:
    """Complete, explicit description of one run."""

    model: str
    params: OscillatorParams
    K: int
    T: float
    dt: float
    varpi: float
    phi_s: Optional[Tuple[float, ...]] = None
    sweep: SweepConfig = field(default_factory=SweepConfig)
    convention: str = "auto"
    nonlinear_scale: str = "column"
    tail_check: Optional[bool] = None
    reference: bool = True
    output_dir: str = "."

    def __post_init__(self):
        try:
            for key in ("T", "dt", "varpi"):
                object.__setattr__(self, key, float(getattr(self, key)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"T, dt and varpi must be numbers: {exc}") from exc
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if not (isinstance(self.K, int) and self.K >= 1):
            raise ConfigError("K must be an integer >= 1")
        if not self.T > self.params.t0:
            raise ConfigError("T must exceed the start time")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.dt > min(self.params.h0, self.params.h1):
            raise ConfigError(f"dt={self.dt} exceeds the smallest delay {min(self.params.h0, self.params.h1)}")
        if not self.varpi > 0:
            raise ConfigError("varpi must be positive")
        if self.phi_s is not None:
            phi = tuple(float(v) for v in self.phi_s)
            if len(phi) != 4:
                raise ConfigError("phi_s must have 4 components")
            object.__setattr__(self, "phi_s", phi)
        if self.convention not in CONVENTIONS:
            raise ConfigError(f"convention must be one of {CONVENTIONS}")
        if self.nonlinear_scale not in NONLINEAR_SCALES:
            raise ConfigError(f"nonlinear_scale must be one of {NONLINEAR_SCALES}")

    def to_dict(self) -> Dict:
        out = {
            "model": self.model,
            "params": self.params.to_dict(),
            "K": self.K,
            "T": self.T,
            "dt": self.dt,
            "varpi": self.varpi,
            "phi_s": None if self.phi_s is None else list(self.phi_s),
            "sweep": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.sweep).items()},
            "convention": self.convention,
            "nonlinear_scale": self.nonlinear_scale,
            "tail_check": self.tail_check,
            "reference": self.reference,
            "output_dir": self.output_dir,
        }
        return out

    @classmethod
    def from_dict(cls, data: Dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("model", "params", "K", "T", "dt", "varpi"):
            if key not in data:
                raise ConfigError(f"missing required key {key!r}")
        params = data["params"]
        if not isinstance(params, dict):
            raise ConfigError("params must be an object")
        variant = str(data["model"]).partition("_")[2]
        for key in REQUIRED_PARAMS + EXTRA_REQUIRED.get(variant, ()):
            if key not in params:
                raise ConfigError(f"params.{key} must be given explicitly")
        try:
            p = OscillatorParams.from_dict(params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"params: {exc}") from exc
        sweep_data = data.get("sweep") or {}
        try:
            sw = SweepConfig(**sweep_data)
        except TypeError as exc:
            raise ConfigError(f"sweep: {exc}") from exc
        kwargs = {k: v for k, v in data.items() if k not in ("params", "sweep")}
        if isinstance(kwargs.get("K"), float) and kwargs["K"].is_integer():
            kwargs["K"] = int(kwargs["K"])
        try:
            return cls(params=p, sweep=sw, **kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        """Short digest of the canonical JSON form, ignoring the output location."""
        data = _canonical(self.to_dict())
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update(changes)
        return RunConfig.from_dict(data)


def _canonical(value):
    # 40 and 40.0 describe the same run
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return RunConfig.from_dict(data)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from exc
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# -- CSV output ---------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path: str, meta: Dict, columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return path


def read_csv(path: str):
    """Return ``(meta, columns, rows)`` with rows as lists of strings."""
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ConfigError(f"{path}: missing metadata header")
            meta = json.loads(first[2:])
            reader = csv.reader(fh)
            columns = next(reader)
            rows = list(reader)
    except OSError as exc:
        raise ConfigError(f"cannot read {path!r}: {exc.strerror}") from exc
    return meta, columns, rows


def _column(columns, rows, name):
    idx = columns.index(name)
    return np.array([float(r[idx]) if r[idx] != "" else np.nan for r in rows])


def _meta(cfg: Optional[RunConfig], command: str, kind: str, **extra) -> Dict:
    meta = {"command": command, "kind": kind, "version": __version__}
    if cfg is not None:
        meta["config_hash"] = cfg.hash()
        meta["model"] = cfg.model
    meta.update(extra)
    return meta


# -- commands -----------------------------------------------------------------


def _setup(cfg: RunConfig):
    system = build_model(cfg.model, cfg.params)
    stepper = StepperConfig(step=cfg.dt, max_t=cfg.T)
    return system, stepper


def _require_phi(cfg: RunConfig):
    if cfg.phi_s is None:
        raise ConfigError("phi_s is required (config key or --phi-s)")
    return np.array(cfg.phi_s)


def _reference(system, phi, cfg, stepper):
    return integrate(
        system.vector_field,
        lambda t: phi.copy(),
        (system.t0, cfg.T),
        stepper,
        min_delay=system.h_min,
        max_delay=system.h_max,
    )


def cmd_simulate(cfg: RunConfig) -> List[str]:
    system, stepper = _setup(cfg)
    phi = _require_phi(cfg)
    traj = _reference(system, phi, cfg, stepper)
    norms = traj.norms()
    rows = ([t, *x, nx] for t, x, nx in zip(traj.mesh, traj.states, norms))
    path = os.path.join(cfg.output_dir, "simulate.csv")
    return [write_csv(path, _meta(cfg, "simulate", "trajectory"), ["t", "x1", "x2", "x3", "x4", "norm"], rows)]


def cmd_cascade(cfg: RunConfig) -> List[str]:
    system, stepper = _setup(cfg)
    phi = _require_phi(cfg)
    res = solve_cascade(system, phi, cfg.K, cfg.T, stepper)
    eig = eigen_decompose(system.A)
    extra = {}
    if eig.hurwitz:
        report = check_decay(res, eig, system.F0)
        extra["decay"] = {"tail_max": report.tail_max, "threshold": report.threshold, "passed": bool(report.passed)}
    norms = np.column_stack([res.approximation_norms(k) for k in range(1, cfg.K + 1)])
    YK = res.Y(cfg.K).states
    cols = ["t", "Y1", "Y2", "Y3", "Y4"] + [f"norm_Y{k}" for k in range(1, cfg.K + 1)]
    rows = ([t, *y, *nk] for t, y, nk in zip(res.mesh, YK, norms))
    path = os.path.join(cfg.output_dir, "cascade.csv")
    return [write_csv(path, _meta(cfg, "cascade", "cascade", K=cfg.K, **extra), cols, rows)]


def cmd_bounds(cfg: RunConfig) -> List[str]:
    system, stepper = _setup(cfg)
    phi = _require_phi(cfg)
    eig = eigen_decompose(system.A)
    res = solve_cascade(system, phi, cfg.K, cfg.T, stepper)
    maj = residual_majorant(eig, system, res, cfg.K, convention=cfg.convention, nonlinear_scale=cfg.nonlinear_scale)
    Z = integrate_majorant(maj, system.delays, cfg.T, stepper, t0=system.t0, h_bounds=(system.h_min, system.h_max))
    trace = bilateral_bounds(res, Z, eig)
    ref = np.full(len(trace.mesh), np.nan)
    if cfg.reference:
        ref = _reference(system, phi, cfg, stepper).norms()
    rows = zip(trace.mesh, trace.lower, trace.upper, trace.Z, trace.approx, ref)
    meta = _meta(
        cfg,
        "bounds",
        "bounds",
        K=cfg.K,
        convention=resolve_convention(system, cfg.convention),
        nonlinear_scale=cfg.nonlinear_scale,
        normV=eig.normV,
    )
    path = os.path.join(cfg.output_dir, f"bounds_K{cfg.K}.csv")
    return [write_csv(path, meta, ["t", "lower", "upper", "Z", "approx", "reference"], rows)]


def _run_sweep(cfg: RunConfig, method: str, system, stepper, eig):
    sw = cfg.sweep
    options = {"convention": cfg.convention, "nonlinear_scale": cfg.nonlinear_scale} if method == "scalar_bound" else {}
    prober = Prober(method, system, cfg.T, cfg.varpi, stepper, K=cfg.K, eig=eig, tail_check=cfg.tail_check, options=options)
    return sweep(
        prober,
        grid=sw.theta_step,
        weights=sw.ray_weights,
        rho_max=sw.rho_max,
        tol_rho=sw.tol_rho,
        seed=sw.seed,
        mode=sw.projection_mode,
        theta2=sw.theta2,
        method=method,
    )


def _projection_flags(est):
    flags = est.flags.reshape(len(est.projection_theta), -1)
    out = []
    for row in flags:
        ok = row == "ok"
        if ok.any():
            out.append("ok" if ok.all() else "partial")
        else:
            out.append(str(row[0]) if (row == row[0]).all() else "unresolved")
    return out


def cmd_boundary(cfg: RunConfig, method: str = "all") -> List[str]:
    system, stepper = _setup(cfg)
    if method == "all":
        methods = list(METHODS)
        if not system.polynomial:
            methods.remove("scalar_bound")
    else:
        if method not in METHOD_ALIASES:
            raise ConfigError(f"unknown method {method!r}")
        methods = [METHOD_ALIASES[method]]
    eig = eigen_decompose(system.A)
    written, radii = [], {}
    theta = None
    sw = cfg.sweep
    for m in methods:
        est = _run_sweep(cfg, m, system, stepper, eig)
        radii[m] = est.projection_radius
        theta = est.projection_theta
        meta = _meta(
            cfg, "boundary", "boundary", method=m, K=cfg.K, T=cfg.T, varpi=cfg.varpi, dt=cfg.dt,
            tol_rho=sw.tol_rho, mode=sw.projection_mode, unresolved=int((est.flags != "ok").sum()),
        )
        rows = zip(est.projection_theta, est.projection_radius, est.projection[:, 0], est.projection[:, 1], _projection_flags(est))
        path = os.path.join(cfg.output_dir, f"boundary_{m}_K{cfg.K}.csv")
        written.append(write_csv(path, meta, ["theta1", "radius", "phi_s1", "phi_s2", "flag"], rows))
        if sw.projection_mode == "envelope":
            ray_rows = zip(est.theta_grid[:, 0], est.theta_grid[:, 1], est.radius, est.flags)
            ray_path = os.path.join(cfg.output_dir, f"boundary_{m}_K{cfg.K}_rays.csv")
            written.append(write_csv(ray_path, dict(meta, kind="boundary_rays"), ["theta1", "theta2", "radius", "flag"], ray_rows))
    if "reference" in radii and "scalar_bound" in radii:
        margin = radii["reference"] - radii["scalar_bound"]
        worst = float(np.nanmin(margin)) if np.isfinite(margin).any() else float("nan")
        meta = _meta(cfg, "boundary", "containment", min_margin=worst, tol_rho=sw.tol_rho, passed=bool(worst >= -sw.tol_rho))
        path = os.path.join(cfg.output_dir, f"containment_K{cfg.K}.csv")
        written.append(write_csv(path, meta, ["theta1", "reference", "scalar_bound", "margin"], zip(theta, radii["reference"], radii["scalar_bound"], margin)))
    return written


def compare_files(paths: Sequence[str]):
    """Metrics rows ``(name, value)`` for bound traces or boundary polylines."""
    loaded = [read_csv(p) for p in paths]
    kinds = {meta.get("kind") for meta, _, _ in loaded}
    if len(kinds) != 1:
        raise ConfigError(f"cannot compare files of different kinds: {sorted(map(str, kinds))}")
    kind = kinds.pop()
    metrics = []
    if kind == "bounds":
        base_t = None
        gaps = []
        for path, (meta, cols, rows) in zip(paths, loaded):
            t = _column(cols, rows, "t")
            if base_t is not None and (len(t) != len(base_t) or not np.array_equal(t, base_t)):
                raise MeshMismatch(f"{path}: time grid differs from {paths[0]}")
            base_t = t
            lower, upper, ref = (_column(cols, rows, c) for c in ("lower", "upper", "reference"))
            gap = float(np.max(upper - lower))
            gaps.append(gap)
            metrics.append((f"max_gap[{os.path.basename(path)}]", gap))
            if np.isfinite(ref).all():
                viol = int(np.sum((ref > upper + 1e-3) | (ref < lower - 1e-3)))
                metrics.append((f"enclosure_violations[{os.path.basename(path)}]", viol))
        for i in range(1, len(gaps)):
            ratio = gaps[i] / gaps[0] if gaps[0] > 0 else (0.0 if gaps[i] == 0 else math.inf)
            metrics.append((f"gap_ratio[{os.path.basename(paths[i])}/{os.path.basename(paths[0])}]", ratio))
    elif kind == "boundary":
        base_th, base_r = None, None
        for path, (meta, cols, rows) in zip(paths, loaded):
            th = _column(cols, rows, "theta1")
            r = _column(cols, rows, "radius")
            if base_th is None:
                base_th, base_r = th, r
                continue
            if len(th) != len(base_th) or not np.allclose(th, base_th, rtol=0, atol=1e-12):
                raise MeshMismatch(f"{path}: angle grid differs from {paths[0]}")
            margin = base_r - r
            name = f"{os.path.basename(paths[0])}-{os.path.basename(path)}"
            finite = np.isfinite(margin)
            metrics.append((f"max_radial_deviation[{name}]", float(np.max(np.abs(margin[finite]))) if finite.any() else math.nan))
            metrics.append((f"min_signed_margin[{name}]", float(np.min(margin[finite])) if finite.any() else math.nan))
            rel = np.abs(margin[finite]) / np.abs(base_r[finite])
            metrics.append((f"max_relative_deviation[{name}]", float(np.max(rel)) if rel.size else math.nan))
            metrics.append((f"unmatched_angles[{name}]", int((~finite).sum())))
    else:
        raise ConfigError(f"compare supports bounds and boundary files, got kind {kind!r}")
    return metrics


def cmd_compare(paths: Sequence[str], out: Optional[str] = None) -> List[str]:
    if len(paths) < 2:
        raise ConfigError("compare needs at least two files")
    metrics = compare_files(paths)
    hashes = [read_csv(p)[0].get("config_hash") for p in paths]
    meta = _meta(None, "compare", "metrics", inputs=[os.path.basename(p) for p in paths], config_hashes=hashes)
    out = out or os.path.join(os.path.dirname(os.path.abspath(paths[0])), "compare.csv")
    return [write_csv(out, meta, ["metric", "value"], metrics)]


# -- argument parsing -----------------------------------------------------------


def _phi_arg(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected four comma separated numbers, got {text!r}")
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("phi_s needs exactly four components")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaybounds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "direct simulation of the configured model"),
        ("cascade", "successive approximations Y_1..Y_K"),
        ("bounds", "lower/upper bounds on |x(t)| for one history"),
        ("boundary", "domain boundary estimates by angular sweep"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--K", type=int, help="cascade depth")
        p.add_argument("--T", type=float, help="horizon")
        p.add_argument("--varpi", type=float, help="threshold on the norm")
        p.add_argument("--phi-s", type=_phi_arg, dest="phi_s", help="constant history a,b,c,d")
        p.add_argument("--output-dir", "-o", dest="output_dir", help="directory for CSV output")
        if name == "boundary":
            p.add_argument("--method", default="all", choices=["reference", "scalar", "scalar_bound", "y_threshold", "all"])
    p = sub.add_parser("compare", help="metrics between bound traces or boundary files")
    p.add_argument("files", nargs="+")
    p.add_argument("--out", help="metrics CSV path (default: compare.csv next to the first input)")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    for key in ("K", "T", "varpi", "phi_s", "output_dir"):
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    return cfg.replace(**changes) if changes else cfg


def run(argv: Optional[Sequence[str]] = None) -> List[str]:
    args = build_parser().parse_args(argv)
    if args.command == "compare":
        return cmd_compare(args.files, args.out)
    cfg = _apply_overrides(load_config(args.config), args)
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "cascade":
        return cmd_cascade(cfg)
    if args.command == "bounds":
        return cmd_bounds(cfg)
    return cmd_boundary(cfg, args.method)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        written = run(argv)
    except (ConfigError, UnsupportedNonlinearity, MeshMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteState, StepExceedsMinDelay, DefectiveMatrix, NotHurwitz, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DelayBoundsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
