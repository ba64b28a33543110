"""Command-line driver: ``spincat <command> [options]``.

Angles are given in units of pi unless suffixed: ``0.0204`` and ``0.0204pi``
both mean 0.0204 pi, ``0.3rad`` means 0.3 radians.  Every run writes its data
files plus a ``manifest.json`` echoing the resolved configuration into
``--out-dir``.  Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .catfit import (
    SCAN_HEADER,
    BasinHopConfig,
    OptimizeConfig,
    ScanConfig,
    evaluate_drive,
    fidelity_trace,
    fit_mss,
    optimize_drive,
    scan_drive,
)
from .dynamics import DriveParams, Propagator, canonical_initial, evolve, record_times
from .eigen import GAP_HEADER, PHASE_HEADER, eigen_phase_profiles, gap_trace, initial_populations
from .errors import SpinCatError
from .interferometry import (
    FRINGE_HEADER,
    PRNG_NAME,
    SPECTRUM_HEADER,
    NoiseSpec,
    fringe_exact,
    fringe_experiment,
    protocol_thetas,
    spectral_sigma,
    spectrum_discrete,
)
from .spin import mss_state, q_function, two_j_of

logger = logging.getLogger("spincat")

EXIT_USAGE = 2

_ANGLE = re.compile(r"^\s*([+-]?)((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*(pi|rad)?\s*$")


class UsageError(Exception):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class Angle:
    """An angle that remembers how it was written."""

    literal: str
    radians: float

    def __str__(self):
        return self.literal

    def __float__(self):
        return self.radians


def parse_angle(text: str) -> Angle:
    """``"0.0204pi"`` / ``"0.0204"`` -> 0.0204 pi, ``"0.3rad"`` -> 0.3, ``"pi"`` / ``"-pi"`` -> +-pi."""
    m = _ANGLE.match(str(text))
    if not m or (m.group(2) is None and m.group(3) != "pi"):
        raise argparse.ArgumentTypeError(f"not an angle: {text!r} (use e.g. 0.02pi, 0.02 or 0.3rad)")
    num = (-1.0 if m.group(1) == "-" else 1.0) * (1.0 if m.group(2) is None else float(m.group(2)))
    value = num if m.group(3) == "rad" else num * math.pi
    return Angle(str(text).strip(), value)


def format_angle(radians: float) -> str:
    return f"{radians / math.pi!r}pi"


def parse_grid(text: str) -> list[Angle]:
    """``lo:hi:n`` (inclusive, n points) or a comma-separated list of angles."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"grid must be lo:hi:n, got {text!r}")
        lo, hi = parse_angle(parts[0]), parse_angle(parts[1])
        try:
            n = int(parts[2])
        except ValueError:
            raise argparse.ArgumentTypeError(f"grid point count must be an integer: {parts[2]!r}") from None
        if n < 1:
            raise argparse.ArgumentTypeError("grid needs at least one point")
        return [Angle(format_angle(v), float(v)) for v in np.linspace(lo.radians, hi.radians, n)]
    return [parse_angle(p) for p in text.split(",") if p.strip()]


def parse_spin(text: str) -> float:
    try:
        return two_j_of(text) / 2
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


NOISE_TARGETS = {
    "spin": "spin_number",
    "n": "spin_number",
    "omega": "drive_strength",
    "drive": "drive_strength",
    "lambda": "nonlinear_energy",
    "chi": "nonlinear_energy",
}


def parse_noise(text: str) -> tuple[str, str, float] | None:
    """``target:shape:sigma`` such as ``spin:gauss:0.05`` or ``omega:uniform:0.1``; ``none`` disables noise."""
    if text.lower() == "none":
        return None
    parts = text.split(":")
    if len(parts) != 3 or parts[0].lower() not in NOISE_TARGETS:
        raise argparse.ArgumentTypeError(f"noise must be target:shape:sigma with target in {sorted(NOISE_TARGETS)}")
    shape = {"gauss": "gaussian", "gaussian": "gaussian", "uniform": "uniform", "uni": "uniform"}.get(parts[1].lower())
    if shape is None:
        raise argparse.ArgumentTypeError(f"unknown noise shape {parts[1]!r}")
    return NOISE_TARGETS[parts[0].lower()], shape, float(parts[2])


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        # let "-0.0128pi" and "-0.3rad" through as values rather than option names
        self._negative_number_matcher = re.compile(r"^-(?:(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?(?:pi|rad)?|pi)$")

    def error(self, message):
        field = None
        m = re.search(r"(--[\w-]+)", message)
        if m:
            field = m.group(1)
        _emit_error("usage", message, EXIT_USAGE, field=field)
        sys.exit(EXIT_USAGE)


def _emit_error(kind, message, code, **extra):
    payload = {"error": kind, "message": str(message), "exit_code": code}
    payload.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)


# --- output ----------------------------------------------------------------


class Output:
    """Writes data files and the manifest into one directory."""

    def __init__(self, args, command: str):
        self.dir = Path(args.out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.format = args.format
        self.command = command
        self.files = []
        self.results = {}
        self.args = args

    def table(self, stem: str, header, rows, meta: dict | None = None) -> Path:
        meta = {"spincat": __version__, "command": self.command, "seed": self.args.seed, **(meta or {})}
        rows = [list(r) for r in rows]
        if self.format == "json":
            path = self.dir / f"{stem}.json"
            path.write_text(json.dumps({"meta": meta, "columns": list(header), "rows": rows}, indent=1, default=_jsonable) + "\n")
        else:
            path = self.dir / f"{stem}.csv"
            with path.open("w", newline="") as fh:
                for k, v in meta.items():
                    fh.write(f"# {k}: {json.dumps(v, default=_jsonable)}\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for r in rows:
                    w.writerow([_cell(x) for x in r])
        self.files.append(path.name)
        return path

    def json(self, stem: str, data: dict) -> Path:
        path = self.dir / f"{stem}.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.files.append(path.name)
        return path

    def manifest(self):
        config = {k: _jsonable(v) for k, v in sorted(vars(self.args).items()) if k not in ("func",)}
        data = {
            "spincat": __version__,
            "command": self.command,
            "config": config,
            "seed": self.args.seed,
            "prng": PRNG_NAME,
            "outputs": self.files,
            "results": self.results,
        }
        (self.dir / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _jsonable(v):
    if isinstance(v, Angle):
        return {"literal": v.literal, "radians": v.radians}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, Path):
        return str(v)
    return v


# --- commands --------------------------------------------------------------


def _drive(args, J=None) -> DriveParams:
    return DriveParams(J if J is not None else args.J, float(args.omega), float(args.phi), args.r)


def _fit_config(args) -> BasinHopConfig:
    return BasinHopConfig(hops=args.hops, seed=args.seed)


def cmd_evolve(args, out: Output):
    drive = _drive(args)
    taus = record_times(args.tau_end, args.tau_step)
    trace = fidelity_trace(drive, taus, _fit_config(args), args.dtau, args.method)
    rows = ([t, f.fidelity, f.params.gamma_prime, f.delta0 / math.pi] for t, f in trace)
    out.table("trace", ["tau", "F", "gamma_prime_0", "delta_0/pi"], rows)
    if args.q_at:
        prop = Propagator(canonical_initial(drive.J), drive, args.dtau, args.method)
        for tau in sorted(args.q_at):
            grid = q_function(prop.advance_to(tau), n_alpha=args.n_alpha, n_beta=args.n_beta)
            out.table(f"qfunc_tau{tau:g}", ["alpha", "beta", "Q"], grid.rows(), {"tau": tau})
    best = int(np.argmax(trace.fidelities))
    out.results = {"samples": len(trace), "max_fidelity": float(trace.fidelities[best]), "tau_at_max": float(trace.taus[best])}


def _scan_config(args) -> ScanConfig:
    return ScanConfig(
        tau_step=args.tau_step, tau_end=args.tau_end, dtau=args.dtau, method=args.method, fit=_fit_config(args),
        min_prominence=args.min_prominence,
    )


def cmd_scan(args, out: Output):
    omegas = [float(a) for a in args.omega_grid]
    phis = [float(a) for a in args.phi_grid]
    res = scan_drive(args.J, omegas, phis, _scan_config(args), args.threads)
    out.table("scan", SCAN_HEADER, res.rows())
    best = res.best()
    out.results = {
        "points": len(res.points),
        "failures": [p.to_dict() for p in res.failures],
        "best_admissible": None if best is None else best.to_dict(),
    }


def cmd_optimize(args, out: Output):
    cfg = OptimizeConfig(
        omega_range=(float(args.omega_min), float(args.omega_max)),
        phi_range=(float(args.phi_min), float(args.phi_max)),
        n_omega=args.n_omega,
        n_phi=args.n_phi,
        scan=_scan_config(args),
        refine=not args.no_refine,
    )
    opt = optimize_drive(args.J, cfg, args.threads)
    out.table("scan", SCAN_HEADER, opt.coarse.rows())
    out.json("optimal", opt.to_dict())
    out.results = opt.to_dict()


def _prepared_state(args, J):
    """State at the first fidelity maximum (or at ``--tau-opt``) and its cat fit."""
    drive = _drive(args, J)
    if args.tau_opt is None:
        point = evaluate_drive(J, drive.omega_tilde, drive.phi, _scan_config(args))
        tau = point.tau_max
    else:
        tau = args.tau_opt
    state = evolve(drive, tau, args.dtau, args.method)
    fit = fit_mss(state, _fit_config(args))
    return drive, tau, state, fit


def _nominal_J(args) -> float:
    if args.Nbar is not None:
        return two_j_of(args.Nbar / 2) / 2
    if args.J is not None:
        return args.J
    raise UsageError("one of --Nbar or --J is required", field="--Nbar")


def _noise_spec(args) -> NoiseSpec | None:
    if args.noise is None:
        return None
    target, shape, sigma = args.noise
    return NoiseSpec(target, sigma, args.trials, args.seed, shape)


def cmd_fringe(args, out: Output):
    J = _nominal_J(args)
    drive, tau, state, fit = _prepared_state(args, J)
    beta = fit.params.beta
    theta_max = float(args.theta_max) if args.theta_max is not None else 10 * spectral_sigma(J, beta)
    thetas = np.linspace(-theta_max, theta_max, args.n_theta)
    spec = _noise_spec(args)
    curve = fringe_exact(state, thetas) if spec is None else fringe_experiment(drive, tau, spec, thetas, args.dtau, args.method, args.threads)
    meta = {"J": J, "tau_opt": tau, "fit": fit.to_dict(), "noise": None if spec is None else spec.header()}
    out.table("fringe", FRINGE_HEADER, curve.rows(), meta)
    out.results = {"tau_opt": tau, "fit": fit.to_dict(), "trials": curve.trials, "failures": curve.failures}


def cmd_spectrum(args, out: Output):
    J = _nominal_J(args)
    drive, tau, state, fit = _prepared_state(args, J)
    beta = fit.params.beta
    thetas = protocol_thetas(J, beta)
    spec = _noise_spec(args)
    if args.perfect:
        curve = fringe_exact(mss_state(J, fit.params), thetas)
    elif spec is None:
        curve = fringe_exact(state, thetas)
    else:
        curve = fringe_experiment(drive, tau, spec, thetas, args.dtau, args.method, args.threads)
    res = spectrum_discrete(curve, J, beta)
    meta = {"J": J, "tau_opt": tau, "beta": beta, "noise": None if spec is None else spec.header()}
    out.table("spectrum", SPECTRUM_HEADER, res.rows(), meta)
    out.results = {
        "dip_frequencies": list(res.dip_frequencies),
        "dips_found": list(res.dips_found),
        "dip_depths": list(res.dip_depths()),
        "bin_width": res.bin_width,
    }


def cmd_eigen(args, out: Output):
    drive = _drive(args)
    if args.trace == "pop":
        rows = []
        for J in args.J_list or [args.J]:
            p = initial_populations(J, _drive(args, J))
            rows.append([two_j_of(J) / 2, *p])
        out.table("populations", ["J", "p1", "p2", "pRest"], rows)
        out.results = {"populations": rows}
        return
    taus = record_times(args.tau_end, args.tau_step)
    if args.trace == "gap":
        g = gap_trace(args.J, drive, taus)
        out.table("gap", GAP_HEADER, g.rows())
        out.results = {"closure_tau": g.closure_tau}
    else:
        samples = eigen_phase_profiles(args.J, drive, taus)
        rows = (r for s in samples for r in s.rows(drive.J))
        out.table("phase", PHASE_HEADER, rows)
        closed = [s.tau for s in samples if s.closed]
        out.results = {"closure_tau": closed[0] if closed else None}


def cmd_qfunc(args, out: Output):
    drive = _drive(args)
    state = evolve(drive, args.tau, args.dtau, args.method) if args.tau > 0 else canonical_initial(drive.J)
    grid = q_function(state, n_alpha=args.n_alpha, n_beta=args.n_beta)
    out.table("qfunc", ["alpha", "beta", "Q"], grid.rows(), {"tau": args.tau})
    a, b, q = grid.peak()
    out.results = {"integral": grid.integral(), "peak": {"Q": q, "alpha": a, "beta": b}}


# --- parser ----------------------------------------------------------------


GLOBAL_DEFAULTS = {"seed": 0, "threads": 1, "out_dir": ".", "format": "csv", "verbose": False}


def _common(with_defaults: bool) -> argparse.ArgumentParser:
    # subcommands accept the global flags too, but must not reset values given before the command name
    def d(name):
        return GLOBAL_DEFAULTS[name] if with_defaults else argparse.SUPPRESS

    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=d("seed"), help="seed for fits and noise ensembles")
    g.add_argument("--threads", type=int, default=d("threads"), help="worker processes for scans and noise trials")
    g.add_argument("--out-dir", default=d("out_dir"), help="directory for data files and manifest.json")
    g.add_argument("--format", choices=("csv", "json"), default=d("format"))
    g.add_argument("-v", "--verbose", action="store_true", default=d("verbose"))
    return p


def _drive_args(p, require_j=True):
    if require_j:
        p.add_argument("--J", type=parse_spin, required=True, help="total spin (integer or half-integer)")
    p.add_argument("--omega", type=parse_angle, default=parse_angle("0"), help="rescaled drive frequency (pi units)")
    p.add_argument("--phi", type=parse_angle, default=parse_angle("0"), help="drive phase (pi units)")
    p.add_argument("--r", type=float, default=1.0, help="rescaled drive strength")


def _prop_args(p, tau_step=0.01, hops=5):
    p.add_argument("--dtau", type=float, default=0.01, help="propagation step")
    p.add_argument("--method", choices=("eigh", "chebyshev"), default="chebyshev")
    p.add_argument("--tau-step", type=float, default=tau_step, help="fidelity sampling interval")
    p.add_argument("--hops", type=int, default=hops, help="basin-hopping iterations per fit")


def build_parser() -> argparse.ArgumentParser:
    common = _common(False)
    parser = _Parser(prog="spincat", description="Driven one-axis-twisting spin-cat toolkit", parents=[_common(True)])
    parser.add_argument("--version", action="version", version=f"spincat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("evolve", parents=[common], help="fidelity trace of a driven run")
    _drive_args(p)
    _prop_args(p)
    p.add_argument("--tau-end", type=float, required=True)
    p.add_argument("--q-at", type=float, nargs="*", default=[], help="times for Q-function snapshots")
    p.add_argument("--n-alpha", type=int, default=201)
    p.add_argument("--n-beta", type=int, default=101)
    p.set_defaults(func=cmd_evolve)

    default_omega = "0.005pi:0.05pi:51"
    default_phi = "-0.05pi:0.05pi:51"
    p = sub.add_parser("scan", parents=[common], help="first-maximum fidelity over a drive grid")
    p.add_argument("--J", type=parse_spin, required=True)
    p.add_argument("--omega-grid", type=parse_grid, default=parse_grid(default_omega))
    p.add_argument("--phi-grid", type=parse_grid, default=parse_grid(default_phi))
    _prop_args(p, tau_step=0.05, hops=2)
    p.add_argument("--tau-end", type=float, default=40.0, help="give up looking for a maximum after this time")
    p.add_argument("--min-prominence", type=float, default=0.0, help="skip fidelity maxima shallower than this")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("optimize", parents=[common], help="coarse scan plus lattice refinement")
    p.add_argument("--J", type=parse_spin, required=True)
    p.add_argument("--omega-min", type=parse_angle, default=parse_angle("0.005pi"))
    p.add_argument("--omega-max", type=parse_angle, default=parse_angle("0.05pi"))
    p.add_argument("--phi-min", type=parse_angle, default=parse_angle("-0.05pi"))
    p.add_argument("--phi-max", type=parse_angle, default=parse_angle("0.05pi"))
    p.add_argument("--n-omega", type=int, default=51)
    p.add_argument("--n-phi", type=int, default=51)
    p.add_argument("--no-refine", action="store_true")
    _prop_args(p, tau_step=0.05, hops=2)
    p.add_argument("--tau-end", type=float, default=40.0)
    p.add_argument("--min-prominence", type=float, default=0.0, help="skip fidelity maxima shallower than this")
    p.set_defaults(func=cmd_optimize)

    for name, func, helptext in (
        ("fringe", cmd_fringe, "parity-variance fringe, optionally over a noise ensemble"),
        ("spectrum", cmd_spectrum, "discrete spectrum of the fringe"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--Nbar", type=int, default=None, help="nominal spin number")
        p.add_argument("--J", type=parse_spin, default=None, help="nominal total spin (alternative to --Nbar)")
        _drive_args(p, require_j=False)
        _prop_args(p, tau_step=0.05)
        p.add_argument("--tau-end", type=float, default=40.0)
        p.add_argument("--min-prominence", type=float, default=0.0, help="skip fidelity maxima shallower than this")
        p.add_argument("--tau-opt", type=float, default=None, help="preparation time; default: first fidelity maximum")
        p.add_argument("--noise", type=parse_noise, default=None, help="target:shape:sigma, e.g. spin:gauss:0.05")
        p.add_argument("--trials", type=int, default=250)
        if name == "fringe":
            p.add_argument("--theta-max", type=parse_angle, default=None, help="half window (default 10 sigma_s)")
            p.add_argument("--n-theta", type=int, default=200)
        else:
            p.add_argument("--perfect", action="store_true", help="use the fitted ideal cat state")
        p.set_defaults(func=func)

    p = sub.add_parser("eigen", parents=[common], help="instantaneous eigenstructure")
    _drive_args(p)
    p.add_argument("--trace", choices=("gap", "pop", "phase"), default="gap")
    p.add_argument("--J-list", type=parse_spin, nargs="*", default=None, help="several J for --trace pop")
    p.add_argument("--tau-end", type=float, default=20.0)
    p.add_argument("--tau-step", type=float, default=0.01)
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("qfunc", parents=[common], help="Husimi Q function on a (alpha, beta) grid")
    _drive_args(p)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--dtau", type=float, default=0.01)
    p.add_argument("--method", choices=("eigh", "chebyshev"), default="chebyshev")
    p.add_argument("--n-alpha", type=int, default=201)
    p.add_argument("--n-beta", type=int, default=101)
    p.set_defaults(func=cmd_qfunc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    out = Output(args, args.command)
    try:
        args.func(args, out)
    except UsageError as exc:
        _emit_error("usage", exc, EXIT_USAGE, field=exc.field)
        return EXIT_USAGE
    except SpinCatError as exc:
        _emit_error(type(exc).__name__, exc, exc.exit_code, diagnostics=getattr(exc, "diagnostics", None))
        return exc.exit_code
    except ValueError as exc:
        _emit_error("usage", exc, EXIT_USAGE)
        return EXIT_USAGE
    out.manifest()
    return 0


if __name__ == "__main__":
    sys.exit(main())
