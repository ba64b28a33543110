"""Fitting evolved states to the spin-cat family and optimizing the drive.

The cat overlap is evaluated in component form.  With ``c`` the coherent-state
amplitudes at ``(alpha, beta)``,

    F = |<c|psi> + exp(-i gamma') <c|reversed psi>|^2 / A^2,
    A^2 = 2 (1 + cos^{2J}(alpha) sin^{2J}(beta) cos(gamma')),

so one fidelity evaluation costs two inner products.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import basinhopping, minimize

from .dynamics import DriveParams, Propagator, canonical_initial
from .errors import ConstraintInfeasible, NoLocalMaximum, SpinCatError
from .spin import CatParams, SpinState, _css_magnitudes, _log_binomials, mss_state, two_j_of, wrap_angle

logger = logging.getLogger(__name__)

DEGENERATE_CLAMP = 1e-6
DELTA_MIN = 0.4 * math.pi
DELTA_TOL = 1e-9
REFINE_QUANTUM = math.pi * 1e-4


@dataclass(frozen=True)
class BasinHopConfig:
    """Basin-hopping settings; the seeding grid is ``seed_alphas x seed_betas x seed_gammas``."""

    hops: int = 50
    temperature: float = 0.1
    step_scales: tuple = (0.3, 0.3, 0.6)
    seed: int = 0
    seed_alphas: tuple = (0.0, math.pi / 2, math.pi, -math.pi / 2)
    seed_betas: tuple = (math.pi / 8, 3 * math.pi / 8)
    seed_gammas: tuple = (0.0, math.pi)
    xatol: float = 1e-9
    fatol: float = 1e-13
    max_local_iter: int = 2000
    converge_tol: float = 1e-8


@dataclass(frozen=True)
class FitResult:
    fidelity: float
    params: CatParams
    delta0: float
    converged: bool = True
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {
            "fidelity": self.fidelity,
            **self.params.to_dict(),
            "delta0": self.delta0,
            "converged": self.converged,
        }


class CatObjective:
    """Cat-family fidelity of a fixed state as a function of unconstrained ``(alpha, beta, gamma')``."""

    def __init__(self, state: SpinState):
        self.two_j = state.two_j
        self.psi = np.asarray(state.amps)
        self.rev = self.psi[::-1].copy()
        self.phases = np.arange(self.two_j + 1)
        self.rphases = self.two_j - self.phases
        self.half_log_binom = 0.5 * _log_binomials(self.two_j)
        self.calls = 0

    @staticmethod
    def canonical(x) -> tuple[float, float, float]:
        """Fold to alpha in (-pi, pi], beta in [0, pi], gamma' in (-pi, pi] and clamp off the excluded point."""
        a = wrap_angle(float(x[0]))
        b = abs(math.remainder(float(x[1]), 2 * math.pi))
        g = wrap_angle(float(x[2]))
        if (abs(a) < DEGENERATE_CLAMP or abs(abs(a) - math.pi) < DEGENERATE_CLAMP) and abs(b - math.pi / 2) < DEGENERATE_CLAMP:
            b = math.pi / 2 + math.copysign(DEGENERATE_CLAMP, b - math.pi / 2)
        return a, b, g

    def __call__(self, x) -> float:
        self.calls += 1
        a, b, g = self.canonical(x)
        cb, sb = math.cos(b / 2), math.sin(b / 2)
        if cb > 0 and sb > 0:
            mag = np.exp(self.half_log_binom + self.rphases * math.log(cb) + self.phases * math.log(sb))
        else:
            mag = _css_magnitudes(self.two_j, b)[0]
        c = mag * np.exp(1j * a * self.phases)
        s1 = np.vdot(c, self.psi)
        s2 = np.vdot(c, self.rev)
        a_sq = 2.0 * (1.0 + math.cos(a) ** self.two_j * math.sin(b) ** self.two_j * math.cos(g))
        if a_sq < 1e-300:
            return 0.0
        return float(abs(s1 + np.exp(-1j * g) * s2) ** 2 / a_sq)


class _Hop:
    # no ``stepsize`` attribute, so scipy leaves the scales alone
    def __init__(self, scales, rng):
        self.scales = np.asarray(scales, dtype=float)
        self.rng = rng

    def __call__(self, x):
        return x + self.rng.uniform(-1.0, 1.0, size=3) * self.scales


def _local_simplex(scales):
    def method(fun, x0, args=(), **kwargs):
        simplex = np.vstack([x0, x0 + np.diag(0.25 * np.asarray(scales))])
        return minimize(
            fun, x0, args=args, method="Nelder-Mead",
            options={**kwargs.get("options", {}), "initial_simplex": simplex},
        )
    return method


def fit_mss(state: SpinState, config: BasinHopConfig | None = None, hints: Sequence[CatParams] = ()) -> FitResult:
    """Best cat-family approximation of ``state`` by seeded basin hopping.

    Parameters
    ----------
    state : SpinState
    config : BasinHopConfig, optional
    hints : sequence of CatParams
        Extra starting points (e.g. the fit at the previous time) evaluated
        alongside the seeding grid.

    Returns
    -------
    FitResult
        ``converged`` is False when the best optimum still moved by more than
        ``config.converge_tol`` during the final hop.
    """
    config = config or BasinHopConfig()
    obj = CatObjective(state)
    starts = [(a, b, g) for a in config.seed_alphas for b in config.seed_betas for g in config.seed_gammas]
    starts += [(h.alpha, h.beta, h.gamma_prime) for h in hints]
    scores = [obj(s) for s in starts]
    best = int(np.argmax(scores))
    x0 = np.array(starts[best], dtype=float)

    local = _local_simplex(config.step_scales)
    options = {"xatol": config.xatol, "fatol": config.fatol, "maxiter": config.max_local_iter}
    first = local(lambda x: -obj(x), x0, options=options)
    if -first.fun >= scores[best]:
        x0 = first.x
    start_value = max(-first.fun, scores[best])
    if config.hops <= 0:
        return _finish(state, obj, x0, True)

    history = []
    res = basinhopping(
        lambda x: -obj(x), x0,
        niter=config.hops,
        T=config.temperature,
        take_step=_Hop(config.step_scales, np.random.default_rng(config.seed)),
        minimizer_kwargs={"method": local, "options": options},
        callback=lambda x, f, accept: history.append(-f),
        rng=np.random.default_rng([config.seed, 1]),
    )
    x_best = res.x if -res.fun >= start_value else x0
    converged = True
    if history:
        before = max([start_value, *history[:-1]])
        converged = history[-1] <= before + config.converge_tol
    return _finish(state, obj, x_best, converged)


SNAP_WINDOW = 1e-2
SNAP_LOSS = 1e-12


def _snap_phase(obj, x):
    # gamma' is flat near the coherent-state limit; prefer 0 or pi when that costs nothing
    a, b, g = obj.canonical(x)
    value = obj((a, b, g))
    for target in (0.0, math.pi):
        if 0 < abs(wrap_angle(g - target)) < SNAP_WINDOW and obj((a, b, target)) >= value - SNAP_LOSS:
            return (a, b, target)
    return (a, b, g)


def _finish(state, obj, x, converged) -> FitResult:
    params = CatParams(*obj.canonical(_snap_phase(obj, x)))
    if params.beta > math.pi / 2:
        params = params.mirrored()
    fidelity = min(1.0, abs(mss_state(state.J, params).overlap(state)) ** 2)
    return FitResult(float(fidelity), params, params.delta, bool(converged), obj.calls)


@dataclass(frozen=True, eq=False)
class FidelityTrace:
    """Cat fits at increasing times along one driven trajectory."""

    drive: DriveParams
    taus: np.ndarray
    fits: list
    snapshots: list = field(default_factory=list, repr=False)

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([f.fidelity for f in self.fits])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([f.delta0 for f in self.fits])

    @property
    def gamma_primes(self) -> np.ndarray:
        return np.array([f.params.gamma_prime for f in self.fits])

    def __iter__(self):
        return iter(zip(self.taus, self.fits))

    def __len__(self):
        return len(self.fits)

    def rows(self):
        for tau, f in self:
            p = f.params
            yield [float(tau), f.fidelity, p.alpha, p.beta, p.gamma_prime, f.delta0]


def _point_config(config: BasinHopConfig, *index: int) -> BasinHopConfig:
    # per-sample seed depends only on (seed, index): truncating a trace never changes earlier fits
    return replace(config, seed=int(np.random.SeedSequence([config.seed, *index]).generate_state(1)[0]))


def _hints(fit: FitResult | None):
    return () if fit is None else (fit.params, fit.params.mirrored())


def fidelity_trace(
    drive: DriveParams,
    taus,
    config: BasinHopConfig | None = None,
    dtau: float = 0.01,
    method: str = "chebyshev",
    initial: SpinState | None = None,
    stop_after_max: bool = False,
    keep_states: bool = False,
    min_prominence: float = 0.0,
) -> FidelityTrace:
    """Fit the cat family at each ``taus`` sample of the driven trajectory.

    Each fit is warm-started from the previous one.  With ``stop_after_max`` the
    trace ends one sample after the first interior local maximum of the
    fidelity (with at least ``min_prominence``), which is all
    :func:`first_local_max` needs.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.ndim != 1 or len(taus) == 0 or np.any(np.diff(taus) <= 0):
        raise ValueError("tau grid must be non-empty and strictly increasing")
    config = config or BasinHopConfig()
    initial = initial or canonical_initial(drive.J)
    prop = Propagator(initial, drive, dtau, method)
    fits, states, prev = [], [], None
    for i, tau in enumerate(taus):
        st = prop.advance_to(float(tau))
        prev = fit_mss(st, _point_config(config, 0, i), _hints(prev))
        fits.append(prev)
        if keep_states:
            states.append(st)
        if stop_after_max and _first_peak_index([f.fidelity for f in fits], min_prominence) is not None:
            break
    return FidelityTrace(drive, taus[: len(fits)], fits, states)


def _first_peak_index(fids, min_prominence: float = 0.0) -> int | None:
    # with a prominence, a peak counts once the trace has fallen that far below it
    # without first climbing back above it; shoulders are skipped
    for i in range(1, len(fids) - 1):
        if not (fids[i] > fids[i - 1] and fids[i] >= fids[i + 1]):
            continue
        if min_prominence <= 0:
            return i
        for f in fids[i + 1:]:
            if f > fids[i]:
                break
            if f <= fids[i] - min_prominence:
                return i
    return None


def golden_section_max(f: Callable[[float], float], a: float, b: float, tol: float = 1e-3):
    """Maximize a unimodal ``f`` on ``[a, b]`` until the bracket is narrower than ``tol``."""
    inv = (math.sqrt(5) - 1) / 2
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def first_local_max(taus, fids, refine: Callable[[float], float] | None = None, tol: float = 1e-3, min_prominence: float = 0.0):
    """First interior sample exceeding its neighbors, optionally refined by golden section.

    Parameters
    ----------
    taus, fids : array_like
        Sampled trace, at least three points.
    refine : callable, optional
        ``refine(tau) -> fidelity``; when given, the maximum is refined between
        the neighboring samples to a bracket of ``tol``.  The refined value is
        never reported below the sampled one.
    min_prominence : float
        Zero takes the first sample above both neighbors.  A positive value
        skips local maxima the trace does not fall at least this far below
        before rising past them again.

    Returns
    -------
    (tau_max, f_max, index)

    Raises
    ------
    NoLocalMaximum
        If no interior local maximum exists.
    """
    taus = np.asarray(taus, dtype=float)
    fids = np.asarray(fids, dtype=float)
    if len(taus) < 3:
        raise ValueError("need at least three samples")
    i = _first_peak_index(fids, min_prominence)
    if i is None:
        raise NoLocalMaximum("fidelity trace has no interior local maximum")
    tau, fmax = float(taus[i]), float(fids[i])
    if refine is not None:
        t_ref, f_ref = golden_section_max(refine, float(taus[i - 1]), float(taus[i + 1]), tol)
        if f_ref > fmax:
            tau, fmax = t_ref, f_ref
    return tau, fmax, i


@dataclass(frozen=True)
class ScanConfig:
    """How each drive point is evaluated: trace sampling, propagation and the per-sample fit."""

    tau_step: float = 0.05
    tau_end: float = 40.0
    dtau: float = 0.01
    method: str = "chebyshev"
    fit: BasinHopConfig = BasinHopConfig(hops=2)
    refine_tol: float = 1e-3
    min_prominence: float = 0.0


@dataclass(frozen=True)
class DriveScanPoint:
    J: float
    omega_tilde: float
    phi: float
    tau_max: float = math.nan
    f_max: float = math.nan
    delta_max: float = math.nan
    params: CatParams | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def admissible(self, delta_min: float = DELTA_MIN) -> bool:
        return self.ok and self.delta_max > delta_min + DELTA_TOL

    def row(self) -> list:
        return [self.J, self.omega_tilde / math.pi, self.phi / math.pi, self.tau_max, self.f_max, self.delta_max / math.pi]

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "omega_tilde": self.omega_tilde,
            "phi": self.phi,
            "tau_max": self.tau_max,
            "f_max": self.f_max,
            "delta_max": self.delta_max,
            "params": None if self.params is None else self.params.to_dict(),
            "error": self.error,
        }


SCAN_HEADER = ["J", "omega_tilde/pi", "phi/pi", "tau_max", "f_max", "delta_max/pi"]


def evaluate_drive(J, omega_tilde: float, phi: float, config: ScanConfig | None = None) -> DriveScanPoint:
    """Fidelity trace up to its first maximum, refined in time by golden section."""
    config = config or ScanConfig()
    drive = DriveParams(J, omega_tilde, phi)
    n = int(math.floor(config.tau_end / config.tau_step + 1e-9))
    taus = config.tau_step * np.arange(n + 1)
    trace = fidelity_trace(drive, taus, config.fit, config.dtau, config.method, stop_after_max=True, keep_states=True, min_prominence=config.min_prominence)
    if len(trace) < 3:
        raise NoLocalMaximum("trace too short")
    i = _first_peak_index(trace.fidelities, config.min_prominence)
    if i is None:
        raise NoLocalMaximum(f"no fidelity maximum before tau={config.tau_end}")

    cache = {}
    left_tau, left_state = float(trace.taus[i - 1]), trace.snapshots[i - 1]
    hints = _hints(trace.fits[i])
    refine_config = _point_config(config.fit, 1, i)

    def refine(tau):
        prop = Propagator(left_state, drive, config.dtau, config.method, tau0=left_tau)
        fit = fit_mss(prop.advance_to(tau), refine_config, hints)
        cache[tau] = fit
        return fit.fidelity

    tau_max, f_max, _ = first_local_max(trace.taus, trace.fidelities, refine, config.refine_tol, config.min_prominence)
    fit = cache.get(tau_max, trace.fits[i])
    return DriveScanPoint(drive.J, omega_tilde, phi, tau_max, f_max, fit.delta0, fit.params)


def _evaluate_safe(args) -> DriveScanPoint:
    J, omega, phi, config = args
    try:
        return evaluate_drive(J, omega, phi, config)
    except (SpinCatError, ValueError, FloatingPointError) as exc:
        logger.warning("drive (%g, %g) failed: %s", omega, phi, exc)
        return DriveScanPoint(two_j_of(J) / 2, omega, phi, error=f"{type(exc).__name__}: {exc}")


def _map_points(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_evaluate_safe(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate_safe, tasks))


@dataclass(frozen=True, eq=False)
class ScanResult:
    """Row-major grid: ``points[i * len(phis) + j]`` belongs to ``(omegas[i], phis[j])``."""

    J: float
    omegas: np.ndarray
    phis: np.ndarray
    points: list

    def at(self, i: int, j: int) -> DriveScanPoint:
        return self.points[i * len(self.phis) + j]

    def grid(self, attr: str) -> np.ndarray:
        return np.array([getattr(p, attr) for p in self.points]).reshape(len(self.omegas), len(self.phis))

    @property
    def failures(self) -> list:
        return [p for p in self.points if not p.ok]

    def best(self, delta_min: float | None = DELTA_MIN) -> DriveScanPoint | None:
        """Highest ``f_max`` among admissible points; ties go to the lowest omega index, then lowest phi index."""
        best = None
        for p in self.points:
            if not p.ok or (delta_min is not None and not p.admissible(delta_min)):
                continue
            if best is None or p.f_max > best.f_max:
                best = p
        return best

    def rows(self):
        for p in self.points:
            yield p.row()


def scan_drive(J, omegas, phis, config: ScanConfig | None = None, workers: int = 1) -> ScanResult:
    """Evaluate every ``(omega_tilde, phi)`` pair; failing points are recorded, not raised."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    if omegas.size == 0 or phis.size == 0:
        raise ValueError("scan grids must be non-empty")
    config = config or ScanConfig()
    tasks = [(J, float(w), float(p), config) for w in omegas for p in phis]
    return ScanResult(two_j_of(J) / 2, omegas, phis, _map_points(tasks, workers))


@dataclass(frozen=True)
class OptimizeConfig:
    """Coarse window and refinement settings for :func:`optimize_drive`."""

    omega_range: tuple = (0.005 * math.pi, 0.05 * math.pi)
    phi_range: tuple = (-0.05 * math.pi, 0.05 * math.pi)
    n_omega: int = 51
    n_phi: int = 51
    scan: ScanConfig = ScanConfig()
    quantum: float = REFINE_QUANTUM
    delta_min: float = DELTA_MIN
    refine: bool = True

    def omega_grid(self) -> np.ndarray:
        return np.linspace(*self.omega_range, self.n_omega)

    def phi_grid(self) -> np.ndarray:
        return np.linspace(*self.phi_range, self.n_phi)


@dataclass(frozen=True, eq=False)
class OptimalDrive:
    J: float
    omega_opt: float
    phi_opt: float
    tau_opt: float
    f_opt: float
    delta_opt: float
    angles_opt: CatParams
    coarse_best: DriveScanPoint
    coarse: ScanResult | None = field(default=None, repr=False)
    refined_points: int = 0

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "omega_opt": self.omega_opt,
            "phi_opt": self.phi_opt,
            "omega_opt/pi": self.omega_opt / math.pi,
            "phi_opt/pi": self.phi_opt / math.pi,
            "tau_opt": self.tau_opt,
            "f_opt": self.f_opt,
            "delta_opt": self.delta_opt,
            "angles_opt": self.angles_opt.to_dict(),
            "coarse_best": self.coarse_best.to_dict(),
            "refined_points": self.refined_points,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _step_units(values, quantum) -> int:
    if len(values) < 2:
        return 1
    return max(1, int(round(abs(values[1] - values[0]) / 2 / quantum)))


def refine_drive(J, start: DriveScanPoint, config: OptimizeConfig, workers: int = 1, steps=(1, 1)):
    """Compass-and-diagonal pattern search on the ``quantum`` lattice around ``start``.

    Moves only to admissible points with a strictly higher ``f_max`` and halves
    the step when no neighbor improves, stopping at one quantum.  The search
    stays inside the coarse cell around ``start`` (``2 * steps`` quanta each
    way).  The result is therefore never worse than ``start``.
    """
    q = config.quantum
    seen = {(0, 0): start}
    current, here = start, (0, 0)
    sw, sp = steps
    reach = (2 * sw, 2 * sp)
    while True:
        offsets = [(here[0] + a * sw, here[1] + b * sp) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
        offsets = [o for o in offsets if abs(o[0]) <= reach[0] and abs(o[1]) <= reach[1]]
        todo = [o for o in offsets if o not in seen and start.omega_tilde + o[0] * q > 0]
        tasks = [(J, start.omega_tilde + o[0] * q, start.phi + o[1] * q, config.scan) for o in todo]
        for o, p in zip(todo, _map_points(tasks, workers)):
            seen[o] = p
        # deterministic: scan neighbors in offset order, keep strict improvements only
        best_o = None
        for o in offsets:
            p = seen.get(o)
            if p is not None and p.admissible(config.delta_min) and p.f_max > (seen[best_o] if best_o else current).f_max:
                best_o = o
        if best_o is not None:
            here, current = best_o, seen[best_o]
            logger.info("refine J=%s: moved to (%.5f pi, %.5f pi) f=%.6f", J, current.omega_tilde / math.pi, current.phi / math.pi, current.f_max)
            continue
        if sw == 1 and sp == 1:
            return current, len(seen) - 1
        sw, sp = max(1, sw // 2), max(1, sp // 2)


def optimize_drive(J, config: OptimizeConfig | None = None, workers: int = 1) -> OptimalDrive:
    """Coarse grid scan followed by lattice refinement of the best admissible point.

    Raises
    ------
    ConstraintInfeasible
        If no coarse point has a displacement angle above ``config.delta_min``.
    """
    config = config or OptimizeConfig()
    coarse = scan_drive(J, config.omega_grid(), config.phi_grid(), config.scan, workers)
    start = coarse.best(config.delta_min)
    if start is None:
        raise ConstraintInfeasible(
            f"no scanned drive at J={coarse.J} reaches delta > {config.delta_min / math.pi:.3f} pi"
            f" ({len(coarse.failures)} of {len(coarse.points)} points failed)"
        )
    best, n_refined = start, 0
    if config.refine:
        steps = (_step_units(coarse.omegas, config.quantum), _step_units(coarse.phis, config.quantum))
        best, n_refined = refine_drive(J, start, config, workers, steps)
    return OptimalDrive(
        coarse.J, best.omega_tilde, best.phi, best.tau_max, best.f_max, best.delta_max,
        best.params, start, coarse, n_refined,
    )
