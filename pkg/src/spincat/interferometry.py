"""Parity-fringe witness, noise ensembles and fringe spectroscopy.

After a small rotation ``exp(-i Jz theta)`` the x-parity expectation of a
Dicke-basis state ``psi`` is

    <X>(theta) = sum_k conj(psi[2J - k]) psi[k] exp(-2 i M_k theta),

and the fringe is its variance ``1 - <X>^2``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DriveParams, evolve
from .errors import ExperimentFailed, ResamplingCapExceeded, SpinCatError
from .spin import SpinState, two_j_of

logger = logging.getLogger(__name__)

TARGETS = ("spin_number", "drive_strength", "nonlinear_energy")
SHAPES = {"spin_number": "gaussian", "drive_strength": "uniform", "nonlinear_energy": "uniform"}
PRNG_NAME = "MT19937"
MAX_BATCHES = 10_000
FAILED_FRACTION = 0.05


@dataclass(frozen=True, eq=False)
class FringeCurve:
    thetas: np.ndarray
    variance: np.ndarray
    stds: np.ndarray | None = None
    trials: int = 1
    failures: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def sqrt_variance(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def rows(self):
        stds = self.stds if self.stds is not None else np.zeros_like(self.variance)
        for t, v, s in zip(self.thetas, self.variance, stds):
            yield [float(t), float(v), float(s), math.sqrt(v)]


FRINGE_HEADER = ["theta", "variance_mean", "variance_std", "sqrt_variance_mean"]


def parity_expectation(state: SpinState, thetas) -> np.ndarray:
    """``<X>`` after a z rotation by each theta (vectorized over theta)."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    weights = np.conj(state.amps[::-1]) * state.amps
    return (np.exp(-2j * np.outer(thetas, state.m)) @ weights).real


def fringe_exact(state: SpinState, thetas) -> FringeCurve:
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    mean = parity_expectation(state, thetas)
    return FringeCurve(thetas, np.clip(1.0 - mean**2, 0.0, 1.0))


def fringe_analytic(J, beta: float, gamma_prime: float, thetas) -> FringeCurve:
    """Gaussian-envelope fringe of an ideal cat state."""
    J = two_j_of(J) / 2
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    env = np.exp(-2 * J * thetas**2 * math.sin(beta) ** 2)
    return FringeCurve(thetas, 1.0 - env * np.cos(2 * J * thetas * math.cos(beta) + gamma_prime) ** 2)


def fringe_mixed(J, alpha: float, beta: float, gamma_prime: float, thetas) -> FringeCurve:
    """Fringe of the incoherent mixture of the two cat branches (no interference)."""
    two_j = two_j_of(J)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    num = (np.cos(thetas + alpha) ** two_j + np.cos(thetas - alpha) ** two_j) * math.sin(beta) ** two_j
    den = 2 * (1 + math.cos(alpha) ** two_j * math.sin(beta) ** two_j * math.cos(gamma_prime))
    return FringeCurve(thetas, 1.0 - num / den)


def fringe_width(J, beta: float) -> float:
    """Width of a single fringe, ``pi / (2 J cos^2 beta)``."""
    return math.pi / (2 * (two_j_of(J) / 2) * math.cos(beta) ** 2)


def spectral_sigma(J, beta: float) -> float:
    """``sigma_s = 1 / (2 sqrt(J) |sin beta|)``, the fringe envelope width."""
    return 1.0 / (2 * math.sqrt(two_j_of(J) / 2) * abs(math.sin(beta)))


def fringe_frequency(J, beta: float) -> float:
    return 4 * (two_j_of(J) / 2) * math.cos(beta)


# --- noise -----------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Which quantity fluctuates, by how much (relative width) and over how many seeded trials."""

    target: str = "spin_number"
    sigma_rel: float = 0.05
    trials: int = 250
    seed: int = 0
    shape: str | None = None
    max_batches: int = MAX_BATCHES

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"unknown noise target {self.target!r}; choose from {TARGETS}")
        expected = SHAPES[self.target]
        if self.shape is None:
            object.__setattr__(self, "shape", expected)
        elif self.shape != expected:
            raise ValueError(f"{self.target} noise is {expected}, not {self.shape}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sigma_rel < 0:
            raise ValueError("sigma_rel must be nonnegative")

    def header(self) -> dict:
        return {
            "target": self.target,
            "shape": self.shape,
            "sigma_rel": self.sigma_rel,
            "trials": self.trials,
            "seed": self.seed,
            "prng": PRNG_NAME,
        }


def _batch_rng(seed: int, batch: int) -> np.random.Generator:
    return np.random.Generator(np.random.MT19937(np.random.SeedSequence([seed, batch])))


def draw_noise_ensemble(spec: NoiseSpec, nominal: float) -> np.ndarray:
    """Seeded batch of perturbed values, redrawn whole until the batch moments are acceptable.

    Spin numbers are Gaussian, rounded to integers, with the batch mean within
    1% of ``nominal`` and the batch standard deviation within 10% of
    ``sigma_rel * nominal``.  Drive strength and interaction energy are uniform on
    ``[(1 - s) nominal, (1 + s) nominal]`` with the batch mean within 1%.

    Raises
    ------
    ResamplingCapExceeded
        If no batch passes within ``spec.max_batches`` draws.
    """
    sigma = spec.sigma_rel * nominal
    for batch in range(spec.max_batches):
        rng = _batch_rng(spec.seed, batch)
        if spec.target == "spin_number":
            draws = np.rint(rng.normal(nominal, sigma, spec.trials))
            ok = (
                draws.min() >= 1
                and abs(draws.mean() - nominal) <= 0.01 * nominal
                and abs(draws.std() - sigma) <= 0.1 * sigma
            )
        else:
            draws = rng.uniform((1 - spec.sigma_rel) * nominal, (1 + spec.sigma_rel) * nominal, spec.trials)
            ok = abs(draws.mean() - nominal) <= 0.01 * abs(nominal)
        if ok:
            logger.debug("noise batch accepted after %d redraws", batch)
            return draws
    raise ResamplingCapExceeded(f"no acceptable {spec.target} batch within {spec.max_batches} draws")


def _trial_state(task):
    target, value, drive, tau_opt, dtau, method = task
    if target == "spin_number":
        trial = DriveParams(value / 2, drive.omega_tilde, drive.phi, drive.r)
        return evolve(trial, tau_opt, dtau, method)
    if target == "drive_strength":
        trial = DriveParams(drive.J, drive.omega_tilde, drive.phi, value)
        return evolve(trial, tau_opt, dtau, method)
    # lambda -> c lambda at fixed physical time: tau -> c tau, omega~ -> omega~/c, r -> r/c
    c = value
    trial = DriveParams(drive.J, drive.omega_tilde / c, drive.phi, drive.r / c)
    return evolve(trial, c * tau_opt, dtau, method)


def _trial_curve(task):
    *rest, thetas = task
    try:
        return fringe_exact(_trial_state(rest), thetas).variance, None
    except (SpinCatError, ValueError, FloatingPointError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def fringe_experiment(
    drive: DriveParams,
    tau_opt: float,
    spec: NoiseSpec,
    thetas,
    dtau: float = 0.01,
    method: str = "chebyshev",
    workers: int = 1,
) -> FringeCurve:
    """Mean and spread of the fringe over a seeded noise ensemble.

    Every trial starts from the x-polarized coherent state of its own spin
    number, uses the drive optimized for the nominal ensemble unchanged, and is
    evolved to the nominal optimal time.  For interaction-energy noise the
    rescaled time and drive are recomputed at fixed physical time.

    Raises
    ------
    ExperimentFailed
        If more than 5% of the trials fail.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if spec.target == "spin_number":
        values = draw_noise_ensemble(spec, 2 * drive.J)
    elif spec.target == "drive_strength":
        values = draw_noise_ensemble(spec, drive.r)
    else:
        values = draw_noise_ensemble(spec, 1.0)

    # identical perturbed values share one propagation
    unique = sorted(set(float(v) for v in values))
    tasks = [(spec.target, v, drive, tau_opt, dtau, method, thetas) for v in unique]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_curve, tasks))
    else:
        results = [_trial_curve(t) for t in tasks]
    by_value = dict(zip(unique, results))

    curves, failures = [], 0
    for v in values:
        curve, err = by_value[float(v)]
        if curve is None:
            failures += 1
            logger.warning("trial with %s=%g failed: %s", spec.target, v, err)
        else:
            curves.append(curve)
    if failures > FAILED_FRACTION * spec.trials:
        raise ExperimentFailed(f"{failures} of {spec.trials} trials failed")
    curves = np.array(curves)
    return FringeCurve(
        thetas,
        curves.mean(axis=0),
        curves.std(axis=0),
        trials=spec.trials,
        failures=failures,
        meta={**spec.header(), "tau_opt": tau_opt, "values_mean": float(np.mean(values))},
    )


# --- spectroscopy ----------------------------------------------------------


def spectrum_analytic(J, beta: float, omegas) -> np.ndarray:
    """Continuous transform of ``variance - 1`` for an ideal cat with ``gamma' = 0``.

    Three Gaussians: a central one of width ``1/sigma_s`` and two side dips at
    ``+-4J cos(beta)``, each of height ``sigma_s / 4``.
    """
    if not 0 < beta < math.pi:
        raise ValueError("beta must lie strictly between 0 and pi")
    s = spectral_sigma(J, beta)
    wbar = fringe_frequency(J, beta)
    w = np.asarray(omegas, dtype=float)
    return -(s / 4) * (
        2 * np.exp(-(s**2) * w**2 / 2)
        + np.exp(-(s**2) * (w - wbar) ** 2 / 2)
        + np.exp(-(s**2) * (w + wbar) ** 2 / 2)
    )


def protocol_thetas(J, beta: float) -> np.ndarray:
    """Rotation angles ``n * dtheta``, ``dtheta = 1/(10 wbar)``, for ``n = 0..n_max`` with ``theta <= 10 sigma_s``."""
    wbar = abs(fringe_frequency(J, beta))
    if abs(math.cos(beta)) < 1e-12:
        raise ValueError("fringe frequency vanishes at beta = pi/2")
    dtheta = 1.0 / (10 * wbar)
    n_max = int(math.floor(10 * spectral_sigma(J, beta) / dtheta + 1e-9))
    return dtheta * np.arange(n_max + 1)


def default_omegas(J, beta: float, n: int = 801) -> np.ndarray:
    """Symmetric frequency grid reaching past the side dips by ten dip widths."""
    w_max = abs(fringe_frequency(J, beta)) + 10 / spectral_sigma(J, beta)
    return np.linspace(-w_max, w_max, n)


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    omegas: np.ndarray
    values: np.ndarray
    raw: np.ndarray
    analytic: np.ndarray | None
    dip_frequencies: tuple
    dips_found: tuple
    on_protocol: bool = True

    @property
    def bin_width(self) -> float:
        return float(self.omegas[1] - self.omegas[0]) if len(self.omegas) > 1 else math.inf

    def dip_depths(self) -> tuple[float, float]:
        idx = [int(np.argmin(np.abs(self.omegas - w))) for w in self.dips_found]
        return tuple(float(self.values[i]) for i in idx)

    def rows(self):
        ana = self.analytic if self.analytic is not None else np.full_like(self.values, np.nan)
        for w, v, a in zip(self.omegas, self.values, ana):
            yield [float(w), float(v), float(a)]


SPECTRUM_HEADER = ["omega_theta", "discrete_value", "analytic_value"]


CENTER_EXCLUSION = 3.0


def _deepest_minimum(omegas, values, mask) -> float:
    """Deepest interior local minimum inside ``mask``; the central Gaussian is masked out by the caller."""
    idx = np.flatnonzero(mask)
    idx = idx[(idx > 0) & (idx < len(values) - 1)]
    minima = [i for i in idx if values[i] < values[i - 1] and values[i] <= values[i + 1]]
    if not minima:
        return math.nan
    return float(omegas[min(minima, key=lambda i: values[i])])


def spectrum_discrete(fringe: FringeCurve, J, beta: float | None = None, omegas=None) -> SpectrumResult:
    """Discrete transform of ``variance - 1`` over the sampled rotation angles.

    ``raw = sum_n (v_n - 1) exp(-i omega theta_n)`` and the reported values are
    ``sqrt(2/pi) * dtheta * Re(raw)``, a one-sided Riemann estimate of the
    continuous transform of the even fringe.  With ``beta`` given, the
    analytic curve and the expected dip frequencies are attached, the
    sampling is checked against :func:`protocol_thetas`, and dips are searched
    outside the central Gaussian (``|omega| > 3 / sigma_s``).
    """
    thetas = np.asarray(fringe.thetas, dtype=float)
    if len(thetas) < 2:
        raise ValueError("need at least two rotation angles")
    dtheta = float(thetas[1] - thetas[0])
    if not np.allclose(np.diff(thetas), dtheta, rtol=1e-9, atol=0):
        raise ValueError("rotation angles must be uniformly spaced")
    on_protocol = True
    if beta is not None:
        expected = protocol_thetas(J, beta)
        on_protocol = len(expected) == len(thetas) and np.allclose(expected, thetas, rtol=1e-12, atol=1e-15)
        if not on_protocol:
            logger.warning("fringe grid differs from the spectroscopy sampling protocol")
        if omegas is None:
            omegas = default_omegas(J, beta)
    if omegas is None:
        raise ValueError("omegas are required when beta is not given")
    omegas = np.asarray(omegas, dtype=float)
    resid = np.asarray(fringe.variance, dtype=float) - 1.0
    raw = np.exp(-1j * np.outer(omegas, thetas)) @ resid
    values = math.sqrt(2 / math.pi) * dtheta * raw.real

    if beta is not None:
        wbar = abs(fringe_frequency(J, beta))
        analytic = spectrum_analytic(J, beta, omegas)
        expected_dips = (-wbar, wbar)
        center = CENTER_EXCLUSION / spectral_sigma(J, beta)
    else:
        analytic, expected_dips, center = None, (math.nan, math.nan), 0.0
    dips = (_deepest_minimum(omegas, values, omegas < -center), _deepest_minimum(omegas, values, omegas > center))
    return SpectrumResult(omegas, values, raw, analytic, expected_dips, dips, on_protocol)


# --- physical units --------------------------------------------------------


@dataclass(frozen=True)
class PhysicalTime:
    seconds: float
    oat_seconds: float

    def to_dict(self) -> dict:
        return {"t": self.seconds, "t_oat": self.oat_seconds}


def physical_time(tau: float, chi: float, J) -> PhysicalTime:
    """Convert rescaled time to seconds, ``t = tau / (2 chi J)``; ``chi`` in s^-1.

    Also returns ``pi / chi``, the one-axis-twisting cat time used for comparison.
    """
    if chi <= 0:
        raise ValueError("chi must be positive")
    J = two_j_of(J) / 2
    return PhysicalTime(tau / (2 * chi * J), math.pi / chi)
