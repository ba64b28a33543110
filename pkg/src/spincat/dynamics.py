"""Propagation under the rescaled driven one-axis-twisting generator.

    h(tau) = Jz^2 / (2J) + r Jx cos(omega_tilde * tau + phi)

Each step applies ``exp(-i dtau h(tau_mid))`` (second-order Magnus, midpoint
rule).  The step exponential is taken either from the eigendecomposition of
the real symmetric tridiagonal generator (``method="eigh"``) or from a
Chebyshev expansion of the same exponential (``method="chebyshev"``); both are
unitary to rounding, the latter is far cheaper for large J.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import jv

from .errors import StepSizeUnderflow
from .spin import OperatorSet, SpinState, build_operators, css_state, two_j_of

logger = logging.getLogger(__name__)

METHODS = ("eigh", "chebyshev")


@dataclass(frozen=True)
class DriveParams:
    """Rescaled drive: frequency ``omega_tilde = omega/lambda``, phase ``phi``, strength ``r = Omega/lambda``."""

    J: float
    omega_tilde: float
    phi: float
    r: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "J", two_j_of(self.J) / 2)
        if self.r < 0:
            raise ValueError("drive strength r must be nonnegative")

    def phase(self, tau):
        return self.omega_tilde * np.asarray(tau) + self.phi

    def coupling(self, tau) -> float:
        """Coefficient of ``Jx`` at rescaled time ``tau``."""
        return self.r * math.cos(self.omega_tilde * tau + self.phi)


@dataclass(frozen=True)
class StepControl:
    """Step size, half-step error tolerance (``None`` disables the check) and snapshot cadence."""

    dtau: float = 1e-3
    tol: float | None = 1e-8
    record_every: float = 0.01
    method: str = "eigh"
    min_dtau: float = 1e-6

    def __post_init__(self):
        if self.dtau <= 0 or self.record_every <= 0:
            raise ValueError("dtau and record_every must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    taus: np.ndarray
    states: list
    dtau: float = 0.0
    error_estimate: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.taus) != len(self.states):
            raise ValueError("taus and states differ in length")
        if np.any(np.diff(self.taus) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def final(self) -> SpinState:
        return self.states[-1]

    def norms(self) -> np.ndarray:
        return np.array([s.norm() for s in self.states])

    def csv_rows(self, amplitudes: bool = False):
        for tau, st in zip(self.taus, self.states):
            row = [float(tau), st.norm()]
            if amplitudes:
                row += list(st.amps.real) + list(st.amps.imag)
            yield row

    def to_dict(self) -> dict:
        return {
            "dtau": self.dtau,
            "error_estimate": self.error_estimate,
            "snapshots": [{"tau": float(t), "state": s.to_dict()} for t, s in zip(self.taus, self.states)],
        }


def hamiltonian_at(ops: OperatorSet, drive: DriveParams, tau: float) -> np.ndarray:
    """Dense rescaled generator ``Jz^2/(2J) + r cos(omega_tilde tau + phi) Jx``."""
    diag, off = _tridiagonal(ops, drive, tau)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def _tridiagonal(ops: OperatorSet, drive: DriveParams, tau: float):
    return ops.m**2 / (2 * ops.J), drive.coupling(tau) * ops.jx_offdiag


def _step_eigh(psi, diag, off, h):
    w, v = eigh_tridiagonal(diag, off)
    return v @ (np.exp(-1j * h * w) * (v.T @ psi))


def _step_chebyshev(psi, diag, off, h, bound):
    # spectrum of diag + off-part lies in [min diag - bound, max diag + bound]
    lo, hi = diag.min() - bound, diag.max() + bound
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    if half == 0.0:
        return np.exp(-1j * h * diag) * psi
    x = h * half
    coef = jv(np.arange(int(x) + 40), x)
    shifted = (diag - mid) / half
    scaled = off / half

    def apply(v):
        out = shifted * v
        out[:-1] += scaled * v[1:]
        out[1:] += scaled * v[:-1]
        return out

    prev, cur = psi, -1j * apply(psi)
    acc = coef[0] * prev + 2 * coef[1] * cur
    for k in range(2, len(coef)):
        prev, cur = cur, -2j * apply(cur) + prev
        acc += 2 * coef[k] * cur
        if k > x and abs(coef[k]) < 1e-17:
            break
    return np.exp(-1j * h * mid) * acc


class Propagator:
    """Stateful midpoint-exponential stepper; ``advance_to`` lands exactly on the requested time."""

    def __init__(self, initial: SpinState, drive: DriveParams, dtau: float = 1e-3, method: str = "eigh", tau0: float = 0.0):
        if two_j_of(initial.J) != two_j_of(drive.J):
            raise ValueError(f"state J={initial.J} does not match drive J={drive.J}")
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        self.ops = build_operators(initial.J)
        self.drive = drive
        self.dtau = dtau
        self.method = method
        self.tau = tau0
        self.psi = np.array(initial.amps, dtype=complex)
        self._diag = self.ops.m**2 / (2 * self.ops.J)
        self.steps = 0

    @property
    def state(self) -> SpinState:
        return SpinState(self.ops.J, self.psi)

    def step(self, h: float):
        tau_mid = self.tau + 0.5 * h
        c = self.drive.coupling(tau_mid)
        off = c * self.ops.jx_offdiag
        if self.method == "eigh":
            self.psi = _step_eigh(self.psi, self._diag, off, h)
        else:
            self.psi = _step_chebyshev(self.psi, self._diag, off, h, abs(c) * self.ops.J)
        self.tau += h
        self.steps += 1

    def advance_to(self, tau: float) -> SpinState:
        if tau < self.tau - 1e-12:
            raise ValueError(f"cannot step backwards from {self.tau} to {tau}")
        n = math.ceil((tau - self.tau) / self.dtau - 1e-9)
        if n > 0:
            h = (tau - self.tau) / n
            for _ in range(n):
                self.step(h)
        self.tau = tau
        return self.state


def record_times(tau_end: float, record_every: float) -> np.ndarray:
    if tau_end < 0 or record_every <= 0:
        raise ValueError("need tau_end >= 0 and a positive sampling interval")
    n = int(math.floor(tau_end / record_every + 1e-9))
    taus = record_every * np.arange(n + 1)
    if tau_end - taus[-1] > 1e-9 * max(1.0, tau_end):
        taus = np.append(taus, tau_end)
    return taus


def _run(initial, drive, taus, dtau, method):
    prop = Propagator(initial, drive, dtau, method)
    return [prop.advance_to(t) for t in taus]


def propagate(initial: SpinState, drive: DriveParams, tau_end: float, step: StepControl | None = None) -> Trajectory:
    """Evolve ``initial`` to ``tau_end``, recording snapshots every ``step.record_every``.

    With a tolerance set, the final state is compared against a run at half the
    step size; the step is halved until the difference is below ``step.tol``
    and the finer of the last two runs is returned.

    Raises
    ------
    StepSizeUnderflow
        If the tolerance cannot be met before ``dtau`` drops below ``step.min_dtau``.
    """
    step = step or StepControl()
    if tau_end <= 0:
        raise ValueError("tau_end must be positive")
    taus = record_times(tau_end, step.record_every)
    dtau = step.dtau
    states = _run(initial, drive, taus, dtau, step.method)
    if step.tol is None:
        return Trajectory(taus, states, dtau=dtau)

    history = []
    while True:
        if dtau / 2 < step.min_dtau:
            raise StepSizeUnderflow(
                f"tolerance {step.tol:g} unreachable above dtau={step.min_dtau:g}",
                {"dtau_history": [h for h, _ in history], "errors": [e for _, e in history], "tau_end": tau_end},
            )
        finer = _run(initial, drive, taus, dtau / 2, step.method)
        err = float(np.linalg.norm(finer[-1].amps - states[-1].amps))
        history.append((dtau, err))
        logger.debug("half-step check at dtau=%g: error %.3e", dtau, err)
        dtau, states = dtau / 2, finer
        if err <= step.tol:
            return Trajectory(taus, states, dtau=dtau, error_estimate=err)


def canonical_initial(J) -> SpinState:
    """The x-polarized coherent state ``CSS(0, pi/2)`` every run starts from."""
    return css_state(J, 0.0, math.pi / 2)


def evolve(drive: DriveParams, tau_end: float, dtau: float = 0.01, method: str = "chebyshev", initial: SpinState | None = None) -> SpinState:
    """Final state only, fixed step, from the canonical initial state unless given."""
    initial = initial or canonical_initial(drive.J)
    return Propagator(initial, drive, dtau, method).advance_to(tau_end)


def with_step(step: StepControl, **changes) -> StepControl:
    return replace(step, **changes)
