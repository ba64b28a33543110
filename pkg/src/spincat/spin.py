"""Dicke-basis representation of the symmetric N-spin subspace.

Basis ordering is fixed everywhere in the package: index ``k = 0 .. 2J`` holds
the amplitude of ``|J, M>`` with ``M = J - k`` (equivalently ``k`` down spins).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, cached_property

import numpy as np
from scipy.special import gammaln

NORM_TOL = 1e-9
PHASE_THRESHOLD = 1e-8


def two_j_of(J) -> int:
    """Return the integer ``2J``, rejecting values that are not half-integers."""
    if isinstance(J, str):
        J = Fraction(J)
    twice = 2 * J
    two_j = int(round(float(twice)))
    if abs(float(twice) - two_j) > 1e-9 or two_j < 0:
        raise ValueError(f"total spin must be a nonnegative half-integer, got {J!r}")
    return two_j


@dataclass(frozen=True)
class TotalSpin:
    """Total spin ``J = N/2`` of the symmetric sector."""

    two_j: int

    def __post_init__(self):
        if self.two_j < 0:
            raise ValueError("2J must be nonnegative")

    @classmethod
    def of(cls, J) -> "TotalSpin":
        return cls(two_j_of(J))

    @property
    def J(self) -> float:
        return self.two_j / 2

    @property
    def dim(self) -> int:
        return self.two_j + 1

    def __str__(self):
        return f"{self.two_j}/2"


@dataclass(frozen=True, eq=False)
class OperatorSet:
    """Collective-spin matrices for one total spin.

    The tridiagonal structure is kept explicitly (``m`` and ``jx_offdiag``);
    dense matrices are built on first access.
    """

    J: float
    m: np.ndarray
    jx_offdiag: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.m)

    @cached_property
    def jz(self) -> np.ndarray:
        return np.diag(self.m)

    @cached_property
    def jz2(self) -> np.ndarray:
        return np.diag(self.m**2)

    @cached_property
    def jx(self) -> np.ndarray:
        return np.diag(self.jx_offdiag, 1) + np.diag(self.jx_offdiag, -1)

    @cached_property
    def parity(self) -> np.ndarray:
        return np.fliplr(np.eye(self.dim))


@lru_cache(maxsize=64)
def _operators(two_j: int) -> OperatorSet:
    J = two_j / 2
    m = J - np.arange(two_j + 1, dtype=float)
    upper = m[:-1]
    off = 0.5 * np.sqrt((J + upper) * (J - upper + 1))
    for arr in (m, off):
        arr.setflags(write=False)
    return OperatorSet(J=J, m=m, jx_offdiag=off)


def build_operators(J) -> OperatorSet:
    """Collective operators ``Jz``, ``Jx``, ``Jz^2`` and the x-parity for spin ``J``.

    ``Jx`` couples ``M`` and ``M-1`` with ``sqrt((J+M)(J-M+1))/2``; the parity
    ``X = sigma_x^{(x)N}`` maps ``|J, M>`` to ``|J, -M>``.
    """
    two_j = two_j_of(J)
    if two_j < 1:
        raise ValueError("need at least one spin (2J >= 1)")
    return _operators(two_j)


@dataclass(frozen=True, eq=False)
class SpinState:
    """Normalized pure state over the Dicke basis (``M = J .. -J``)."""

    J: float
    amps: np.ndarray

    def __post_init__(self):
        two_j = two_j_of(self.J)
        amps = np.asarray(self.amps, dtype=complex)
        if amps.shape != (two_j + 1,):
            raise ValueError(f"expected {two_j + 1} amplitudes for J={self.J}, got {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (|psi| = {norm!r})")
        amps = amps.copy()
        amps.setflags(write=False)
        object.__setattr__(self, "J", two_j / 2)
        object.__setattr__(self, "amps", amps)

    @property
    def two_j(self) -> int:
        return int(round(2 * self.J))

    @property
    def dim(self) -> int:
        return len(self.amps)

    @property
    def m(self) -> np.ndarray:
        return self.J - np.arange(self.dim)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def overlap(self, other: "SpinState") -> complex:
        """``<other|self>``."""
        return complex(np.vdot(other.amps, self.amps))

    def to_dict(self) -> dict:
        return {
            "J": f"{self.two_j}/2",
            "amps": [[float(a.real), float(a.imag)] for a in self.amps],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpinState":
        amps = np.array([complex(re, im) for re, im in data["amps"]])
        return cls(float(Fraction(data["J"])), amps)


@dataclass(frozen=True)
class CatParams:
    """One member ``(alpha, beta, gamma')`` of the spin-cat family."""

    alpha: float
    beta: float
    gamma_prime: float

    def __post_init__(self):
        if not -math.pi - 1e-12 < self.alpha <= math.pi + 1e-12:
            raise ValueError(f"alpha out of (-pi, pi]: {self.alpha}")
        if not -1e-12 <= self.beta <= math.pi + 1e-12:
            raise ValueError(f"beta out of [0, pi]: {self.beta}")
        if not -math.pi - 1e-12 < self.gamma_prime <= math.pi + 1e-12:
            raise ValueError(f"gamma' out of (-pi, pi]: {self.gamma_prime}")
        if abs(self.beta - math.pi / 2) < 1e-12 and (
            abs(self.alpha) < 1e-12 or abs(abs(self.alpha) - math.pi) < 1e-12
        ):
            raise ValueError("(alpha, beta) = (0 or pi, pi/2) is excluded from the cat family")

    @classmethod
    def wrapped(cls, alpha, beta, gamma_prime) -> "CatParams":
        """Build from unconstrained angles, folding them into canonical ranges."""
        beta = abs(math.remainder(beta, 2 * math.pi))
        return cls(wrap_angle(alpha), beta, wrap_angle(gamma_prime))

    def mirrored(self) -> "CatParams":
        """The relabeling that swaps the two superposed branches."""
        return CatParams(wrap_angle(-self.alpha), math.pi - self.beta, wrap_angle(-self.gamma_prime))

    @property
    def delta(self) -> float:
        return displacement_angle(self.alpha, self.beta)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma_prime": self.gamma_prime}


def wrap_angle(x: float) -> float:
    """Map an angle into ``(-pi, pi]``."""
    y = math.remainder(x, 2 * math.pi)
    return math.pi if y <= -math.pi else y


@lru_cache(maxsize=64)
def _log_binomials(two_j: int) -> np.ndarray:
    n = np.arange(two_j + 1)
    out = gammaln(two_j + 1) - gammaln(n + 1) - gammaln(two_j - n + 1)
    out.setflags(write=False)
    return out


def _css_magnitudes(two_j: int, betas) -> np.ndarray:
    """``sqrt(C(2J,n)) |cos(b/2)|^(2J-n) |sin(b/2)|^n`` for each beta (rows)."""
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    n = np.arange(two_j + 1)
    c = np.cos(betas / 2)[:, None]
    s = np.sin(betas / 2)[:, None]
    # 0^0 = 1 at the poles
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = (
            0.5 * _log_binomials(two_j)
            + np.where(n == two_j, 0.0, (two_j - n) * np.log(np.abs(c)))
            + np.where(n == 0, 0.0, n * np.log(np.abs(s)))
        )
    # signs only matter for beta outside [0, pi]
    sign = np.sign(c) ** (two_j - n) * np.sign(s) ** n
    return np.exp(logs) * sign


def css_amplitudes(J, alpha: float, beta: float) -> np.ndarray:
    """Raw coherent-state amplitude vector (no validation, no copy protection)."""
    two_j = two_j_of(J)
    n = np.arange(two_j + 1)
    return _css_magnitudes(two_j, beta)[0] * np.exp(1j * n * alpha)


def css_state(J, alpha: float, beta: float) -> SpinState:
    """Coherent spin state ``|alpha, beta>^{(x)2J}``.

    The binomial weights are assembled in log space, so the construction stays
    finite and normalized for several hundred spins.
    """
    if not 0 <= beta <= math.pi:
        raise ValueError(f"beta out of [0, pi]: {beta}")
    return SpinState(J, css_amplitudes(J, alpha, beta))


def css_overlaps(amps: np.ndarray, J, alphas, betas) -> np.ndarray:
    """``<CSS(alpha, beta)|psi>`` on a grid; rows follow ``betas``, columns ``alphas``."""
    two_j = two_j_of(J)
    n = np.arange(two_j + 1)
    weighted = _css_magnitudes(two_j, betas) * np.asarray(amps)[None, :]
    phases = np.exp(-1j * np.outer(n, np.atleast_1d(alphas)))
    return weighted @ phases


def _norm_sq_prime(J, alpha, beta, gamma_prime) -> float:
    two_j = two_j_of(J)
    return 2.0 * (1.0 + math.cos(alpha) ** two_j * math.sin(beta) ** two_j * math.cos(gamma_prime))


def mss_norm(J, alpha: float, beta: float, gamma: float) -> float:
    """Normalization ``A`` of the cat state with superposition phase ``gamma``.

    The relative phase entering the closed form is ``gamma' = gamma - 2J alpha``.
    """
    return math.sqrt(_norm_sq_prime(J, alpha, beta, gamma - 2 * float(J) * alpha))


def gamma_prime_of(J, alpha: float, gamma: float) -> float:
    return wrap_angle(gamma - 2 * float(J) * alpha)


def mss_state(J, params: CatParams) -> SpinState:
    """Normalized cat state ``(|CSS(a,b)> + e^{i g}|CSS(-a, pi-b)>) / A``.

    Assembled in component form: the amplitude on ``|J, -J+n>`` equals the one
    on ``|J, J-n>`` times ``exp(i gamma')``.
    """
    c = css_amplitudes(J, params.alpha, params.beta)
    amps = c + np.exp(1j * params.gamma_prime) * c[::-1]
    a_sq = _norm_sq_prime(J, params.alpha, params.beta, params.gamma_prime)
    if a_sq <= 0:
        raise ValueError(f"cat state has vanishing norm at {params}")
    return SpinState(J, amps / math.sqrt(a_sq))


def displacement_angle(alpha: float, beta: float) -> float:
    """Great-circle angle between the two superposed coherent states, in ``[0, pi]``."""
    c2a = math.cos(2 * alpha)
    arg = 0.5 * (1 - c2a + (1 + c2a) * math.cos(2 * beta))
    return math.pi - math.acos(min(1.0, max(-1.0, arg)))


def rotate_z(state: SpinState, theta: float) -> SpinState:
    """Apply ``exp(-i Jz theta)``."""
    return SpinState(state.J, state.amps * np.exp(-1j * state.m * theta))


def parity_stats(state: SpinState) -> tuple[float, float]:
    """Expectation and variance of the x-parity ``sigma_x^{(x)N}``."""
    mean = float(np.vdot(state.amps[::-1], state.amps).real)
    return mean, 1.0 - mean**2


@dataclass(frozen=True, eq=False)
class QGrid:
    """Husimi Q-function sampled on an (alpha, beta) grid; ``values[i, j]`` is at ``(alphas[j], betas[i])``."""

    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray

    def integral(self) -> float:
        """Trapezoidal quadrature of ``Q sin(beta)`` over the sampled sphere."""
        inner = np.trapezoid(self.values, self.alphas, axis=1)
        return float(np.trapezoid(inner * np.sin(self.betas), self.betas))

    def peak(self) -> tuple[float, float, float]:
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.alphas[j]), float(self.betas[i]), float(self.values[i, j])

    def rows(self):
        for i, b in enumerate(self.betas):
            for j, a in enumerate(self.alphas):
                yield float(a), float(b), float(self.values[i, j])


def q_function(state: SpinState, alphas=None, betas=None, n_alpha: int = 201, n_beta: int = 101) -> QGrid:
    """Husimi function ``(2J+1)/(4 pi) |<CSS(alpha, beta)|psi>|^2``.

    Defaults to a uniform ``201 x 101`` grid over ``alpha in [-pi, pi]``,
    ``beta in [0, pi]``.
    """
    alphas = np.linspace(-math.pi, math.pi, n_alpha) if alphas is None else np.asarray(alphas, float)
    betas = np.linspace(0, math.pi, n_beta) if betas is None else np.asarray(betas, float)
    if alphas.size == 0 or betas.size == 0:
        raise ValueError("empty Q-function grid")
    ov = css_overlaps(state.amps, state.J, alphas, betas)
    q = (state.dim / (4 * math.pi)) * np.abs(ov) ** 2
    return QGrid(alphas, betas, q)


@dataclass(frozen=True)
class PhaseEntry:
    m: float
    gamma_prime: float
    defined: bool


def relative_phase_profile(state: SpinState, threshold: float = PHASE_THRESHOLD) -> list[PhaseEntry]:
    """Relative phase ``arg(a_{-M}) - arg(a_M)`` wrapped to ``(-pi, pi]`` for each ``M >= 0``.

    Entries where either amplitude is below ``threshold`` are flagged undefined
    and carry ``nan``.
    """
    a = state.amps
    out = []
    for k in range(state.two_j // 2 + 1):
        m = state.J - k
        hi, lo = a[k], a[state.two_j - k]
        if abs(hi) > threshold and abs(lo) > threshold:
            out.append(PhaseEntry(m, wrap_angle(float(np.angle(lo) - np.angle(hi))), True))
        else:
            out.append(PhaseEntry(m, float("nan"), False))
    return out
