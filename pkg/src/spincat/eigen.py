"""Instantaneous eigenstructure of the driven twisting generator.

The generator commutes with the x-parity, so its non-degenerate eigenvectors
are parity even or odd.  The two highest levels start as an (even, odd) pair
and their gap shrinks along the optimized drive until it closes numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .dynamics import DriveParams, canonical_initial
from .spin import OperatorSet, PhaseEntry, SpinState, build_operators, relative_phase_profile

GAP_CLOSED = 1e-6
DEGENERATE = 1e-10
PARITY_DEFINITE = 1e-6


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: SpinState
    parity: int | None

    @property
    def parity_label(self) -> str:
        return {1: "even", -1: "odd", None: "undefined"}[self.parity]


def _ops(J_or_ops) -> OperatorSet:
    return J_or_ops if isinstance(J_or_ops, OperatorSet) else build_operators(J_or_ops)


def _tridiagonal(ops: OperatorSet, drive: DriveParams, tau: float):
    return ops.m**2 / (2 * ops.J), drive.coupling(tau) * ops.jx_offdiag


def parity_value(vec: np.ndarray) -> float:
    return float(np.vdot(vec[::-1], vec).real)


def _parity_character(vec) -> int | None:
    p = parity_value(vec)
    if abs(p) > 1 - PARITY_DEFINITE:
        return 1 if p > 0 else -1
    return None


def _fix_sign(vec: np.ndarray) -> np.ndarray:
    # largest-magnitude component made positive (first one on ties)
    i = int(np.argmax(np.abs(vec)))
    return vec if vec[i] >= 0 else -vec


def _parity_rotate(block: np.ndarray) -> np.ndarray:
    """Re-diagonalize a degenerate block of column vectors in the parity basis, even vectors first."""
    x = block[::-1].T @ block
    w, u = np.linalg.eigh(0.5 * (x + x.T))
    return (block @ u)[:, np.argsort(-w, kind="stable")]


def top_eigenpairs(J_or_ops, drive: DriveParams, tau: float, k: int = 2) -> list[EigenPair]:
    """The ``k`` highest eigenpairs of the generator at ``tau``, highest first.

    Numerically degenerate clusters (spacing below 1e-10) are rotated into
    parity eigenvectors; inside such a cluster the even vector is listed first.
    """
    ops = _ops(J_or_ops)
    if not 1 <= k <= ops.dim:
        raise ValueError(f"k must be in [1, {ops.dim}]")
    diag, off = _tridiagonal(ops, drive, tau)
    w, v = eigh_tridiagonal(diag, off)
    w, v = w[::-1], v[:, ::-1]

    # extend the selection to the end of any cluster it cuts through
    end = k
    while end < len(w) and w[end - 1] - w[end] < DEGENERATE:
        end += 1
    pairs = []
    i = 0
    while i < end:
        j = i + 1
        while j < end and w[j - 1] - w[j] < DEGENERATE:
            j += 1
        block = v[:, i:j] if j - i == 1 else _parity_rotate(v[:, i:j])
        for c in range(j - i):
            vec = _fix_sign(block[:, c])
            vec = vec / np.linalg.norm(vec)
            pairs.append(EigenPair(float(w[i + c]), SpinState(ops.J, vec.astype(complex)), _parity_character(vec)))
        i = j
    return pairs[:k]


@dataclass(frozen=True, eq=False)
class GapTrace:
    taus: np.ndarray
    gaps: np.ndarray
    phases: np.ndarray
    closure_tau: float | None

    def rows(self):
        for t, ph, g in zip(self.taus, self.phases, self.gaps):
            yield [float(t), float(ph) / math.pi, float(g)]


GAP_HEADER = ["tau", "phase/pi", "gap"]


def top_gap(J_or_ops, drive: DriveParams, tau: float) -> float:
    ops = _ops(J_or_ops)
    diag, off = _tridiagonal(ops, drive, tau)
    w = eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(ops.dim - 2, ops.dim - 1))
    return float(max(w[1] - w[0], 0.0))


def gap_trace(J, drive: DriveParams, taus, threshold: float = GAP_CLOSED) -> GapTrace:
    """Gap between the two highest levels along ``taus``; ``closure_tau`` is the first sample below ``threshold``."""
    taus = np.asarray(taus, dtype=float)
    if np.any(np.diff(taus) <= 0):
        raise ValueError("tau grid must be strictly increasing")
    ops = build_operators(J)
    gaps = np.array([top_gap(ops, drive, t) for t in taus])
    below = np.flatnonzero(gaps < threshold)
    closure = float(taus[below[0]]) if below.size else None
    return GapTrace(taus, gaps, drive.phase(taus), closure)


def initial_populations(J, drive: DriveParams) -> tuple[float, float, float]:
    """Weights of the initial coherent state on the two highest levels at ``tau = 0``, and the remainder."""
    psi0 = canonical_initial(J)
    e1, e2 = top_eigenpairs(J, drive, 0.0, 2)
    p1 = abs(e1.vector.overlap(psi0)) ** 2
    p2 = abs(e2.vector.overlap(psi0)) ** 2
    return p1, p2, 1.0 - p1 - p2


@dataclass(frozen=True, eq=False)
class PhaseProfileSample:
    tau: float
    gap: float
    closed: bool
    eps1: list
    eps2: list

    def rows(self, J: float):
        for label, entries in (("eps1", self.eps1), ("eps2", self.eps2)):
            for e in entries:
                yield [self.tau, label, e.m / J, e.gamma_prime, int(e.defined)]


PHASE_HEADER = ["tau", "level", "M/J", "gamma_prime", "defined"]


def _undefined(entries) -> list:
    return [PhaseEntry(e.m, math.nan, False) for e in entries]


def eigen_phase_profiles(J, drive: DriveParams, taus, threshold: float = GAP_CLOSED) -> list[PhaseProfileSample]:
    """Relative-phase profiles of the two highest eigenvectors; all entries undefined once the gap is closed."""
    ops = build_operators(J)
    out = []
    for t in np.asarray(taus, dtype=float):
        e1, e2 = top_eigenpairs(ops, drive, float(t), 2)
        gap = e1.value - e2.value
        p1, p2 = relative_phase_profile(e1.vector), relative_phase_profile(e2.vector)
        closed = gap < threshold
        if closed:
            p1, p2 = _undefined(p1), _undefined(p2)
        out.append(PhaseProfileSample(float(t), float(gap), bool(closed), p1, p2))
    return out


def meanfield_energy(J, drive: DriveParams, alpha, beta, tau: float):
    """Classical energy ``J (cos^2(beta)/2 + r cos(alpha) sin(beta) cos(omega~ tau + phi))``.

    Returns
    -------
    (energy, separatrix)
        ``separatrix`` is the energy of the x-polarized point, ``r J cos(omega~ tau + phi)``.
    """
    J = drive.J if J is None else float(J)
    c = drive.coupling(tau)
    alpha, beta = np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    energy = J * (0.5 * np.cos(beta) ** 2 + c * np.cos(alpha) * np.sin(beta))
    return energy, J * c
