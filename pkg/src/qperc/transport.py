"""Classical and quantum transition/survival probabilities for one realization.

Survival probabilities are averaged over the ``ny`` source nodes and summed
over all final nodes, so ``P(0) = Pi(0) = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .lattice import ClusterPartition, LatticeSpec, Realization, build_connectivity, clusters
from .spectral import (
    BiorthogonalSpectrum,
    SpectralError,
    SymSpectrum,
    TrappedOperators,
    decompose_biorthogonal,
    decompose_symmetric,
    eps_deg,
    group_degenerate,
    trapped_operators,
)

# late-time averaging window used when the spectral route is unavailable
WINDOW = (200.0, 400.0)
WINDOW_STEP = 0.5


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    values: np.ndarray
    kind: str  # "classical" | "quantum"


@dataclass(frozen=True)
class LongTimeBehavior:
    p_inf: float
    pi_inf: float
    method: str  # "spectral" | "time-domain-fallback"


def _check_time(t):
    if np.any(np.asarray(t) < 0):
        raise ValueError(f"time must be non-negative, got {t}")


def propagator_classical(spec: SymSpectrum, t: float) -> np.ndarray:
    """Matrix ``exp(-T t)`` assembled from the eigenpairs of ``T``."""
    _check_time(t)
    phi = spec.vectors
    return (phi * np.exp(-spec.values * t)) @ phi.T


def propagator_quantum(spec: BiorthogonalSpectrum, t: float) -> np.ndarray:
    """Matrix ``exp(-iHt)`` from the biorthogonal expansion."""
    _check_time(t)
    return (spec.right * np.exp(-1j * spec.values * t)) @ spec.left


def transition_classical(spec: SymSpectrum, j: int, k: int, t: float) -> float:
    _check_time(t)
    phi = spec.vectors
    return float(np.sum(np.exp(-spec.values * t) * phi[k] * phi[j]))


def transition_quantum(spec: BiorthogonalSpectrum, j: int, k: int, t: float) -> float:
    if spec.defective:
        raise SpectralError("defective decomposition; use propagate_direct")
    _check_time(t)
    amp = np.sum(np.exp(-1j * spec.values * t) * spec.right[k] * spec.left[:, j])
    return float(abs(amp) ** 2)


def survival_classical(spec: SymSpectrum, lattice: LatticeSpec, t: float) -> float:
    # sum over final nodes of exp(-Tt) columns at the sources
    phi = spec.vectors
    weights = np.exp(-spec.values * t) * phi.sum(axis=0)
    return float(weights @ phi[lattice.source_nodes].sum(axis=0) / lattice.ny)


def survival_quantum(spec: BiorthogonalSpectrum, lattice: LatticeSpec, t: float) -> float:
    if spec.defective:
        raise SpectralError("defective decomposition; use propagate_direct")
    amps = (spec.right * np.exp(-1j * spec.values * t)) @ spec.left[:, lattice.source_nodes]
    return float(np.sum(np.abs(amps) ** 2) / lattice.ny)


def survival_curve(spec, lattice: LatticeSpec, times) -> SurvivalCurve:
    times = np.asarray(times, dtype=float)
    _check_time(times)
    if isinstance(spec, SymSpectrum):
        vals = [survival_classical(spec, lattice, t) for t in times]
        return SurvivalCurve(times, np.array(vals), "classical")
    vals = [survival_quantum(spec, lattice, t) for t in times]
    return SurvivalCurve(times, np.array(vals), "quantum")


def ltb_classical(spec: SymSpectrum, lattice: LatticeSpec, eps: float = 1e-8) -> float:
    """``t -> inf`` limit of the classical survival: projection on the kernel of ``T``."""
    eps = eps * max(1.0, float(np.abs(spec.values).max(initial=0.0)))
    phi = spec.vectors[:, spec.values < eps]
    if phi.shape[1] == 0:
        return 0.0
    return float(phi.sum(axis=0) @ phi[lattice.source_nodes].sum(axis=0) / lattice.ny)


def ltb_classical_oracle(part: ClusterPartition, lattice: LatticeSpec) -> float:
    """Fraction of sources whose cluster holds no trap."""
    trapped = part.contains_trap[part.labels[lattice.source_nodes]]
    return float(np.count_nonzero(~trapped)) / lattice.ny


def ltb_quantum(spec: BiorthogonalSpectrum, lattice: LatticeSpec) -> float:
    """Long-time average of the quantum survival.

    Only non-decaying states survive; within a group of equal energies the
    cross terms stay coherent, between groups they average out.
    """
    if spec.defective:
        raise SpectralError("defective decomposition; use ltb_quantum_time_domain")
    dark = np.flatnonzero(spec.dark)
    if len(dark) == 0:
        return 0.0
    src = lattice.source_nodes
    total = 0.0
    for g in group_degenerate(spec.values.real[dark], eps_deg(spec.values)):
        idx = dark[g]
        block = spec.right[:, idx] @ spec.left[np.ix_(idx, src)]
        total += float(np.sum(np.abs(block) ** 2))
    return total / lattice.ny


def propagate_direct(op: TrappedOperators | np.ndarray, state, t: float, kind: str = "quantum") -> np.ndarray:
    """Apply ``exp(-iHt)`` (or ``exp(-Tt)`` for ``kind="classical"``) without eigenvectors.

    Uses Pade scaling-and-squaring; ``state`` may be a vector or a matrix of
    column states.
    """
    _check_time(t)
    if isinstance(op, TrappedOperators):
        gen = -1j * op.quantum if kind == "quantum" else -op.classical
    else:
        gen = -1j * np.asarray(op) if kind == "quantum" else -np.asarray(op)
    state = np.asarray(state)
    if t == 0:
        return state.astype(complex if kind == "quantum" else float, copy=True)
    U = scipy.linalg.expm(gen * t)
    if not np.all(np.isfinite(U)):
        raise SpectralError("matrix exponential overflow", gen)
    return U @ state


def time_averaged_survival(
    op: TrappedOperators, lattice: LatticeSpec, window=WINDOW, dt: float = WINDOW_STEP
) -> float:
    """Mean of ``Pi(t)`` on the grid ``window[0], window[0]+dt, ..., window[1]``."""
    t0, t1 = window
    n_steps = int(round((t1 - t0) / dt))
    psi0 = np.zeros((op.quantum.shape[0], lattice.ny), dtype=complex)
    psi0[lattice.source_nodes, np.arange(lattice.ny)] = 1.0
    psi = propagate_direct(op, psi0, t0)
    step = scipy.linalg.expm(-1j * op.quantum * dt)
    acc = 0.0
    for i in range(n_steps + 1):
        if i:
            psi = step @ psi
        acc += float(np.sum(np.abs(psi) ** 2))
    return acc / ((n_steps + 1) * lattice.ny)


def adaptive_window(spec: BiorthogonalSpectrum | None, window=WINDOW) -> tuple[float, float]:
    """Push the averaging window past ``5 / gamma_min`` of the slowest decaying state."""
    if spec is None:
        return window
    rates = spec.decay_rates[~spec.dark]
    if rates.size == 0:
        return window
    start = max(window[0], 5.0 / max(float(rates.min()), 1e-12))
    if start == window[0]:
        return window
    start = min(start, 1e6)
    return start, start + (window[1] - window[0])


def ltb_quantum_time_domain(op: TrappedOperators, lattice: LatticeSpec, spec=None) -> float:
    return time_averaged_survival(op, lattice, adaptive_window(spec))


def long_time_behavior(real: Realization, gamma: float = 1.0) -> LongTimeBehavior:
    """Classical and quantum long-time survival for one realization."""
    lattice = real.spec
    op = trapped_operators(build_connectivity(real), lattice, gamma)
    return long_time_from_operators(op, lattice)


def long_time_from_operators(op: TrappedOperators, lattice: LatticeSpec) -> LongTimeBehavior:
    p_inf = ltb_classical(decompose_symmetric(op.classical), lattice)
    qspec = decompose_biorthogonal(op.quantum)
    if qspec.defective:
        return LongTimeBehavior(p_inf, ltb_quantum_time_domain(op, lattice, qspec), "time-domain-fallback")
    return LongTimeBehavior(p_inf, ltb_quantum(qspec, lattice), "spectral")


def classical_oracle_for(real: Realization) -> float:
    return ltb_classical_oracle(clusters(real), real.spec)
