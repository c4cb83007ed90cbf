"""Dense eigendecompositions of trapped lattice operators.

The classical generator is ``T = A + G`` and the quantum Hamiltonian is
``H = A - iG``, where ``A`` is the connectivity matrix and ``G`` is diagonal
with ``gamma`` on the trap column. ``H`` is complex symmetric, so left
eigenvectors are transposes of right ones under the bilinear normalization
``psi^T psi = 1``.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .lattice import LatticeSpec

EPS_RESID = 1e-10
EPS_COMPLETE = 1e-6


class SpectralError(ArithmeticError):
    """Eigensolver failure; carries a fingerprint of the offending matrix."""

    def __init__(self, message: str, matrix: np.ndarray | None = None):
        self.fingerprint = fingerprint(matrix) if matrix is not None else None
        if self.fingerprint:
            message = f"{message} [matrix {self.fingerprint}]"
        super().__init__(message)


def fingerprint(matrix: np.ndarray) -> str:
    m = np.ascontiguousarray(matrix)
    return f"{m.shape[0]}x{m.shape[1]}:" + hashlib.sha1(m.tobytes()).hexdigest()[:12]


def eps_dark(H: np.ndarray) -> float:
    # the 1-norm bounds the 2-norm of a symmetric matrix and avoids an SVD
    return 1e-8 * max(1.0, float(np.abs(H).sum(axis=0).max()) if H.size else 1.0)


def eps_deg(values: np.ndarray) -> float:
    values = np.asarray(values)
    spread = float(np.ptp(values.real)) if values.size else 0.0
    return 1e-8 * max(1.0, spread)


@dataclass(frozen=True)
class TrappedOperators:
    classical: np.ndarray
    quantum: np.ndarray
    gamma: float
    trap_nodes: np.ndarray

    @property
    def trap_diagonal(self) -> np.ndarray:
        d = np.zeros(self.classical.shape[0])
        d[self.trap_nodes] = self.gamma
        return d


def trapped_operators(A: np.ndarray, spec: LatticeSpec, gamma: float = 1.0) -> TrappedOperators:
    if gamma < 0:
        raise ValueError(f"trap strength must be non-negative, got {gamma}")
    traps = spec.trap_nodes
    T = np.array(A, dtype=float)
    T[traps, traps] += gamma
    H = np.array(A, dtype=complex)
    H[traps, traps] -= 1j * gamma
    return TrappedOperators(T, H, float(gamma), traps)


@dataclass(frozen=True)
class SymSpectrum:
    values: np.ndarray
    vectors: np.ndarray

    @property
    def n(self) -> int:
        return len(self.values)


def decompose_symmetric(M: np.ndarray) -> SymSpectrum:
    """Ascending eigenvalues and orthonormal eigenvectors of a real symmetric matrix."""
    M = np.asarray(M, dtype=float)
    scale = max(1.0, np.abs(M).max(initial=0.0))
    if np.abs(M - M.T).max(initial=0.0) > EPS_RESID * scale:
        raise SpectralError("matrix is not symmetric", M)
    try:
        w, v = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"symmetric eigensolver failed: {exc}", M) from exc
    return SymSpectrum(w, v)


def group_degenerate(values, tol: float) -> list[list[int]]:
    """Index groups of values linked by chains of gaps smaller than ``tol``.

    Grouping is the transitive closure of ``|a - b| < tol``, so ``0, tol/2,
    tol`` collapse into one group. Groups come out ordered by value.

    >>> group_degenerate([0.0, 2.0, 2.0, 4.0], 1e-8)
    [[0], [1, 2], [3]]
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return []
    order = np.argsort(values, kind="stable")
    groups = [[int(order[0])]]
    for prev, cur in zip(order[:-1], order[1:]):
        if values[cur] - values[prev] < tol:
            groups[-1].append(int(cur))
        else:
            groups.append([int(cur)])
    return [sorted(g) for g in groups]


def _group_complex(values: np.ndarray, tol: float) -> list[list[int]]:
    # closure on |a - b| < tol in the complex plane; N is small so O(N^2) is fine
    n = len(values)
    close = np.abs(values[:, None] - values[None, :]) < tol
    if np.count_nonzero(close) == n:
        return [[i] for i in range(n)]
    label = -np.ones(n, dtype=int)
    groups = []
    for i in range(n):
        if label[i] >= 0:
            continue
        stack, members = [i], []
        label[i] = len(groups)
        while stack:
            k = stack.pop()
            members.append(k)
            for m in np.flatnonzero(close[k] & (label < 0)):
                label[m] = len(groups)
                stack.append(int(m))
        groups.append(sorted(members))
    return groups


@dataclass
class BiorthogonalSpectrum:
    """Eigen-triplets of a complex symmetric matrix.

    ``right[:, n]`` is the right eigenvector and ``left[n, :]`` the row
    vector of the matching left eigenvector, normalized so ``left @ right``
    is the identity.
    """

    values: np.ndarray
    right: np.ndarray
    left: np.ndarray
    groups: list[list[int]]
    dark: np.ndarray
    completeness_residual: float
    biorthogonality_residual: float
    defective: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def energies(self) -> np.ndarray:
        return self.values.real

    @property
    def decay_rates(self) -> np.ndarray:
        return -self.values.imag


def decompose_biorthogonal(H: np.ndarray, trap_nodes=None) -> BiorthogonalSpectrum:
    """Right/left eigenpairs of a complex symmetric ``H``.

    Within every cluster of (numerically) coincident eigenvalues the left
    block is ``G^-1 V^T`` with ``G = V^T V``; for non-degenerate states this is
    plain transposition with ``psi^T psi = 1``. A singular ``G`` or a large
    completeness residual marks the result ``defective``.
    """
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    scale = max(1.0, np.abs(H).max(initial=0.0))
    if np.abs(H - H.T).max(initial=0.0) > EPS_RESID * scale:
        raise SpectralError("matrix is not complex symmetric", H)
    try:
        w, V = scipy.linalg.eig(H, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"eigensolver failed: {exc}", H) from exc

    order = np.lexsort((-w.imag, w.real))
    w, V = w[order], V[:, order]
    tol = eps_deg(w)
    clusters = _group_complex(w, tol)
    defective = False
    # singleton blocks: left = V^T / (psi^T psi)
    norms = np.einsum("ij,ij->j", V, V)
    singles = [g[0] for g in clusters if len(g) == 1]
    if np.any(np.abs(norms[singles]) < 1e-8):
        defective = True
    norms = np.where(np.abs(norms) < 1e-300, 1e-300, norms)
    L = V.T / norms[:, None]
    for g in clusters:
        if len(g) == 1:
            continue
        Vg = V[:, g]
        G = Vg.T @ Vg
        # a self-orthogonal (psi^T psi ~ 0) block signals an exceptional point
        if np.linalg.cond(G) > 1e8:
            defective = True
            L[g, :] = np.linalg.pinv(Vg)
        else:
            L[g, :] = np.linalg.solve(G, Vg.T)

    eye = np.eye(n)
    bi_res = float(np.abs(L @ V - eye).max(initial=0.0))
    comp_res = float(np.abs(V @ L - eye).max(initial=0.0))
    if comp_res > EPS_COMPLETE or bi_res > EPS_COMPLETE:
        defective = True

    dark = -w.imag < eps_dark(H)
    spec = BiorthogonalSpectrum(
        values=w,
        right=V,
        left=L,
        groups=group_degenerate(w.real, tol),
        dark=dark,
        completeness_residual=comp_res,
        biorthogonality_residual=bi_res,
        defective=defective,
    )
    if trap_nodes is not None:
        traps = np.asarray(trap_nodes)
        gamma = float(-H[traps, traps].imag.max()) if traps.size else 0.0
        dark_subspace(spec, H=H, trap_nodes=traps, gamma=gamma)
    return spec


def dark_subspace(
    spec: BiorthogonalSpectrum, eps: float | None = None, H=None, trap_nodes=None, gamma: float = 1.0
) -> np.ndarray:
    """Indices of non-decaying states.

    With ``trap_nodes`` given, each flagged state is also checked for
    vanishing trap amplitude (decay rate = gamma * trap weight, so the bound
    is ``sqrt(eps / gamma)``); inconsistencies are appended to
    ``spec.warnings`` and emitted as a ``RuntimeWarning``.
    """
    if eps is None:
        eps = eps_dark(H) if H is not None else 1e-8
    idx = np.flatnonzero(spec.decay_rates < eps)
    if trap_nodes is not None and gamma > 0 and len(idx):
        R = spec.right[:, idx]
        R = R / np.linalg.norm(R, axis=0)
        trap_weight = np.linalg.norm(R[np.asarray(trap_nodes)], axis=0)
        bad = idx[trap_weight >= np.sqrt(max(eps, eps / gamma))]
        if len(bad):
            msg = f"{len(bad)} dark-flagged states carry non-negligible trap amplitude"
            spec.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return idx
