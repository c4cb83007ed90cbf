"""Ensemble averages over random realizations, B sweeps and participation maps.

Every realization is a pure function of ``(seed, r)`` (nested mode) or
``(seed, r, B)`` (independent mode), and results are gathered by ``r`` before
reduction, so worker count never changes the output.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lattice import LatticeSpec, bond_permutation, connectivity_from_pairs, enumerate_bonds
from .spectral import SpectralError, decompose_symmetric, eps_deg, group_degenerate, trapped_operators
from .transport import long_time_from_operators

MODES = ("nested", "independent")


class ComputationError(RuntimeError):
    """Numerical failure inside an ensemble, tagged with its reproduction triple."""

    def __init__(self, seed: int, r: int, B: int, cause: Exception):
        self.seed, self.r, self.B = seed, r, B
        super().__init__(f"computation failed at (seed={seed}, r={r}, B={B}): {cause}")


@dataclass(frozen=True)
class EnsembleConfig:
    spec: LatticeSpec
    R: int = 1000
    seed: int = 0
    gamma: float = 1.0
    B_values: tuple[int, ...] | None = None
    mode: str = "nested"
    threads: int = 1

    def __post_init__(self):
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.B_values is not None:
            object.__setattr__(self, "B_values", tuple(int(b) for b in self.B_values))
            bad = [b for b in self.B_values if not 0 <= b <= self.spec.b_max]
            if bad:
                raise ValueError(f"B values {bad} outside [0, B_max={self.spec.b_max}]")

    @property
    def bs(self) -> tuple[int, ...]:
        if self.B_values is None:
            return tuple(range(self.spec.b_max + 1))
        return self.B_values


@dataclass
class SweepResult:
    spec: LatticeSpec
    B: np.ndarray
    mean_P_inf: np.ndarray
    mean_Pi_inf: np.ndarray
    stderr_P: np.ndarray
    stderr_Pi: np.ndarray
    defective: np.ndarray
    crossings: dict = field(default_factory=dict)

    @property
    def p(self) -> np.ndarray:
        return self.B / self.spec.b_max

    def rows(self):
        for i in range(len(self.B)):
            yield {
                "B": int(self.B[i]),
                "p": float(self.p[i]),
                "mean_P_inf": float(self.mean_P_inf[i]),
                "stderr_P": float(self.stderr_P[i]),
                "mean_Pi_inf": float(self.mean_Pi_inf[i]),
                "stderr_Pi": float(self.stderr_Pi[i]),
                "defective": int(self.defective[i]),
            }


def _realization_ltb(spec: LatticeSpec, bs: Sequence[int], seed: int, r: int, gamma: float, mode: str):
    pairs = np.array([(b.a, b.b) for b in enumerate_bonds(spec)], dtype=np.intp).reshape(-1, 2)
    out = np.empty((len(bs), 2))
    flags = np.zeros(len(bs), dtype=bool)
    perm = bond_permutation(spec, seed, r) if mode == "nested" else None
    for i, B in enumerate(bs):
        if mode == "independent":
            perm = bond_permutation(spec, seed, r, B)
        try:
            A = connectivity_from_pairs(spec.n_nodes, pairs[perm[:B]])
            ltb = long_time_from_operators(trapped_operators(A, spec, gamma), spec)
        except (SpectralError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise ComputationError(seed, r, B, exc) from exc
        out[i] = ltb.p_inf, ltb.pi_inf
        flags[i] = ltb.method != "spectral"
    return out, flags


def _chunk_worker(args):
    spec, bs, seed, rs, gamma, mode = args
    return [_realization_ltb(spec, bs, seed, r, gamma, mode) for r in rs]


def _run_realizations(cfg: EnsembleConfig, bs, progress: Callable[[int, int], None] | None = None):
    """Per-realization LTB arrays of shape ``(R, len(bs), 2)`` plus defective flags."""
    R = cfg.R
    values = np.empty((R, len(bs), 2))
    flags = np.zeros((R, len(bs)), dtype=bool)
    chunk = max(1, min(50, R // (4 * cfg.threads) or 1))
    starts = list(range(0, R, chunk))
    jobs = [(cfg.spec, tuple(bs), cfg.seed, range(s, min(s + chunk, R)), cfg.gamma, cfg.mode) for s in starts]
    done = 0
    if cfg.threads == 1:
        results = map(_chunk_worker, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=cfg.threads)
        results = pool.map(_chunk_worker, jobs)
    try:
        for s, res in zip(starts, results):
            for k, (v, f) in enumerate(res):
                values[s + k] = v
                flags[s + k] = f
            done += len(res)
            if progress is not None:
                progress(done, R)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return values, flags


def _stderr(x: np.ndarray) -> np.ndarray:
    if x.shape[0] < 2:
        return np.zeros(x.shape[1:])
    return x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])


def average_ltb(cfg: EnsembleConfig, B: int) -> dict:
    """Ensemble means and standard errors of the classical and quantum LTB at one ``B``."""
    if not 0 <= B <= cfg.spec.b_max:
        raise ValueError(f"B={B} outside [0, B_max={cfg.spec.b_max}]")
    values, flags = _run_realizations(cfg, (B,))
    v = values[:, 0, :]
    se = _stderr(v)
    return {
        "mean_P_inf": float(v[:, 0].mean()),
        "mean_Pi_inf": float(v[:, 1].mean()),
        "stderr_P": float(se[0]),
        "stderr_Pi": float(se[1]),
        "defective_count": int(flags.sum()),
    }


def locate_crossing(bs, means, b_max: int, level: float = 0.5) -> dict | None:
    """First ``B`` whose mean falls to ``level`` or below.

    Returns the integer crossing, its bond fraction and a linearly
    interpolated fractional refinement; ``None`` if the curve never crosses.
    """
    bs = np.asarray(bs)
    means = np.asarray(means)
    hits = np.flatnonzero(means <= level)
    if len(hits) == 0:
        return None
    i = int(hits[0])
    b05 = int(bs[i])
    frac = float(b05)
    if i > 0 and means[i - 1] > level:
        b0, m0, m1 = bs[i - 1], means[i - 1], means[i]
        frac = float(b0 + (m0 - level) / (m0 - m1) * (b05 - b0))
    return {"B05": b05, "p05": b05 / b_max, "p05_interp": frac / b_max}


def sweep(cfg: EnsembleConfig, progress=None) -> SweepResult:
    bs = cfg.bs
    values, flags = _run_realizations(cfg, bs, progress)
    means = values.mean(axis=0)
    se = _stderr(values)
    res = SweepResult(
        spec=cfg.spec,
        B=np.array(bs),
        mean_P_inf=means[:, 0],
        mean_Pi_inf=means[:, 1],
        stderr_P=se[:, 0],
        stderr_Pi=se[:, 1],
        defective=flags.sum(axis=0),
    )
    order = np.argsort(res.B, kind="stable")
    for kind, col in (("rw", res.mean_P_inf), ("qw", res.mean_Pi_inf)):
        c = locate_crossing(res.B[order], col[order], cfg.spec.b_max)
        res.crossings[kind] = c
    return res


def canonical_eigenbasis(M: np.ndarray, tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a real symmetric matrix with a basis-independent choice in degenerate subspaces.

    Inside each degenerate eigenspace with projector ``P`` the basis is built
    by Gram-Schmidt on ``P e_0, P e_1, ...`` (skipping vectors already
    spanned). Within the group, vectors are then ordered by their absolute
    amplitudes compared lexicographically, largest first. Each vector's
    first non-negligible entry is made positive.
    """
    spec = decompose_symmetric(M)
    w, v = spec.values, spec.vectors
    if tol is None:
        tol = eps_deg(w)
    out = np.empty_like(v)
    for g in group_degenerate(w, tol):
        if len(g) == 1:
            basis = v[:, g]
        else:
            P = v[:, g] @ v[:, g].T
            cols = []
            for j in range(P.shape[0]):
                u = P[:, j].copy()
                for c in cols:
                    u -= (c @ u) * c
                nrm = np.linalg.norm(u)
                if nrm > 1e-6:
                    cols.append(u / nrm)
                if len(cols) == len(g):
                    break
            basis = np.column_stack(cols)
            mags = np.round(np.abs(basis), 12)
            order = sorted(range(len(g)), key=lambda c: tuple(mags[:, c]), reverse=True)
            basis = basis[:, order]
        idx = np.argmax(np.abs(basis) > 1e-8, axis=0)
        signs = np.sign(basis[idx, np.arange(basis.shape[1])])
        out[:, g] = basis * signs
    return w, out


@dataclass
class ParticipationMap:
    """``xi[j, n]``: ensemble mean of ``|<j|psi_n>|^4`` over trap-free eigenstates."""

    spec: LatticeSpec
    B: int
    R: int
    xi: np.ndarray

    def rows(self):
        n_nodes, n_states = self.xi.shape
        for j in range(n_nodes):
            for n in range(n_states):
                yield j, n, float(self.xi[j, n])


def _xi_worker(args):
    spec, B, seed, rs, mode = args
    pairs = np.array([(b.a, b.b) for b in enumerate_bonds(spec)], dtype=np.intp).reshape(-1, 2)
    acc = []
    for r in rs:
        perm = bond_permutation(spec, seed, r) if mode == "nested" else bond_permutation(spec, seed, r, B)
        A = connectivity_from_pairs(spec.n_nodes, pairs[perm[:B]])
        try:
            _, vecs = canonical_eigenbasis(A)
        except (SpectralError, np.linalg.LinAlgError) as exc:
            raise ComputationError(seed, r, B, exc) from exc
        acc.append(np.abs(vecs) ** 4)
    return acc


def participation_map(cfg: EnsembleConfig, B: int, progress=None) -> ParticipationMap:
    if not 0 <= B <= cfg.spec.b_max:
        raise ValueError(f"B={B} outside [0, B_max={cfg.spec.b_max}]")
    R = cfg.R
    chunk = max(1, min(50, R // (4 * cfg.threads) or 1))
    starts = list(range(0, R, chunk))
    jobs = [(cfg.spec, B, cfg.seed, range(s, min(s + chunk, R)), cfg.mode) for s in starts]
    n = cfg.spec.n_nodes
    stack = np.empty((R, n, n))
    pool = ProcessPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        results = pool.map(_xi_worker, jobs) if pool else map(_xi_worker, jobs)
        for s, res in zip(starts, results):
            stack[s : s + len(res)] = res
            if progress is not None:
                progress(s + len(res), R)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return ParticipationMap(cfg.spec, B, R, stack.mean(axis=0))


@dataclass(frozen=True)
class ScanRow:
    nx: int
    ny: int
    ar: float
    p05_rw: float | None
    B05_rw: int | None
    p05_qw: float | None
    B05_qw: int | None


def aspect_ratio_scan(
    specs: Sequence[LatticeSpec],
    R: int,
    seed: int,
    gamma: float = 1.0,
    mode: str = "nested",
    threads: int = 1,
    progress=None,
) -> list[ScanRow]:
    rows = []
    for spec in specs:
        cfg = EnsembleConfig(spec, R=R, seed=seed, gamma=gamma, mode=mode, threads=threads)
        res = sweep(cfg, progress)
        rw, qw = res.crossings["rw"], res.crossings["qw"]
        rows.append(
            ScanRow(
                spec.nx,
                spec.ny,
                spec.aspect_ratio,
                rw["p05"] if rw else None,
                rw["B05"] if rw else None,
                qw["p05"] if qw else None,
                qw["B05"] if qw else None,
            )
        )
    return sorted(rows, key=lambda row: row.ar)


def default_threads() -> int:
    env = os.environ.get("QPERC_THREADS")
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)
