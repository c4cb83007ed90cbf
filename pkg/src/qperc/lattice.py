"""Lattice geometry, random bond realizations and cluster analysis.

Nodes are addressed by 1-based coordinates ``(jx, jy)`` with
``jx = 1..nx`` (columns, transport direction) and ``jy = 1..ny`` (rows).
The linear index used for every matrix in the package is fixed as::

    index = (jy - 1) * nx + (jx - 1)

Sources are the nodes of column ``jx = 1`` and traps the nodes of column
``jx = nx``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class LatticeError(ValueError):
    """Invalid lattice geometry or bond count."""


@dataclass(frozen=True)
class LatticeSpec:
    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise LatticeError(f"lattice dimensions must be integers, got {self.nx}x{self.ny}")
        if self.nx < 2:
            raise LatticeError(f"nx must be >= 2 so sources and traps are disjoint, got nx={self.nx}")
        if self.ny < 1:
            raise LatticeError(f"ny must be >= 1, got ny={self.ny}")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def b_max(self) -> int:
        return 2 * self.nx * self.ny - (self.nx + self.ny)

    @property
    def aspect_ratio(self) -> float:
        return self.ny / self.nx

    @property
    def shape_class(self) -> str:
        if self.ny < self.nx:
            return "landscape"
        if self.ny > self.nx:
            return "portrait"
        return "square"

    def index(self, jx: int, jy: int) -> int:
        if not (1 <= jx <= self.nx and 1 <= jy <= self.ny):
            raise LatticeError(f"node ({jx},{jy}) outside {self.nx}x{self.ny} lattice")
        return (jy - 1) * self.nx + (jx - 1)

    def coords(self, index: int) -> tuple[int, int]:
        jy, jx = divmod(index, self.nx)
        return jx + 1, jy + 1

    @property
    def source_nodes(self) -> np.ndarray:
        return np.arange(self.ny) * self.nx

    @property
    def trap_nodes(self) -> np.ndarray:
        return np.arange(self.ny) * self.nx + (self.nx - 1)


class Bond(NamedTuple):
    """Nearest-neighbour bond stored by linear indices, lower index first."""

    a: int
    b: int
    orientation: str  # "h" or "v"

    def endpoints(self, spec: LatticeSpec) -> tuple[int, int, int, int]:
        return (*spec.coords(self.a), *spec.coords(self.b))


def make_bond(spec: LatticeSpec, jx: int, jy: int, kx: int, ky: int) -> Bond:
    """Build a canonical bond from two coordinate pairs (either order)."""
    dx, dy = abs(jx - kx), abs(jy - ky)
    if dx + dy != 1:
        raise LatticeError(f"({jx},{jy})-({kx},{ky}) are not axial nearest neighbours")
    a, b = sorted((spec.index(jx, jy), spec.index(kx, ky)))
    return Bond(a, b, "h" if dx == 1 else "v")


def enumerate_bonds(spec: LatticeSpec) -> list[Bond]:
    """All nearest-neighbour bonds in canonical order.

    Nodes are visited in linear-index order; at each node the horizontal
    bond to ``(jx+1, jy)`` precedes the vertical bond to ``(jx, jy+1)``.
    """
    nx, ny = spec.nx, spec.ny
    bonds = []
    for i in range(nx * ny):
        jx, jy = i % nx, i // nx
        if jx + 1 < nx:
            bonds.append(Bond(i, i + 1, "h"))
        if jy + 1 < ny:
            bonds.append(Bond(i, i + nx, "v"))
    return bonds


def _bond_arrays(spec: LatticeSpec) -> np.ndarray:
    return np.array([(b.a, b.b) for b in enumerate_bonds(spec)], dtype=np.intp).reshape(-1, 2)


def realization_rng(seed: int, r: int, *extra: int) -> np.random.Generator:
    """Counter-based stream keyed only on ``(seed, r, *extra)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(r), *map(int, extra)])
    return np.random.Generator(np.random.Philox(ss))


def bond_permutation(spec: LatticeSpec, seed: int, r: int, *extra: int) -> np.ndarray:
    """Fisher-Yates permutation of the canonical bond list for stream ``(seed, r)``.

    The first ``B`` entries are exactly what a partial shuffle of length ``B``
    produces, so nested realizations share prefixes.
    """
    m = spec.b_max
    perm = np.arange(m)
    if m < 2:
        return perm
    rng = realization_rng(seed, r, *extra)
    # one draw per position, made up front so the stream does not depend on B
    draws = rng.integers(np.arange(m - 1), m)
    for i, j in enumerate(draws):
        perm[i], perm[j] = perm[j], perm[i]
    return perm


@dataclass(frozen=True)
class Realization:
    spec: LatticeSpec
    bonds: tuple[Bond, ...]
    seed: int | None = None
    index: int | None = None

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def to_json(self) -> dict:
        return {
            "nx": self.spec.nx,
            "ny": self.spec.ny,
            "B": self.n_bonds,
            "seed": self.seed,
            "r": self.index,
            "bonds": [list(b.endpoints(self.spec)) for b in self.bonds],
        }

    @classmethod
    def from_json(cls, record: dict) -> "Realization":
        spec = LatticeSpec(int(record["nx"]), int(record["ny"]))
        return from_bond_list(spec, record["bonds"], seed=record.get("seed"), index=record.get("r"))


def from_bond_list(spec: LatticeSpec, bonds: Sequence[Sequence[int]], seed=None, index=None) -> Realization:
    """Realization from explicit ``[jx, jy, kx, ky]`` entries, bypassing sampling."""
    made = [make_bond(spec, *map(int, b)) for b in bonds]
    if len(set(made)) != len(made):
        raise LatticeError("duplicate bond in explicit bond list")
    return Realization(spec, tuple(sorted(made)), seed, index)


def sample_realization(spec: LatticeSpec, B: int, seed: int, r: int) -> Realization:
    """Uniform draw of ``B`` distinct bonds, reproducible from ``(spec, B, seed, r)``."""
    if not 0 <= B <= spec.b_max:
        raise LatticeError(f"B={B} outside [0, B_max={spec.b_max}]")
    universe = enumerate_bonds(spec)
    chosen = bond_permutation(spec, seed, r)[:B]
    return Realization(spec, tuple(universe[k] for k in sorted(chosen)), seed, r)


def connectivity_from_pairs(n: int, pairs: np.ndarray) -> np.ndarray:
    A = np.zeros((n, n))
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        A[a, b] = -1.0
        A[b, a] = -1.0
        np.add.at(A, (a, a), 1.0)
        np.add.at(A, (b, b), 1.0)
    return A


def build_connectivity(real: Realization) -> np.ndarray:
    """Graph Laplacian of the occupied bonds (degree on the diagonal, -1 per bond)."""
    pairs = np.array([(b.a, b.b) for b in real.bonds], dtype=np.intp).reshape(-1, 2)
    return connectivity_from_pairs(real.spec.n_nodes, pairs)


class UnionFind:
    """Disjoint sets with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, x: int, y: int) -> bool:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return False
        if self.size[rx] < self.size[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        self.size[rx] += self.size[ry]
        return True


@dataclass(frozen=True)
class ClusterPartition:
    labels: np.ndarray
    contains_source: np.ndarray = field(repr=False)
    contains_trap: np.ndarray = field(repr=False)

    @property
    def n_clusters(self) -> int:
        return len(self.contains_source)

    def members(self, cid: int) -> list[int]:
        return np.flatnonzero(self.labels == cid).tolist()


def cluster_partition(spec: LatticeSpec, pairs: Sequence[tuple[int, int]]) -> ClusterPartition:
    n = spec.n_nodes
    uf = UnionFind(n)
    for a, b in pairs:
        uf.union(int(a), int(b))
    labels = np.empty(n, dtype=np.intp)
    ids: dict[int, int] = {}
    for i in range(n):
        labels[i] = ids.setdefault(uf.find(i), len(ids))
    k = len(ids)
    has_source = np.zeros(k, dtype=bool)
    has_trap = np.zeros(k, dtype=bool)
    has_source[labels[spec.source_nodes]] = True
    has_trap[labels[spec.trap_nodes]] = True
    return ClusterPartition(labels, has_source, has_trap)


def clusters(real: Realization) -> ClusterPartition:
    """Connected components of the realization, labelled in first-seen node order."""
    return cluster_partition(real.spec, [(b.a, b.b) for b in real.bonds])
