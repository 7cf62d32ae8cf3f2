"""Seeded K-means over target embeddings, repeated for Monte-Carlo runs.

The partitioner is plain Lloyd iteration from a k-means++ start.  All
randomness flows through numpy's PCG64 generator so a (data, k, seed)
triple always reproduces the same partition.  Empty clusters are repaired
by turning the point currently farthest from its centroid into a
singleton cluster before the centroid update, which keeps the per
iteration objective non-increasing and every cluster nonempty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binio import read_matrix, write_matrix
from .embstore import EmbeddingSet
from .errors import DimMismatch, KTooLarge

PRT_MAGIC = "PRT1"


@dataclass(frozen=True)
class KMeansConfig:
    max_iters: int = 100
    tol: float = 1e-6
    normalize: bool = False  # L2-normalize rows before clustering


@dataclass(frozen=True)
class Partition:
    """One clustering result: labels, centroids, objective, and its seed."""

    k: int
    assign: np.ndarray
    centroids: np.ndarray
    objective: float
    seed: int

    @property
    def n(self) -> int:
        return self.assign.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assign, minlength=self.k)


@dataclass(frozen=True)
class McPartitions:
    """Ordered Monte-Carlo repeats; run r used seed ``base_seed + r``."""

    runs: list
    base_seed: int

    @property
    def n_mc(self) -> int:
        return len(self.runs)


def _prepare(e: EmbeddingSet, cfg: KMeansConfig) -> np.ndarray:
    x = e.data
    if cfg.normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = np.where(norms > 0, x / np.where(norms == 0, 1.0, norms), x)
    return x


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 expanded form is faster but less accurate; the direct
    # form keeps the objective exactly consistent with the oracle tests.
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: sample proportional to squared distance."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    idx = int(rng.integers(n))
    centers[0] = x[idx]
    d2 = np.einsum("nd,nd->n", x - centers[0], x - centers[0])
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            u = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.einsum("nd,nd->n", x - centers[j], x - centers[j]))
    return centers


def _repair_empties(assign: np.ndarray, dists: np.ndarray, k: int) -> None:
    """Move the farthest point into each empty cluster, in index order.

    Only points whose current cluster keeps >= 1 member afterwards are
    candidates, so the repair never creates a new empty cluster.
    """
    sizes = np.bincount(assign, minlength=k)
    if (sizes > 0).all():
        return
    point_cost = dists[np.arange(assign.shape[0]), assign].copy()
    for empty in np.flatnonzero(sizes == 0):
        movable = np.where(sizes[assign] >= 2, point_cost, -1.0)
        idx = int(np.argmax(movable))
        sizes[assign[idx]] -= 1
        assign[idx] = empty
        sizes[empty] = 1
        point_cost[idx] = 0.0


def kmeans_fit(e: EmbeddingSet, k: int, seed: int,
               cfg: KMeansConfig = KMeansConfig()) -> Partition:
    """Cluster the embeddings into k nonempty groups.

    Lloyd iterations run from a k-means++ start until the assignment is
    stable, the relative objective improvement drops below ``cfg.tol``,
    or ``cfg.max_iters`` is reached.
    """
    if k < 1 or k > e.n:
        raise KTooLarge(f"k={k} outside [1, n={e.n}]")
    x = _prepare(e, cfg)
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _plusplus_init(x, k, rng)

    assign = np.full(e.n, -1, dtype=np.int64)
    prev_obj = None
    objective = 0.0
    for _ in range(cfg.max_iters):
        dists = _sq_dists(x, centroids)
        new_assign = np.argmin(dists, axis=1).astype(np.int64)
        _repair_empties(new_assign, dists, k)
        stable = bool(np.array_equal(new_assign, assign))
        assign = new_assign
        centroids = np.zeros((k, x.shape[1]))
        np.add.at(centroids, assign, x)
        centroids /= np.bincount(assign, minlength=k)[:, None]
        diff = x - centroids[assign]
        objective = float(np.einsum("nd,nd->", diff, diff))
        if stable or objective == 0.0:
            break
        if prev_obj is not None and prev_obj - objective <= cfg.tol * prev_obj:
            break
        prev_obj = objective

    return Partition(k=k, assign=assign, centroids=centroids,
                     objective=objective, seed=seed)


def assign(p: Partition, e: EmbeddingSet) -> np.ndarray:
    """Nearest-centroid labels; equidistant points take the lowest index."""
    if e.d != p.centroids.shape[1]:
        raise DimMismatch(
            f"centroid dim {p.centroids.shape[1]} != embedding dim {e.d}"
        )
    return np.argmin(_sq_dists(e.data, p.centroids), axis=1).astype(np.int64)


def mc_partitions(e: EmbeddingSet, k: int, n_mc: int, base_seed: int,
                  cfg: KMeansConfig = KMeansConfig()) -> McPartitions:
    """Run ``n_mc`` independent fits with seeds base_seed .. base_seed+n_mc-1."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    runs = [kmeans_fit(e, k, base_seed + r, cfg) for r in range(n_mc)]
    return McPartitions(runs=runs, base_seed=base_seed)


def save_partition(path, p: Partition) -> None:
    """Export assignments as PRT1 (magic, n, k, uint32 labels)."""
    import struct

    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", PRT_MAGIC.encode("ascii"), p.n, p.k))
        fh.write(p.assign.astype("<u4").tobytes())


def load_partition_assignments(path):
    """Read back a PRT1 file as (k, assignments)."""
    import struct

    from .errors import BadMagic, TruncatedFile

    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12:
            raise BadMagic(f"{path}: file too short for a header")
        magic, n, k = struct.unpack("<4sII", header)
        if magic != PRT_MAGIC.encode("ascii"):
            raise BadMagic(f"{path}: expected magic {PRT_MAGIC!r}, found {magic!r}")
        payload = fh.read()
    if len(payload) != n * 4:
        raise TruncatedFile(f"{path}: expected {n * 4} payload bytes, "
                            f"found {len(payload)}")
    return int(k), np.frombuffer(payload, dtype="<u4").astype(np.int64)
