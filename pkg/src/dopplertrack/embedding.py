"""Embedding-space instance clustering over aligned multi-frame volumes.

Two points belong together with (unnormalized) probability

    p_ij = (2 pi)^(-D/2) |S_i|^(-1/2) exp(-1/2 (e_i - e_j)^T S_i^(-1) (e_i - e_j))

where e_i is the embedding of the instance-center proxy and S_i its
diagonal covariance. Within a volume, instances are peeled off
iteratively around the highest-objectness remaining point; across
consecutive volumes, instances are matched greedily by point-IoU
overlap on the shared frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PointHeadOutput

__all__ = [
    "ClusterInferParams",
    "assoc_prob",
    "assoc_prob_many",
    "cluster_volume",
    "associate_volumes",
    "IdAllocator",
]


@dataclass(frozen=True)
class ClusterInferParams:
    p_threshold: float = 0.4
    overlap_threshold: float = 0.8
    max_instances: int = 256  # safety cap; exceeding it signals degenerate embeddings
    min_instance_points: int = 20  # peeled instances smaller than this become background

    def __post_init__(self) -> None:
        if self.p_threshold <= 0:
            raise ValueError("p_threshold must be positive")
        if not (0 < self.overlap_threshold <= 1):
            raise ValueError("overlap_threshold must lie in (0, 1]")


def assoc_prob(e_i: np.ndarray, var_i: np.ndarray, e_j: np.ndarray) -> float:
    """Same-instance probability of point j under center i's Gaussian.

    The value is an unnormalized density and is not capped at 1.
    """
    return float(assoc_prob_many(e_i, var_i, np.asarray(e_j, dtype=float)[None, :])[0])


def assoc_prob_many(e_i: np.ndarray, var_i: np.ndarray, e_all: np.ndarray) -> np.ndarray:
    """Vectorized assoc_prob of one center against (N, D) embeddings."""
    e_i = np.asarray(e_i, dtype=float)
    var_i = np.asarray(var_i, dtype=float)
    if var_i.size and var_i.min() <= 0:
        raise ValueError("variance components must be strictly positive")
    d = e_i.shape[0]
    diff = e_all - e_i[None, :]
    maha = np.einsum("nd,d->n", diff * diff, 1.0 / var_i)
    norm = (2.0 * np.pi) ** (-d / 2.0) * np.prod(var_i) ** (-0.5)
    return norm * np.exp(-0.5 * maha)


def cluster_volume(head: PointHeadOutput, params: ClusterInferParams) -> np.ndarray:
    """Instance id per point within one volume (0 = background).

    Peeling loop: the highest-objectness candidate (ties to the lowest
    point index) anchors an instance; every candidate whose association
    probability under that anchor exceeds p_threshold joins it and
    leaves the pool. Each round removes at least the anchor itself, so
    the loop terminates. Instances smaller than min_instance_points are
    dissolved into background afterwards.
    """
    n = head.embeddings.shape[0]
    assignment = np.zeros(n, dtype=np.uint32)
    candidates = np.arange(n)
    next_instance = 1
    while candidates.size:
        if next_instance > params.max_instances:
            raise RuntimeError(
                f"fragmented clustering: more than {params.max_instances} instances"
            )
        obj = head.objectness[candidates]
        center = candidates[int(np.argmax(obj))]  # argmax takes the lowest index on ties
        probs = assoc_prob_many(
            head.embeddings[center], head.variances[center], head.embeddings[candidates]
        )
        member = probs > params.p_threshold
        member[candidates == center] = True  # the anchor always joins its own instance
        assignment[candidates[member]] = next_instance
        next_instance += 1
        candidates = candidates[~member]

    if params.min_instance_points > 1:
        ids, counts = np.unique(assignment[assignment != 0], return_counts=True)
        for iid, count in zip(ids, counts):
            if count < params.min_instance_points:
                assignment[assignment == iid] = 0
    return assignment


class IdAllocator:
    """Monotonic instance-id source for cross-volume tracking."""

    def __init__(self, start: int = 1):
        self._next = start

    def fresh(self) -> int:
        out = self._next
        self._next += 1
        return out


def associate_volumes(
    prev_ids: dict[int, int],
    cur_ids: dict[int, int],
    overlap_threshold: float,
    allocator: IdAllocator,
) -> dict[int, int]:
    """Carry instance ids from the previous volume into the current one.

    ``prev_ids`` / ``cur_ids`` map point_id -> volume-local instance id,
    restricted to the frames the two volumes share. Overlap between a
    current and a previous instance is point-IoU on those shared
    frames. Pairs are processed greedily by descending overlap,
    one-to-one; matches at or above ``overlap_threshold`` inherit the
    previous id and everything else draws a fresh id.

    Returns a mapping from current volume-local instance id to final id.
    """
    prev_sizes: dict[int, int] = {}
    for inst in prev_ids.values():
        prev_sizes[inst] = prev_sizes.get(inst, 0) + 1
    cur_sizes: dict[int, int] = {}
    for inst in cur_ids.values():
        cur_sizes[inst] = cur_sizes.get(inst, 0) + 1

    inter: dict[tuple[int, int], int] = {}
    for pid, cur_inst in cur_ids.items():
        prev_inst = prev_ids.get(pid)
        if prev_inst is not None:
            key = (cur_inst, prev_inst)
            inter[key] = inter.get(key, 0) + 1

    scored = []
    for (cur_inst, prev_inst), count in inter.items():
        union = cur_sizes[cur_inst] + prev_sizes[prev_inst] - count
        scored.append((count / union, cur_inst, prev_inst))
    # Descending overlap; ties broken by the lower instance ids.
    scored.sort(key=lambda s: (-s[0], s[1], s[2]))

    mapping: dict[int, int] = {}
    used_prev: set[int] = set()
    for overlap, cur_inst, prev_inst in scored:
        if overlap < overlap_threshold:
            break
        if cur_inst in mapping or prev_inst in used_prev:
            continue
        mapping[cur_inst] = prev_inst
        used_prev.add(prev_inst)
    for cur_inst in sorted(cur_sizes):
        if cur_inst not in mapping:
            mapping[cur_inst] = allocator.fresh()
    return mapping
