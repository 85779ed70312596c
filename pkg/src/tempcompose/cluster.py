"""Agglomerative clustering of annotated request sets.

Requests annotated with (global rank, overlap ratio) are merged bottom-up
under single (nearest pair), complete (farthest pair) or average linkage.
Cluster distances are maintained with the Lance-Williams update, so each
merge costs O(n); the whole dendrogram is O(n^2) with merge heights that are
non-decreasing for all three linkages.  The cophenetic coefficient correlates
the original pairwise distances with the dendrogram's merge heights and is
the scalar compared across request sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CompositionError, DegenerateTreeError

LINKAGES = ("slink", "clink", "upgma")


@dataclass(frozen=True)
class Merge:
    left: int  # cluster ids: 0..n-1 leaves, n+k for the cluster made at step k
    right: int
    height: float
    size: int  # leaves under the merged cluster


@dataclass(frozen=True)
class ClusterTree:
    """Dendrogram over n leaves: n-1 merges in chronological order."""

    linkage: str
    n_leaves: int
    merges: tuple[Merge, ...]
    distances: np.ndarray  # original condensed distance matrix (i < j)

    def heights(self) -> list[float]:
        return [m.height for m in self.merges]

    def cophenetic_matrix(self) -> np.ndarray:
        """T[i, j]: merge height where leaves i and j first share a cluster."""
        n = self.n_leaves
        members: dict[int, list[int]] = {i: [i] for i in range(n)}
        T = np.zeros((n, n))
        for k, merge in enumerate(self.merges):
            left = members.pop(merge.left)
            right = members.pop(merge.right)
            for a in left:
                for b in right:
                    T[a, b] = T[b, a] = merge.height
            members[n + k] = left + right
        return T

    def to_text(self) -> str:
        """Nested text rendering of the dendrogram."""
        n = self.n_leaves
        lines: dict[int, list[str]] = {i: [f"leaf {i}"] for i in range(n)}
        for k, merge in enumerate(self.merges):
            body = [f"merge @{merge.height!r} size={merge.size}"]
            for child in (merge.left, merge.right):
                body.extend("  " + ln for ln in lines.pop(child))
            lines[n + k] = body
        (root,) = lines.values()
        return "\n".join(root)


def condensed_index(n: int, i: int, j: int) -> int:
    if i > j:
        i, j = j, i
    return i * n - (i * (i + 1)) // 2 + (j - i - 1)


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Condensed Euclidean distances over rows of `points`."""
    n = len(points)
    out = np.zeros(n * (n - 1) // 2)
    k = 0
    for i in range(n):
        for j in range(i + 1, n):
            out[k] = float(np.sqrt(np.sum((points[i] - points[j]) ** 2)))
            k += 1
    return out


def cluster(points: np.ndarray, linkage: str = "slink") -> ClusterTree:
    """Agglomerate 2-D annotation points into a dendrogram.

    Merges always pick the currently closest pair; ties break on the smallest
    (older id, newer id) pair, which keeps runs reproducible.
    """
    if linkage not in LINKAGES:
        raise CompositionError(f"unknown linkage '{linkage}'")
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2:
        raise CompositionError("clustering needs at least 2 points")
    condensed = pairwise_distances(pts)

    # active cluster ids -> (creation id, size); distances in a dict keyed by id pair
    dist: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(condensed[condensed_index(n, i, j)])
    active: dict[int, int] = {i: 1 for i in range(n)}  # id -> leaf count
    merges: list[Merge] = []
    last_height = 0.0
    for step in range(n - 1):
        best: tuple[float, int, int] | None = None
        ids = sorted(active)
        for ai in range(len(ids)):
            for bi in range(ai + 1, len(ids)):
                a, b = ids[ai], ids[bi]
                d = dist[(a, b)]
                if best is None or d < best[0]:
                    best = (d, a, b)
        d, a, b = best
        if d < last_height - 1e-12:
            raise CompositionError("non-monotone merge heights (linkage not reducible)")
        last_height = max(last_height, d)
        new_id = n + step
        size_a, size_b = active[a], active[b]
        # Lance-Williams update of distances to the merged cluster
        for c in ids:
            if c in (a, b):
                continue
            dca = dist.pop((min(a, c), max(a, c)))
            dcb = dist.pop((min(b, c), max(b, c)))
            if linkage == "slink":
                d_new = min(dca, dcb)
            elif linkage == "clink":
                d_new = max(dca, dcb)
            else:  # upgma
                d_new = (size_a * dca + size_b * dcb) / (size_a + size_b)
            dist[(c, new_id)] = d_new
        del dist[(a, b)]
        del active[a]
        del active[b]
        active[new_id] = size_a + size_b
        merges.append(Merge(left=a, right=b, height=d, size=size_a + size_b))
    return ClusterTree(
        linkage=linkage, n_leaves=n, merges=tuple(merges), distances=condensed
    )


def cophenetic(tree: ClusterTree) -> float:
    """Pearson correlation between original and cophenetic pair distances.

    Raises DegenerateTreeError when fewer than two pairs exist or either
    distance vector has zero variance (the coefficient is undefined).
    """
    n = tree.n_leaves
    n_pairs = n * (n - 1) // 2
    if n_pairs < 2:
        raise DegenerateTreeError("cophenetic coefficient needs at least 3 leaves")
    T = tree.cophenetic_matrix()
    t = np.array([T[i, j] for i in range(n) for j in range(i + 1, n)])
    r = np.asarray(tree.distances, dtype=float)
    r_c = r - r.mean()
    t_c = t - t.mean()
    denom = math.sqrt(float(np.sum(r_c**2)) * float(np.sum(t_c**2)))
    if denom == 0.0:
        raise DegenerateTreeError("zero variance in pair distances")
    return float(np.sum(r_c * t_c) / denom)


def normalized_coefficient(c: float) -> float:
    """Map a correlation in [-1, 1] onto [0, 1] for similarity scoring."""
    return (c + 1.0) / 2.0


def similarity_score(c_a: float, c_b: float) -> float:
    """1 - |difference of normalized coefficients|; 1 iff equal."""
    return 1.0 - abs(normalized_coefficient(c_a) - normalized_coefficient(c_b))
