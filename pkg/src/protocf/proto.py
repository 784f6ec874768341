"""Class prototypes: latent-space means from an encoder, or per-class
k-d trees over input space.

The k-d tree is exact: results match brute-force Euclidean k-NN with
ties broken by insertion index, which the tests verify directly.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .nn import DenseNet, forward, forward_batch

LEAF_SIZE = 16

LATENT = "latent"
INPUT = "input"


class ProtoError(Exception):
    pass


@dataclass(frozen=True)
class Prototype:
    class_id: int
    point: np.ndarray
    space: str  # latent | input

    def __post_init__(self):
        if self.space not in (LATENT, INPUT):
            raise ProtoError(f"unknown prototype space {self.space!r}")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))


# Tree nodes: leaves hold index arrays, internal nodes a split plane.
@dataclass
class _Node:
    dim: int = -1
    value: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    indices: np.ndarray | None = None  # leaf only


@dataclass
class KdTree:
    points: np.ndarray  # (n, d), insertion order preserved
    leaf_size: int = LEAF_SIZE
    _root: _Node = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[0] == 0:
            raise ProtoError("k-d tree needs at least one point")
        object.__setattr__(self, "points", pts)
        self._root = self._build(np.arange(pts.shape[0]))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _build(self, idx: np.ndarray) -> _Node:
        if idx.size <= self.leaf_size:
            return _Node(indices=idx)
        sub = self.points[idx]
        spread = sub.max(axis=0) - sub.min(axis=0)
        dim = int(np.argmax(spread))
        if spread[dim] == 0.0:  # all duplicates: nothing to split on
            return _Node(indices=idx)
        order = np.argsort(sub[:, dim], kind="stable")
        mid = idx.size // 2
        value = float(sub[order[mid], dim])
        return _Node(
            dim=dim,
            value=value,
            left=self._build(idx[order[:mid]]),
            right=self._build(idx[order[mid:]]),
        )


def knn_query(tree: KdTree, x: np.ndarray, k: int):
    """Exact k nearest neighbours by Euclidean distance.

    Returns (distances, indices), nondecreasing in (distance, index).
    Equidistant points are ordered by insertion index.
    """
    if not 1 <= k <= tree.n:
        raise ProtoError(f"k={k} out of range for tree of size {tree.n}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.points.shape[1],):
        raise ProtoError(f"query dim {x.shape} != tree dim {tree.points.shape[1]}")

    # Max-heap over (-dist2, -index): heap[0] is the current worst kept
    # neighbour, and tuple order gives the lexicographic (dist, index) rule.
    heap: list[tuple[float, int]] = []

    def visit(node: _Node):
        if node.indices is not None:
            pts = tree.points[node.indices]
            diffs = pts - x
            d2s = np.einsum("ij,ij->i", diffs, diffs)
            for d2, i in zip(d2s, node.indices):
                entry = (-float(d2), -int(i))
                if len(heap) < k:
                    heapq.heappush(heap, entry)
                elif entry > heap[0]:
                    heapq.heapreplace(heap, entry)
            return
        gap = x[node.dim] - node.value
        near, far = (node.left, node.right) if gap < 0 else (node.right, node.left)
        visit(near)
        if len(heap) < k or gap * gap <= -heap[0][0]:
            visit(far)

    visit(tree._root)
    ordered = sorted((-d2, -i) for d2, i in heap)
    dists = np.sqrt(np.array([d2 for d2, _ in ordered]))
    idx = np.array([i for _, i in ordered], dtype=np.int64)
    return dists, idx


def build_class_trees(xs: np.ndarray, labels: dict[int, np.ndarray]) -> dict[int, KdTree]:
    """One k-d tree per nonempty predicted class."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    trees = {}
    for c in sorted(labels):
        idx = np.asarray(labels[c], dtype=np.int64)
        if idx.size:
            trees[c] = KdTree(xs[idx])
    if len(trees) < 2:
        raise ProtoError("need at least two nonempty classes to form counterfactuals")
    return trees


def encoder_prototypes(
    enc: DenseNet,
    xs: np.ndarray,
    labels: dict[int, np.ndarray],
    x0: np.ndarray,
    n_nearest: int,
) -> dict[int, Prototype]:
    """Latent prototype per class: mean encoding of the n_nearest class
    members closest to the encoding of x0 (all members if fewer)."""
    if n_nearest < 1:
        raise ProtoError("n_nearest must be >= 1")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    z0 = forward(enc, np.asarray(x0, dtype=np.float64))
    protos = {}
    for c in sorted(labels):
        idx = np.asarray(labels[c], dtype=np.int64)
        if idx.size == 0:
            continue
        z = forward_batch(enc, xs[idx])
        d2 = np.einsum("ij,ij->i", z - z0, z - z0)
        order = np.argsort(d2, kind="stable")[: min(n_nearest, idx.size)]
        protos[c] = Prototype(c, z[order].mean(axis=0), LATENT)
    return protos


def nearest_prototype(protos_or_trees, x0: np.ndarray, t0: int,
                      enc: DenseNet | None = None, k: int = 1) -> Prototype:
    """Closest other-class prototype to x0.

    With latent prototypes the comparison runs in encoder space; with
    k-d trees the k-th nearest class member becomes an input-space
    prototype.  Ties go to the lower class index.
    """
    candidates = {c: v for c, v in protos_or_trees.items() if c != t0}
    if not candidates:
        raise ProtoError(f"no class other than {t0} available")
    x0 = np.asarray(x0, dtype=np.float64)

    first = next(iter(candidates.values()))
    if isinstance(first, Prototype):
        if enc is None:
            raise ProtoError("latent prototypes need the encoder to place x0")
        z0 = forward(enc, x0)
        best_c, best_d = None, np.inf
        for c in sorted(candidates):
            d = float(np.linalg.norm(z0 - candidates[c].point))
            if d < best_d:
                best_c, best_d = c, d
        return candidates[best_c]

    best_c, best_d, best_point = None, np.inf, None
    for c in sorted(candidates):
        tree = candidates[c]
        kk = min(k, tree.n)
        dists, idx = knn_query(tree, x0, kk)
        if dists[-1] < best_d:
            best_c, best_d = c, float(dists[-1])
            best_point = tree.points[idx[-1]]
    return Prototype(best_c, best_point, INPUT)
