"""Multi-relation graph construction from training sequences.

Five relations: user-item interaction counts, directed item transitions with
distance-decayed weights, incompatibility between popular items sharing
transitional context, co-interaction (Jaccard-weighted) user similarity, and
dissimilarity between users linked only through common similar users.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .dataio import UserSequence

RELATION_KINDS = (
    "interactional",
    "transitional",
    "incompatible",
    "similar_user",
    "dissimilar_user",
)

# Relations whose undirected edges are stored once with src < dst.
_UNDIRECTED = {"incompatible", "similar_user", "dissimilar_user"}


class GraphFormatError(Exception):
    """Invalid persisted edge file."""


@dataclass
class RelationEdgeList:
    kind: str
    src: np.ndarray  # int64
    dst: np.ndarray  # int64
    weight: np.ndarray  # float64

    def __post_init__(self):
        if self.kind not in RELATION_KINDS:
            raise ValueError(f"unknown relation kind {self.kind!r}")
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=np.float64)

    def __len__(self) -> int:
        return self.src.shape[0]

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {
            (int(s), int(d)): float(w)
            for s, d, w in zip(self.src, self.dst, self.weight)
        }

    def sorted(self) -> "RelationEdgeList":
        order = np.lexsort((self.dst, self.src))
        return RelationEdgeList(self.kind, self.src[order], self.dst[order], self.weight[order])


@dataclass
class PopularityPartition:
    popular_items: frozenset[int]
    popular_users: frozenset[int]
    item_ratio: float
    user_ratio: float


@dataclass
class MultiRelationGraph:
    num_users: int
    num_items: int
    interactional: RelationEdgeList
    transitional: RelationEdgeList
    incompatible: RelationEdgeList
    similar_user: RelationEdgeList
    dissimilar_user: RelationEdgeList
    partition: PopularityPartition

    def relation(self, kind: str) -> RelationEdgeList:
        return getattr(self, kind)


def _from_dict(kind: str, acc: dict[tuple[int, int], float]) -> RelationEdgeList:
    if not acc:
        empty = np.empty(0)
        return RelationEdgeList(kind, empty, empty, empty)
    keys = sorted(acc.keys())
    src = np.array([k[0] for k in keys], dtype=np.int64)
    dst = np.array([k[1] for k in keys], dtype=np.int64)
    weight = np.array([acc[k] for k in keys], dtype=np.float64)
    return RelationEdgeList(kind, src, dst, weight)


def build_interaction_edges(sequences: list[UserSequence]) -> RelationEdgeList:
    """One user->item edge per interacting pair, weight = interaction count."""
    acc: Counter = Counter()
    for seq in sequences:
        for item in seq.items:
            acc[(seq.user_index, item)] += 1
    return _from_dict("interactional", {k: float(v) for k, v in acc.items()})


def build_transitional_edges(sequences: list[UserSequence]) -> RelationEdgeList:
    """Directed i->j edges weighted by sum over sequences of (n - dist) / n.

    Per sequence, each ordered item pair contributes once, using the minimal
    positional distance among its occurrences. Self-loops are excluded.
    """
    acc: dict[tuple[int, int], float] = {}
    for seq in sequences:
        n = seq.length
        if n < 2:
            continue
        min_dist: dict[tuple[int, int], int] = {}
        items = seq.items
        for p in range(n):
            for q in range(p + 1, n):
                a, b = items[p], items[q]
                if a == b:
                    continue
                d = q - p
                key = (a, b)
                if d < min_dist.get(key, n + 1):
                    min_dist[key] = d
        for key, d in min_dist.items():
            acc[key] = acc.get(key, 0.0) + (n - d) / n
    return _from_dict("transitional", acc)


def popularity_partition(
    sequences: list[UserSequence],
    num_users: int,
    num_items: int,
    user_ratio: float = 0.9,
    item_ratio: float = 0.8,
) -> PopularityPartition:
    """Mark the most-interacted top (1 - ratio) fraction as popular.

    The ratios name the few-shot (unpopular) fraction. Ties break toward the
    smaller index; at least one node is always popular.
    """
    for name, ratio in (("user_ratio", user_ratio), ("item_ratio", item_ratio)):
        if not (0 < ratio < 1):
            raise ValueError(f"{name} must be in (0, 1), got {ratio}")
    item_counts = np.zeros(num_items + 1, dtype=np.int64)
    user_counts = np.zeros(num_users + 1, dtype=np.int64)
    for seq in sequences:
        user_counts[seq.user_index] += seq.length
        for item in seq.items:
            item_counts[item] += 1

    def top(counts: np.ndarray, ratio: float, n: int) -> frozenset[int]:
        k = min(n, max(1, math.ceil((1.0 - ratio) * n)))
        idx = np.arange(1, n + 1)
        order = np.lexsort((idx, -counts[1:]))
        return frozenset(int(i) for i in idx[order][:k])

    return PopularityPartition(
        popular_items=top(item_counts, item_ratio, num_items),
        popular_users=top(user_counts, user_ratio, num_users),
        item_ratio=item_ratio,
        user_ratio=user_ratio,
    )


def _sym_plus_bool(edges: RelationEdgeList, n: int, directed: bool):
    """Symmetric weight matrix (w_ik + w_ki) and its boolean support."""
    mat = sparse.csr_matrix(
        (edges.weight, (edges.src, edges.dst)), shape=(n + 1, n + 1)
    )
    if directed:
        sym = mat + mat.T
    else:
        sym = mat + mat.T  # undirected lists store each edge once
    boolean = sym.copy()
    boolean.data = np.ones_like(boolean.data)
    return sym, boolean


def build_incompatible_edges(
    transitional: RelationEdgeList,
    partition: PopularityPartition,
    num_items: int,
) -> RelationEdgeList:
    """Undirected edges between popular items that share transitional context
    but have no transitional edge in either direction.

    Weight = sum over common neighbors k of (w+_ik + w+_ki + w+_jk + w+_kj).
    """
    if len(transitional) == 0 or not partition.popular_items:
        return _from_dict("incompatible", {})
    sym, boolean = _sym_plus_bool(transitional, num_items, directed=True)
    pop = np.array(sorted(partition.popular_items), dtype=np.int64)
    # Common-neighbor sums restricted to popular rows/cols; k ranges over all items.
    weight_pp = (sym[pop, :] @ boolean[:, pop]) + (boolean[pop, :] @ sym[:, pop])
    support_pp = boolean[pop, :] @ boolean[:, pop]
    direct = {(int(s), int(d)) for s, d in zip(transitional.src, transitional.dst)}

    acc: dict[tuple[int, int], float] = {}
    support_coo = sparse.coo_matrix(support_pp)
    weight_csr = sparse.csr_matrix(weight_pp)
    for r, c in zip(support_coo.row, support_coo.col):
        i, j = int(pop[r]), int(pop[c])
        if i >= j:
            continue
        if (i, j) in direct or (j, i) in direct:
            continue
        w = float(weight_csr[r, c])
        if w > 0:
            acc[(i, j)] = w
    return _from_dict("incompatible", acc)


def build_similar_user_edges(
    interactional: RelationEdgeList,
    num_users: int,
    num_items: int,
) -> RelationEdgeList:
    """Undirected user edges for co-interacting pairs.

    Weight = sum of both users' counts on common items divided by the sum of
    both users' total counts (a Jaccard-style overlap in (0, 1]).
    """
    if len(interactional) == 0:
        return _from_dict("similar_user", {})
    counts = sparse.csr_matrix(
        (interactional.weight, (interactional.src, interactional.dst)),
        shape=(num_users + 1, num_items + 1),
    )
    boolean = counts.copy()
    boolean.data = np.ones_like(boolean.data)
    numer = (boolean @ counts.T) + (counts @ boolean.T)
    common = boolean @ boolean.T
    totals = np.asarray(counts.sum(axis=1)).ravel()

    acc: dict[tuple[int, int], float] = {}
    common_coo = sparse.coo_matrix(common)
    numer_csr = sparse.csr_matrix(numer)
    for r, c in zip(common_coo.row, common_coo.col):
        i, j = int(r), int(c)
        if i >= j:
            continue
        acc[(i, j)] = float(numer_csr[r, c]) / float(totals[i] + totals[j])
    return _from_dict("similar_user", acc)


def build_dissimilar_user_edges(
    similar: RelationEdgeList,
    num_users: int,
) -> RelationEdgeList:
    """Undirected edges between non-similar users sharing a similar user.

    Weight = sum over common similar neighbors k of (w+_ik + w+_kj).
    """
    if len(similar) == 0:
        return _from_dict("dissimilar_user", {})
    sym, boolean = _sym_plus_bool(similar, num_users, directed=False)
    weight = (sym @ boolean) + (boolean @ sym)
    support = boolean @ boolean
    similar_pairs = {(int(s), int(d)) for s, d in zip(similar.src, similar.dst)}

    acc: dict[tuple[int, int], float] = {}
    support_coo = sparse.coo_matrix(support)
    weight_csr = sparse.csr_matrix(weight)
    for r, c in zip(support_coo.row, support_coo.col):
        i, j = int(r), int(c)
        if i >= j:
            continue
        if (i, j) in similar_pairs:
            continue
        w = float(weight_csr[r, c])
        if w > 0:
            acc[(i, j)] = w
    return _from_dict("dissimilar_user", acc)


def build_graph(
    sequences: list[UserSequence],
    num_users: int,
    num_items: int,
    user_ratio: float = 0.9,
    item_ratio: float = 0.8,
) -> MultiRelationGraph:
    """Run all five builders over training prefixes (callers must not pass
    validation/test targets in)."""
    interactional = build_interaction_edges(sequences)
    transitional = build_transitional_edges(sequences)
    partition = popularity_partition(sequences, num_users, num_items, user_ratio, item_ratio)
    incompatible = build_incompatible_edges(transitional, partition, num_items)
    similar = build_similar_user_edges(interactional, num_users, num_items)
    dissimilar = build_dissimilar_user_edges(similar, num_users)
    return MultiRelationGraph(
        num_users=num_users,
        num_items=num_items,
        interactional=interactional,
        transitional=transitional,
        incompatible=incompatible,
        similar_user=similar,
        dissimilar_user=dissimilar,
        partition=partition,
    )


def _edge_file(out_dir: str, kind: str) -> str:
    return os.path.join(out_dir, f"{kind}.tsv")


def save_graph(graph: MultiRelationGraph, out_dir: str) -> dict:
    """Persist one sorted text edge file per relation plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest: dict = {
        "num_users": graph.num_users,
        "num_items": graph.num_items,
        "item_ratio": graph.partition.item_ratio,
        "user_ratio": graph.partition.user_ratio,
        "popular_items": sorted(graph.partition.popular_items),
        "popular_users": sorted(graph.partition.popular_users),
        "edge_counts": {},
    }
    for kind in RELATION_KINDS:
        rel = graph.relation(kind).sorted()
        with open(_edge_file(out_dir, kind), "w", encoding="utf-8") as fh:
            fh.write(f"#{kind} {graph.num_users} {graph.num_items}\n")
            for s, d, w in zip(rel.src, rel.dst, rel.weight):
                fh.write(f"{s}\t{d}\t{w:.9g}\n")
        manifest["edge_counts"][kind] = len(rel)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _validate_edges(rel: RelationEdgeList, num_users: int, num_items: int) -> None:
    if len(rel) == 0:
        return
    if np.any(rel.weight <= 0):
        raise GraphFormatError(f"{rel.kind}: non-positive weight")
    src_max = num_users if rel.kind in ("interactional", "similar_user", "dissimilar_user") else num_items
    dst_max = num_users if rel.kind in ("similar_user", "dissimilar_user") else num_items
    for arr, bound, name in ((rel.src, src_max, "src"), (rel.dst, dst_max, "dst")):
        if np.any(arr < 1) or np.any(arr > bound):
            raise GraphFormatError(f"{rel.kind}: {name} index out of range [1, {bound}]")
    if rel.kind in _UNDIRECTED and np.any(rel.src >= rel.dst):
        raise GraphFormatError(f"{rel.kind}: undirected edges must satisfy src < dst")
    if rel.kind == "transitional" and np.any(rel.src == rel.dst):
        raise GraphFormatError("transitional: self-loop")
    pairs = set(zip(rel.src.tolist(), rel.dst.tolist()))
    if len(pairs) != len(rel):
        raise GraphFormatError(f"{rel.kind}: duplicate (src, dst) pair")


def load_graph(out_dir: str) -> MultiRelationGraph:
    """Read persisted edge files back, validating invariants."""
    manifest_path = os.path.join(out_dir, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise GraphFormatError(f"cannot read manifest {manifest_path}: {e}") from e
    num_users, num_items = int(manifest["num_users"]), int(manifest["num_items"])
    relations = {}
    for kind in RELATION_KINDS:
        path = _edge_file(out_dir, kind)
        src, dst, weight = [], [], []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            expected = f"#{kind} {num_users} {num_items}"
            if header != expected:
                raise GraphFormatError(f"{path}: bad header {header!r}, expected {expected!r}")
            for line in fh:
                parts = line.split("\t")
                if len(parts) != 3:
                    raise GraphFormatError(f"{path}: malformed line {line!r}")
                src.append(int(parts[0]))
                dst.append(int(parts[1]))
                weight.append(float(parts[2]))
        rel = RelationEdgeList(kind, np.array(src, dtype=np.int64),
                               np.array(dst, dtype=np.int64), np.array(weight))
        _validate_edges(rel, num_users, num_items)
        relations[kind] = rel
    partition = PopularityPartition(
        popular_items=frozenset(manifest["popular_items"]),
        popular_users=frozenset(manifest["popular_users"]),
        item_ratio=float(manifest["item_ratio"]),
        user_ratio=float(manifest["user_ratio"]),
    )
    return MultiRelationGraph(num_users=num_users, num_items=num_items,
                              partition=partition, **relations)
