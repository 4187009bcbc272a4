"""kNN cluster proposals, cosine-similarity token fusion and final cluster assembly."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .qsim import ContractError


@dataclass
class FeatureSet:
    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ContractError(f"features must be a non-empty (N, D) matrix, got {self.features.shape}")
        if np.any(np.linalg.norm(self.features, axis=1) == 0):
            raise ContractError("every feature row must have nonzero norm")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ContractError("labels must have one entry per feature row")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ClusterInstance:
    center: int
    members: np.ndarray
    sims: np.ndarray
    mask: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return len(self.members)


def cosine_matrix(x: np.ndarray) -> np.ndarray:
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    return np.clip(u @ u.T, -1.0, 1.0)


def knn_clusters(fs: FeatureSet, k: int) -> list:
    """Exact kNN by cosine similarity; the center comes first, ties go to the lower index."""
    if not 1 <= k <= fs.n:
        raise ContractError(f"k must be in [1, N={fs.n}], got {k}")
    sim = cosine_matrix(fs.features)
    idx = np.arange(fs.n)
    out = []
    for i in range(fs.n):
        row = sim[i].copy()
        row[i] = np.inf
        # lexsort: last key is primary
        order = np.lexsort((idx, -row))[:k]
        sims = sim[i, order].copy()
        sims[0] = 1.0
        mask = None
        if fs.labels is not None:
            mask = (fs.labels[order] == fs.labels[i]).astype(np.int64)
        out.append(ClusterInstance(i, order.astype(np.int64), sims, mask))
    return out


def knn_clusters_bruteforce(fs: FeatureSet, k: int) -> list:
    """Reference implementation: pairwise cosine via plain loops, then a stable sort."""
    x = fs.features
    n = fs.n
    norms = [float(np.sqrt(sum(v * v for v in x[i]))) for i in range(n)]
    out = []
    for i in range(n):
        scored = []
        for j in range(n):
            s = float(np.dot(x[i], x[j])) / (norms[i] * norms[j])
            scored.append((0 if j == i else 1, -min(max(s, -1.0), 1.0), j))
        scored.sort()
        members = [j for _, _, j in scored[:k]]
        out.append(members)
    return out


def similarity_encoding(c: ClusterInstance, mode: str = "per-position") -> np.ndarray:
    """(k, k) matrix of repeated similarity vectors ("shared") or the (k, 1) column ("per-position")."""
    sims = np.asarray(c.sims, dtype=np.float64)
    if mode == "shared":
        return np.tile(sims, (len(sims), 1))
    if mode == "per-position":
        return sims[:, None].copy()
    raise ContractError(f"unknown fusion mode {mode!r}")


def gather(clusters: Sequence[ClusterInstance], features: np.ndarray):
    """Stack member features (B, k, D), similarities (B, k) and masks (B, k) if present."""
    members = np.stack([c.members for c in clusters])
    sims = np.stack([c.sims for c in clusters]).astype(np.float64)
    masks = None
    if all(c.mask is not None for c in clusters):
        masks = np.stack([c.mask for c in clusters]).astype(np.float64)
    return np.asarray(features, dtype=np.float64)[members], sims, masks


def fuse_batch(member_feats, sims, w_e, mode: str):
    member_feats = np.asarray(member_feats, dtype=np.float64)
    b, k, d = member_feats.shape
    if np.shape(w_e) != (k, d):
        raise ContractError(f"W_e must be ({k}, {d}), got {np.shape(w_e)}")
    if mode == "per-position":
        return member_feats + sims[:, :, None] * w_e[None]
    if mode == "shared":
        return member_feats + (sims @ w_e)[:, None, :]
    raise ContractError(f"unknown fusion mode {mode!r}")


def fuse_batch_vjp(g, sims, mode: str):
    """Gradient w.r.t. W_e of ``sum(g * fuse_batch(...))``."""
    if mode == "per-position":
        return np.einsum("bk,bkd->kd", sims, g)
    return np.einsum("bk,bd->kd", sims, g.sum(axis=1))


def fuse_tokens(c: ClusterInstance, features: np.ndarray, w_e, mode: str = "per-position") -> np.ndarray:
    feats, sims, _ = gather([c], features)
    return fuse_batch(feats, sims, np.asarray(w_e, dtype=np.float64), mode)[0]


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def labels(self) -> np.ndarray:
        """Component ids numbered by first appearance in index order."""
        ids = {}
        out = np.empty(len(self.parent), dtype=np.int64)
        for i in range(len(self.parent)):
            out[i] = ids.setdefault(self.find(i), len(ids))
        return out


def prune_and_link(clusters: Sequence[ClusterInstance], predictions, tau: float = 0.5,
                   n_samples: Optional[int] = None) -> np.ndarray:
    """Keep members scoring >= tau, link each to its center, return component labels."""
    if not 0 < tau < 1:
        raise ContractError(f"tau must be in (0, 1), got {tau}")
    if len(predictions) != len(clusters):
        raise ContractError("need one prediction vector per cluster")
    n = n_samples if n_samples is not None else len(clusters)
    uf = UnionFind(n)
    for c, y in zip(clusters, predictions):
        y = np.asarray(y)
        if y.shape != (c.k,):
            raise ContractError(f"prediction for center {c.center} has shape {y.shape}, expected ({c.k},)")
        for h in range(1, c.k):
            if y[h] >= tau:
                uf.union(int(c.center), int(c.members[h]))
    return uf.labels()
