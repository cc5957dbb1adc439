"""Dandelion geometry in the common subspace.

A dandelion is the per-category arrangement of projected features on the
unit hypersphere: one centroid per category plus the category's maximum
angular deviation (its pappus radius). This module covers fitting, target
membership assignment, angular separation, the centroid graph, and the
separability / compactness diagnostics. Category labels are 1-based
(1..K, with K+1 reserved for "unknown") throughout.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import EPS_NORM, Tensor
from .errors import DegenerateVectorError, EmptyCategoryError


@dataclass
class Dandelion:
    centroids: np.ndarray   # (K, d_c) per-category means, not re-normalized
    max_dev: np.ndarray     # (K,) max of 1 - cos(member, centroid), in [0, 2]
    counts: np.ndarray      # (K,) member counts

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass
class Membership:
    assignments: np.ndarray  # (n,) labels in 1..K+1; K+1 means unknown

    def unknown_fraction(self, k: int) -> float:
        return float(np.mean(self.assignments == k + 1)) if self.assignments.size else 0.0


@dataclass
class DandelionGraph:
    vertices: np.ndarray  # (K+1, d_c): K centroids then the origin
    weights: np.ndarray   # (K+1, K+1) squared Euclidean distances


def _cosine_to_centroids(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, K) cosine matrix; assumes nonzero rows on both sides."""
    f = features / np.linalg.norm(features, axis=1, keepdims=True)
    c = centroids / np.linalg.norm(centroids, axis=1, keepdims=True)
    return np.clip(f @ c.T, -1.0, 1.0)


def fit_dandelion(features: np.ndarray, labels: np.ndarray, k: int) -> Dandelion:
    """Per-category means and maximum deviations of projected features.

    labels take values in 1..k and every category must be represented.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    centroids = np.zeros((k, features.shape[1]))
    max_dev = np.zeros(k)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(1, k + 1):
        members = features[labels == i]
        if members.shape[0] == 0:
            raise EmptyCategoryError(f"category {i} has no instances")
        mu = members.mean(axis=0)
        if np.linalg.norm(mu) <= EPS_NORM:
            raise DegenerateVectorError(f"category {i} centroid collapsed to zero")
        cosines = _cosine_to_centroids(members, mu.reshape(1, -1)).reshape(-1)
        centroids[i - 1] = mu
        max_dev[i - 1] = float(np.max(1.0 - cosines))
        counts[i - 1] = members.shape[0]
    return Dandelion(centroids=centroids, max_dev=max_dev, counts=counts)


def assign_membership(target_features: np.ndarray, dandelion: Dandelion) -> Membership:
    """Nearest-centroid membership within the pappus radius, else unknown.

    Each instance goes to argmin_i (1 - cos(x, mu_i)) when that deviation is
    within the winning category's max_dev, otherwise to K+1. Ties break to
    the lowest category index (argmin picks the first minimum).
    """
    k = dandelion.k
    target_features = np.asarray(target_features, dtype=np.float64)
    if target_features.shape[0] == 0:
        return Membership(assignments=np.zeros(0, dtype=np.int64))
    dev = 1.0 - _cosine_to_centroids(target_features, dandelion.centroids)
    best = np.argmin(dev, axis=1)
    within = dev[np.arange(dev.shape[0]), best] <= dandelion.max_dev[best]
    assignments = np.where(within, best + 1, k + 1).astype(np.int64)
    return Membership(assignments=assignments)


def separation_loss(centroids) -> Tensor:
    """Mean upper-triangle pairwise cosine of the centroids.

    (2 / (K(K-1))) * sum_{i<j} cos(mu_i, mu_j); differentiable when given a
    taped Tensor. Serves both the source and the target dandelion.
    """
    t = centroids if isinstance(centroids, Tensor) else Tensor(np.asarray(centroids, dtype=np.float64))
    k = t.data.shape[0]
    if k < 2:
        raise ValueError(f"separation needs at least 2 centroids, got {k}")
    unit = ad.l2_normalize_rows(t)
    cos_matrix = ad.matmul(unit, ad.transpose(unit))
    upper = np.triu(np.ones((k, k)), k=1)
    total = ad.tsum(ad.mul(cos_matrix, Tensor(upper)))
    return ad.clamp(ad.mul(total, Tensor(2.0 / (k * (k - 1)))), -1.0, 1.0)


def build_graph(centroids: np.ndarray) -> DandelionGraph:
    """Fully connected graph over the K centroids plus the origin (last).

    Edge weights are squared Euclidean distances between vertex coordinates.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[0] < 1:
        raise ValueError("need at least one centroid")
    vertices = np.vstack([centroids, np.zeros((1, centroids.shape[1]))])
    sq = (vertices * vertices).sum(axis=1)
    weights = sq[:, None] + sq[None, :] - 2.0 * vertices @ vertices.T
    weights = np.maximum(weights, 0.0)
    np.fill_diagonal(weights, 0.0)
    weights = 0.5 * (weights + weights.T)
    return DandelionGraph(vertices=vertices, weights=weights)


def separability_sp(
    source_features: np.ndarray,
    target_features: np.ndarray,
    source_labels: np.ndarray,
    memberships: Membership,
    k: int,
) -> float:
    """Mean pairwise cosine between combined source+pseudo-target centroids.

    Category i pools source instances labeled i with target instances whose
    membership is i. Categories with no combined members are skipped with a
    warning; the mean runs over the pairs actually formed. Smaller is better.
    """
    if k < 2:
        raise ValueError("separability needs K >= 2")
    source_features = np.asarray(source_features, dtype=np.float64)
    target_features = np.asarray(target_features, dtype=np.float64)
    source_labels = np.asarray(source_labels, dtype=np.int64).reshape(-1)
    assigned = memberships.assignments
    combined = []
    for i in range(1, k + 1):
        rows = [source_features[source_labels == i]]
        if target_features.shape[0]:
            rows.append(target_features[assigned == i])
        members = np.vstack(rows)
        if members.shape[0] == 0:
            warnings.warn(f"category {i} has no combined members; skipped in SP")
            continue
        combined.append(members.mean(axis=0))
    if len(combined) < 2:
        raise ValueError("fewer than 2 combined categories; SP undefined")
    c = np.vstack(combined)
    cos_matrix = _cosine_to_centroids(c, c)
    iu = np.triu_indices(c.shape[0], k=1)
    return float(np.mean(cos_matrix[iu]))


def average_compactness(features: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Mean of the per-category maximum deviations; smaller is better."""
    dd = fit_dandelion(features, labels, k)
    return float(np.mean(dd.max_dev))
