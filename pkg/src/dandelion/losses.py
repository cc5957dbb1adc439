"""Every term of the training objective.

Losses are built from autodiff tensors so one backward pass covers the whole
objective; the adversarial compactness term routes feature-side gradients
through grad_reversal so a single minimization step plays the minimax game.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import EPS_LOG, Tensor
from .errors import EmptyCategoryError, RejectionBudgetError
from .geometry import Dandelion, DandelionGraph, build_graph
from .model import Model, discriminate


@dataclass
class LossReport:
    sup_s: float
    sup_u: float
    ss: float
    st: float
    ea: float
    cp: float
    sc: float
    total: float

    FIELDS = ("sup_s", "sup_u", "ss", "st", "ea", "cp", "sc", "total")

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.FIELDS}


@dataclass
class SemanticDandelion:
    pappi: np.ndarray    # (K, K+1) mean probability rows; zero rows where absent
    present: np.ndarray  # (K,) bool mask


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def mean_selector(labels: np.ndarray, k: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(K, n) matrix averaging rows per 1-based category, plus presence mask.

    Multiplying it against a feature matrix yields per-category centroids in
    the autodiff graph, so gradients flow through the means. Absent
    categories give zero rows and a False mask entry.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    sel = np.zeros((k, n))
    present = np.zeros(k, dtype=bool)
    for i in range(1, k + 1):
        members = np.nonzero(labels == i)[0]
        if members.size:
            sel[i - 1, members] = 1.0 / members.size
            present[i - 1] = True
    return sel, present


# --------------------------------------------------------------- DEAM / DSDM

def embedding_alignment_loss(phi_s, phi_t) -> Tensor:
    """Squared Euclidean distance between two dandelion embeddings."""
    a, b = _lift(phi_s), _lift(phi_t)
    if a.data.size != b.data.size:
        raise ValueError(f"embedding lengths differ: {a.data.size} vs {b.data.size}")
    diff = ad.sub(ad.reshape(a, 1, a.data.size), ad.reshape(b, 1, b.data.size))
    return ad.tsum(ad.mul(diff, diff))


def sample_child_indices(
    source_labels: np.ndarray,
    memberships: np.ndarray,
    k: int,
    n_children: int,
    seed,
) -> list[np.ndarray]:
    """Fused-pool row indices, one per category, for each child dandelion.

    The fused pool is the source rows followed by the target rows; category i
    pools source instances labeled i with target instances whose membership
    is i (unknowns excluded). Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    source_labels = np.asarray(source_labels, dtype=np.int64).reshape(-1)
    memberships = np.asarray(memberships, dtype=np.int64).reshape(-1)
    n_s = source_labels.shape[0]
    pools = []
    for i in range(1, k + 1):
        src = np.nonzero(source_labels == i)[0]
        tgt = np.nonzero(memberships == i)[0] + n_s
        pool = np.concatenate([src, tgt])
        if pool.size == 0:
            raise EmptyCategoryError(f"fused category {i} has no members")
        pools.append(pool)
    children = []
    for _ in range(n_children):
        children.append(np.array([pool[rng.integers(pool.size)] for pool in pools]))
    return children


def sample_child_dandelions(
    source_features: np.ndarray,
    source_labels: np.ndarray,
    target_features: np.ndarray,
    memberships: np.ndarray,
    n_children: int,
    seed,
) -> list[DandelionGraph]:
    """Child dandelion graphs, one random fused instance per category."""
    k = int(np.max(np.asarray(source_labels)))
    fused = np.vstack([source_features, target_features]) if len(target_features) else np.asarray(source_features)
    indices = sample_child_indices(source_labels, memberships, k, n_children, seed)
    return [build_graph(fused[idx]) for idx in indices]


def discriminating_loss(
    model: Model,
    phi_s,
    phi_t,
    phi_children,
    mode: str = "bce",
    grl_lambda: float = 1.0,
) -> Tensor:
    """Adversarial loss over real (source/target) vs child embeddings.

    bce: -[(mean over real) log D + (mean over children) log(1 - D)], with
    every embedding passing grad_reversal, so minimizing the one scalar
    descends the discriminator while feature parameters ascend. "paper" is
    the literal (1 - log D) variant, kept for reporting and comparison.
    """
    if mode not in ("bce", "paper"):
        raise ValueError(f"mode must be bce|paper, got {mode!r}")
    children = [_lift(c) for c in phi_children]
    if not children:
        raise ValueError("need at least one child embedding")
    real = [_lift(p) for p in (phi_s, phi_t) if p is not None]
    if not real:
        raise ValueError("need at least one real embedding")

    def d_of(phi: Tensor) -> Tensor:
        flat = ad.reshape(phi, 1, phi.data.size)
        out = discriminate(model, ad.grad_reversal(flat, grl_lambda))
        if not (0.0 <= float(out.data[0, 0]) <= 1.0):
            raise ValueError("discriminator output outside (0, 1)")
        return out

    d_real = [d_of(p) for p in real]
    d_children = [d_of(c) for c in children]
    if mode == "bce":
        real_term = ad.tmean(ad.concat([ad.log(ad.clamp_min(d, EPS_LOG)) for d in d_real], axis=0))
        child_term = ad.tmean(ad.concat(
            [ad.log(ad.clamp_min(ad.sub(1.0, d), EPS_LOG)) for d in d_children], axis=0))
        return ad.neg(ad.add(real_term, child_term))
    real_term = ad.tmean(ad.concat([ad.log(ad.clamp_min(d, EPS_LOG)) for d in d_real], axis=0))
    child_term = ad.tmean(ad.concat(
        [ad.sub(1.0, ad.log(ad.clamp_min(d, EPS_LOG))) for d in d_children], axis=0))
    return ad.add(real_term, child_term)


def instance_discriminating_loss(model: Model, f_s, f_t, grl_lambda: float = 1.0) -> Tensor:
    """Plain instance-level domain-adversarial loss (ablation substitute).

    Discriminator sees projected instances; source rows carry label 1 and
    target rows label 0, with grad_reversal on the feature side.
    """
    d_s = discriminate(model, ad.grad_reversal(_lift(f_s), grl_lambda))
    d_t = discriminate(model, ad.grad_reversal(_lift(f_t), grl_lambda))
    term_s = ad.tmean(ad.log(ad.clamp_min(d_s, EPS_LOG)))
    term_t = ad.tmean(ad.log(ad.clamp_min(ad.sub(1.0, d_t), EPS_LOG)))
    return ad.neg(ad.add(term_s, term_t))


# --------------------------------------------------------------------- SDCM

def generate_unknown_instances(dandelion: Dandelion, n_r: int, seed) -> np.ndarray:
    """Unit vectors in the gaps between pappuses, by rejection sampling.

    Candidates are noisy normalized convex combinations of two distinct
    centroids (lambda ~ U[0.4, 0.6], Gaussian sigma 0.01); a candidate is
    accepted only if it lies outside every category's deviation ball. Gives
    up after 100 * n_r attempts.
    """
    k = dandelion.k
    if k < 2:
        raise ValueError("unknown generation needs K >= 2")
    if n_r < 1:
        raise ValueError("n_r must be >= 1")
    rng = np.random.default_rng(seed)
    unit_centroids = dandelion.centroids / np.linalg.norm(dandelion.centroids, axis=1, keepdims=True)
    budget = 100 * n_r
    accepted: list[np.ndarray] = []
    attempts = 0
    while attempts < budget and len(accepted) < n_r:
        chunk = min(n_r, budget - attempts)
        attempts += chunk
        i = rng.integers(0, k, size=chunk)
        j = (i + 1 + rng.integers(0, k - 1, size=chunk)) % k
        lam = rng.uniform(0.4, 0.6, size=(chunk, 1))
        base = lam * dandelion.centroids[i] + (1.0 - lam) * dandelion.centroids[j]
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        noisy = base + rng.normal(0.0, 0.01, size=base.shape)
        noisy /= np.linalg.norm(noisy, axis=1, keepdims=True)
        dev = 1.0 - np.clip(noisy @ unit_centroids.T, -1.0, 1.0)
        outside = np.all(dev > dandelion.max_dev[None, :], axis=1)
        accepted.extend(noisy[outside])
    if len(accepted) < n_r:
        raise RejectionBudgetError(
            f"accepted {len(accepted)}/{n_r} after {attempts} attempts; pappuses "
            "overlap the gaps - use a smaller n_r or generate at a later epoch"
        )
    return np.vstack(accepted[:n_r])


def supervision_loss(model: Model, f_source, source_labels: np.ndarray, f_unknown) -> tuple[Tensor, Tensor]:
    """Mean classifier cross-entropy over source rows and generated unknowns.

    Source labels are 1-based in 1..K; generated instances are class K+1.
    An empty unknown set contributes a constant zero.
    """
    from .model import classify

    k = model.dims.k
    labels = np.asarray(source_labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 1 or labels.max() > k):
        raise IndexError(f"source labels must lie in 1..{k}")
    probs_s = classify(model, f_source)
    sup_s = ad.tmean(ad.cross_entropy_rows(probs_s, labels - 1))
    f_unknown = _lift(f_unknown) if f_unknown is not None else None
    if f_unknown is None or f_unknown.data.shape[0] == 0 or f_unknown.data.size == 0:
        return sup_s, Tensor(0.0)
    probs_u = classify(model, f_unknown)
    unknown_labels = np.full(f_unknown.data.shape[0], k, dtype=np.int64)  # 0-based K+1
    sup_u = ad.tmean(ad.cross_entropy_rows(probs_u, unknown_labels))
    return sup_s, sup_u


def semantic_dandelions(
    probs_source: np.ndarray,
    source_labels: np.ndarray,
    probs_target: np.ndarray,
    memberships: np.ndarray,
    k: int,
) -> tuple[SemanticDandelion, SemanticDandelion]:
    """Mean classifier-probability rows per category for both domains."""
    def mean_rows(probs: np.ndarray, labels: np.ndarray) -> SemanticDandelion:
        probs = np.asarray(probs, dtype=np.float64)
        sel, present = mean_selector(labels, k, probs.shape[0])
        return SemanticDandelion(pappi=sel @ probs, present=present)

    return mean_rows(probs_source, source_labels), mean_rows(probs_target, memberships)


def semantic_correction_loss(dd_src, dd_tgt, k: int,
                             src_present: np.ndarray | None = None,
                             tgt_present: np.ndarray | None = None) -> Tensor:
    """(2 / (K(K+1))) * sum over j >= i of cos(src pappus i, tgt pappus j).

    The diagonal is deliberately included; pairs with an absent pappus are
    skipped. Accepts SemanticDandelion pairs or raw (K, K+1) pappus rows.
    """
    if isinstance(dd_src, SemanticDandelion):
        src_present = dd_src.present
        dd_src = dd_src.pappi
    if isinstance(dd_tgt, SemanticDandelion):
        tgt_present = dd_tgt.present
        dd_tgt = dd_tgt.pappi
    src, tgt = _lift(dd_src), _lift(dd_tgt)
    if src.data.shape[0] != k or tgt.data.shape[0] != k:
        raise ValueError(f"expected {k} pappus rows per side")
    src_present = np.ones(k, dtype=bool) if src_present is None else np.asarray(src_present, dtype=bool)
    tgt_present = np.ones(k, dtype=bool) if tgt_present is None else np.asarray(tgt_present, dtype=bool)
    mask = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            if src_present[i] and tgt_present[j]:
                mask[i, j] = 1.0
    if not mask.any():
        raise EmptyCategoryError("no pappus pair with both sides present")
    # Absent rows would break row normalization (zero norm); replace them
    # with constant uniform rows. Masked out of the sum, they contribute
    # neither value nor gradient.
    def safe_rows(t: Tensor, present: np.ndarray) -> Tensor:
        keep = Tensor(np.where(present, 1.0, 0.0)[:, None])
        fill = Tensor(np.where(present, 0.0, 1.0 / t.data.shape[1])[:, None])
        return ad.add(ad.mul(t, keep), fill)

    cos_matrix = ad.matmul(
        ad.l2_normalize_rows(safe_rows(src, src_present)),
        ad.transpose(ad.l2_normalize_rows(safe_rows(tgt, tgt_present))),
    )
    total = ad.tsum(ad.mul(cos_matrix, Tensor(mask)))
    return ad.mul(total, Tensor(2.0 / (k * (k + 1))))


# ----------------------------------------------------------------- objective

def objective_tensor(components: dict[str, Tensor], hp) -> Tensor:
    """Weighted sum of Eq-style components; errors name any non-finite term."""
    weights = {
        "sup_s": hp.alpha_s, "sup_u": hp.alpha_u,
        "ss": hp.beta_s, "st": hp.beta_t,
        "ea": hp.delta, "sc": hp.theta, "cp": hp.gamma,
    }
    total = Tensor(0.0)
    for name, weight in weights.items():
        term = _lift(components[name])
        if not np.isfinite(term.data).all():
            raise FloatingPointError(f"loss component {name} is non-finite")
        total = ad.add(total, ad.mul(term, float(weight)))
    return total


def total_objective(components: dict, hp) -> LossReport:
    """Assemble the weighted objective into a LossReport (floats)."""
    tensors = {name: _lift(val) for name, val in components.items()}
    total = objective_tensor(tensors, hp)
    return LossReport(
        sup_s=tensors["sup_s"].item(), sup_u=tensors["sup_u"].item(),
        ss=tensors["ss"].item(), st=tensors["st"].item(),
        ea=tensors["ea"].item(), cp=tensors["cp"].item(),
        sc=tensors["sc"].item(), total=total.item(),
    )
