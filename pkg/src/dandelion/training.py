"""End-to-end optimization loop with epoch-level dandelion refresh.

Each epoch: project everything, fit the source dandelion, freeze the target
memberships and generated unknowns for the epoch, rebuild every loss with
in-graph centroids, and take one Adam step per batch on the weighted
objective (gradient reversal handles the adversarial term). Diagnostics
(SP, average compactness, unknown fraction, discriminator accuracy) are
recorded from the pre-update state of each epoch.

History CSV column order (wall times live in run metadata, not here):
epoch, sup_s, sup_u, ss, st, ea, cp, sc, total, sp, avg_dmax,
unknown_fraction, disc_accuracy, n_unknown
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, Tensor, backward
from .data import OpenSetTask
from .embedding import DEFAULT_EVAL_POINTS, FeatherParams, feather_embed_vertices
from .errors import CheckpointError, RejectionBudgetError, TrainingAborted
from .geometry import (
    Membership,
    assign_membership,
    average_compactness,
    fit_dandelion,
    separability_sp,
    separation_loss,
)
from .losses import (
    LossReport,
    discriminating_loss,
    embedding_alignment_loss,
    generate_unknown_instances,
    instance_discriminating_loss,
    mean_selector,
    objective_tensor,
    sample_child_indices,
    semantic_correction_loss,
    supervision_loss,
)
from .model import Dims, Model, classify, discriminate, init_model, project

CHECKPOINT_VERSION = 1

HISTORY_COLUMNS = (
    "epoch", "sup_s", "sup_u", "ss", "st", "ea", "cp", "sc", "total",
    "sp", "avg_dmax", "unknown_fraction", "disc_accuracy", "n_unknown",
)


@dataclass
class HyperParams:
    alpha_s: float = 0.8
    alpha_u: float = 0.1
    beta_s: float = 0.75
    beta_t: float = 0.75
    delta: float = 0.001
    theta: float = 1.0
    gamma: float = 1.0
    n_children: int = 10
    n_unknown: int = 100
    d_c: int = 64
    eval_points: tuple[float, ...] = DEFAULT_EVAL_POINTS
    scales: int = 2
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 0          # 0 = full batch
    grl_lambda: float = 1.0
    dsdm_mode: str = "child"     # "child" | "instance" (ablation substitute)
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha_s", "alpha_u", "beta_s", "beta_t", "delta", "theta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.epochs < 1 or self.lr <= 0:
            raise ValueError("epochs >= 1 and lr > 0 required")
        if self.n_children < 1 or self.n_unknown < 0 or self.d_c < 1:
            raise ValueError("n_children >= 1, n_unknown >= 0, d_c >= 1 required")
        if self.batch_size < 0:
            raise ValueError("batch_size must be 0 (full) or positive")
        if self.grl_lambda < 0:
            raise ValueError("grl_lambda must be >= 0")
        if self.dsdm_mode not in ("child", "instance"):
            raise ValueError("dsdm_mode must be child|instance")
        self.eval_points = tuple(float(p) for p in self.eval_points)

    def feather(self) -> FeatherParams:
        return FeatherParams(eval_points=self.eval_points, scales=self.scales)

    def d_g(self) -> int:
        return self.d_c if self.dsdm_mode == "instance" else self.feather().embedding_dim(self.d_c)

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["eval_points"] = list(self.eval_points)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "HyperParams":
        known = set(cls.__dataclass_fields__)
        extra = set(raw) - known
        if extra:
            raise ValueError(f"unknown hyperparameter fields: {sorted(extra)}")
        cleaned = dict(raw)
        if "eval_points" in cleaned:
            cleaned["eval_points"] = tuple(cleaned["eval_points"])
        return cls(**cleaned)


@dataclass
class EpochDiagnostics:
    sp: float
    avg_dmax: float
    unknown_fraction: float
    disc_accuracy: float
    n_unknown: int
    seconds: float
    memberships: np.ndarray


@dataclass
class EpochRecord:
    epoch: int
    report: LossReport
    diagnostics: EpochDiagnostics


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def csv_rows(self) -> list[list[str]]:
        rows = []
        for rec in self.records:
            d = rec.diagnostics
            rows.append([
                str(rec.epoch),
                *(repr(getattr(rec.report, f)) for f in LossReport.FIELDS),
                repr(d.sp), repr(d.avg_dmax), repr(d.unknown_fraction),
                repr(d.disc_accuracy), str(d.n_unknown),
            ])
        return rows

    def write_csv(self, path) -> None:
        lines = [",".join(HISTORY_COLUMNS)]
        lines += [",".join(row) for row in self.csv_rows()]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


class Adam:
    """Adaptive-moment optimizer; state keyed by parameter identity."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, params: list[Tensor], grads: dict[Tensor, np.ndarray]) -> None:
        self.t += 1
        for p in params:
            g = grads[p]
            key = id(p)
            m = self._m.setdefault(key, np.zeros_like(p.data))
            v = self._v.setdefault(key, np.zeros_like(p.data))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainState:
    tape: GradientTape
    adam: Adam
    rng: np.random.Generator


def _check_unit_rows(task: OpenSetTask) -> None:
    for name, dom in (("source", task.source), ("target", task.target)):
        norms = np.linalg.norm(dom.features, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError(f"{name} rows are not unit-norm; preprocess the task first")


def _sample_children_tolerant(source_labels, memberships, k, n_children, seed) -> list[np.ndarray]:
    """Like sample_child_indices but skips categories with empty fused pools
    (minibatches may miss a category); each child keeps >= 1 vertex."""
    rng = np.random.default_rng(seed)
    source_labels = np.asarray(source_labels, dtype=np.int64).reshape(-1)
    memberships = np.asarray(memberships, dtype=np.int64).reshape(-1)
    n_s = source_labels.shape[0]
    pools = []
    for i in range(1, k + 1):
        src = np.nonzero(source_labels == i)[0]
        tgt = np.nonzero(memberships == i)[0] + n_s
        pool = np.concatenate([src, tgt])
        if pool.size:
            pools.append(pool)
    return [
        np.array([pool[rng.integers(pool.size)] for pool in pools])
        for _ in range(n_children)
    ]


def _batch_losses(
    model: Model,
    hp: HyperParams,
    feather: FeatherParams,
    f_s: Tensor,
    f_t: Tensor,
    y_s: np.ndarray,
    memb: np.ndarray,
    x_r: np.ndarray,
    child_indices: list[np.ndarray],
) -> dict[str, Tensor]:
    """Every objective component for one batch, with in-graph centroids.

    Memberships, generated unknowns, and child sample indices are frozen
    inputs; gradients flow through the projections they select. Terms that
    are undefined in a degenerate state (e.g. no assigned target categories
    yet) contribute constant zeros.
    """
    k = model.dims.k
    zero = Tensor(0.0)
    n_s, n_t = f_s.data.shape[0], f_t.data.shape[0]
    origin = Tensor(np.zeros((1, hp.d_c)))

    sel_s, present_s = mean_selector(y_s, k, n_s)
    n_src = int(present_s.sum())
    cent_s = ad.matmul(Tensor(sel_s[present_s]), f_s)
    sel_t, present_t = mean_selector(memb, k, n_t)
    n_tgt = int(present_t.sum())
    cent_t = ad.matmul(Tensor(sel_t[present_t]), f_t) if n_tgt else None

    ss = separation_loss(cent_s) if n_src >= 2 else zero
    st = separation_loss(cent_t) if n_tgt >= 2 else zero

    phi_s = feather_embed_vertices(ad.concat([cent_s, origin], axis=0), feather)
    phi_t = None
    if n_tgt >= 1:
        phi_t = feather_embed_vertices(ad.concat([cent_t, origin], axis=0), feather)
    ea = embedding_alignment_loss(phi_s, phi_t) if phi_t is not None else zero

    if hp.dsdm_mode == "instance":
        cp = instance_discriminating_loss(model, f_s, f_t, hp.grl_lambda)
    else:
        fused = ad.concat([f_s, f_t], axis=0)
        phi_children = []
        for idx in child_indices:
            picker = np.zeros((idx.size, n_s + n_t))
            picker[np.arange(idx.size), idx] = 1.0
            vert_c = ad.concat([ad.matmul(Tensor(picker), fused), origin], axis=0)
            phi_children.append(feather_embed_vertices(vert_c, feather))
        cp = discriminating_loss(model, phi_s, phi_t, phi_children, "bce", hp.grl_lambda)

    sup_s, sup_u = supervision_loss(model, f_s, y_s, x_r if len(x_r) else None)

    if n_tgt >= 1:
        probs_s = classify(model, f_s)
        probs_t = classify(model, f_t)
        src_pappi = ad.matmul(Tensor(sel_s), probs_s)
        tgt_pappi = ad.matmul(Tensor(sel_t), probs_t)
        sc = semantic_correction_loss(src_pappi, tgt_pappi, k,
                                      src_present=present_s, tgt_present=present_t)
    else:
        sc = zero
    return {"sup_s": sup_s, "sup_u": sup_u, "ss": ss, "st": st, "ea": ea, "cp": cp, "sc": sc}


def _real_vs_child_accuracy(model: Model, hp: HyperParams, feather: FeatherParams,
                            f_s: np.ndarray, f_t: np.ndarray,
                            y_s: np.ndarray, memb: np.ndarray, k: int,
                            child_indices: list[np.ndarray]) -> float:
    """Discriminator accuracy at telling real dandelions from children."""
    if hp.dsdm_mode == "instance":
        d_s = discriminate(model, Tensor(f_s)).data.reshape(-1)
        d_t = discriminate(model, Tensor(f_t)).data.reshape(-1)
        hits = int((d_s > 0.5).sum()) + int((d_t <= 0.5).sum())
        return hits / (d_s.size + d_t.size)

    d_c = f_s.shape[1]

    def phi_of(vertices: np.ndarray) -> np.ndarray:
        return feather_embed_vertices(Tensor(vertices), feather).data

    def centroids_of(features: np.ndarray, labels: np.ndarray) -> np.ndarray | None:
        sel, present = mean_selector(labels, k, features.shape[0])
        return (sel @ features)[present] if present.any() else None

    reals = [phi_of(np.vstack([centroids_of(f_s, y_s), np.zeros((1, d_c))]))]
    cent_t = centroids_of(f_t, memb)
    if cent_t is not None:
        reals.append(phi_of(np.vstack([cent_t, np.zeros((1, d_c))])))
    fused = np.vstack([f_s, f_t])
    children = [phi_of(np.vstack([fused[idx], np.zeros((1, d_c))])) for idx in child_indices]
    hits = sum(int(discriminate(model, Tensor(phi)).data[0, 0] > 0.5) for phi in reals)
    hits += sum(int(discriminate(model, Tensor(phi)).data[0, 0] <= 0.5) for phi in children)
    return hits / (len(reals) + len(children))


def train_epoch(
    model: Model,
    task: OpenSetTask,
    hp: HyperParams,
    epoch_index: int,
    state: TrainState,
) -> tuple[Model, LossReport, EpochDiagnostics]:
    """One epoch of the full sequence; memberships and unknowns are frozen.

    When the unknown-generation rejection budget is exhausted (pappuses
    still overlap the gaps, typical of early epochs) the epoch proceeds
    without generated unknowns instead of aborting.
    """
    t0 = time.perf_counter()
    k = task.k
    feather = hp.feather()
    unknown_seed = int(state.rng.integers(2 ** 63))
    child_seed = int(state.rng.integers(2 ** 63))
    shuffle_seed = int(state.rng.integers(2 ** 63))

    x_s, x_t = task.source.features, task.target.features
    y_s = task.source_labels

    # (1)-(4): project everything, fit the source dandelion, freeze
    # memberships and generated unknowns for the epoch.
    f_s_full = project(model, x_s, "source")
    f_t_full = project(model, x_t, "target")
    dd = fit_dandelion(f_s_full.data, y_s, k)
    membership = assign_membership(f_t_full.data, dd)
    memb = membership.assignments
    x_r = np.zeros((0, hp.d_c))
    if hp.n_unknown > 0:
        try:
            x_r = generate_unknown_instances(dd, hp.n_unknown, unknown_seed)
        except RejectionBudgetError:
            pass
    epoch_children = (
        sample_child_indices(y_s, memb, k, hp.n_children, child_seed)
        if hp.dsdm_mode == "child" else []
    )

    # Pre-update diagnostics.
    assigned = memb <= k
    combined_feats = np.vstack([f_s_full.data, f_t_full.data[assigned]])
    combined_labels = np.concatenate([y_s, memb[assigned]])
    diag = EpochDiagnostics(
        sp=separability_sp(f_s_full.data, f_t_full.data, y_s, membership, k),
        avg_dmax=average_compactness(combined_feats, combined_labels, k),
        unknown_fraction=membership.unknown_fraction(k),
        disc_accuracy=_real_vs_child_accuracy(
            model, hp, feather, f_s_full.data, f_t_full.data, y_s, memb, k, epoch_children),
        n_unknown=x_r.shape[0],
        seconds=0.0,
        memberships=memb.copy(),
    )

    # (5)-(6): per batch, rebuild losses with in-graph centroids and step.
    if hp.batch_size == 0:
        batches = [(np.arange(x_s.shape[0]), np.arange(x_t.shape[0]))]
    else:
        rng = np.random.default_rng(shuffle_seed)
        n_batches = max(1, int(np.ceil(x_s.shape[0] / hp.batch_size)))
        batches = [
            (np.sort(bs), np.sort(bt))
            for bs, bt in zip(
                np.array_split(rng.permutation(x_s.shape[0]), n_batches),
                np.array_split(rng.permutation(x_t.shape[0]), n_batches),
            )
        ]

    params = [p for _, p in model.parameters()]
    reports = []
    for b, (idx_s, idx_t) in enumerate(batches):
        f_s = project(model, x_s[idx_s], "source")
        f_t = project(model, x_t[idx_t], "target")
        if hp.dsdm_mode != "child":
            batch_children: list[np.ndarray] = []
        elif hp.batch_size == 0:
            batch_children = epoch_children
        else:
            batch_children = _sample_children_tolerant(
                y_s[idx_s], memb[idx_t], k, hp.n_children, [child_seed % (2 ** 32), b])
        components = _batch_losses(
            model, hp, feather, f_s, f_t, y_s[idx_s], memb[idx_t], x_r, batch_children)
        try:
            total = objective_tensor(components, hp)
        except FloatingPointError as exc:
            raise TrainingAborted(epoch_index, str(exc)) from None
        grads = backward(state.tape, total)
        state.adam.step(params, grads)
        state.tape.clear()
        reports.append(LossReport(
            sup_s=components["sup_s"].item(), sup_u=components["sup_u"].item(),
            ss=components["ss"].item(), st=components["st"].item(),
            ea=components["ea"].item(), cp=components["cp"].item(),
            sc=components["sc"].item(), total=total.item(),
        ))
    report = _mean_report(reports)
    diag.seconds = time.perf_counter() - t0
    return model, report, diag


def _mean_report(reports: list[LossReport]) -> LossReport:
    if len(reports) == 1:
        return reports[0]
    values = {f: float(np.mean([getattr(r, f) for r in reports])) for f in LossReport.FIELDS}
    return LossReport(**values)


def train(task: OpenSetTask, hp: HyperParams) -> tuple[Model, TrainHistory]:
    """Run hp.epochs epochs of the full objective; deterministic per seed."""
    _check_unit_rows(task)
    rng = np.random.default_rng(hp.seed)
    model_seed = int(rng.integers(2 ** 63))
    dims = Dims(d_s=task.d_s, d_t=task.d_t, d_c=hp.d_c, d_g=hp.d_g(), k=task.k)
    model = init_model(dims, model_seed)
    tape = GradientTape()
    model.attach(tape)
    state = TrainState(tape=tape, adam=Adam(lr=hp.lr), rng=rng)
    history = TrainHistory()
    try:
        for epoch in range(hp.epochs):
            model, report, diag = train_epoch(model, task, hp, epoch, state)
            history.records.append(EpochRecord(epoch=epoch, report=report, diagnostics=diag))
    finally:
        tape.release()
    return model, history


# ---------------------------------------------------------------- checkpoint

def save_checkpoint(model: Model, hp: HyperParams, path) -> None:
    """Versioned JSON checkpoint; floats round-trip bit-exactly via repr."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "dims": dict(model.dims.__dict__),
        "hyperparams": hp.as_dict(),
        "weights": {name: p.data.tolist() for name, p in model.parameters()},
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Model, HyperParams]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: parse error at byte offset {exc.pos}: {exc.msg}") from None
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path}: missing format-version field")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload['version']} "
            f"(supported: {CHECKPOINT_VERSION})"
        )
    try:
        dims = Dims(**payload["dims"])
        hp = HyperParams.from_dict(payload["hyperparams"])
        weights = payload["weights"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from None
    expected = {
        "e_s_w": (dims.d_s, dims.d_c), "e_s_b": (1, dims.d_c),
        "e_t_w": (dims.d_t, dims.d_c), "e_t_b": (1, dims.d_c),
        "c_w": (dims.d_c, dims.k + 1), "c_b": (1, dims.k + 1),
        "d_w": (dims.d_g, 1), "d_b": (1, 1),
    }
    tensors = {}
    for name, shape in expected.items():
        if name not in weights:
            raise CheckpointError(f"{path}: missing weight block {name}")
        arr = np.array(weights[name], dtype=np.float64)
        if arr.shape != shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {shape}")
        tensors[name] = Tensor(arr)
    return Model(dims=dims, **tensors), hp
