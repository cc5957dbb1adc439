"""Dataset loading, preprocessing, and open-set task construction.

CSV datasets carry a header row, one string `label` column, and feature
columns that are numeric or declared categorical in a sidecar schema file
(JSON mapping column name -> "numeric" | "categorical" | "label").
Categorical columns are one-hot encoded over their sorted distinct values.

Task labels follow the open-set convention: shared categories are numbered
1..K in the order of the `shared` list, and every target-only category is
collapsed to the single unknown label K+1, visible only to evaluation.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvParseError, SchemaError


@dataclass
class Domain:
    features: np.ndarray                  # (n, d) float64
    labels: np.ndarray | None             # (n,) 0-based indices into category_names
    category_names: list[str]
    tag: str                              # "source" | "target"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError("domain features must be a nonempty (n, d) matrix")
        if not np.isfinite(self.features).all():
            raise ValueError("domain features contain non-finite values")
        if self.tag not in ("source", "target"):
            raise ValueError(f"tag must be source|target, got {self.tag!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape[0] != self.features.shape[0]:
                raise ValueError("label count does not match instance count")
            if self.labels.min() < 0 or self.labels.max() >= len(self.category_names):
                raise ValueError("label index outside category_names")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass
class OpenSetTask:
    source: Domain
    target: Domain                        # labels stripped (never training-visible)
    k: int
    k_prime: int
    shared_map: dict[str, int]            # shared category name -> 1-based index
    unknown_label: int
    source_labels: np.ndarray             # (n_s,) 1-based in 1..K
    target_eval_labels: np.ndarray | None  # (n_t,) 1-based in 1..K+1, or None

    @property
    def d_s(self) -> int:
        return self.source.d

    @property
    def d_t(self) -> int:
        return self.target.d


# ------------------------------------------------------------------- loading

def load_schema(path) -> dict[str, str]:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or not raw:
        raise SchemaError(f"{path}: schema must be a nonempty column->type object")
    for col, kind in raw.items():
        if kind not in ("numeric", "categorical", "label"):
            raise SchemaError(f"{path}: column {col!r} has unknown type {kind!r}")
    return raw


def load_csv_domain(path, schema: dict[str, str], tag: str, labels_required: bool = True) -> Domain:
    """Parse a CSV into a Domain using a column->type schema.

    One-hot encodes categorical columns (sorted distinct values, feature
    name "col=value"). Parse failures name the offending row and column.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise CsvParseError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise CsvParseError(f"{path}: no data rows")

    unknown_cols = [c for c in header if c not in schema]
    if unknown_cols:
        raise SchemaError(f"{path}: columns missing from schema: {unknown_cols}")
    label_cols = [c for c in header if schema[c] == "label"]
    if len(label_cols) > 1:
        raise SchemaError(f"{path}: multiple label columns {label_cols}")
    if labels_required and not label_cols:
        raise SchemaError(f"{path}: schema declares no label column but labels are required")
    label_col = header.index(label_cols[0]) if label_cols else None

    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CsvParseError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")

    columns: list[np.ndarray] = []
    names: list[str] = []
    for c, col_name in enumerate(header):
        if c == label_col:
            continue
        cells = [row[c] for row in body]
        if schema[col_name] == "numeric":
            values = np.empty(len(cells))
            for r, cell in enumerate(cells):
                try:
                    values[r] = float(cell)
                except ValueError:
                    raise CsvParseError(
                        f"{path}: row {r + 2}, column {col_name!r}: "
                        f"non-numeric value {cell!r}"
                    ) from None
            columns.append(values)
            names.append(col_name)
        else:
            levels = sorted(set(cells))
            for level in levels:
                columns.append(np.array([1.0 if cell == level else 0.0 for cell in cells]))
                names.append(f"{col_name}={level}")

    features = np.column_stack(columns)
    labels = None
    category_names: list[str] = []
    if label_col is not None:
        raw_labels = [row[label_col] for row in body]
        category_names = sorted(set(raw_labels))
        index = {name: i for i, name in enumerate(category_names)}
        labels = np.array([index[v] for v in raw_labels], dtype=np.int64)
    return Domain(features=features, labels=labels, category_names=category_names, tag=tag)


def load_feature_selection(path) -> list[int]:
    """Newline-separated zero-based feature column indices."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        return [int(ln) for ln in lines]
    except ValueError as exc:
        raise SchemaError(f"{path}: feature-selection lines must be integers ({exc})") from None


# -------------------------------------------------------------- preprocessing

def preprocess_domain(domain: Domain, selected: list[int] | None = None) -> Domain:
    """Select columns, z-score each (population sigma), L2-normalize rows.

    Constant columns become all-zero instead of erroring; rows that end up
    with zero norm are rejected with their indices listed.
    """
    features = domain.features
    if selected is not None:
        selected = list(selected)
        if any(i < 0 or i >= features.shape[1] for i in selected):
            raise ValueError(f"selected column index out of range 0..{features.shape[1] - 1}")
        features = features[:, selected]
    mean = features.mean(axis=0)
    std = features.std(axis=0)  # population sigma
    scaled = np.where(std > 0.0, (features - mean) / np.where(std > 0.0, std, 1.0), 0.0)
    norms = np.linalg.norm(scaled, axis=1)
    dead = np.nonzero(norms == 0.0)[0]
    if dead.size:
        raise ValueError(f"rows with zero norm after z-scoring: {dead.tolist()}")
    unit = scaled / norms[:, None]
    return Domain(features=unit, labels=domain.labels,
                  category_names=list(domain.category_names), tag=domain.tag)


def preprocess_task(task: OpenSetTask,
                    selected_source: list[int] | None = None,
                    selected_target: list[int] | None = None) -> OpenSetTask:
    """Apply preprocess_domain to both sides of a task, keeping its labels."""
    return OpenSetTask(
        source=preprocess_domain(task.source, selected_source),
        target=preprocess_domain(task.target, selected_target),
        k=task.k,
        k_prime=task.k_prime,
        shared_map=dict(task.shared_map),
        unknown_label=task.unknown_label,
        source_labels=task.source_labels.copy(),
        target_eval_labels=None if task.target_eval_labels is None else task.target_eval_labels.copy(),
    )


# ------------------------------------------------------------------- tasking

def make_openset_task(source: Domain, target: Domain, shared: list[str]) -> OpenSetTask:
    """Pair a labeled source with a target whose extra categories collapse.

    `shared` fixes the 1..K numbering and must cover every source category;
    each shared name must also exist in the target. Target ground truth is
    remapped to 1..K / K+1 for evaluation only; the task's target Domain
    carries no labels or category names.
    """
    if source.labels is None:
        raise ValueError("source domain must be labeled")
    shared = list(shared)
    if len(set(shared)) != len(shared):
        raise ValueError("shared category names contain duplicates")
    missing_src = [s for s in shared if s not in source.category_names]
    if missing_src:
        raise ValueError(f"shared categories absent from source: {missing_src}")
    uncovered = [c for c in source.category_names if c not in shared]
    if uncovered:
        raise ValueError(f"source categories not listed as shared: {uncovered}")
    if target.labels is not None:
        missing_tgt = [s for s in shared if s not in target.category_names]
        if missing_tgt:
            raise ValueError(f"shared categories absent from target: {missing_tgt}")
        k_prime = len(target.category_names)
    else:
        # Unlabeled deployment target: openness is unknown; assume >= K.
        missing_tgt = []
        k_prime = len(shared)
    k = len(shared)
    if k_prime == k:
        warnings.warn("target has no extra categories; task degenerates to closed-set")

    shared_map = {name: i + 1 for i, name in enumerate(shared)}
    source_labels = np.array(
        [shared_map[source.category_names[lbl]] for lbl in source.labels], dtype=np.int64
    )
    target_eval = None
    if target.labels is not None:
        target_eval = np.array(
            [shared_map.get(target.category_names[lbl], k + 1) for lbl in target.labels],
            dtype=np.int64,
        )
    hidden_target = Domain(features=target.features, labels=None, category_names=[], tag="target")
    return OpenSetTask(
        source=source,
        target=hidden_target,
        k=k,
        k_prime=k_prime,
        shared_map=shared_map,
        unknown_label=k + 1,
        source_labels=source_labels,
        target_eval_labels=target_eval,
    )


# ------------------------------------------------------------------ synthesis

@dataclass(frozen=True)
class SynthSpec:
    k: int
    unknown_count: int
    n_per_category: int
    d_s: int
    d_t: int
    separation: float
    seed: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("synthetic tasks need K >= 2 (gap generation)")
        if self.unknown_count < 0 or self.n_per_category < 1:
            raise ValueError("unknown_count >= 0 and n_per_category >= 1 required")
        if self.d_s < 1 or self.d_t < 1:
            raise ValueError("feature dimensions must be >= 1")
        if self.separation <= 0:
            raise ValueError("separation must be positive")


# Latent cluster looseness per unit of 1/separation. Moderate separations
# (~2) keep projected categories loose enough that a freshly initialized
# projector still captures some memberships, while large separations
# approach perfect nearest-prototype structure.
NOISE_SCALE = 2.25


def synth_latents(spec: SynthSpec):
    """Latent prototypes and per-instance latent draws behind synth_task.

    Shared prototypes are random unit vectors; each unknown prototype sits
    near the normalized midpoint of a random shared pair, i.e. in a gap
    between the known categories. Instances add isotropic noise scaled by
    1/separation, so larger separation tightens every category.
    """
    rng = np.random.default_rng(spec.seed)
    d_l = max(spec.d_s, spec.d_t, 8)
    shared = rng.normal(size=(spec.k, d_l))
    shared /= np.linalg.norm(shared, axis=1, keepdims=True)
    unknown_rows = []
    for _ in range(spec.unknown_count):
        i = int(rng.integers(spec.k))
        j = (i + 1 + int(rng.integers(spec.k - 1))) % spec.k
        mid = shared[i] + shared[j] + 0.25 * rng.normal(size=d_l) / np.sqrt(d_l)
        unknown_rows.append(mid / np.linalg.norm(mid))
    protos = np.vstack([shared] + unknown_rows) if unknown_rows else shared
    n_cat = spec.k + spec.unknown_count
    sigma = NOISE_SCALE / (spec.separation * np.sqrt(d_l))

    def draw(categories: list[int]) -> tuple[np.ndarray, np.ndarray]:
        z, y = [], []
        cap = 1.8 * sigma * np.sqrt(d_l)  # bounded tails keep pappus radii honest
        for c in categories:
            noise = sigma * rng.normal(size=(spec.n_per_category, d_l))
            norms = np.linalg.norm(noise, axis=1, keepdims=True)
            noise *= np.minimum(1.0, cap / norms)
            z.append(protos[c] + noise)
            y.extend([c] * spec.n_per_category)
        return np.vstack(z), np.array(y, dtype=np.int64)

    z_s, y_s = draw(list(range(spec.k)))
    z_t, y_t = draw(list(range(n_cat)))
    map_s = rng.normal(size=(d_l, spec.d_s)) / np.sqrt(d_l)
    map_t = rng.normal(size=(d_l, spec.d_t)) / np.sqrt(d_l)
    perm_s = rng.permutation(z_s.shape[0])
    perm_t = rng.permutation(z_t.shape[0])
    return protos, (z_s[perm_s], y_s[perm_s], map_s), (z_t[perm_t], y_t[perm_t], map_t)


def synth_category_names(spec: SynthSpec) -> tuple[list[str], list[str]]:
    shared = ["normal"] + [f"atk{i:02d}" for i in range(2, spec.k + 1)]
    extra = [f"unk{i:02d}" for i in range(spec.k + 1, spec.k + spec.unknown_count + 1)]
    return shared, shared + extra


def synth_domains(spec: SynthSpec) -> tuple[Domain, Domain]:
    """Raw (unpreprocessed) source and target domains behind synth_task."""
    _, (z_s, y_s, map_s), (z_t, y_t, map_t) = synth_latents(spec)
    shared, all_names = synth_category_names(spec)
    source = Domain(features=z_s @ map_s, labels=y_s, category_names=shared, tag="source")
    target = Domain(features=z_t @ map_t, labels=y_t, category_names=all_names, tag="target")
    return source, target


def synth_task(spec: SynthSpec) -> OpenSetTask:
    """Deterministic synthetic open-set task through two random linear maps.

    Source holds the K shared categories (labeled); the target holds all
    K + unknown_count categories. Features are raw (not yet preprocessed).
    """
    source, target = synth_domains(spec)
    with warnings.catch_warnings():
        if spec.unknown_count == 0:
            warnings.simplefilter("ignore")
        return make_openset_task(source, target, source.category_names)
