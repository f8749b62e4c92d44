"""Gradient-boosted regression trees with second-order binary logistic loss.

Training grows each tree level by level with exact greedy split search over
presorted columns (no histogram binning); per-sample weights enter the
first/second-order gradients directly.  Rows with zero weight are dropped
up front, so deleting them from the input reproduces the same model
bit-for-bit.  The split scan and margin accumulation run on the kernels in
``_kernels`` (numba by default, numpy fallback via ASRROUTE_BACKEND=numpy).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ModelFormatError, SchemaMismatchError

MODEL_FORMAT = "asrroute-model"
MODEL_SCHEMA_VERSION = 1
LEAF_CLAMP = 15.0  # keeps every leaf logit finite and serializable
_PROB_EPS = 1e-12
# splits must clear this gain; suppresses mathematically-zero gains whose
# floating-point sign would otherwise vary with harmless rescalings
MIN_SPLIT_GAIN = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    n_rounds: int = 50
    max_depth: int = 3
    learning_rate: float = 0.3
    min_child_hessian: float = 1e-3
    l2_leaf: float = 1.0
    feature_subsample: float = 1.0
    row_subsample: float = 1.0

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_child_hessian < 0:
            raise ValueError("min_child_hessian must be >= 0")
        if self.l2_leaf < 0:
            raise ValueError("l2_leaf must be >= 0")
        for name in ("feature_subsample", "row_subsample"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_rounds": self.n_rounds,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "min_child_hessian": self.min_child_hessian,
            "l2_leaf": self.l2_leaf,
            "feature_subsample": self.feature_subsample,
            "row_subsample": self.row_subsample,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(
            n_rounds=int(d["n_rounds"]),
            max_depth=int(d["max_depth"]),
            learning_rate=float(d["learning_rate"]),
            min_child_hessian=float(d["min_child_hessian"]),
            l2_leaf=float(d["l2_leaf"]),
            feature_subsample=float(d["feature_subsample"]),
            row_subsample=float(d["row_subsample"]),
        )


@dataclass
class Tree:
    """One regression tree as flat arrays; node 0 is the root.

    feature[i] >= 0 marks an internal node (threshold/left/right valid,
    rows with value < threshold go left, NaN follows default_left);
    feature[i] == -1 marks a leaf whose logit is value[i].
    """

    feature: np.ndarray        # int32
    threshold: np.ndarray      # float64
    left: np.ndarray           # int32
    right: np.ndarray          # int32
    default_left: np.ndarray   # uint8
    value: np.ndarray          # float64
    gain: np.ndarray           # float64, split gain of internal nodes
    cover: np.ndarray          # float64, hessian mass reaching each node

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def depth(self) -> int:
        def walk(i: int) -> int:
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)


@dataclass
class BinaryClassifier:
    """Boosted one-vs-pivot model: P(challenger beats pivot | features)."""

    challenger_id: str
    pivot_id: str
    trees: list[Tree]
    learning_rate: float
    base_logit: float
    hyperparams: Hyperparams
    feature_schema_hash: str
    n_features: int
    feature_gains: np.ndarray = field(default=None)
    train_loss: list[float] = field(default_factory=list)
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.feature_gains is None:
            self.feature_gains = np.zeros(self.n_features)

    def packed(self) -> tuple:
        """Concatenate all trees into one arena for the predict kernel."""
        if self._packed is None:
            if not self.trees:
                empty_i = np.zeros(0, dtype=np.int32)
                self._packed = (
                    empty_i, np.zeros(0), empty_i.copy(), empty_i.copy(),
                    np.zeros(0, dtype=np.uint8), np.zeros(0),
                    np.zeros(0, dtype=np.int64),
                )
            else:
                roots = []
                off = 0
                feats, thrs, lefts, rights, defls, vals = [], [], [], [], [], []
                for t in self.trees:
                    roots.append(off)
                    feats.append(t.feature)
                    thrs.append(t.threshold)
                    lefts.append(np.where(t.left >= 0, t.left + off, -1).astype(np.int32))
                    rights.append(np.where(t.right >= 0, t.right + off, -1).astype(np.int32))
                    defls.append(t.default_left)
                    vals.append(t.value)
                    off += t.n_nodes
                self._packed = (
                    np.concatenate(feats), np.concatenate(thrs),
                    np.concatenate(lefts), np.concatenate(rights),
                    np.concatenate(defls), np.concatenate(vals),
                    np.array(roots, dtype=np.int64),
                )
        return self._packed


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return out


def _weighted_logloss(y, w, margins) -> float:
    per = np.logaddexp(0.0, margins) - y * margins
    return float(np.sum(w * per) / np.sum(w))


def _grow_tree(X, g, h, order, sorted_vals, feat_ids, active_rows,
               hp: Hyperparams) -> Tree:
    n = X.shape[0]
    node_of_row = np.full(n, -1, dtype=np.int32)
    node_of_row[active_rows] = 0

    feat = [-1]
    thr = [0.0]
    left = [-1]
    right = [-1]
    defl = [1]
    value = [0.0]
    gain = [0.0]
    cover = [0.0]
    slots = [0]  # level slot -> tree node id

    lam = hp.l2_leaf
    for depth in range(hp.max_depth + 1):
        k = len(slots)
        active = node_of_row >= 0
        node_g = np.bincount(node_of_row[active], weights=g[active], minlength=k)
        node_h = np.bincount(node_of_row[active], weights=h[active], minlength=k)

        if depth == hp.max_depth:
            for s, node_id in enumerate(slots):
                value[node_id] = _leaf_weight(node_g[s], node_h[s], lam)
                cover[node_id] = node_h[s]
            break

        best_gain = np.full(k, MIN_SPLIT_GAIN)
        best_feat = np.full(k, -1, dtype=np.int32)
        best_thr = np.zeros(k)
        best_gl = np.zeros(k)
        best_hl = np.zeros(k)
        _kernels.scan_splits(
            order, sorted_vals, g, h, node_of_row, node_g, node_h, feat_ids,
            lam, hp.min_child_hessian,
            best_gain, best_feat, best_thr, best_gl, best_hl,
        )
        splitting = best_feat >= 0
        if not splitting.any():
            for s, node_id in enumerate(slots):
                value[node_id] = _leaf_weight(node_g[s], node_h[s], lam)
                cover[node_id] = node_h[s]
            break

        left_slot = np.full(k, -1, dtype=np.int32)
        right_slot = np.full(k, -1, dtype=np.int32)
        new_slots: list[int] = []
        for s, node_id in enumerate(slots):
            if splitting[s]:
                hl = best_hl[s]
                hr = node_h[s] - hl
                feat[node_id] = int(best_feat[s])
                thr[node_id] = float(best_thr[s])
                gain[node_id] = float(best_gain[s])
                cover[node_id] = node_h[s]
                defl[node_id] = 1 if hl >= hr else 0
                left[node_id] = len(feat)
                right[node_id] = len(feat) + 1
                for _ in range(2):
                    feat.append(-1)
                    thr.append(0.0)
                    left.append(-1)
                    right.append(-1)
                    defl.append(1)
                    value.append(0.0)
                    gain.append(0.0)
                    cover.append(0.0)
                left_slot[s] = len(new_slots)
                new_slots.append(left[node_id])
                right_slot[s] = len(new_slots)
                new_slots.append(right[node_id])
            else:
                value[node_id] = _leaf_weight(node_g[s], node_h[s], lam)
                cover[node_id] = node_h[s]

        rows = np.nonzero(node_of_row >= 0)[0]
        nd = node_of_row[rows]
        keep = splitting[nd]
        node_of_row[rows[~keep]] = -1
        rows = rows[keep]
        nd = nd[keep]
        v = X[rows, best_feat[nd]]
        node_of_row[rows] = np.where(v < best_thr[nd], left_slot[nd], right_slot[nd])
        slots = new_slots

    return Tree(
        feature=np.array(feat, dtype=np.int32),
        threshold=np.array(thr, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        default_left=np.array(defl, dtype=np.uint8),
        value=np.array(value, dtype=np.float64),
        gain=np.array(gain, dtype=np.float64),
        cover=np.array(cover, dtype=np.float64),
    )


def _leaf_weight(gsum: float, hsum: float, lam: float) -> float:
    if hsum + lam <= 0.0:
        return 0.0
    w = -gsum / (hsum + lam)
    return float(min(max(w, -LEAF_CLAMP), LEAF_CLAMP))


def _tree_margins(tree: Tree, X: np.ndarray) -> np.ndarray:
    out = np.zeros(X.shape[0])
    _kernels.predict_margin(
        tree.feature, tree.threshold, tree.left, tree.right,
        tree.default_left, tree.value, np.zeros(1, dtype=np.int64),
        X, 1.0, 0.0, out,
    )
    return out


def train_binary(
    X,
    y,
    w=None,
    hp: Hyperparams | None = None,
    seed: int = 0,
    *,
    challenger_id: str = "",
    pivot_id: str = "",
    feature_schema_hash: str = "",
) -> BinaryClassifier:
    """Fit a boosted binary classifier with per-sample weights.

    Each round fits one tree to the first/second-order logistic gradients
    g_i = w_i (p_i - y_i), h_i = w_i p_i (1 - p_i), growing greedily on the
    second-order gain and stepping margins by learning_rate times the
    clamped Newton leaf weight -G/(H + l2_leaf).  Deterministic given the
    seed; zero-weight rows are discarded before any other work.
    """
    hp = hp or Hyperparams()
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    y = np.asarray(y, dtype=np.float64).ravel()
    if w is None:
        w = np.ones(X.shape[0])
    w = np.asarray(w, dtype=np.float64).ravel()
    if not (X.shape[0] == y.shape[0] == w.shape[0]):
        raise ValueError("X, y, w must have matching lengths")
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature value in X")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("sample weights must be finite and >= 0")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    if w.sum() == 0.0:
        raise ValueError("all sample weights are zero")

    keep = w > 0.0
    X = np.ascontiguousarray(X[keep])
    y = y[keep]
    w = w[keep]
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples of positive weight")
    if d < 1:
        raise ValueError("need at least 1 feature")
    pos_mass = float(np.sum(w * y))
    if pos_mass == 0.0 or pos_mass == float(np.sum(w)):
        raise ValueError(
            "single-class input: both labels must appear among positive-weight samples"
        )

    p_bar = pos_mass / float(np.sum(w))
    base_logit = math.log(p_bar / (1.0 - p_bar))

    order_cols = np.argsort(X, axis=0, kind="stable")
    sorted_vals = np.ascontiguousarray(np.take_along_axis(X, order_cols, axis=0).T)
    order = np.ascontiguousarray(order_cols.T.astype(np.int32))
    margins = np.full(n, base_logit)
    rng = np.random.default_rng(seed)
    all_rows = np.arange(n)
    all_feats = np.arange(d, dtype=np.int64)

    trees: list[Tree] = []
    feature_gains = np.zeros(d)
    losses: list[float] = []
    for _ in range(hp.n_rounds):
        p = np.clip(_sigmoid(margins), _PROB_EPS, 1.0 - _PROB_EPS)
        g = w * (p - y)
        h = w * p * (1.0 - p)

        if hp.row_subsample < 1.0:
            k = max(1, int(round(hp.row_subsample * n)))
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = all_rows
        if hp.feature_subsample < 1.0:
            kf = max(1, int(round(hp.feature_subsample * d)))
            feats = np.sort(rng.choice(d, size=kf, replace=False)).astype(np.int64)
        else:
            feats = all_feats

        tree = _grow_tree(X, g, h, order, sorted_vals, feats, rows, hp)
        trees.append(tree)
        margins += hp.learning_rate * _tree_margins(tree, X)
        losses.append(_weighted_logloss(y, w, margins))
        internal = tree.feature >= 0
        np.add.at(feature_gains, tree.feature[internal], tree.gain[internal])

    return BinaryClassifier(
        challenger_id=challenger_id,
        pivot_id=pivot_id,
        trees=trees,
        learning_rate=hp.learning_rate,
        base_logit=base_logit,
        hyperparams=hp,
        feature_schema_hash=feature_schema_hash,
        n_features=d,
        feature_gains=feature_gains,
        train_loss=losses,
    )


def predict_margin_batch(model: BinaryClassifier, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise SchemaMismatchError(
            f"feature matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, "
            f"model expects {model.n_features}"
        )
    out = np.zeros(X.shape[0])
    feat, thr, left, right, defl, value, roots = model.packed()
    if roots.shape[0] == 0:
        out[:] = model.base_logit
        return out
    _kernels.predict_margin(
        feat, thr, left, right, defl, value, roots,
        X, model.learning_rate, model.base_logit, out,
    )
    return out


def predict_proba_batch(model: BinaryClassifier, X) -> np.ndarray:
    """P(challenger beats pivot) per row, strictly inside (0, 1)."""
    p = _sigmoid(predict_margin_batch(model, X))
    return np.clip(p, 1e-15, 1.0 - 1e-15)


def predict_proba(model: BinaryClassifier, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise SchemaMismatchError(
            f"feature vector has dim {x.shape}, model expects ({model.n_features},)"
        )
    return float(predict_proba_batch(model, x[None, :])[0])


def feature_importance(models, schema=None):
    """Normalized gain share per feature index; optionally per group.

    Accepts one model or a list; multi-model input averages the per-model
    normalized maps.  Returns (per_feature array summing to 1, per_group
    dict or None).  A model whose trees never split yields all zeros.
    """
    if not isinstance(models, (list, tuple)):
        models = [models]
    if not models:
        raise ValueError("no models given")
    maps = []
    for m in models:
        if not m.trees:
            raise ValueError("untrained model: no trees")
        total = float(m.feature_gains.sum())
        maps.append(m.feature_gains / total if total > 0 else np.zeros(m.n_features))
    dims = {v.shape[0] for v in maps}
    if len(dims) != 1:
        raise ValueError("models disagree on feature count")
    per_feature = np.mean(maps, axis=0)
    per_group = None
    if schema is not None:
        per_group = {}
        for name, (start, stop) in schema.index_map().items():
            per_group[name] = float(per_feature[start:stop].sum())
    return per_feature, per_group


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def _tree_to_dict(t: Tree) -> dict:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "default_left": t.default_left.tolist(),
        "value": t.value.tolist(),
        "gain": t.gain.tolist(),
        "cover": t.cover.tolist(),
    }


def _tree_from_dict(d: dict) -> Tree:
    return Tree(
        feature=np.array(d["feature"], dtype=np.int32),
        threshold=np.array(d["threshold"], dtype=np.float64),
        left=np.array(d["left"], dtype=np.int32),
        right=np.array(d["right"], dtype=np.int32),
        default_left=np.array(d["default_left"], dtype=np.uint8),
        value=np.array(d["value"], dtype=np.float64),
        gain=np.array(d["gain"], dtype=np.float64),
        cover=np.array(d["cover"], dtype=np.float64),
    )


def classifier_to_dict(model: BinaryClassifier) -> dict:
    return {
        "format": MODEL_FORMAT,
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": "binary_classifier",
        "challenger_id": model.challenger_id,
        "pivot_id": model.pivot_id,
        "feature_schema_hash": model.feature_schema_hash,
        "n_features": model.n_features,
        "base_logit": model.base_logit,
        "learning_rate": model.learning_rate,
        "hyperparams": model.hyperparams.to_dict(),
        "feature_gains": model.feature_gains.tolist(),
        "trees": [_tree_to_dict(t) for t in model.trees],
    }


def classifier_from_dict(d: dict) -> BinaryClassifier:
    try:
        return BinaryClassifier(
            challenger_id=d["challenger_id"],
            pivot_id=d["pivot_id"],
            trees=[_tree_from_dict(t) for t in d["trees"]],
            learning_rate=float(d["learning_rate"]),
            base_logit=float(d["base_logit"]),
            hyperparams=Hyperparams.from_dict(d["hyperparams"]),
            feature_schema_hash=d["feature_schema_hash"],
            n_features=int(d["n_features"]),
            feature_gains=np.array(d["feature_gains"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"invalid binary_classifier payload: {e}") from e


def _check_envelope(d: dict, path) -> None:
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not an {MODEL_FORMAT} file")
    if d.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model version {d.get('schema_version')!r} "
            f"(this build reads version {MODEL_SCHEMA_VERSION})"
        )


def save_model(model, path) -> None:
    """Serialize a BinaryClassifier or RouterModel to versioned JSON."""
    from .ensemble import RouterModel, router_to_dict  # lazy: avoids cycle

    if isinstance(model, RouterModel):
        payload = router_to_dict(model)
    elif isinstance(model, BinaryClassifier):
        payload = classifier_to_dict(model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True) + "\n")


def load_model(path):
    """Load whatever save_model wrote; never returns a partial model."""
    from .ensemble import router_from_dict  # lazy: avoids cycle

    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path}: corrupted model file: {e}") from e
    _check_envelope(d, path)
    kind = d.get("kind")
    if kind == "binary_classifier":
        return classifier_from_dict(d)
    if kind == "router":
        return router_from_dict(d)
    raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
