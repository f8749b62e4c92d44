"""Merging binary classifiers into per-segment system selections, the pivot
default, optional QE rescoring, and incremental system addition."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .datamodel import Dataset, SystemProfile, validate_profiles
from .errors import DataFormatError, SchemaMismatchError
from .features import FeatureSchema, assemble_matrix
from .gbm import (
    MODEL_FORMAT,
    MODEL_SCHEMA_VERSION,
    BinaryClassifier,
    Hyperparams,
    classifier_from_dict,
    classifier_to_dict,
    predict_proba_batch,
    train_binary,
)
from .labeling import make_pair_labels, sample_weights
from .metrics import normalize_text, wer

DECISIONS_SCHEMA_VERSION = 1


@dataclass
class RouterModel:
    """Deployable artifact: pivot id, one classifier per challenger, the
    feature schema they were trained on, and the system profiles."""

    pivot_id: str
    classifiers: list[BinaryClassifier]
    schema: FeatureSchema
    profiles: list[SystemProfile]

    def __post_init__(self):
        pivot = validate_profiles(self.profiles)
        if pivot.id != self.pivot_id:
            raise ValueError(
                f"pivot_id {self.pivot_id!r} does not match the flagged "
                f"pivot profile {pivot.id!r}"
            )
        challengers = [c.challenger_id for c in self.classifiers]
        if len(set(challengers)) != len(challengers):
            raise ValueError(f"duplicate challenger ids: {challengers}")
        profile_ids = {p.id for p in self.profiles}
        for c in self.classifiers:
            if c.pivot_id != self.pivot_id:
                raise ValueError(
                    f"classifier for {c.challenger_id!r} was trained against "
                    f"pivot {c.pivot_id!r}, router pivot is {self.pivot_id!r}"
                )
            if c.challenger_id not in profile_ids:
                raise ValueError(
                    f"classifier challenger {c.challenger_id!r} has no profile"
                )
            if c.feature_schema_hash and c.feature_schema_hash != self.schema.schema_hash():
                raise SchemaMismatchError(
                    f"classifier for {c.challenger_id!r} carries schema hash "
                    f"{c.feature_schema_hash}, router schema hash is "
                    f"{self.schema.schema_hash()}"
                )
        if len(self.classifiers) != len(self.profiles) - 1:
            raise ValueError(
                f"{len(self.profiles)} systems need {len(self.profiles) - 1} "
                f"classifiers, got {len(self.classifiers)}"
            )

    def profile(self, system_id: str) -> SystemProfile:
        for p in self.profiles:
            if p.id == system_id:
                return p
        raise KeyError(system_id)


@dataclass
class Decision:
    segment_id: str
    chosen_id: str
    probabilities: dict[str, float]  # challenger -> P(beats pivot)
    threshold: float = 0.5
    rescored: bool = False
    rescoring_detail: dict | None = None


class QualityEstimator(Protocol):
    """Reference-free transcription scorer; higher means better quality."""

    def score(self, transcription: str) -> float: ...


class ConstantQE:
    """Scores every transcription identically; ties then favor the pivot."""

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def score(self, transcription: str) -> float:
        return self.value


class FileQE:
    """Score lookup backed by a JSON object {transcription: score}."""

    def __init__(self, path):
        with open(path, "r", encoding="utf-8") as f:
            table = json.load(f)
        if not isinstance(table, dict):
            raise DataFormatError(f"{path}: QE score file must be a JSON object")
        self.table = {k: float(v) for k, v in table.items()}

    def score(self, transcription: str) -> float:
        try:
            return self.table[transcription]
        except KeyError:
            raise KeyError(f"no QE score on file for transcription {transcription!r}")


class OracleQE:
    """Perfect estimator for evaluation harnesses: score = -true WER."""

    def __init__(self, reference: list[str]):
        self.reference = list(reference)

    def score(self, transcription: str) -> float:
        return -wer(self.reference, normalize_text(transcription))


def _challenger_order(router: RouterModel) -> list[int]:
    """Classifier indices sorted by (cost_rate, id): the argmax tie order."""
    def key(i: int):
        p = router.profile(router.classifiers[i].challenger_id)
        return (p.cost_rate, p.id)

    return sorted(range(len(router.classifiers)), key=key)


def decide_batch(
    router: RouterModel, X, segment_ids=None, threshold: float = 0.5
) -> list[Decision]:
    """Route every row of X: highest challenger probability strictly above
    the threshold wins, ties break to the cheaper cost rate then the
    lexicographically smaller id; otherwise the pivot."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != router.schema.total_dim:
        raise SchemaMismatchError(
            f"feature matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, "
            f"router schema needs {router.schema.total_dim}"
        )
    n = X.shape[0]
    if segment_ids is None:
        segment_ids = [""] * n
    probs = np.zeros((n, len(router.classifiers)))
    for j, clf in enumerate(router.classifiers):
        probs[:, j] = predict_proba_batch(clf, X)
    order = _challenger_order(router)
    names = [router.classifiers[j].challenger_id for j in order]
    ordered = probs[:, order] if router.classifiers else probs

    decisions = []
    for i in range(n):
        row = {router.classifiers[j].challenger_id: float(probs[i, j])
               for j in range(len(router.classifiers))}
        chosen = router.pivot_id
        if names:
            b = int(np.argmax(ordered[i]))
            if ordered[i, b] > threshold:
                chosen = names[b]
        decisions.append(
            Decision(
                segment_id=segment_ids[i],
                chosen_id=chosen,
                probabilities=row,
                threshold=threshold,
            )
        )
    return decisions


def decide(router: RouterModel, features, segment_id: str = "",
           threshold: float = 0.5) -> Decision:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != router.schema.total_dim:
        raise SchemaMismatchError(
            f"feature vector has dim {x.shape}, router schema needs "
            f"({router.schema.total_dim},)"
        )
    return decide_batch(router, x[None, :], [segment_id], threshold)[0]


def rescore(
    decision: Decision,
    transcriptions: dict[str, str],
    qe: QualityEstimator,
    pivot_id: str,
    mode: str = "pivot-vs-selected",
) -> Decision:
    """Second-pass QE comparison once a non-pivot system was chosen.

    Default mode compares the pivot against the selected system only; the
    "all-fired" mode also includes every challenger whose probability
    cleared the decision threshold (no fidelity claim attaches to it).
    Score ties fall back to the pivot, then to the smaller id.
    """
    if decision.chosen_id == pivot_id:
        return decision
    if mode == "pivot-vs-selected":
        compared = [pivot_id, decision.chosen_id]
    elif mode == "all-fired":
        fired = [s for s, p in sorted(decision.probabilities.items())
                 if p > decision.threshold]
        compared = [pivot_id] + [s for s in fired if s != pivot_id]
        if decision.chosen_id not in compared:
            compared.append(decision.chosen_id)
    else:
        raise ValueError(f"unknown rescoring mode {mode!r}")
    missing = [s for s in compared if s not in transcriptions]
    if missing:
        raise ValueError(
            f"segment {decision.segment_id!r}: missing transcriptions for {missing}"
        )
    scores = {s: float(qe.score(transcriptions[s])) for s in compared}
    winner = min(compared, key=lambda s: (-scores[s], s != pivot_id, s))
    return Decision(
        segment_id=decision.segment_id,
        chosen_id=winner,
        probabilities=dict(decision.probabilities),
        threshold=decision.threshold,
        rescored=True,
        rescoring_detail={
            "pre_choice": decision.chosen_id,
            "compared": compared,
            "scores": scores,
        },
    )


def add_system(
    router: RouterModel,
    new_classifier: BinaryClassifier,
    profile: SystemProfile,
) -> RouterModel:
    """Return a router extended with one more challenger; existing
    classifiers are reused untouched."""
    if new_classifier.pivot_id != router.pivot_id:
        raise ValueError(
            f"new classifier pivot {new_classifier.pivot_id!r} does not match "
            f"router pivot {router.pivot_id!r}"
        )
    if profile.id != new_classifier.challenger_id:
        raise ValueError(
            f"profile id {profile.id!r} does not match classifier challenger "
            f"{new_classifier.challenger_id!r}"
        )
    if profile.is_pivot:
        raise ValueError("an added system cannot be flagged pivot")
    existing = {c.challenger_id for c in router.classifiers} | {router.pivot_id}
    if profile.id in existing:
        raise ValueError(f"system {profile.id!r} already present in the router")
    if (new_classifier.feature_schema_hash
            and new_classifier.feature_schema_hash != router.schema.schema_hash()):
        raise SchemaMismatchError(
            "new classifier was trained on a different feature schema"
        )
    return RouterModel(
        pivot_id=router.pivot_id,
        classifiers=list(router.classifiers) + [new_classifier],
        schema=router.schema,
        profiles=list(router.profiles) + [profile],
    )


def train_pair_classifier(
    X,
    records,
    challenger: SystemProfile,
    pivot: SystemProfile,
    hp: Hyperparams,
    seed: int,
    schema_hash: str = "",
    use_weights: bool = True,
    weight_floor: float = 0.01,
) -> BinaryClassifier:
    """Label one challenger-vs-pivot pair from outcomes and fit its model."""
    labeling = make_pair_labels(records, challenger, pivot)
    w = sample_weights(labeling, records, epsilon=weight_floor) if use_weights else None
    return train_binary(
        X, labeling.labels, w, hp=hp, seed=seed,
        challenger_id=challenger.id, pivot_id=pivot.id,
        feature_schema_hash=schema_hash,
    )


def train_router(
    train: Dataset,
    systems: list[SystemProfile],
    hp: Hyperparams,
    seed: int,
    schema: FeatureSchema | None = None,
    use_weights: bool = True,
    weight_floor: float = 0.01,
) -> RouterModel:
    """Train one classifier per non-pivot system and assemble the router."""
    pivot = validate_profiles(systems)
    schema = schema or train.schema.feature_schema()
    X = assemble_matrix(train.records, schema)
    schema_hash = schema.schema_hash()
    classifiers = []
    for i, challenger in enumerate(p for p in systems if not p.is_pivot):
        classifiers.append(train_pair_classifier(
            X, train.records, challenger, pivot, hp,
            seed=_pair_seed(seed, i), schema_hash=schema_hash,
            use_weights=use_weights, weight_floor=weight_floor,
        ))
    return RouterModel(
        pivot_id=pivot.id, classifiers=classifiers, schema=schema,
        profiles=list(systems),
    )


def _pair_seed(seed: int, index: int) -> int:
    return (seed * 1000003 + index * 101) % (2 ** 31)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def router_to_dict(router: RouterModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": "router",
        "pivot_id": router.pivot_id,
        "profiles": [
            {"id": p.id, "cost_rate": p.cost_rate,
             "latency_rate": p.latency_rate, "is_pivot": p.is_pivot}
            for p in router.profiles
        ],
        "feature_schema": router.schema.to_dict(),
        "classifiers": [classifier_to_dict(c) for c in router.classifiers],
    }


def router_from_dict(d: dict) -> RouterModel:
    from .errors import ModelFormatError

    try:
        return RouterModel(
            pivot_id=d["pivot_id"],
            classifiers=[classifier_from_dict(c) for c in d["classifiers"]],
            schema=FeatureSchema.from_dict(d["feature_schema"]),
            profiles=[
                SystemProfile(
                    id=p["id"], cost_rate=float(p["cost_rate"]),
                    latency_rate=float(p["latency_rate"]),
                    is_pivot=bool(p["is_pivot"]),
                )
                for p in d["profiles"]
            ],
        )
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"invalid router payload: {e}") from e


# --------------------------------------------------------------------------
# decisions file (the billing/metrics integration contract)
# --------------------------------------------------------------------------

def write_decisions(decisions: list[Decision], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(
            {"schema_version": DECISIONS_SCHEMA_VERSION, "kind": "decisions"},
            sort_keys=True,
        ) + "\n")
        for d in decisions:
            row = {
                "segment_id": d.segment_id,
                "chosen_id": d.chosen_id,
                "probabilities": dict(sorted(d.probabilities.items())),
                "rescored": d.rescored,
            }
            if d.rescoring_detail is not None:
                row["rescoring_detail"] = d.rescoring_detail
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_decisions(path) -> list[Decision]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        return []
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}:1: malformed header: {e}") from e
    if header.get("kind") != "decisions" or "schema_version" not in header:
        raise DataFormatError(f"{path}:1: not a decisions file")
    out = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}:{i}: malformed line: {e}") from e
        out.append(Decision(
            segment_id=row["segment_id"],
            chosen_id=row["chosen_id"],
            probabilities=row.get("probabilities", {}),
            rescored=bool(row.get("rescored", False)),
            rescoring_detail=row.get("rescoring_detail"),
        ))
    return out
