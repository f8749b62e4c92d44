"""Budgeted hyperparameter search with stratified k-fold cross-validation.

The objective is WER reduction: pooled WER of the best single system on the
held-out fold minus pooled WER of routed selections, in percentage points,
averaged over folds.  The search walks cost-ascending local moves: it
starts at the cheapest configuration (few rounds, shallow trees), perturbs
the cheap dimensions, and escalates rounds/depth only after cheaper moves
stall.  Budgets are either trial counts (bit-reproducible, the default for
tests) or wall-clock seconds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import Dataset, SystemProfile, validate_profiles
from .ensemble import RouterModel, decide_batch, train_pair_classifier
from .features import FeatureSchema, assemble_matrix
from .gbm import Hyperparams
from .labeling import PairLabeling, make_pair_labels
from .metrics import pooled_wer_from_outcomes


@dataclass(frozen=True)
class ParamRange:
    low: float
    high: float
    scale: str = "linear"  # "linear" or "log"
    integer: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ValueError("bounds must be finite")
        if self.low > self.high:
            raise ValueError(f"low {self.low} > high {self.high}")
        if self.scale == "log" and self.low <= 0:
            raise ValueError("log scale needs positive bounds")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"unknown scale {self.scale!r}")

    def _cast(self, v: float) -> float:
        v = min(max(v, self.low), self.high)
        return float(int(round(v))) if self.integer else v

    def midpoint(self) -> float:
        if self.scale == "log":
            return self._cast(math.sqrt(self.low * self.high))
        return self._cast(0.5 * (self.low + self.high))

    def perturb(self, v: float, rng: np.random.Generator) -> float:
        if self.scale == "log":
            span = math.log(self.high / self.low)
            return self._cast(math.exp(math.log(v) + rng.uniform(-1, 1) * 0.25 * span))
        span = self.high - self.low
        step = rng.uniform(-1, 1) * 0.25 * span
        if self.integer and abs(step) < 1.0:
            step = math.copysign(1.0, step)
        return self._cast(v + step)


@dataclass(frozen=True)
class SearchSpace:
    n_rounds: ParamRange = ParamRange(10, 120, "log", integer=True)
    max_depth: ParamRange = ParamRange(2, 5, "linear", integer=True)
    learning_rate: ParamRange = ParamRange(0.05, 0.5, "log")
    l2_leaf: ParamRange = ParamRange(0.01, 10.0, "log")
    min_child_hessian: ParamRange = ParamRange(1e-3, 1.0, "log")
    feature_subsample: ParamRange = ParamRange(0.6, 1.0, "linear")
    row_subsample: ParamRange = ParamRange(0.6, 1.0, "linear")

    _CHEAP = ("learning_rate", "l2_leaf", "min_child_hessian",
              "feature_subsample", "row_subsample")
    _COSTLY = ("n_rounds", "max_depth")

    def default_hyperparams(self) -> Hyperparams:
        """Cheapest corner: minimal rounds and depth, midpoints elsewhere."""
        return Hyperparams(
            n_rounds=int(self.n_rounds.low),
            max_depth=int(self.max_depth.low),
            learning_rate=self.learning_rate.midpoint(),
            l2_leaf=self.l2_leaf.midpoint(),
            min_child_hessian=self.min_child_hessian.midpoint(),
            feature_subsample=self.feature_subsample.midpoint(),
            row_subsample=self.row_subsample.midpoint(),
        )


@dataclass
class Trial:
    hyperparams: Hyperparams
    objective: float           # mean CV WER reduction, percentage points
    fold_scores: tuple[float, ...]
    wall_time: float

    def __post_init__(self):
        mean = float(np.mean(self.fold_scores))
        if not math.isclose(self.objective, mean, rel_tol=0, abs_tol=1e-9):
            raise ValueError("objective must equal the mean of fold scores")


@dataclass
class TrialLog:
    trials: list[Trial] = field(default_factory=list)
    warning: str | None = None

    def incumbent_curve(self) -> list[float]:
        best = -math.inf
        out = []
        for t in self.trials:
            best = max(best, t.objective)
            out.append(best)
        return out


def _fold_seed(seed: int, fold: int, pair: int) -> int:
    return (seed * 1000003 + fold * 1009 + pair * 101) % (2 ** 31)


def _stratified_folds(labelings: list[PairLabeling], k: int, n: int,
                      seed: int) -> np.ndarray:
    """Fold ids stratified on the most imbalanced pair's label vector."""
    def minority_fraction(lab: PairLabeling) -> float:
        m = float(lab.labels.mean())
        return min(m, 1.0 - m)

    strat = min(labelings, key=minority_fraction).labels if labelings else np.zeros(n)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(strat == cls)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(idx.size) % k
    for lab in labelings:
        for f in range(k):
            train_labels = lab.labels[fold_of != f]
            if train_labels.size == 0 or len(np.unique(train_labels)) < 2:
                raise ValueError(
                    f"fold too small to stratify: pair {lab.challenger_id!r} "
                    f"is single-class outside fold {f}"
                )
    return fold_of


def cross_validate_scores(
    train: Dataset,
    hp: Hyperparams,
    k: int,
    pivot: SystemProfile,
    systems: list[SystemProfile],
    seed: int,
    schema: FeatureSchema | None = None,
    use_weights: bool = True,
    weight_floor: float = 0.01,
) -> list[float]:
    """Per-fold WER reductions of routed selections vs the fold's best
    single system (percentage points)."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if validate_profiles(systems).id != pivot.id:
        raise ValueError(f"{pivot.id!r} is not the flagged pivot of the systems list")
    records = train.records
    n = len(records)
    if n < 2 * k:
        raise ValueError(f"{n} records cannot fill {k} folds")
    schema = schema or train.schema.feature_schema()
    schema_hash = schema.schema_hash()
    X = assemble_matrix(records, schema)
    challengers = [p for p in systems if not p.is_pivot]
    labelings = [make_pair_labels(records, ch, pivot) for ch in challengers]
    fold_of = _stratified_folds(labelings, k, n, seed)

    system_ids = [p.id for p in systems]
    scores = []
    for f in range(k):
        test_mask = fold_of == f
        train_idx = np.flatnonzero(~test_mask)
        test_idx = np.flatnonzero(test_mask)
        train_records = [records[i] for i in train_idx]
        classifiers = []
        for ci, ch in enumerate(challengers):
            classifiers.append(train_pair_classifier(
                X[train_idx], train_records, ch, pivot, hp,
                seed=_fold_seed(seed, f, ci), schema_hash=schema_hash,
                use_weights=use_weights, weight_floor=weight_floor,
            ))
        router = RouterModel(
            pivot_id=pivot.id, classifiers=classifiers, schema=schema,
            profiles=list(systems),
        )
        test_records = [records[i] for i in test_idx]
        decisions = decide_batch(router, X[test_idx])
        chosen = [d.chosen_id for d in decisions]
        routed = pooled_wer_from_outcomes(test_records, chosen)
        best_single = min(
            pooled_wer_from_outcomes(test_records, [s] * len(test_records))
            for s in system_ids
        )
        scores.append((best_single - routed) * 100.0)
    return scores


def cross_validate(train, hp, k, pivot, systems, seed, **kwargs) -> float:
    return float(np.mean(cross_validate_scores(train, hp, k, pivot, systems, seed, **kwargs)))


def search(
    train: Dataset,
    space: SearchSpace,
    budget: float,
    k: int,
    pivot: SystemProfile,
    systems: list[SystemProfile],
    seed: int,
    budget_mode: str = "trials",
    schema: FeatureSchema | None = None,
    use_weights: bool = True,
    weight_floor: float = 0.01,
) -> tuple[Hyperparams, TrialLog]:
    """Local search over the space within a trial or wall-clock budget.

    Starts from the cheapest configuration, perturbs one cheap dimension
    per move, and raises n_rounds/max_depth only after three consecutive
    non-improving trials.  Only strictly better objectives are accepted,
    so the incumbent sequence is non-decreasing.
    """
    if budget_mode not in ("trials", "seconds"):
        raise ValueError(f"unknown budget mode {budget_mode!r}")
    log = TrialLog()
    defaults = space.default_hyperparams()
    if (budget_mode == "trials" and int(budget) < 1) or budget <= 0:
        log.warning = "budget too small for a single trial; returning space defaults"
        return defaults, log

    rng = np.random.default_rng(seed)
    started = time.perf_counter()

    def out_of_budget() -> bool:
        if budget_mode == "trials":
            return len(log.trials) >= int(budget)
        return time.perf_counter() - started >= budget

    def evaluate(hp: Hyperparams) -> Trial:
        t0 = time.perf_counter()
        folds = cross_validate_scores(
            train, hp, k, pivot, systems, seed=seed, schema=schema,
            use_weights=use_weights, weight_floor=weight_floor,
        )
        trial = Trial(
            hyperparams=hp, objective=float(np.mean(folds)),
            fold_scores=tuple(folds), wall_time=time.perf_counter() - t0,
        )
        log.trials.append(trial)
        return trial

    incumbent = evaluate(defaults)
    stall = 0
    escalate_rounds_next = True
    while not out_of_budget():
        base = incumbent.hyperparams
        if stall >= 3:
            # cheaper moves stalled: push a cost dimension upward
            if escalate_rounds_next and base.n_rounds < space.n_rounds.high:
                cand = replace(base, n_rounds=int(space.n_rounds._cast(base.n_rounds * 1.6)))
            elif base.max_depth < space.max_depth.high:
                cand = replace(base, max_depth=int(space.max_depth._cast(base.max_depth + 1)))
            elif base.n_rounds < space.n_rounds.high:
                cand = replace(base, n_rounds=int(space.n_rounds._cast(base.n_rounds * 1.6)))
            else:
                name = str(rng.choice(SearchSpace._CHEAP + SearchSpace._COSTLY))
                prange: ParamRange = getattr(space, name)
                value = prange.perturb(getattr(base, name), rng)
                cand = replace(base, **{name: int(value) if prange.integer else value})
            escalate_rounds_next = not escalate_rounds_next
            stall = 0
        else:
            name = str(rng.choice(SearchSpace._CHEAP))
            prange = getattr(space, name)
            cand = replace(base, **{name: prange.perturb(getattr(base, name), rng)})
        trial = evaluate(cand)
        if trial.objective > incumbent.objective:
            incumbent = trial
        else:
            stall += 1
    return incumbent.hyperparams, log
