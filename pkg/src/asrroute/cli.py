"""Command-line entry point wiring every module into batch workflows.

Subcommands: synth, train, evaluate, route, ablate, importance,
add-system, features.  A single JSON run config (``--config``, or the
ASRROUTE_CONFIG environment variable) carries paths, system profiles, and
toggles; ``--seed``, ``--budget`` and ``--pivot`` flags override it.  Exit
codes: 0 success, 1 internal error, 2 user/config error.

All report files carry a schema_version and are byte-reproducible for a
fixed config and seed (trial-count HPO mode).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .datamodel import (
    Dataset,
    GeneratorConfig,
    SystemProfile,
    load_dataset,
    oracle_labels,
    save_dataset,
    split_dataset,
    synthesize_dataset,
    validate_profiles,
)
from .ensemble import (
    ConstantQE,
    Decision,
    FileQE,
    OracleQE,
    RouterModel,
    add_system,
    decide_batch,
    rescore,
    train_pair_classifier,
    train_router,
    write_decisions,
)
from .errors import AsrRouteError, ConfigError
from .features import (
    SIGNAL_PROP_NAMES,
    FeatureSchema,
    assemble_matrix,
    read_wav,
    signal_properties,
)
from .gbm import (
    Hyperparams,
    feature_importance,
    load_model,
    predict_proba_batch,
    save_model,
)
from .hpo import SearchSpace, search
from .labeling import make_pair_labels
from .metrics import aggregate_report, pooled_wer_from_outcomes, weighted_f1

REPORT_SCHEMA_VERSION = 1

ABLATE_COMBOS = (
    ("audio", "asr"),
    ("audio", "qe"),
    ("asr", "qe"),
    ("audio", "asr", "qe"),
)

_COMBO_GROUPS = {
    "audio": ("audio_embedding",),
    "asr": ("asr_embedding", "confidence_stats"),
    "qe": ("qe_score", "qe_embedding"),
}


@dataclass
class RunConfig:
    systems: list[SystemProfile]
    train_path: str | None = None
    valid_path: str | None = None
    test_path: str | None = None
    model_path: str = "router.json"
    output_dir: str = "out"
    enabled_groups: list[str] | None = None
    use_sample_weights: bool = True
    weight_floor: float = 0.01
    rescoring_mode: str = "off"  # off | pivot-vs-selected | all-fired
    qe_source: str = "constant:0.0"
    rescore_cost_per_segment: float = 0.0
    rescore_runtime_per_segment: float = 0.0
    hpo_enabled: bool = False
    hpo_budget: float = 20
    hpo_mode: str = "trials"
    hpo_k: int = 5
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    threshold: float = 0.5
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}")
        try:
            systems = [
                SystemProfile(
                    id=s["id"], cost_rate=float(s["cost_rate"]),
                    latency_rate=float(s["latency_rate"]),
                    is_pivot=bool(s.get("is_pivot", False)),
                )
                for s in d["systems"]
            ]
        except (KeyError, TypeError) as e:
            raise ConfigError(f"{path}: bad systems entry: {e}")
        ds = d.get("dataset", {})
        weighting = d.get("weighting", {})
        resc = d.get("rescoring", {})
        hpo_cfg = d.get("hpo", {})
        cfg = cls(
            systems=systems,
            train_path=ds.get("train"),
            valid_path=ds.get("valid"),
            test_path=ds.get("test"),
            model_path=d.get("model", "router.json"),
            output_dir=d.get("output_dir", "out"),
            enabled_groups=d.get("features", {}).get("enabled_groups"),
            use_sample_weights=bool(weighting.get("sample_weights", True)),
            weight_floor=float(weighting.get("epsilon", 0.01)),
            rescoring_mode=resc.get("mode", "off"),
            qe_source=resc.get("qe", "constant:0.0"),
            rescore_cost_per_segment=float(resc.get("cost_per_segment", 0.0)),
            rescore_runtime_per_segment=float(resc.get("runtime_per_segment", 0.0)),
            hpo_enabled=bool(hpo_cfg.get("enabled", False)),
            hpo_budget=float(hpo_cfg.get("budget", 20)),
            hpo_mode=hpo_cfg.get("mode", "trials"),
            hpo_k=int(hpo_cfg.get("k", 5)),
            hyperparams=Hyperparams.from_dict(d["hyperparams"])
            if "hyperparams" in d else Hyperparams(),
            threshold=float(d.get("threshold", 0.5)),
            seed=int(d.get("seed", 0)),
        )
        validate_profiles(cfg.systems)
        if cfg.rescoring_mode not in ("off", "pivot-vs-selected", "all-fired"):
            raise ConfigError(f"unknown rescoring mode {cfg.rescoring_mode!r}")
        return cfg

    @property
    def pivot(self) -> SystemProfile:
        return validate_profiles(self.systems)

    def schema_for(self, dataset: Dataset) -> FeatureSchema:
        enabled = set(self.enabled_groups) if self.enabled_groups is not None else None
        return dataset.schema.feature_schema(enabled)

    def require(self, name: str) -> str:
        value = getattr(self, f"{name}_path")
        if not value:
            raise ConfigError(f"config is missing the {name} dataset path")
        if not os.path.exists(value):
            raise ConfigError(f"{name} dataset path does not exist: {value}")
        return value

    def qe_for(self, record):
        if self.qe_source == "oracle":
            if record.reference is None:
                raise ConfigError(
                    "oracle QE needs reference transcriptions in the dataset"
                )
            return OracleQE(record.reference)
        if self.qe_source.startswith("constant:"):
            return ConstantQE(float(self.qe_source.split(":", 1)[1]))
        if self.qe_source.startswith("file:"):
            if not hasattr(self, "_file_qe"):
                self._file_qe = FileQE(self.qe_source.split(":", 1)[1])
            return self._file_qe
        raise ConfigError(f"unknown QE source {self.qe_source!r}")


# --------------------------------------------------------------------------
# shared evaluation machinery
# --------------------------------------------------------------------------

def _format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [
        max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
        for i, h in enumerate(headers)
    ]

    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(headers), sep] + [line(r) for r in rows]) + "\n"


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _apply_rescoring(cfg: RunConfig, decisions: list[Decision], dataset: Dataset,
                     pivot_id: str) -> tuple[list[Decision], int]:
    """Rescore non-pivot picks; returns (decisions, QE invocation count)."""
    if cfg.rescoring_mode == "off":
        return decisions, 0
    by_id = {r.segment_id: r for r in dataset.records}
    out = []
    invocations = 0
    for d in decisions:
        if d.chosen_id == pivot_id:
            out.append(d)
            continue
        rec = by_id[d.segment_id]
        texts = {
            sid: o.hypothesis for sid, o in rec.outcomes.items()
            if o.hypothesis is not None
        }
        out.append(rescore(d, texts, cfg.qe_for(rec), pivot_id,
                           mode=cfg.rescoring_mode))
        invocations += 1
    return out, invocations


def _router_row_label(cfg: RunConfig) -> str:
    label = "router"
    if cfg.use_sample_weights:
        label += " + sample weights"
    if cfg.rescoring_mode != "off":
        label += " + QE rescoring"
    return label


def evaluate_router(cfg: RunConfig, router: RouterModel, dataset: Dataset):
    """All evaluation rows: single-best, pivot-only, each non-pivot-only,
    the configured router, and the oracle.  Cost/runtime are percentages
    of the single-best baseline (lowest corpus WER on this dataset)."""
    systems = router.profiles
    pivot_id = router.pivot_id
    records = dataset.records
    ids = [r.segment_id for r in records]

    per_system_wer = {
        p.id: pooled_wer_from_outcomes(records, [p.id] * len(records))
        for p in systems
    }
    rates = {p.id: p.cost_rate for p in systems}
    single_best = min(per_system_wer, key=lambda s: (per_system_wer[s], rates[s], s))

    X = assemble_matrix(records, router.schema)
    routed = decide_batch(router, X, ids, threshold=cfg.threshold)
    routed, invocations = _apply_rescoring(cfg, routed, dataset, pivot_id)
    extra_cost = invocations * cfg.rescore_cost_per_segment
    extra_runtime = invocations * cfg.rescore_runtime_per_segment

    rows = []

    def add_row(label, decision_pairs, extra_c=0.0, extra_r=0.0):
        rep = aggregate_report(
            decision_pairs, dataset, baseline=single_best,
            extra_cost=extra_c, extra_runtime=extra_r, profiles=systems,
        )
        rows.append({"label": label, "report": rep})

    add_row(f"single-best ({single_best})", [(i, single_best) for i in ids])
    add_row(f"pivot-only ({pivot_id})", [(i, pivot_id) for i in ids])
    for p in systems:
        if p.id not in (pivot_id, single_best):
            add_row(f"non-pivot-only ({p.id})", [(i, p.id) for i in ids])
    add_row(_router_row_label(cfg), [(d.segment_id, d.chosen_id) for d in routed],
            extra_cost, extra_runtime)
    add_row("oracle", list(zip(ids, oracle_labels(dataset, systems))))
    return rows, routed


def _eval_rows_payload(rows) -> list[dict]:
    out = []
    for row in rows:
        rep = row["report"]
        out.append({
            "label": row["label"],
            "wer_pct": 100.0 * rep.corpus_wer,
            "f1_pct": None if rep.weighted_f1 is None else 100.0 * rep.weighted_f1,
            "cost_pct": rep.cost_pct,
            "runtime_pct": rep.runtime_pct,
            "mean_segment_wer_pct": 100.0 * rep.mean_segment_wer,
            "selection_counts": dict(sorted(rep.per_system_selection_counts.items())),
            "f1_floor_classes": list(rep.f1_floor_classes),
        })
    return out


def _eval_table(rows) -> str:
    headers = ["selection policy", "WER%", "F1%", "cost%", "runtime%"]
    body = []
    for row in rows:
        rep = row["report"]
        f1 = "-" if rep.weighted_f1 is None else f"{100 * rep.weighted_f1:.1f}"
        body.append([
            row["label"],
            f"{100 * rep.corpus_wer:.2f}",
            f1,
            f"{rep.cost_pct:.1f}",
            f"{rep.runtime_pct:.1f}",
        ])
    return _format_table(headers, body)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    with open(args.gen_config, "r", encoding="utf-8") as f:
        gen = GeneratorConfig.from_dict(json.load(f))
    seed = args.seed if args.seed is not None else 0
    dataset, oracle = synthesize_dataset(gen, seed=seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.split:
        ratios = tuple(float(r) for r in args.split.split(","))
        train, valid, test = split_dataset(dataset, ratios, seed=seed)
        for part, name in ((train, "train"), (valid, "valid"), (test, "test")):
            path = out.with_suffix(f".{name}{out.suffix or '.jsonl'}")
            save_dataset(part, path)
            print(f"wrote {len(part)} records to {path}")
    else:
        save_dataset(dataset, out)
        print(f"wrote {len(dataset)} records to {out}")
    return 0


def _pair_report_rows(cfg: RunConfig, router: RouterModel, valid: Dataset) -> list[dict]:
    """Per-pair validation metrics in a Table-2-like layout."""
    records = valid.records
    X = assemble_matrix(records, router.schema)
    pivot = cfg.pivot
    rows = []
    for clf in router.classifiers:
        challenger = router.profile(clf.challenger_id)
        lab = make_pair_labels(records, challenger, pivot)
        p = predict_proba_batch(clf, X)
        predicted = [clf.challenger_id if pi > cfg.threshold else pivot.id for pi in p]
        actual = [clf.challenger_id if li == 1 else pivot.id for li in lab.labels]
        pair_f1 = weighted_f1(predicted, actual, [pivot.id, clf.challenger_id])
        pair_wer = pooled_wer_from_outcomes(records, predicted)
        rows.append({
            "pair": f"{pivot.id} vs {clf.challenger_id}",
            "valid_f1_pct": 100.0 * pair_f1,
            "valid_wer_pct": 100.0 * pair_wer,
            "pivot_only_wer_pct": 100.0 * pooled_wer_from_outcomes(
                records, [pivot.id] * len(records)),
            "non_pivot_only_wer_pct": 100.0 * pooled_wer_from_outcomes(
                records, [clf.challenger_id] * len(records)),
            "train_label_counts": lab.metadata["label_counts"],
        })
    return rows


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train = load_dataset(cfg.require("train"), cfg.systems)
    if len(train) == 0:
        raise ConfigError("training dataset is empty")
    schema = cfg.schema_for(train)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    hp = cfg.hyperparams
    if cfg.hpo_enabled:
        hp, log = search(
            train, SearchSpace(), budget=cfg.hpo_budget, k=cfg.hpo_k,
            pivot=cfg.pivot, systems=cfg.systems, seed=cfg.seed,
            budget_mode=cfg.hpo_mode, schema=schema,
            use_weights=cfg.use_sample_weights, weight_floor=cfg.weight_floor,
        )
        trial_rows = []
        for t in log.trials:
            row = {
                "hyperparams": t.hyperparams.to_dict(),
                "objective_pp": t.objective,
                "fold_scores_pp": list(t.fold_scores),
            }
            if cfg.hpo_mode == "seconds":
                row["wall_time_s"] = t.wall_time
            trial_rows.append(row)
        _write_json(out_dir / "hpo_trials.json", {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "hpo_trials",
            "warning": log.warning,
            "best_hyperparams": hp.to_dict(),
            "trials": trial_rows,
        })
        if log.warning:
            print(f"warning: {log.warning}", file=sys.stderr)

    router = train_router(
        train, cfg.systems, hp, seed=cfg.seed, schema=schema,
        use_weights=cfg.use_sample_weights, weight_floor=cfg.weight_floor,
    )
    model_path = Path(cfg.model_path)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(router, model_path)

    report_ds = train
    report_name = "train"
    if cfg.valid_path:
        report_ds = load_dataset(cfg.require("valid"), cfg.systems)
        report_name = "valid"
    pair_rows = _pair_report_rows(cfg, router, report_ds)
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "train_report",
        "row_label": _router_row_label(cfg),
        "hyperparams": hp.to_dict(),
        "evaluated_on": report_name,
        "pairs": pair_rows,
        "model": str(model_path),
        "feature_schema_hash": schema.schema_hash(),
    }
    _write_json(out_dir / "train_report.json", payload)
    headers = ["pair", "F1%", "pair WER%", "pivot-only WER%", "non-pivot WER%"]
    table = _format_table(headers, [
        [r["pair"], f"{r['valid_f1_pct']:.1f}", f"{r['valid_wer_pct']:.2f}",
         f"{r['pivot_only_wer_pct']:.2f}", f"{r['non_pivot_only_wer_pct']:.2f}"]
        for r in pair_rows
    ])
    text = f"training report ({_router_row_label(cfg)}), pairs on {report_name}\n\n{table}"
    (out_dir / "train_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"model saved to {model_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    model_path = args.model or cfg.model_path
    router = _require_router(model_path)
    dataset = load_dataset(args.dataset or cfg.require("test"), cfg.systems)
    _check_router_schema(router, dataset, cfg)
    rows, routed = evaluate_router(cfg, router, dataset)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "eval_report.json", {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "eval_report",
        "rows": _eval_rows_payload(rows),
    })
    table = _eval_table(rows)
    (out_dir / "eval_report.txt").write_text(table, encoding="utf-8")
    write_decisions(routed, out_dir / "decisions.jsonl")
    print(table, end="")
    return 0


def cmd_route(args) -> int:
    cfg = _load_config(args)
    router = _require_router(args.model or cfg.model_path)
    dataset = load_dataset(args.dataset or cfg.require("test"), cfg.systems)
    _check_router_schema(router, dataset, cfg)
    ids = [r.segment_id for r in dataset.records]
    X = assemble_matrix(dataset.records, router.schema)
    decisions = decide_batch(router, X, ids, threshold=cfg.threshold)
    decisions, _ = _apply_rescoring(cfg, decisions, dataset, router.pivot_id)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "decisions.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_decisions(decisions, out)
    print(f"wrote {len(decisions)} decisions to {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    train = load_dataset(cfg.require("train"), cfg.systems)
    test = load_dataset(cfg.require("test"), cfg.systems)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_groups = set(cfg.enabled_groups) if cfg.enabled_groups is not None \
        else set(train.schema.groups) | {"language"}
    results = []
    for combo in ABLATE_COMBOS:
        enabled = {"language"}
        if "signal_props" in base_groups:
            enabled.add("signal_props")
        for part in combo:
            enabled.update(_COMBO_GROUPS[part])
        schema = train.schema.feature_schema(enabled)
        router = train_router(
            train, cfg.systems, cfg.hyperparams, seed=cfg.seed, schema=schema,
            use_weights=cfg.use_sample_weights, weight_floor=cfg.weight_floor,
        )
        combo_cfg = replace(cfg, enabled_groups=sorted(enabled))
        rows, _ = evaluate_router(combo_cfg, router, test)
        router_row = next(r for r in rows if r["label"].startswith("router"))
        rep = router_row["report"]
        results.append({
            "feature_groups": " + ".join(combo),
            "wer_pct": 100.0 * rep.corpus_wer,
            "f1_pct": None if rep.weighted_f1 is None else 100.0 * rep.weighted_f1,
            "schema_hash": schema.schema_hash(),
        })
    _write_json(out_dir / "ablate_report.json", {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "ablate_report",
        "rows": results,
    })
    table = _format_table(
        ["feature groups", "WER%", "F1%"],
        [[r["feature_groups"], f"{r['wer_pct']:.2f}",
          "-" if r["f1_pct"] is None else f"{r['f1_pct']:.1f}"] for r in results],
    )
    (out_dir / "ablate_report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_importance(args) -> int:
    router = _require_router(args.model)
    per_feature, per_group = feature_importance(router.classifiers, router.schema)
    names = router.schema.feature_names()
    ranked = sorted(
        ((names[i], float(v)) for i, v in enumerate(per_feature)),
        key=lambda kv: (-kv[1], kv[0]),
    )
    group_ranked = sorted(per_group.items(), key=lambda kv: (-kv[1], kv[0]))
    lines = ["per-group importance (mean gain share over classifiers)", ""]
    for name, share in group_ranked:
        bar = "#" * int(round(40 * share))
        lines.append(f"{name:<18} {share:6.3f} {bar}")
    lines += ["", f"top {min(args.top, len(ranked))} features", ""]
    for name, share in ranked[: args.top]:
        bar = "#" * int(round(40 * share))
        lines.append(f"{name:<24} {share:6.4f} {bar}")
    text = "\n".join(lines) + "\n"
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "importance_report",
        "per_feature": {name: share for name, share in ranked},
        "per_group": dict(group_ranked),
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".json").write_text(
            json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        out.with_suffix(".txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_add_system(args) -> int:
    cfg = _load_config(args)
    router = _require_router(args.model or cfg.model_path)
    new_id = args.new_system
    profile = next((p for p in cfg.systems if p.id == new_id), None)
    if profile is None:
        raise ConfigError(f"system {new_id!r} is not in the config systems list")
    if new_id == router.pivot_id or any(
        c.challenger_id == new_id for c in router.classifiers
    ):
        raise ConfigError(f"system {new_id!r} is already part of the model")
    dataset = load_dataset(args.dataset or cfg.require("train"), cfg.systems)
    X = assemble_matrix(dataset.records, router.schema)
    clf = train_pair_classifier(
        X, dataset.records, profile, cfg.pivot, cfg.hyperparams,
        seed=cfg.seed, schema_hash=router.schema.schema_hash(),
        use_weights=cfg.use_sample_weights, weight_floor=cfg.weight_floor,
    )
    bigger = add_system(router, clf, profile)
    out = Path(args.out) if args.out else Path(args.model or cfg.model_path)
    save_model(bigger, out)
    print(f"added {new_id}; model now has {len(bigger.classifiers)} classifiers: {out}")
    return 0


def cmd_features(args) -> int:
    pcm, rate = read_wav(args.wav)
    props = signal_properties(pcm, rate)
    if args.json:
        print(json.dumps(
            {name: float(v) for name, v in zip(SIGNAL_PROP_NAMES, props)},
            sort_keys=True,
        ))
    else:
        for name, v in zip(SIGNAL_PROP_NAMES, props):
            print(f"{name:<24} {v!r}")
    return 0


# --------------------------------------------------------------------------
# wiring
# --------------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    path = args.config or os.environ.get("ASRROUTE_CONFIG")
    if not path:
        raise ConfigError("no config given: pass --config or set ASRROUTE_CONFIG")
    cfg = RunConfig.from_file(path)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "budget", None) is not None:
        cfg.hpo_budget = args.budget
    if getattr(args, "pivot", None) is not None:
        cfg.systems = [
            replace(p, is_pivot=(p.id == args.pivot)) for p in cfg.systems
        ]
        validate_profiles(cfg.systems)
    return cfg


def _require_router(path) -> RouterModel:
    if not path or not os.path.exists(path):
        raise ConfigError(f"model file does not exist: {path}")
    model = load_model(path)
    if not isinstance(model, RouterModel):
        raise ConfigError(f"{path} holds a single classifier, not a router")
    return model


def _check_router_schema(router: RouterModel, dataset: Dataset, cfg: RunConfig) -> None:
    derived = cfg.schema_for(dataset)
    if derived.schema_hash() != router.schema.schema_hash():
        raise ConfigError(
            "dataset/config feature schema does not match the model "
            f"(dataset {derived.schema_hash()}, model {router.schema.schema_hash()})"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asrroute",
        description="Learn and apply per-segment ASR system routing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_arg=False, dataset_arg=False):
        p.add_argument("--config", help="run config JSON (or ASRROUTE_CONFIG)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--budget", type=float, help="override HPO budget")
        p.add_argument("--pivot", help="override which system id is the pivot")
        if model_arg:
            p.add_argument("--model", help="model file (default: config model path)")
        if dataset_arg:
            p.add_argument("--dataset", help="dataset file (default: config test path)")

    p = sub.add_parser("synth", help="generate a planted-rule synthetic dataset")
    p.add_argument("--gen-config", required=True, help="generator config JSON")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split", help="train,valid,test ratios, e.g. 0.8,0.1,0.1")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train classifiers (optionally with HPO)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="emit the policy comparison table")
    common(p, model_arg=True, dataset_arg=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("route", help="apply a model, write the decisions file")
    common(p, model_arg=True, dataset_arg=True)
    p.add_argument("--out", help="decisions output path")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("ablate", help="train/evaluate every feature-group combo")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("importance", help="per-feature and per-group gain shares")
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="output path stem (.txt/.json)")
    p.add_argument("--top", type=int, default=20)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("add-system", help="train one new pair into an existing model")
    common(p, model_arg=True, dataset_arg=True)
    p.add_argument("--new-system", required=True)
    p.add_argument("--out", help="output model path (default: overwrite input)")
    p.set_defaults(func=cmd_add_system)

    p = sub.add_parser("features", help="extract signal properties from a WAV file")
    p.add_argument("--wav", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except AsrRouteError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
