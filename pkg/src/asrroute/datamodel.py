"""Dataset schema, validation, line-delimited persistence, seeded splits,
and the planted-rule synthetic generator used for desk-scale experiments.

Dataset file format (versioned, one JSON object per line):

  line 1   header: {"schema_version": 1, "kind": "dataset", "audio_dim": ...,
           "asr_dim": ..., "qe_emb_dim": ..., "groups": [...], "languages":
           [...], "systems": [...]}
  line 2+  one record per line: {"segment_id", "language", "duration",
           "reference": [tokens]|null, "features": {...}, "outcomes":
           {system_id: {"hypothesis", "wer", "cost", "runtime"}}}

Embedding vectors are arrays of decimal reals; JSON float round-tripping
keeps them bit-exact across save/load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError
from .features import FeatureSchema, GROUP_ORDER

SCHEMA_VERSION = 1

FEATURE_GROUPS = tuple(g for g in GROUP_ORDER if g != "language")

_DEFAULT_AUDIO_DIM = 1024
_DEFAULT_ASR_DIM = 1024
_DEFAULT_QE_EMB_DIM = 384


@dataclass(frozen=True)
class SystemProfile:
    """One candidate ASR system: identity plus its cost/latency rates."""

    id: str
    cost_rate: float       # currency units per audio-second
    latency_rate: float    # wall-seconds per audio-second
    is_pivot: bool = False

    def __post_init__(self):
        if not self.id:
            raise ConfigError("system id must be non-empty")
        for name in ("cost_rate", "latency_rate"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"system {self.id!r}: {name} must be finite and >= 0")


def validate_profiles(systems: list[SystemProfile]) -> SystemProfile:
    """Check id uniqueness and the single-pivot invariant; return the pivot."""
    ids = [s.id for s in systems]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate system ids in configuration: {ids}")
    pivots = [s for s in systems if s.is_pivot]
    if len(pivots) != 1:
        raise ConfigError(
            f"exactly one system must be flagged pivot, found {len(pivots)}"
        )
    return pivots[0]


@dataclass
class SystemOutcome:
    """Observed result of running one system on one segment."""

    wer: float
    cost: float
    runtime: float
    hypothesis: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.wer) or self.wer < 0:
            raise DataFormatError(f"wer must be finite and >= 0, got {self.wer}")
        for name in ("cost", "runtime"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DataFormatError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class FeatureBundle:
    audio_embedding: np.ndarray | None = None
    asr_embedding: np.ndarray | None = None
    confidence_stats: np.ndarray | None = None
    qe_score: float | None = None
    qe_embedding: np.ndarray | None = None
    signal_props: np.ndarray | None = None


@dataclass
class SegmentRecord:
    segment_id: str
    language: str
    duration: float
    features: FeatureBundle
    outcomes: dict[str, SystemOutcome]
    reference: list[str] | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise DataFormatError(
                f"segment {self.segment_id!r}: duration must be > 0"
            )


@dataclass(frozen=True)
class DatasetSchema:
    """Feature-group dimensions plus the configured system id list."""

    audio_dim: int = _DEFAULT_AUDIO_DIM
    asr_dim: int = _DEFAULT_ASR_DIM
    qe_emb_dim: int = _DEFAULT_QE_EMB_DIM
    groups: tuple[str, ...] = FEATURE_GROUPS
    languages: tuple[str, ...] = ()
    system_ids: tuple[str, ...] = ()

    def feature_schema(self, enabled: set[str] | None = None) -> FeatureSchema:
        """Derive the assembly schema; ``enabled`` defaults to all present
        groups plus the language one-hot."""
        if enabled is None:
            enabled = set(self.groups) | {"language"}
        return FeatureSchema.build(
            audio_dim=self.audio_dim,
            asr_dim=self.asr_dim,
            qe_emb_dim=self.qe_emb_dim,
            language_vocab=self.languages,
            enabled=enabled,
        )

    def to_header(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "dataset",
            "audio_dim": self.audio_dim,
            "asr_dim": self.asr_dim,
            "qe_emb_dim": self.qe_emb_dim,
            "groups": list(self.groups),
            "languages": list(self.languages),
            "systems": list(self.system_ids),
        }


@dataclass
class Dataset:
    schema: DatasetSchema
    records: list[SegmentRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.schema, [self.records[i] for i in indices])


def best_system(outcomes: dict[str, SystemOutcome], profiles: list[SystemProfile]) -> str:
    """Per-segment true best system: lowest WER, ties to the cheaper
    cost_rate, then lexicographic id."""
    rates = {p.id: p.cost_rate for p in profiles}
    return min(outcomes, key=lambda s: (outcomes[s].wer, rates[s], s))


def oracle_labels(dataset: Dataset, profiles: list[SystemProfile]) -> list[str]:
    return [best_system(r.outcomes, profiles) for r in dataset.records]


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _vec(x) -> list | None:
    return None if x is None else np.asarray(x, dtype=np.float64).tolist()


def _record_to_dict(rec: SegmentRecord) -> dict:
    fb = rec.features
    return {
        "segment_id": rec.segment_id,
        "language": rec.language,
        "duration": rec.duration,
        "reference": rec.reference,
        "features": {
            "audio_embedding": _vec(fb.audio_embedding),
            "asr_embedding": _vec(fb.asr_embedding),
            "confidence_stats": _vec(fb.confidence_stats),
            "qe_score": None if fb.qe_score is None else float(fb.qe_score),
            "qe_embedding": _vec(fb.qe_embedding),
            "signal_props": _vec(fb.signal_props),
        },
        "outcomes": {
            sid: {
                "hypothesis": out.hypothesis,
                "wer": out.wer,
                "cost": out.cost,
                "runtime": out.runtime,
            }
            for sid, out in sorted(rec.outcomes.items())
        },
    }


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(dataset.schema.to_header(), sort_keys=True) + "\n")
        for rec in dataset.records:
            f.write(json.dumps(_record_to_dict(rec), sort_keys=True) + "\n")


def _check_dim(name: str, value, dim: int, where: str):
    if value is None:
        raise DataFormatError(f"{where}: feature group {name!r} is missing")
    if len(value) != dim:
        raise DataFormatError(
            f"{where}: {name} has {len(value)} dims, schema expects {dim}"
        )


def _parse_record(obj: dict, schema: DatasetSchema, profiles_by_id: dict, where: str) -> SegmentRecord:
    try:
        segment_id = obj["segment_id"]
        feats = obj.get("features", {})
        outcomes_raw = obj.get("outcomes", {})
    except (TypeError, KeyError) as e:
        raise DataFormatError(f"{where}: missing field {e}") from e
    fb = FeatureBundle()
    dims = {
        "audio_embedding": schema.audio_dim,
        "asr_embedding": schema.asr_dim,
        "qe_embedding": schema.qe_emb_dim,
        "confidence_stats": 7,
        "signal_props": 6,
    }
    for name in FEATURE_GROUPS:
        value = feats.get(name)
        if name not in schema.groups:
            if value is not None:
                raise DataFormatError(
                    f"{where}: group {name!r} present but absent from the "
                    "dataset schema (group presence is all-or-nothing)"
                )
            continue
        if name == "qe_score":
            fb.qe_score = None if value is None else float(value)
        elif name in ("confidence_stats",):
            if value is not None:
                _check_dim(name, value, dims[name], where)
                fb.confidence_stats = np.asarray(value, dtype=np.float64)
        else:
            _check_dim(name, value, dims[name], where)
            setattr(fb, name, np.asarray(value, dtype=np.float64))
    outcomes = {}
    for sid, o in outcomes_raw.items():
        if sid not in profiles_by_id:
            raise DataFormatError(
                f"{where}: outcome for unknown system {sid!r} "
                f"(configured: {sorted(profiles_by_id)})"
            )
        try:
            outcomes[sid] = SystemOutcome(
                wer=float(o["wer"]),
                cost=float(o["cost"]),
                runtime=float(o["runtime"]),
                hypothesis=o.get("hypothesis"),
            )
        except KeyError as e:
            raise DataFormatError(f"{where}: outcome for {sid!r} missing field {e}") from e
    try:
        return SegmentRecord(
            segment_id=segment_id,
            language=obj["language"],
            duration=float(obj["duration"]),
            features=fb,
            outcomes=outcomes,
            reference=obj.get("reference"),
        )
    except KeyError as e:
        raise DataFormatError(f"{where}: missing field {e}") from e


def load_dataset(path, systems: list[SystemProfile]) -> Dataset:
    """Load and schema-validate a line-delimited dataset file.

    Dimensions come from the header when declared there, otherwise they are
    inferred from the first record; every later record must conform.  An
    empty file yields an empty dataset under the configuration defaults.
    """
    profiles_by_id = {p.id: p for p in systems}
    if len(profiles_by_id) != len(systems):
        raise ConfigError("duplicate system ids in configuration")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    system_ids = tuple(p.id for p in systems)
    if not lines:
        return Dataset(DatasetSchema(system_ids=system_ids), [])

    def parse_line(i: int):
        try:
            return json.loads(lines[i])
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}:{i + 1}: malformed line: {e}") from e

    header = parse_line(0)
    if not isinstance(header, dict) or "schema_version" not in header:
        raise DataFormatError(f"{path}:1: missing schema_version header line")
    if header["schema_version"] != SCHEMA_VERSION:
        raise DataFormatError(
            f"{path}:1: unsupported schema_version {header['schema_version']!r}"
        )

    raws = [parse_line(i) for i in range(1, len(lines))]

    def infer_dim(name: str, group: str, default: int) -> int:
        if header.get(name) is not None:
            return int(header[name])
        if raws:
            v = raws[0].get("features", {}).get(group)
            if v is not None:
                return len(v)
        return default

    if header.get("groups") is not None:
        groups = tuple(g for g in FEATURE_GROUPS if g in set(header["groups"]))
    elif raws:
        first = raws[0].get("features", {})
        groups = tuple(g for g in FEATURE_GROUPS if first.get(g) is not None)
    else:
        groups = FEATURE_GROUPS

    schema = DatasetSchema(
        audio_dim=infer_dim("audio_dim", "audio_embedding", _DEFAULT_AUDIO_DIM),
        asr_dim=infer_dim("asr_dim", "asr_embedding", _DEFAULT_ASR_DIM),
        qe_emb_dim=infer_dim("qe_emb_dim", "qe_embedding", _DEFAULT_QE_EMB_DIM),
        groups=groups,
        languages=tuple(header.get("languages", ())),
        system_ids=system_ids,
    )

    records = []
    seen = set()
    for i, obj in enumerate(raws):
        where = f"{path}:{i + 2}"
        rec = _parse_record(obj, schema, profiles_by_id, where)
        if rec.segment_id in seen:
            raise DataFormatError(f"{where}: duplicate segment_id {rec.segment_id!r}")
        seen.add(rec.segment_id)
        records.append(rec)
    return Dataset(schema, records)


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------

def split_dataset(dataset: Dataset, ratios, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint, exhaustive (train, valid, test) partition by seeded uniform
    shuffle; subset sizes are the rounded ratios."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need 3 positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got sum {sum(ratios)}")
    n = len(dataset.records)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(ratios[0] * n))
    n_valid = int(round(ratios[1] * n))
    n_test = n - n_train - n_valid
    if n_test < 0:
        n_valid += n_test
        n_test = 0
    return (
        dataset.subset(perm[:n_train]),
        dataset.subset(perm[n_train:n_train + n_valid]),
        dataset.subset(perm[n_train + n_valid:]),
    )


# --------------------------------------------------------------------------
# synthetic generation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantedRule:
    """Linear latent-to-WER rule: wer(z) = max(base + coeffs . z, 0)."""

    base: float
    coeffs: tuple[float, ...]


@dataclass
class GeneratorConfig:
    n_segments: int
    systems: list[SystemProfile]
    rules: dict[str, PlantedRule]
    noise: float = 0.0
    latent_dim: int = 4
    audio_dim: int = 16
    asr_dim: int = 8
    qe_emb_dim: int = 4
    signal_in: tuple[str, ...] = ("audio", "asr", "qe")
    languages: tuple[str, ...] = ("en", "fr", "es", "de", "ru")
    textual: bool = True
    ref_len_min: int = 5
    ref_len_max: int = 20
    duration_min: float = 2.0
    duration_max: float = 10.0
    feature_noise: float = 0.02

    def __post_init__(self):
        if self.n_segments <= 0:
            raise ConfigError("n_segments must be > 0")
        if not self.systems:
            raise ConfigError("at least one system is required")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        ids = {s.id for s in self.systems}
        missing = ids - set(self.rules)
        if missing:
            raise ConfigError(f"no planted rule for systems: {sorted(missing)}")
        for sid, rule in self.rules.items():
            if len(rule.coeffs) != self.latent_dim:
                raise ConfigError(
                    f"rule for {sid!r} has {len(rule.coeffs)} coeffs, "
                    f"latent_dim is {self.latent_dim}"
                )
        bad = set(self.signal_in) - {"audio", "asr", "qe"}
        if bad:
            raise ConfigError(f"signal_in entries must be audio/asr/qe, got {sorted(bad)}")
        if self.ref_len_min < 1 or self.ref_len_max < self.ref_len_min:
            raise ConfigError("invalid reference length range")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_segments": self.n_segments,
            "systems": [
                {"id": s.id, "cost_rate": s.cost_rate,
                 "latency_rate": s.latency_rate, "is_pivot": s.is_pivot}
                for s in self.systems
            ],
            "rules": {
                sid: {"base": r.base, "coeffs": list(r.coeffs)}
                for sid, r in sorted(self.rules.items())
            },
            "noise": self.noise,
            "latent_dim": self.latent_dim,
            "audio_dim": self.audio_dim,
            "asr_dim": self.asr_dim,
            "qe_emb_dim": self.qe_emb_dim,
            "signal_in": list(self.signal_in),
            "languages": list(self.languages),
            "textual": self.textual,
            "ref_len_min": self.ref_len_min,
            "ref_len_max": self.ref_len_max,
            "duration_min": self.duration_min,
            "duration_max": self.duration_max,
            "feature_noise": self.feature_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        try:
            systems = [
                SystemProfile(
                    id=s["id"], cost_rate=float(s["cost_rate"]),
                    latency_rate=float(s["latency_rate"]),
                    is_pivot=bool(s.get("is_pivot", False)),
                )
                for s in d["systems"]
            ]
            rules = {
                sid: PlantedRule(base=float(r["base"]), coeffs=tuple(r["coeffs"]))
                for sid, r in d["rules"].items()
            }
            kwargs = {
                k: d[k]
                for k in (
                    "noise", "latent_dim", "audio_dim", "asr_dim", "qe_emb_dim",
                    "textual", "ref_len_min", "ref_len_max", "duration_min",
                    "duration_max", "feature_noise",
                )
                if k in d
            }
            if "signal_in" in d:
                kwargs["signal_in"] = tuple(d["signal_in"])
            if "languages" in d:
                kwargs["languages"] = tuple(d["languages"])
            return cls(
                n_segments=int(d["n_segments"]), systems=systems, rules=rules,
                **kwargs,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid generator config: {e}") from e

    @classmethod
    def four_system_demo(
        cls, n_segments: int, noise: float = 0.05, textual: bool = True,
        signal_in: tuple[str, ...] = ("audio", "asr", "qe"),
    ) -> "GeneratorConfig":
        """Four systems shaped like a realistic deployment: a cheap pivot
        that wins most segments outright or by ties, one strong-but-pricey
        system that is best on hard audio (and best on average), and two
        niche systems that only win in their own regimes."""
        systems = [
            SystemProfile("pivot-s", cost_rate=0.5, latency_rate=0.2, is_pivot=True),
            SystemProfile("vendor-a", cost_rate=6.0, latency_rate=1.0),
            SystemProfile("vendor-b", cost_rate=7.0, latency_rate=1.2),
            SystemProfile("vendor-c", cost_rate=9.0, latency_rate=1.5),
        ]
        rules = {
            "pivot-s": PlantedRule(0.18, (0.10, 0.0, 0.0, 0.0)),
            "vendor-a": PlantedRule(0.26, (0.10, -0.12, 0.0, 0.0)),
            "vendor-b": PlantedRule(0.27, (0.10, 0.0, -0.12, 0.0)),
            "vendor-c": PlantedRule(0.174, (0.055, 0.0, 0.0, 0.0)),
        }
        return cls(
            n_segments=n_segments, systems=systems, rules=rules, noise=noise,
            textual=textual, signal_in=signal_in,
        )


def _confidence_probs(rng, mean: float, n: int = 12) -> np.ndarray:
    return np.clip(mean + 0.08 * rng.standard_normal(n), 1e-4, 1.0)


def synthesize_dataset(cfg: GeneratorConfig, seed: int) -> tuple[Dataset, list[str]]:
    """Generate a planted-rule dataset; returns (dataset, oracle labels).

    Per segment a latent vector z ~ N(0, I) drives every system's true WER
    through its rule; bounded uniform noise is added per system.  In
    textual mode reference/hypothesis token sequences realize each WER
    exactly after length quantization, which also produces the WER ties a
    real corpus shows on short segments.  The oracle label is the stored
    per-segment best (lowest WER, cost tie-break).
    """
    from .features import confidence_summary

    rng = np.random.default_rng(seed)
    profiles = list(cfg.systems)
    by_id = {p.id: p for p in profiles}
    system_ids = [p.id for p in profiles]
    pivots = [p.id for p in profiles if p.is_pivot]
    pivot_ref_id = pivots[0] if pivots else None
    vocab = [f"w{i:03d}" for i in range(200)]

    records: list[SegmentRecord] = []
    oracle: list[str] = []
    for i in range(cfg.n_segments):
        z = rng.standard_normal(cfg.latent_dim)
        duration = float(rng.uniform(cfg.duration_min, cfg.duration_max))
        language = str(rng.choice(cfg.languages)) if cfg.languages else "und"
        true_wer = {
            sid: max(cfg.rules[sid].base + float(np.dot(cfg.rules[sid].coeffs, z)), 0.0)
            for sid in system_ids
        }
        # the zero-width draw at noise 0 keeps the stream aligned across
        # noise levels, so same-seed runs differ only in the noise itself
        realized = {
            sid: max(w + float(rng.uniform(-cfg.noise, cfg.noise)), 0.0)
            for sid, w in true_wer.items()
        }

        reference = None
        hyps: dict[str, str | None] = {sid: None for sid in system_ids}
        stored = dict(realized)
        if cfg.textual:
            n_ref = int(rng.integers(cfg.ref_len_min, cfg.ref_len_max + 1))
            reference = [vocab[j] for j in rng.integers(0, len(vocab), n_ref)]
            junk = 0
            for sid in system_ids:
                k = int(round(min(realized[sid], 1.0) * n_ref))
                toks = list(reference)
                if k > 0:
                    for pos in rng.choice(n_ref, size=k, replace=False):
                        toks[pos] = f"zz{junk}"
                        junk += 1
                hyps[sid] = " ".join(toks)
                stored[sid] = k / n_ref

        # confidence/QE features describe the feature-extraction pass, which
        # runs the pivot-grade model; they track its true difficulty
        pivot_w = true_wer[pivot_ref_id] if pivot_ref_id else min(true_wer.values())

        def embed(dim: int, carries: bool, scale: float) -> np.ndarray:
            vec = rng.standard_normal(dim)
            if carries:
                m = min(cfg.latent_dim, dim)
                vec[:m] = scale * z[:m] + cfg.feature_noise * rng.standard_normal(m)
            return vec

        conf_mean = (
            float(np.clip(1.0 - 1.4 * pivot_w, 0.05, 0.99))
            if "asr" in cfg.signal_in else 0.85
        )
        rms = float(rng.uniform(0.1, 0.4))
        peak = float(rng.uniform(max(rms, 0.5), 1.0))
        zcr = float(rng.uniform(200.0, 3000.0))
        fb = FeatureBundle(
            audio_embedding=embed(cfg.audio_dim, "audio" in cfg.signal_in, 1.0),
            asr_embedding=embed(cfg.asr_dim, "asr" in cfg.signal_in, 0.8),
            confidence_stats=confidence_summary(
                np.log(_confidence_probs(rng, conf_mean))
            ),
            qe_score=(
                -pivot_w + cfg.feature_noise * float(rng.standard_normal())
                if "qe" in cfg.signal_in
                else float(rng.standard_normal())
            ),
            qe_embedding=embed(cfg.qe_emb_dim, "qe" in cfg.signal_in, 1.1),
            signal_props=np.array([
                duration, rms, zcr, peak,
                float(rng.uniform(0.0, 0.3)),
                (zcr / 16000.0) * (rms / peak),
            ]),
        )
        outcomes = {
            sid: SystemOutcome(
                wer=stored[sid],
                cost=duration * by_id[sid].cost_rate,
                runtime=duration * by_id[sid].latency_rate,
                hypothesis=hyps[sid],
            )
            for sid in system_ids
        }
        rec = SegmentRecord(
            segment_id=f"seg{i:06d}",
            language=language,
            duration=duration,
            features=fb,
            outcomes=outcomes,
            reference=reference,
        )
        records.append(rec)
        oracle.append(best_system(outcomes, profiles))

    schema = DatasetSchema(
        audio_dim=cfg.audio_dim,
        asr_dim=cfg.asr_dim,
        qe_emb_dim=cfg.qe_emb_dim,
        groups=FEATURE_GROUPS,
        languages=tuple(cfg.languages),
        system_ids=tuple(system_ids),
    )
    return Dataset(schema, records), oracle
