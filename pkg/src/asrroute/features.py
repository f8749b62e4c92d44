"""Feature schema, vector assembly, confidence summaries, native signal
properties, and PCM WAV reading.

Assembled vectors concatenate the enabled groups in a fixed order:

  audio_embedding   - upstream self-supervised audio encoder states (dim D_a)
  asr_embedding     - upstream lightweight-ASR encoder states (dim D_r)
  confidence_stats  - 7 summary stats of token probabilities + missing flag
  qe_score          - quality-estimation score + missing flag
  qe_embedding      - upstream QE model hidden state (dim D_q)
  signal_props      - 6 values computed natively from PCM (see signal_properties)
  language          - one-hot over the schema vocabulary + an "unknown" slot

Per-record missingness is legal only for confidence_stats and qe_score
(an upstream ASR may emit no tokens); it is encoded as a zero payload plus
the group's missing flag so downstream models never see NaN.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, SchemaMismatchError

GROUP_ORDER = (
    "audio_embedding",
    "asr_embedding",
    "confidence_stats",
    "qe_score",
    "qe_embedding",
    "signal_props",
    "language",
)

SIGNAL_PROP_NAMES = (
    "duration_s",
    "rms_energy",
    "zero_crossing_rate",
    "peak_amplitude",
    "silence_ratio",
    "spectral_centroid_proxy",
)

CONFIDENCE_STAT_NAMES = ("mean", "std", "min", "q1", "median", "q3", "max")


@dataclass(frozen=True)
class GroupSpec:
    name: str
    dim: int  # slot width in the assembled vector, including any missing flag
    enabled: bool


@dataclass(frozen=True)
class FeatureSchema:
    groups: tuple[GroupSpec, ...]
    language_vocab: tuple[str, ...]

    @classmethod
    def build(
        cls,
        audio_dim: int = 1024,
        asr_dim: int = 1024,
        qe_emb_dim: int = 384,
        language_vocab: tuple[str, ...] = (),
        enabled: set[str] | None = None,
    ) -> "FeatureSchema":
        """Construct a schema; ``enabled`` defaults to every group."""
        on = set(GROUP_ORDER) if enabled is None else set(enabled)
        unknown = on - set(GROUP_ORDER)
        if unknown:
            raise ValueError(f"unknown feature groups: {sorted(unknown)}")
        widths = {
            "audio_embedding": audio_dim,
            "asr_embedding": asr_dim,
            "confidence_stats": 8,
            "qe_score": 2,
            "qe_embedding": qe_emb_dim,
            "signal_props": 6,
            "language": len(language_vocab) + 1,
        }
        groups = tuple(
            GroupSpec(name, widths[name], name in on) for name in GROUP_ORDER
        )
        return cls(groups=groups, language_vocab=tuple(language_vocab))

    @property
    def total_dim(self) -> int:
        return sum(g.dim for g in self.groups if g.enabled)

    def enabled_groups(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups if g.enabled)

    def index_map(self) -> dict[str, tuple[int, int]]:
        """Group name -> (start, stop) slice into the assembled vector."""
        out = {}
        offset = 0
        for g in self.groups:
            if g.enabled:
                out[g.name] = (offset, offset + g.dim)
                offset += g.dim
        return out

    def group_of_index(self, index: int) -> str:
        for name, (start, stop) in self.index_map().items():
            if start <= index < stop:
                return name
        raise IndexError(f"feature index {index} out of range")

    def feature_names(self) -> list[str]:
        names: list[str] = []
        for g in self.groups:
            if not g.enabled:
                continue
            if g.name == "confidence_stats":
                names.extend(f"confidence.{s}" for s in CONFIDENCE_STAT_NAMES)
                names.append("confidence.missing")
            elif g.name == "qe_score":
                names.extend(["qe_score", "qe_score.missing"])
            elif g.name == "signal_props":
                names.extend(f"signal.{s}" for s in SIGNAL_PROP_NAMES)
            elif g.name == "language":
                names.extend(f"language={lang}" for lang in self.language_vocab)
                names.append("language=<unknown>")
            else:
                names.extend(f"{g.name}[{i}]" for i in range(g.dim))
        return names

    def to_dict(self) -> dict:
        return {
            "groups": [
                {"name": g.name, "dim": g.dim, "enabled": g.enabled}
                for g in self.groups
            ],
            "language_vocab": list(self.language_vocab),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            groups=tuple(
                GroupSpec(g["name"], int(g["dim"]), bool(g["enabled"]))
                for g in d["groups"]
            ),
            language_vocab=tuple(d["language_vocab"]),
        )

    def schema_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def confidence_summary(token_logprobs, on_probabilities: bool = True) -> np.ndarray:
    """(mean, population std, min, Q1, median, Q3, max) of token confidences.

    Log-probabilities are exponentiated first unless ``on_probabilities``
    is False, in which case the statistics are taken over the raw values.
    Quantiles use linear interpolation between order statistics.
    """
    lp = np.asarray(token_logprobs, dtype=np.float64)
    if lp.size == 0:
        raise ValueError(
            "confidence_summary needs at least one token log-probability; "
            "encode a token-less hypothesis as a missing confidence group"
        )
    vals = np.exp(lp) if on_probabilities else lp
    q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
    return np.array(
        [vals.mean(), vals.std(), vals.min(), q1, med, q3, vals.max()],
        dtype=np.float64,
    )


def signal_properties(pcm, sample_rate: float) -> np.ndarray:
    """Six native signal descriptors of a mono clip normalized to [-1, 1].

    Layout (see SIGNAL_PROP_NAMES): duration n/rate; RMS; zero crossings per
    second (strict sign flips over adjacent samples divided by duration);
    peak |amplitude|; fraction of 20 ms frames (last partial frame included)
    whose RMS is below 0.01; and a spectral centroid proxy defined as
    (zcr / sample_rate) * (rms / (peak + 1e-12)) - a crest-weighted
    normalized crossing rate that needs no FFT.
    """
    x = np.asarray(pcm, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty sample sequence")
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    duration = x.size / sample_rate
    rms = math.sqrt(float(np.mean(x * x)))
    peak = float(np.max(np.abs(x)))
    crossings = int(np.count_nonzero(x[:-1] * x[1:] < 0.0))
    zcr = crossings / duration
    frame = max(1, int(round(0.02 * sample_rate)))
    n_frames = (x.size + frame - 1) // frame
    silent = 0
    for k in range(n_frames):
        seg = x[k * frame:(k + 1) * frame]
        if math.sqrt(float(np.mean(seg * seg))) < 0.01:
            silent += 1
    silence_ratio = silent / n_frames
    proxy = (zcr / sample_rate) * (rms / (peak + 1e-12))
    return np.array([duration, rms, zcr, peak, silence_ratio, proxy], dtype=np.float64)


def assemble(record, schema: FeatureSchema) -> np.ndarray:
    """Flatten a record's feature groups into one vector in schema order."""
    parts: list[np.ndarray] = []
    fb = record.features
    for g in schema.groups:
        if not g.enabled:
            continue
        if g.name == "confidence_stats":
            stats = fb.confidence_stats
            if stats is None:
                parts.append(np.zeros(8))
                parts[-1][7] = 1.0
            else:
                stats = np.asarray(stats, dtype=np.float64)
                if stats.shape != (7,):
                    raise SchemaMismatchError(
                        f"segment {record.segment_id!r}: confidence_stats has "
                        f"{stats.size} values, expected 7"
                    )
                parts.append(np.concatenate([stats, [0.0]]))
        elif g.name == "qe_score":
            if fb.qe_score is None:
                parts.append(np.array([0.0, 1.0]))
            else:
                parts.append(np.array([float(fb.qe_score), 0.0]))
        elif g.name == "language":
            onehot = np.zeros(g.dim)
            try:
                onehot[schema.language_vocab.index(record.language)] = 1.0
            except ValueError:
                onehot[-1] = 1.0  # outside the vocabulary, not an error
            parts.append(onehot)
        else:
            vec = getattr(fb, g.name)
            if vec is None:
                raise SchemaMismatchError(
                    f"segment {record.segment_id!r}: enabled group {g.name!r} "
                    "is missing from the record"
                )
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (g.dim,):
                raise SchemaMismatchError(
                    f"segment {record.segment_id!r}: group {g.name!r} has dim "
                    f"{vec.size}, schema expects {g.dim}"
                )
            parts.append(vec)
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def assemble_matrix(records, schema: FeatureSchema) -> np.ndarray:
    """Stack assembled vectors for many records into an (n, total_dim) matrix."""
    if not records:
        return np.zeros((0, schema.total_dim))
    return np.stack([assemble(r, schema) for r in records])


# --------------------------------------------------------------------------
# WAV reading (linear PCM subset of RIFF)
# --------------------------------------------------------------------------

def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a linear-PCM WAV file as (mono samples in [-1, 1], sample rate).

    Supports 16-bit integer (scaled by 1/32768, bit-exact) and 32-bit float
    frames; stereo is downmixed by averaging channels.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[0:4] != b"RIFF":
        raise DataFormatError(f"{path}: not a RIFF file (bad magic at offset 0)")
    if data[8:12] != b"WAVE":
        raise DataFormatError(f"{path}: not a WAVE file (bad form type at offset 8)")

    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise DataFormatError(
                f"{path}: truncated chunk {chunk_id!r} at offset {pos}"
            )
        if chunk_id == b"fmt ":
            if size < 16:
                raise DataFormatError(f"{path}: fmt chunk too short at offset {pos}")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            raw = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise DataFormatError(f"{path}: missing fmt chunk")
    if raw is None or len(raw) == 0:
        raise DataFormatError(f"{path}: zero-length data chunk")
    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if n_channels < 1:
        raise DataFormatError(f"{path}: invalid channel count {n_channels}")
    if audio_format == 1 and bits == 16:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise DataFormatError(
            f"{path}: unsupported codec (format {audio_format}, {bits}-bit); "
            "only 16-bit PCM and 32-bit float are handled"
        )
    if n_channels > 1:
        usable = (samples.size // n_channels) * n_channels
        samples = samples[:usable].reshape(-1, n_channels).mean(axis=1)
    return samples, int(sample_rate)
