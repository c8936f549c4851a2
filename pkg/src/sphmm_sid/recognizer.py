"""Two-stage gender-dependent speaker identification.

Gender models pool training utterances from both talking conditions; speaker
models see neutral training speech only. At test time the gender stage picks
a half of the speaker registry and the speaker stage searches only that half.
"""
from __future__ import annotations

import json
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import GENDERS, UtteranceRecord
from .frontend import FeatureBundle
from .hmm import FORMAT_VERSION, AcousticHmm, TrainConfig, train_hmm
from .suprasegmental import (
    DEFAULT_SUPRA_FLOOR,
    NUM_SEGMENTS,
    SuprasegmentalModel,
    check_alpha,
    fuse,
    score_components,
    train_suprasegmental,
)

Labeled = tuple[UtteranceRecord, FeatureBundle]


class EnrollmentError(ValueError):
    """Raised when the training data cannot support the requested models."""


@dataclass(frozen=True)
class ModelConfig:
    num_states: int = 9
    num_mixtures: int = 10
    max_iterations: int = 50
    rel_loglik_tolerance: float = 1e-4
    variance_floor: float = 1e-3
    supra_variance_floor: float = DEFAULT_SUPRA_FLOOR
    seed: int = 0

    def __post_init__(self):
        if self.num_states < NUM_SEGMENTS or self.num_states % NUM_SEGMENTS:
            raise EnrollmentError(
                f"num_states must be a positive multiple of {NUM_SEGMENTS}, got {self.num_states}"
            )
        if self.num_mixtures < 1 or self.max_iterations < 1:
            raise EnrollmentError("num_mixtures and max_iterations must be >= 1")

    def train_config(self, label: str) -> TrainConfig:
        # per-model seed so models do not share k-means starts
        return TrainConfig(
            max_iterations=self.max_iterations,
            rel_loglik_tolerance=self.rel_loglik_tolerance,
            variance_floor=self.variance_floor,
            seed=(self.seed * 1_000_003 + zlib.crc32(label.encode())) % 2**32,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise EnrollmentError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ModelPair:
    acoustic: AcousticHmm
    supra: SuprasegmentalModel
    label: str
    num_training_utterances: int = 0

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "label": self.label,
            "num_training_utterances": self.num_training_utterances,
            "acoustic": self.acoustic.to_dict(),
            "supra": self.supra.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelPair":
        return cls(
            acoustic=AcousticHmm.from_dict(data["acoustic"]),
            supra=SuprasegmentalModel.from_dict(data["supra"]),
            label=data["label"],
            num_training_utterances=data.get("num_training_utterances", 0),
        )

    def checksum(self) -> str:
        return f"{zlib.crc32(json.dumps(self.to_dict()).encode()):08x}"


def fused_log_score(pair: ModelPair, features: FeatureBundle, alpha: float) -> float:
    """(1 - alpha) log P(O | acoustic) + alpha log P(O | prosody)."""
    check_alpha(alpha)
    acoustic_ll, supra = score_components(pair.acoustic, pair.supra, features)
    return fuse(acoustic_ll, supra.log_likelihood, alpha)


@dataclass(frozen=True)
class GenderModelSet:
    male: ModelPair
    female: ModelPair

    def __post_init__(self):
        if self.male.label == self.female.label:
            raise EnrollmentError("gender model labels must differ")

    @property
    def pairs(self) -> tuple[ModelPair, ModelPair]:
        return (self.male, self.female)


@dataclass(frozen=True)
class SpeakerRegistry:
    by_gender: dict[str, tuple[ModelPair, ...]] = field(default_factory=dict)

    def speakers(self, gender: str) -> tuple[ModelPair, ...]:
        try:
            return self.by_gender[gender]
        except KeyError:
            raise KeyError(f"no speakers enrolled for gender {gender!r}") from None

    @property
    def sizes(self) -> dict[str, int]:
        return {g: len(p) for g, p in self.by_gender.items()}

    def labels(self) -> list[str]:
        return [p.label for g in sorted(self.by_gender) for p in self.by_gender[g]]


@dataclass(frozen=True)
class IdentificationResult:
    gender: str
    gender_scores: tuple[float, float]
    speaker: str
    speaker_labels: tuple[str, ...]
    speaker_scores: tuple[float, ...]
    alpha: float


def argmax_first(scores: Sequence[float]) -> int:
    """Index of the maximum; ties go to the lowest index."""
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def _train_pair(label: str, utterances: Sequence[FeatureBundle], config: ModelConfig) -> ModelPair:
    acoustic = train_hmm(
        [f.mfcc for f in utterances], config.num_states, config.num_mixtures, config.train_config(label)
    )
    supra = train_suprasegmental(acoustic, utterances, config.supra_variance_floor)
    return ModelPair(acoustic, supra, label, len(utterances))


def _training_rows(corpus: Iterable[Labeled]) -> list[Labeled]:
    return [(r, f) for r, f in corpus if r.session == "train"]


def enroll_gender(corpus: Iterable[Labeled], config: ModelConfig | None = None) -> GenderModelSet:
    """One model pair per gender from training utterances of both conditions."""
    config = config or ModelConfig()
    pools: dict[str, list[FeatureBundle]] = defaultdict(list)
    for record, features in _training_rows(corpus):
        pools[record.gender].append(features)
    for gender in GENDERS:
        if not pools[gender]:
            raise EnrollmentError(f"no training utterances for gender {gender!r}")
    male, female = (_train_pair(g, pools[g], config) for g in GENDERS)
    return GenderModelSet(male, female)


def enroll_speakers(corpus: Iterable[Labeled], config: ModelConfig | None = None) -> SpeakerRegistry:
    """One model pair per speaker from neutral training utterances only.

    Speakers are ordered by id within each gender; that order is the
    tie-break order at identification time.
    """
    config = config or ModelConfig()
    pools: dict[str, list[FeatureBundle]] = defaultdict(list)
    genders: dict[str, str] = {}
    for record, features in _training_rows(corpus):
        known = genders.setdefault(record.speaker_id, record.gender)
        if known != record.gender:
            raise EnrollmentError(f"speaker {record.speaker_id!r} has conflicting gender labels")
        if record.condition == "neutral":
            pools[record.speaker_id].append(features)
    for speaker in genders:
        if not pools[speaker]:
            raise EnrollmentError(f"speaker {speaker!r} has no neutral training utterances")
    by_gender: dict[str, list[ModelPair]] = defaultdict(list)
    for speaker in sorted(genders):
        by_gender[genders[speaker]].append(_train_pair(speaker, pools[speaker], config))
    return SpeakerRegistry({g: tuple(p) for g, p in sorted(by_gender.items())})


def component_scores(pairs: Sequence[ModelPair], features: FeatureBundle) -> np.ndarray:
    """(n, 2) array of [acoustic, suprasegmental] log-likelihoods per candidate."""
    out = np.empty((len(pairs), 2))
    for i, pair in enumerate(pairs):
        acoustic_ll, supra = score_components(pair.acoustic, pair.supra, features)
        out[i] = acoustic_ll, supra.log_likelihood
    return out


def fused_scores(components: np.ndarray, alpha: float) -> list[float]:
    return [fuse(a, s, alpha) for a, s in components]


def identify_gender(
    models: GenderModelSet, features: FeatureBundle, alpha: float
) -> tuple[str, tuple[float, float]]:
    scores = fused_scores(component_scores(models.pairs, features), alpha)
    return models.pairs[argmax_first(scores)].label, (scores[0], scores[1])


def identify_speaker(
    registry: SpeakerRegistry, gender: str, features: FeatureBundle, alpha: float
) -> tuple[str, tuple[float, ...]]:
    """Best speaker among the given gender's enrolled speakers only."""
    candidates = registry.speakers(gender)
    scores = fused_scores(component_scores(candidates, features), alpha)
    return candidates[argmax_first(scores)].label, tuple(scores)


def identify(
    models: GenderModelSet,
    registry: SpeakerRegistry,
    features: FeatureBundle,
    alpha: float,
    gender_alpha: float | None = None,
) -> IdentificationResult:
    gender_alpha = alpha if gender_alpha is None else gender_alpha
    gender, gender_scores = identify_gender(models, features, gender_alpha)
    speaker, speaker_scores = identify_speaker(registry, gender, features, alpha)
    return IdentificationResult(
        gender=gender,
        gender_scores=gender_scores,
        speaker=speaker,
        speaker_labels=tuple(p.label for p in registry.speakers(gender)),
        speaker_scores=speaker_scores,
        alpha=alpha,
    )


# -- model bundle on disk -------------------------------------------------


def save_bundle(
    out_dir, models: GenderModelSet, registry: SpeakerRegistry, metadata: dict | None = None
) -> Path:
    out = Path(out_dir)
    (out / "speakers").mkdir(parents=True, exist_ok=True)
    genders = {
        "format_version": FORMAT_VERSION,
        "male": models.male.to_dict(),
        "female": models.female.to_dict(),
    }
    (out / "genders.json").write_text(json.dumps(genders))
    for gender, pairs in registry.by_gender.items():
        folder = out / "speakers" / gender
        folder.mkdir(parents=True, exist_ok=True)
        for pair in pairs:
            (folder / f"{pair.label}.json").write_text(json.dumps(pair.to_dict()))
    manifest = dict(metadata or {})
    manifest["format_version"] = FORMAT_VERSION
    manifest["speakers"] = {g: [p.label for p in pairs] for g, pairs in registry.by_gender.items()}
    (out / "bundle.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_bundle(model_dir) -> tuple[GenderModelSet, SpeakerRegistry, dict]:
    root = Path(model_dir)
    try:
        manifest = json.loads((root / "bundle.json").read_text())
        genders = json.loads((root / "genders.json").read_text())
    except FileNotFoundError as exc:
        raise EnrollmentError(f"incomplete model bundle in {root}: {exc.filename}") from exc
    models = GenderModelSet(
        ModelPair.from_dict(genders["male"]), ModelPair.from_dict(genders["female"])
    )
    by_gender = {}
    for gender, labels in manifest["speakers"].items():
        by_gender[gender] = tuple(
            ModelPair.from_dict(json.loads((root / "speakers" / gender / f"{label}.json").read_text()))
            for label in labels
        )
    return models, SpeakerRegistry(by_gender), manifest

