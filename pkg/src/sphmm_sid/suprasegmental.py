"""Prosodic suprasegmental layer and acoustic/prosodic score fusion.

Every three consecutive acoustic states collapse into one suprasegmental
state. A model holds one diagonal Gaussian per suprasegmental position plus
one over the whole-utterance prosody summary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .frontend import FeatureBundle
from .hmm import AcousticHmm, log_likelihood_from_emissions, viterbi_from_emissions

NUM_SEGMENTS = 3
PROSODIC_FIELDS = (
    "mean_log_f0",
    "std_log_f0",
    "voiced_fraction",
    "mean_log_energy",
    "std_log_energy",
    "duration_fraction",
)
PROSODIC_DIM = len(PROSODIC_FIELDS)
DEFAULT_SUPRA_FLOOR = 1e-4


class SupraError(ValueError):
    """Raised for inconsistent suprasegmental models or inputs."""


@dataclass(frozen=True)
class ProsodicVector:
    mean_log_f0: float
    std_log_f0: float
    voiced_fraction: float
    mean_log_energy: float
    std_log_energy: float
    duration_fraction: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PROSODIC_FIELDS])

    @property
    def is_empty(self) -> bool:
        return self.duration_fraction == 0.0


EMPTY_VECTOR = ProsodicVector(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def segments_from_path(path: np.ndarray, num_states: int) -> list[tuple[int, int]]:
    """Group a non-decreasing 0-based state path into three [start, stop) ranges."""
    if num_states % NUM_SEGMENTS:
        raise SupraError(f"num_states={num_states} is not divisible by {NUM_SEGMENTS}")
    per_group = num_states // NUM_SEGMENTS
    groups = np.asarray(path) // per_group
    bounds = np.searchsorted(groups, np.arange(NUM_SEGMENTS + 1), side="left")
    bounds[-1] = len(groups)
    return [(int(bounds[k]), int(bounds[k + 1])) for k in range(NUM_SEGMENTS)]


def segment_by_alignment(acoustic: AcousticHmm, features: FeatureBundle) -> list[tuple[int, int]]:
    """Viterbi-align the MFCCs and return the three suprasegmental frame ranges.

    The alignment must finish in the last acoustic state whenever T >= N, so
    a poorly matched utterance cannot collapse into the first state. Ranges
    partition [0, T); an empty range (start == stop) is possible.
    """
    if acoustic.num_states % NUM_SEGMENTS:
        raise SupraError(
            f"acoustic model has {acoustic.num_states} states, not divisible by {NUM_SEGMENTS}"
        )
    log_b = acoustic.emission_log_probs(features.mfcc)
    path, _ = viterbi_from_emissions(acoustic, log_b, force_final=True)
    return segments_from_path(path, acoustic.num_states)


def _spread(x: np.ndarray) -> float:
    # centring on one sample keeps a constant track at exactly zero
    return float(np.std(x - x[0]))


def prosodic_vector(features: FeatureBundle, start: int, stop: int) -> ProsodicVector:
    """Prosody statistics over frames [start, stop).

    Log-F0 statistics use voiced frames only and are 0 when none are voiced.
    An empty range yields the all-zero vector.
    """
    total = features.num_frames
    if not 0 <= start <= stop <= total:
        raise SupraError(f"frame range [{start}, {stop}) outside [0, {total})")
    if start == stop:
        return EMPTY_VECTOR
    f0 = features.f0[start:stop]
    energy = features.log_energy[start:stop]
    voiced = f0[~np.isnan(f0)]
    if voiced.size:
        log_f0 = np.log(voiced)
        mean_f0, std_f0 = float(log_f0.mean()), _spread(log_f0)
    else:
        mean_f0 = std_f0 = 0.0
    return ProsodicVector(
        mean_log_f0=mean_f0,
        std_log_f0=std_f0,
        voiced_fraction=voiced.size / (stop - start),
        mean_log_energy=float(energy.mean()),
        std_log_energy=_spread(energy),
        duration_fraction=(stop - start) / total,
    )


def utterance_vectors(
    features: FeatureBundle, ranges: Sequence[tuple[int, int]]
) -> tuple[list[ProsodicVector], ProsodicVector]:
    segments = [prosodic_vector(features, a, b) for a, b in ranges]
    return segments, prosodic_vector(features, 0, features.num_frames)


def gaussian_log_density(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> float:
    return float(-0.5 * np.sum(np.log(2.0 * math.pi * var) + (x - mean) ** 2 / var))


@dataclass(frozen=True, eq=False)
class SuprasegmentalModel:
    """Positional prosody Gaussians: ``segment_means``/``segment_vars`` are
    (3, 6), ``utterance_mean``/``utterance_var`` are (6,).
    """

    segment_means: np.ndarray
    segment_vars: np.ndarray
    utterance_mean: np.ndarray
    utterance_var: np.ndarray

    def __post_init__(self):
        for name in ("segment_means", "segment_vars", "utterance_mean", "utterance_var"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.segment_means.shape != (NUM_SEGMENTS, PROSODIC_DIM) or (
            self.segment_vars.shape != self.segment_means.shape
        ):
            raise SupraError("segment states must be (3, 6) means and variances")
        if self.utterance_mean.shape != (PROSODIC_DIM,) or self.utterance_var.shape != (PROSODIC_DIM,):
            raise SupraError("utterance state must be 6-dim mean and variance")
        if not (np.all(self.segment_vars > 0) and np.all(self.utterance_var > 0)):
            raise SupraError("variances must be positive")

    def to_dict(self) -> dict:
        return {
            "segment_states": [
                {"mean": m.tolist(), "variance": v.tolist()}
                for m, v in zip(self.segment_means, self.segment_vars)
            ],
            "utterance_state": {
                "mean": self.utterance_mean.tolist(),
                "variance": self.utterance_var.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SuprasegmentalModel":
        states = data["segment_states"]
        if len(states) != NUM_SEGMENTS:
            raise SupraError(f"expected {NUM_SEGMENTS} segment states, got {len(states)}")
        return cls(
            segment_means=[s["mean"] for s in states],
            segment_vars=[s["variance"] for s in states],
            utterance_mean=data["utterance_state"]["mean"],
            utterance_var=data["utterance_state"]["variance"],
        )


def _fit(rows: list[np.ndarray], floor: float) -> tuple[np.ndarray, np.ndarray]:
    data = np.array(rows)
    return data.mean(axis=0), np.maximum(data.var(axis=0), floor)


def train_suprasegmental(
    acoustic: AcousticHmm,
    training_features: Sequence[FeatureBundle],
    variance_floor: float = DEFAULT_SUPRA_FLOOR,
) -> SuprasegmentalModel:
    if len(training_features) < 2:
        raise SupraError("suprasegmental training needs at least 2 utterances")
    per_position: list[list[np.ndarray]] = [[] for _ in range(NUM_SEGMENTS)]
    utterance_rows = []
    for features in training_features:
        segments, whole = utterance_vectors(features, segment_by_alignment(acoustic, features))
        for k, vec in enumerate(segments):
            if not vec.is_empty:
                per_position[k].append(vec.as_array())
        utterance_rows.append(whole.as_array())
    for k, rows in enumerate(per_position):
        if not rows:
            raise SupraError(f"suprasegmental state {k + 1} is empty in every training utterance")
    fits = [_fit(rows, variance_floor) for rows in per_position]
    utt_mean, utt_var = _fit(utterance_rows, variance_floor)
    return SuprasegmentalModel(
        segment_means=[m for m, _ in fits],
        segment_vars=[v for _, v in fits],
        utterance_mean=utt_mean,
        utterance_var=utt_var,
    )


@dataclass(frozen=True)
class SupraScore:
    log_likelihood: float
    skipped_segments: tuple[int, ...]
    ranges: tuple[tuple[int, int], ...]


def supra_score_from_ranges(
    model: SuprasegmentalModel, features: FeatureBundle, ranges: Sequence[tuple[int, int]]
) -> SupraScore:
    segments, whole = utterance_vectors(features, ranges)
    total = gaussian_log_density(whole.as_array(), model.utterance_mean, model.utterance_var)
    skipped = []
    for k, vec in enumerate(segments):
        if vec.is_empty:
            skipped.append(k)
            continue
        total += gaussian_log_density(vec.as_array(), model.segment_means[k], model.segment_vars[k])
    return SupraScore(total, tuple(skipped), tuple(ranges))


def score_supra(
    model: SuprasegmentalModel, acoustic: AcousticHmm, features: FeatureBundle
) -> SupraScore:
    return supra_score_from_ranges(model, features, segment_by_alignment(acoustic, features))


def log_likelihood_supra(
    model: SuprasegmentalModel, acoustic: AcousticHmm, features: FeatureBundle
) -> float:
    """log P(prosody | model) summed over non-empty segments plus the utterance state."""
    return score_supra(model, acoustic, features).log_likelihood


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise SupraError(f"fusion weight alpha={alpha} outside [0, 1]")
    return alpha


def fuse(acoustic_ll: float, supra_ll: float, alpha: float) -> float:
    """(1 - alpha) * acoustic + alpha * prosodic; the endpoints return a
    component unchanged."""
    alpha = check_alpha(alpha)
    if alpha == 0.0:
        return acoustic_ll
    if alpha == 1.0:
        return supra_ll
    return (1.0 - alpha) * acoustic_ll + alpha * supra_ll


def score_components(
    acoustic: AcousticHmm, supra: SuprasegmentalModel, features: FeatureBundle
) -> tuple[float, SupraScore]:
    """Acoustic log-likelihood and suprasegmental score sharing one emission pass."""
    log_b = acoustic.emission_log_probs(features.mfcc)
    acoustic_ll = log_likelihood_from_emissions(acoustic, log_b)
    path, _ = viterbi_from_emissions(acoustic, log_b, force_final=True)
    ranges = segments_from_path(path, acoustic.num_states)
    return acoustic_ll, supra_score_from_ranges(supra, features, ranges)
