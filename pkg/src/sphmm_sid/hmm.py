"""Continuous-density left-to-right HMMs.

All probability arithmetic runs in log space. Forward/backward passes are
batched over padded sequences so that training touches every sequence with a
single loop over time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)
# Row-sum tolerance for stochastic vectors.
STOCHASTIC_TOL = 1e-9
_TINY = 1e-300


class HmmError(ValueError):
    """Raised for malformed models, data or training settings."""


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    """Log-sum-exp that returns -inf (without warnings) for all -inf slices."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def log_density(self, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(obs)
        diff = obs[:, None, :] - self.means[None]
        comp = -0.5 * np.sum(LOG_2PI + np.log(self.variances) + diff ** 2 / self.variances, axis=2)
        with np.errstate(divide="ignore"):
            return logsumexp(comp + np.log(self.weights), axis=1)


@dataclass(frozen=True, eq=False)
class AcousticHmm:
    """Left-to-right HMM with diagonal Gaussian-mixture emissions.

    Parameters are stacked: ``weights`` (N, K), ``means`` and ``variances``
    (N, K, D). ``transition`` holds probabilities; ``log_transition`` is
    derived from it so serialized models rescore identically.
    """

    transition: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        for name in ("transition", "weights", "means", "variances"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.transition.shape[0]
        if self.transition.shape != (n, n) or n < 1:
            raise HmmError("transition matrix must be square and non-empty")
        if self.weights.ndim != 2 or self.weights.shape[0] != n:
            raise HmmError("weights must be (num_states, num_mixtures)")
        if self.means.shape != self.variances.shape or self.means.shape[:2] != self.weights.shape:
            raise HmmError("means/variances must be (num_states, num_mixtures, dim)")
        if np.any(self.transition < 0) or np.any(
            np.abs(self.transition.sum(axis=1) - 1.0) > STOCHASTIC_TOL
        ):
            raise HmmError("transition rows must be probability vectors")
        allowed = np.eye(n, dtype=bool) | np.eye(n, k=1, dtype=bool)
        if np.any(self.transition[~allowed] != 0):
            raise HmmError("only self and next-state transitions are allowed")
        if np.any(self.weights < 0) or np.any(np.abs(self.weights.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
            raise HmmError("mixture weights must be probability vectors")
        if not np.all(self.variances > 0) or not np.all(np.isfinite(self.means)):
            raise HmmError("variances must be positive and means finite")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_mixtures(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @cached_property
    def log_transition(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.transition)

    @cached_property
    def log_start(self) -> np.ndarray:
        start = np.full(self.num_states, -np.inf)
        start[0] = 0.0
        return start

    @property
    def emissions(self) -> list[GaussianMixture]:
        return [
            GaussianMixture(self.weights[j], self.means[j], self.variances[j])
            for j in range(self.num_states)
        ]

    @cached_property
    def _gauss_terms(self):
        # log N(x; mu, var) = const - 0.5 x^2 . (1/var) + x . (mu/var)
        prec = 1.0 / self.variances
        with np.errstate(divide="ignore"):
            const = np.log(self.weights) - 0.5 * np.sum(
                LOG_2PI + np.log(self.variances) + self.means ** 2 * prec, axis=2
            )
        nk = self.num_states * self.num_mixtures
        return const.reshape(nk), prec.reshape(nk, -1).T, (self.means * prec).reshape(nk, -1).T

    def component_log_probs(self, obs: np.ndarray) -> np.ndarray:
        """Weighted per-component log densities, shape (T, N, K)."""
        obs = self.check_obs(obs)
        const, prec, scaled_mean = self._gauss_terms
        out = const - 0.5 * (obs ** 2) @ prec + obs @ scaled_mean
        return out.reshape(len(obs), self.num_states, self.num_mixtures)

    def emission_log_probs(self, obs: np.ndarray) -> np.ndarray:
        """log b_j(o_t), shape (T, N)."""
        return logsumexp(self.component_log_probs(obs), axis=2)

    def check_obs(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != self.dim:
            raise HmmError(f"observations must be (T, {self.dim}), got {obs.shape}")
        if obs.shape[0] < 1:
            raise HmmError("observation sequence is empty")
        return obs

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "num_states": self.num_states,
            "transitions": self.transition.tolist(),
            "emissions": [
                {
                    "weights": self.weights[j].tolist(),
                    "means": self.means[j].tolist(),
                    "variances": self.variances[j].tolist(),
                }
                for j in range(self.num_states)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AcousticHmm":
        if data.get("format_version") != FORMAT_VERSION:
            raise HmmError(f"unsupported model format_version {data.get('format_version')!r}")
        emissions = data["emissions"]
        if len(emissions) != data["num_states"]:
            raise HmmError("num_states does not match the emission list")
        return cls(
            transition=np.array(data["transitions"], dtype=np.float64),
            weights=np.array([e["weights"] for e in emissions], dtype=np.float64),
            means=np.array([e["means"] for e in emissions], dtype=np.float64),
            variances=np.array([e["variances"] for e in emissions], dtype=np.float64),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "AcousticHmm":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 50
    rel_loglik_tolerance: float = 1e-4
    variance_floor: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise HmmError("max_iterations must be >= 1")
        if not self.rel_loglik_tolerance > 0:
            raise HmmError("rel_loglik_tolerance must be positive")
        if not self.variance_floor > 0:
            raise HmmError("variance_floor must be positive")


# -- inference ----------------------------------------------------------


def _forward(log_a: np.ndarray, log_start: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    """Log forward variables for a padded batch ``log_b`` of shape (S, T, N)."""
    alpha = np.empty_like(log_b)
    alpha[:, 0] = log_start + log_b[:, 0]
    for t in range(1, log_b.shape[1]):
        alpha[:, t] = logsumexp(alpha[:, t - 1, :, None] + log_a, axis=1) + log_b[:, t]
    return alpha


def _backward(log_a: np.ndarray, log_b: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    beta = np.zeros_like(log_b)
    for t in range(log_b.shape[1] - 2, -1, -1):
        step = logsumexp(log_a + (log_b[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
        # sequences that end at or before t restart from log 1
        beta[:, t] = np.where((t < lengths - 1)[:, None], step, 0.0)
    return beta


def log_likelihood(model: AcousticHmm, obs) -> float:
    """log P(obs | model) by the forward algorithm."""
    return log_likelihood_from_emissions(model, model.emission_log_probs(obs))


def log_likelihood_from_emissions(model: AcousticHmm, log_b: np.ndarray) -> float:
    alpha = _forward(model.log_transition, model.log_start, log_b[None])
    return float(logsumexp(alpha[0, -1], axis=0))


def viterbi(model: AcousticHmm, obs) -> tuple[np.ndarray, float]:
    """Most likely state path (0-based state indices) and its log probability.

    Ties go to the lower-indexed predecessor and, at the final frame, to the
    lower-indexed state.
    """
    return viterbi_from_emissions(model, model.emission_log_probs(obs))


def viterbi_from_emissions(
    model: AcousticHmm, log_b: np.ndarray, force_final: bool = False
) -> tuple[np.ndarray, float]:
    """Viterbi over precomputed emissions.

    With ``force_final`` the path must end in the last state (falls back to a
    free end when that state is unreachable, i.e. T < N).
    """
    log_a = model.log_transition
    num_frames, n = log_b.shape
    delta = model.log_start + log_b[0]
    back = np.zeros((num_frames, n), dtype=np.int64)
    for t in range(1, num_frames):
        cand = delta[:, None] + log_a
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(n)] + log_b[t]
    if force_final and np.isfinite(delta[-1]):
        delta = np.where(np.arange(n) == n - 1, delta, -np.inf)
    path = np.empty(num_frames, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(num_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta[path[-1]])


# -- training -----------------------------------------------------------


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator, iterations: int = 20):
    """Lloyd's algorithm from a k-means++ start. Returns (centroids, labels)."""
    first = rng.integers(len(points))
    centroids = [points[first]]
    dist = np.sum((points - centroids[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = dist.sum()
        if total > 0:
            idx = rng.choice(len(points), p=dist / total)
        else:
            idx = rng.integers(len(points))
        centroids.append(points[idx])
        dist = np.minimum(dist, np.sum((points - points[idx]) ** 2, axis=1))
    centroids = np.array(centroids)

    for _ in range(iterations):
        d2 = np.sum((points[:, None, :] - centroids[None]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-fit point
                far = int(np.argmax(d2[np.arange(len(points)), labels]))
                centroids[c] = points[far]
                labels[far] = c
    d2 = np.sum((points[:, None, :] - centroids[None]) ** 2, axis=2)
    return centroids, np.argmin(d2, axis=1)


def init_model(
    sequences: Sequence[np.ndarray],
    num_states: int,
    num_mixtures: int,
    seed: int = 0,
    variance_floor: float = 1e-3,
) -> AcousticHmm:
    """Flat-start model: equal time blocks per state, k-means per state."""
    if not sequences:
        raise HmmError("no training sequences")
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    dim = seqs[0].shape[1]
    for i, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[1] != dim:
            raise HmmError(f"sequence {i} has shape {s.shape}, expected (T, {dim})")
        if len(s) < num_states:
            raise HmmError(f"sequence {i} has {len(s)} frames, fewer than {num_states} states")

    rng = np.random.default_rng(seed)
    weights = np.empty((num_states, num_mixtures))
    means = np.empty((num_states, num_mixtures, dim))
    variances = np.empty((num_states, num_mixtures, dim))
    for j in range(num_states):
        pooled = np.concatenate([np.array_split(s, num_states)[j] for s in seqs])
        if len(pooled) < num_mixtures:
            raise HmmError(
                f"state {j} has {len(pooled)} frames for {num_mixtures} mixture components"
            )
        state_var = np.maximum(pooled.var(axis=0), variance_floor)
        centroids, labels = _kmeans(pooled, num_mixtures, rng)
        for c in range(num_mixtures):
            members = pooled[labels == c]
            weights[j, c] = len(members) / len(pooled)
            means[j, c] = centroids[c]
            variances[j, c] = (
                np.maximum(members.var(axis=0), variance_floor) if len(members) > 1 else state_var
            )
        if np.any(weights[j] == 0):
            weights[j] = np.maximum(weights[j], 1.0 / len(pooled))
            weights[j] /= weights[j].sum()

    transition = np.zeros((num_states, num_states))
    for j in range(num_states - 1):
        transition[j, j], transition[j, j + 1] = 0.8, 0.2
    transition[-1, -1] = 1.0
    return AcousticHmm(transition, weights, means, variances)


@dataclass
class _Batch:
    frames: np.ndarray  # (F, D) concatenated
    lengths: np.ndarray
    index: tuple  # (seq, time) positions of every frame in the padded grid

    @classmethod
    def build(cls, sequences, dim: int) -> "_Batch":
        seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
        for i, s in enumerate(seqs):
            if s.ndim != 2 or s.shape[1] != dim:
                raise HmmError(f"sequence {i} has shape {s.shape}, expected (T, {dim})")
            if len(s) == 0:
                raise HmmError(f"sequence {i} is empty")
        lengths = np.array([len(s) for s in seqs])
        seq_idx = np.repeat(np.arange(len(seqs)), lengths)
        time_idx = np.concatenate([np.arange(n) for n in lengths])
        return cls(np.concatenate(seqs), lengths, (seq_idx, time_idx))

    def pad(self, per_frame: np.ndarray) -> np.ndarray:
        grid = np.zeros((len(self.lengths), self.lengths.max()) + per_frame.shape[1:])
        grid[self.index] = per_frame
        return grid


def _e_step(model: AcousticHmm, batch: _Batch):
    comp = model.component_log_probs(batch.frames)
    log_b = logsumexp(comp, axis=2)
    padded = batch.pad(log_b)
    log_a = model.log_transition
    alpha = _forward(log_a, model.log_start, padded)
    beta = _backward(log_a, padded, batch.lengths)
    s_idx = np.arange(len(batch.lengths))
    seq_ll = logsumexp(alpha[s_idx, batch.lengths - 1], axis=1)

    gamma = np.exp(alpha + beta - seq_ll[:, None, None])[batch.index]  # (F, N)
    with np.errstate(invalid="ignore"):
        resp = gamma[:, :, None] * np.exp(comp - log_b[:, :, None])
    resp = np.nan_to_num(resp, nan=0.0)

    # transition counts over t -> t+1 inside each sequence
    xi = (
        alpha[:, :-1, :, None]
        + log_a
        + (padded[:, 1:] + beta[:, 1:])[:, :, None, :]
        - seq_ll[:, None, None, None]
    )
    valid = np.arange(padded.shape[1] - 1)[None, :] < (batch.lengths - 1)[:, None]
    trans_counts = np.exp(xi[valid]).sum(axis=0) if valid.any() else np.zeros_like(log_a)
    return float(seq_ll.sum()), resp, trans_counts


def _m_step(model: AcousticHmm, batch: _Batch, resp, trans_counts, floor: float) -> AcousticHmm:
    n, k, d = model.means.shape
    flat = resp.reshape(len(resp), n * k)
    occ = flat.sum(axis=0).reshape(n, k)
    sx = (flat.T @ batch.frames).reshape(n, k, d)
    sxx = (flat.T @ batch.frames ** 2).reshape(n, k, d)

    weights = model.weights.copy()
    means = model.means.copy()
    variances = model.variances.copy()
    state_occ = occ.sum(axis=1)
    for j in range(n):
        if state_occ[j] <= _TINY:
            continue
        weights[j] = occ[j] / state_occ[j]
        live = occ[j] > _TINY
        means[j, live] = sx[j, live] / occ[j, live, None]
        var = sxx[j, live] / occ[j, live, None] - means[j, live] ** 2
        variances[j, live] = np.maximum(var, floor)

    transition = model.transition.copy()
    row = trans_counts.sum(axis=1)
    busy = row > _TINY
    transition[busy] = trans_counts[busy] / row[busy, None]
    transition[model.transition == 0] = 0.0
    return AcousticHmm(transition, weights, means, variances)


def baum_welch(
    init: AcousticHmm, sequences: Sequence[np.ndarray], config: TrainConfig | None = None
) -> tuple[AcousticHmm, list[float]]:
    """EM re-estimation. Returns the trained model and the total log-likelihood
    of the training set under each successive model (first entry = ``init``).
    """
    config = config or TrainConfig()
    if len(sequences) == 0:
        raise HmmError("no training sequences")
    batch = _Batch.build(sequences, init.dim)
    model = init
    history: list[float] = []
    for _ in range(config.max_iterations):
        total, resp, trans_counts = _e_step(model, batch)
        if history and total - history[-1] < config.rel_loglik_tolerance * abs(history[-1]):
            history.append(total)
            return model, history
        history.append(total)
        model = _m_step(model, batch, resp, trans_counts, config.variance_floor)
    history.append(_e_step(model, batch)[0])
    return model, history


def train_hmm(
    sequences: Sequence[np.ndarray],
    num_states: int,
    num_mixtures: int,
    config: TrainConfig | None = None,
) -> AcousticHmm:
    config = config or TrainConfig()
    init = init_model(sequences, num_states, num_mixtures, config.seed, config.variance_floor)
    return baum_welch(init, sequences, config)[0]
