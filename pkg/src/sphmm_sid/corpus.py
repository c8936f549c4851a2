"""Corpus manifests and the seeded synthetic neutral/shouted corpus.

A manifest is a CSV file whose header is exactly the :class:`UtteranceRecord`
field names; audio paths are relative to the manifest's directory.
"""
from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .frontend import AudioClip, FrontendConfig, write_wav

GENDERS = ("M", "F")
CONDITIONS = ("neutral", "shouted")
SESSIONS = ("train", "test")
CONDITION_ALIASES = {"angry": "shouted"}
_PITCH_LIMITS = FrontendConfig()


class ManifestError(ValueError):
    """Raised for malformed manifests, with the offending row number."""


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    audio_path: str
    speaker_id: str
    gender: str
    sentence_id: str
    condition: str
    session: str


MANIFEST_FIELDS = tuple(f.name for f in fields(UtteranceRecord))


def _normalize(row: dict, line: int) -> UtteranceRecord:
    values = {}
    for name in MANIFEST_FIELDS:
        value = (row.get(name) or "").strip()
        if not value:
            raise ManifestError(f"row {line}: missing value for {name!r}")
        values[name] = value
    gender = values["gender"].upper()
    if gender not in GENDERS:
        raise ManifestError(f"row {line}: unknown gender {values['gender']!r} (expected M or F)")
    condition = values["condition"].lower()
    condition = CONDITION_ALIASES.get(condition, condition)
    if condition not in CONDITIONS:
        raise ManifestError(f"row {line}: unknown condition {values['condition']!r}")
    session = values["session"].lower()
    if session not in SESSIONS:
        raise ManifestError(f"row {line}: unknown session {values['session']!r}")
    values.update(gender=gender, condition=condition, session=session)
    return UtteranceRecord(**values)


def load_manifest(path, check_audio: bool = False) -> list[UtteranceRecord]:
    """Parse and validate a manifest CSV.

    Rows are numbered as file lines (header = line 1). With ``check_audio``
    every audio path must exist relative to the manifest directory.
    """
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        return []
    reader = csv.DictReader(text.splitlines())
    header = tuple(name.strip() for name in reader.fieldnames or ())
    if set(header) != set(MANIFEST_FIELDS):
        raise ManifestError(
            f"row 1: header must be {','.join(MANIFEST_FIELDS)}; got {','.join(header)}"
        )
    records: list[UtteranceRecord] = []
    seen: dict[str, int] = {}
    for line, row in enumerate(reader, start=2):
        if None in row:
            raise ManifestError(f"row {line}: too many columns")
        record = _normalize({k.strip(): v for k, v in row.items()}, line)
        if record.id in seen:
            raise ManifestError(f"row {line}: duplicate id {record.id!r} (first on row {seen[record.id]})")
        seen[record.id] = line
        if check_audio and not (path.parent / record.audio_path).is_file():
            raise ManifestError(f"row {line}: audio file not found: {path.parent / record.audio_path}")
        records.append(record)
    return records


def write_manifest(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow(asdict(record))


def resolve_audio(manifest_path, record: UtteranceRecord) -> Path:
    return Path(manifest_path).parent / record.audio_path


# -- synthetic corpus -------------------------------------------------------


@dataclass(frozen=True)
class ShoutTransform:
    f0_factor: float = 1.5
    energy_db: float = 6.0
    duration_factor: float = 0.85
    tilt_db_per_octave: float = 3.0


NEUTRAL = ShoutTransform(f0_factor=1.0, energy_db=0.0, duration_factor=1.0, tilt_db_per_octave=0.0)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic corpus.

    Besides the protocol sizes and the shout transform, the extra knobs set
    how far apart speakers sit: ``formant_spread`` (relative spread of the
    speaker resonances), ``f0_jitter`` (per-utterance log-F0 wobble) and
    ``contour_scale`` (depth of the sentence intonation contours). Session
    variability comes from ``gain_jitter_db`` and ``tilt_jitter_db``, drawn
    per repetition and shared by the neutral and shouted siblings.
    """

    speakers_per_gender: int = 10
    sentences: int = 4
    train_reps: int = 5
    test_reps: int = 4
    base_f0_ranges: dict = field(default_factory=lambda: {"M": (100.0, 140.0), "F": (180.0, 240.0)})
    envelope_seed: int = 7
    shout_transform: ShoutTransform = field(default_factory=ShoutTransform)
    sample_rate: int = 12000
    seed: int = 2024
    formant_spread: float = 0.12
    f0_jitter: float = 0.15
    contour_scale: float = 1.0
    noise_level: float = 0.03
    gain_jitter_db: float = 3.0
    tilt_jitter_db: float = 1.5

    def __post_init__(self):
        if min(self.speakers_per_gender, self.sentences, self.train_reps, self.test_reps) < 1:
            raise ValueError("speaker, sentence and repetition counts must be >= 1")
        if set(self.base_f0_ranges) != set(GENDERS):
            raise ValueError("base_f0_ranges needs exactly the keys M and F")
        for gender, (lo, hi) in self.base_f0_ranges.items():
            if not 0 < lo <= hi:
                raise ValueError(f"bad F0 range for {gender}: {(lo, hi)}")
            if lo < _PITCH_LIMITS.f0_min or hi > _PITCH_LIMITS.f0_max:
                raise ValueError(
                    f"F0 range for {gender} leaves the pitch tracker's "
                    f"[{_PITCH_LIMITS.f0_min:g}, {_PITCH_LIMITS.f0_max:g}] Hz"
                )
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["base_f0_ranges"] = {g: list(r) for g, r in self.base_f0_ranges.items()}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown synth spec fields: {sorted(unknown)}")
        if "shout_transform" in data:
            data["shout_transform"] = ShoutTransform(**data["shout_transform"])
        if "base_f0_ranges" in data:
            data["base_f0_ranges"] = {g: tuple(r) for g, r in data["base_f0_ranges"].items()}
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


# Nominal formant centres and bandwidths (Hz); female values are scaled up.
_FORMANTS = np.array([500.0, 1500.0, 2500.0])
_BANDWIDTHS = np.array([90.0, 130.0, 180.0])
_FEMALE_FORMANT_SCALE = 1.17
_SYLLABLES = 3
_EDGE_SECONDS = 0.06
_RAMP_SECONDS = 0.02
_NOMINAL_RMS = 0.05


def _rng(*key) -> np.random.Generator:
    words = [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in key]
    return np.random.default_rng(np.random.SeedSequence(words))


@dataclass(frozen=True)
class SpeakerVoice:
    speaker_id: str
    gender: str
    base_f0: float
    formants: np.ndarray
    bandwidths: np.ndarray
    excursion: float
    tempo: float
    syllable_stretch: np.ndarray
    pause_ratio: float
    syllable_levels_db: np.ndarray


@dataclass(frozen=True)
class SentenceShape:
    durations: np.ndarray  # seconds per syllable
    contour: np.ndarray  # log-F0 offsets at syllable start/end, (syllables, 2)
    register: float


def speaker_voice(spec: SynthSpec, gender: str, index: int) -> SpeakerVoice:
    rng = _rng(spec.envelope_seed, "speaker", gender, index)
    lo, hi = spec.base_f0_ranges[gender]
    scale = _FEMALE_FORMANT_SCALE if gender == "F" else 1.0
    formants = _FORMANTS * scale * np.exp(spec.formant_spread * rng.standard_normal(3))
    return SpeakerVoice(
        speaker_id=f"{gender}{index + 1:02d}",
        gender=gender,
        base_f0=float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
        formants=formants,
        bandwidths=_BANDWIDTHS * scale,
        excursion=float(rng.uniform(0.5, 1.6)),
        tempo=float(rng.uniform(0.85, 1.15)),
        syllable_stretch=rng.uniform(0.7, 1.3, _SYLLABLES),
        pause_ratio=float(rng.uniform(0.1, 0.35)),
        syllable_levels_db=rng.uniform(-5.0, 5.0, _SYLLABLES),
    )


def sentence_shape(spec: SynthSpec, index: int) -> SentenceShape:
    rng = _rng(spec.seed, "sentence", index)
    return SentenceShape(
        durations=rng.uniform(0.2, 0.34, _SYLLABLES),
        contour=rng.uniform(-0.15, 0.15, (_SYLLABLES, 2)),
        register=float(rng.uniform(-0.05, 0.05)),
    )


def _envelope(freqs: np.ndarray, voice: SpeakerVoice) -> np.ndarray:
    gain = np.ones_like(freqs)
    for fc, bw in zip(voice.formants, voice.bandwidths):
        gain *= fc ** 2 / np.sqrt((fc ** 2 - freqs ** 2) ** 2 + (bw * freqs) ** 2)
    return gain


def synthesize_utterance(
    spec: SynthSpec,
    voice: SpeakerVoice,
    sentence: SentenceShape,
    transform: ShoutTransform,
    rep_key: str,
    noise_key: str,
) -> AudioClip:
    """Harmonic source-filter rendition of one utterance.

    ``rep_key`` seeds the per-repetition variation shared by neutral and
    shouted siblings; ``noise_key`` seeds the additive noise.
    """
    rate = spec.sample_rate
    rep = _rng(spec.seed, "rep", rep_key)
    f0_offset = spec.f0_jitter * rep.standard_normal()
    stretch = 1.0 + 0.05 * rep.standard_normal(_SYLLABLES)
    gain_db = spec.gain_jitter_db * rep.standard_normal()
    tilt = transform.tilt_db_per_octave + spec.tilt_jitter_db * rep.standard_normal()

    durations = sentence.durations * voice.syllable_stretch * stretch * voice.tempo
    durations = durations * transform.duration_factor
    pause = voice.pause_ratio * float(np.mean(durations))
    edge = int(_EDGE_SECONDS * transform.duration_factor * rate)
    pause_n = int(pause * rate)

    pieces = [np.zeros(edge)]
    voiced_spans = []
    pos = edge
    nyquist = rate / 2.0
    ramp = int(_RAMP_SECONDS * rate)
    for k, dur in enumerate(durations):
        n = max(int(dur * rate), 4 * ramp)
        t = np.linspace(0.0, 1.0, n)
        start, end = sentence.contour[k] * spec.contour_scale * voice.excursion
        log_f0 = (
            math.log(voice.base_f0 * transform.f0_factor)
            + sentence.register
            + f0_offset
            + start
            + (end - start) * t
        )
        f0 = np.exp(log_f0)
        phase = 2.0 * np.pi * np.cumsum(f0) / rate
        wave = np.zeros(n)
        for h in range(1, int(nyquist / f0.min()) + 1):
            freq = h * f0
            amp = _envelope(freq, voice) / h
            amp *= 10.0 ** (tilt / 20.0 * np.log2(freq / 1000.0))
            amp[freq >= nyquist] = 0.0
            wave += amp * np.sin(h * phase)
        shape = np.ones(n)
        shape[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        shape[-ramp:] = shape[:ramp][::-1]
        wave *= shape * 10.0 ** (voice.syllable_levels_db[k] / 20.0)
        pieces.append(wave)
        voiced_spans.append((pos, pos + n))
        pos += n
        gap = pause_n if k < _SYLLABLES - 1 else edge
        pieces.append(np.zeros(gap))
        pos += gap

    signal = np.concatenate(pieces)
    voiced = np.concatenate([signal[a:b] for a, b in voiced_spans])
    signal *= _NOMINAL_RMS / np.sqrt(np.mean(voiced ** 2))
    noise = _rng(spec.seed, "noise", noise_key).standard_normal(len(signal))
    signal += spec.noise_level * _NOMINAL_RMS * noise
    signal *= 10.0 ** ((gain_db + transform.energy_db) / 20.0)
    peak = np.max(np.abs(signal))
    if peak > 1.0:
        raise ValueError(f"synthetic utterance {noise_key} clips (peak {peak:.3f})")
    return AudioClip(signal, rate)


def synthetic_records(spec: SynthSpec) -> list[tuple[UtteranceRecord, SpeakerVoice, int, str]]:
    """Manifest rows in generation order, with what is needed to render each."""
    rows = []
    for gender in GENDERS:
        for index in range(spec.speakers_per_gender):
            voice = speaker_voice(spec, gender, index)
            for s in range(spec.sentences):
                sentence_id = f"s{s + 1}"
                for condition in CONDITIONS:
                    for session, reps in (("train", spec.train_reps), ("test", spec.test_reps)):
                        for r in range(reps):
                            rep_key = f"{voice.speaker_id}_{sentence_id}_{session}{r + 1}"
                            uid = f"{voice.speaker_id}_{sentence_id}_{condition}_{session}{r + 1}"
                            record = UtteranceRecord(
                                id=uid,
                                audio_path=f"wav/{uid}.wav",
                                speaker_id=voice.speaker_id,
                                gender=gender,
                                sentence_id=sentence_id,
                                condition=condition,
                                session=session,
                            )
                            rows.append((record, voice, s, rep_key))
    return rows


def render(spec: SynthSpec, record: UtteranceRecord, voice: SpeakerVoice, sentence: int, rep_key: str) -> AudioClip:
    transform = spec.shout_transform if record.condition == "shouted" else NEUTRAL
    return synthesize_utterance(
        spec, voice, sentence_shape(spec, sentence), transform, rep_key, record.id
    )


def generate_synthetic_corpus(spec: SynthSpec, out_dir) -> Path:
    """Write WAVs under ``out_dir/wav`` plus ``manifest.csv`` and ``synth_spec.json``.

    Returns the manifest path.
    """
    out = Path(out_dir)
    try:
        (out / "wav").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out}: {exc}") from exc
    records = []
    for record, voice, sentence, rep_key in synthetic_records(spec):
        clip = render(spec, record, voice, sentence, rep_key)
        write_wav(out / record.audio_path, clip)
        records.append(record)
    manifest = out / "manifest.csv"
    write_manifest(manifest, records)
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return manifest
