"""Evaluation protocol, alpha sweeps and report files."""
from __future__ import annotations

import csv
import io
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import CONDITIONS, GENDERS, UtteranceRecord, load_manifest, resolve_audio
from .frontend import FeatureBundle, FrontendConfig, extract_features, read_wav
from .recognizer import (
    GenderModelSet,
    ModelConfig,
    SpeakerRegistry,
    argmax_first,
    component_scores,
    enroll_gender,
    enroll_speakers,
    fused_scores,
)
from .suprasegmental import check_alpha

log = logging.getLogger(__name__)

STAGES = ("gender", "speaker")
DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(11))
ACCURACY_COLUMNS = ("alpha", "stage", "condition", "correct", "total", "accuracy_pct")


class ProtocolError(ValueError):
    """The manifest cannot support the train/test protocol."""


class NumericError(ArithmeticError):
    """A model produced a non-finite score."""


def relative_improvement(new_pct: float, old_pct: float) -> float:
    """Percent change of ``new_pct`` over ``old_pct``."""
    if not old_pct > 0:
        raise ValueError(f"baseline accuracy must be positive, got {old_pct}")
    return (new_pct - old_pct) / old_pct * 100.0


def parse_alpha_range(text: str) -> list[float]:
    """``"0:1:0.1"`` -> [0.0, 0.1, ..., 1.0]; also accepts a comma list."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("alpha step must be positive")
        count = int(round((stop - start) / step)) + 1
        values = [round(start + i * step, 10) for i in range(count)]
    else:
        values = [float(x) for x in text.split(",") if x.strip()]
    for a in values:
        check_alpha(a)
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    manifest_path: Path
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    alpha: float = 0.5
    gender_alpha: float | None = None
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    output_dir: Path = Path("results")
    seed: int = 0

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.gender_alpha is not None:
            check_alpha(self.gender_alpha)
        for a in self.alphas:
            check_alpha(a)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        base = Path(base_dir)
        known = {"manifest_path", "frontend", "model", "alpha", "gender_alpha", "alphas", "output_dir", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment config fields: {sorted(unknown)}")
        if "manifest_path" not in data:
            raise ValueError("experiment config needs manifest_path")
        seed = int(data.get("seed", 0))
        model = dict(data.get("model", {}))
        model.setdefault("seed", seed)
        return cls(
            manifest_path=base / data["manifest_path"],
            frontend=FrontendConfig.from_dict(data.get("frontend", {})),
            model=ModelConfig.from_dict(model),
            alpha=float(data.get("alpha", 0.5)),
            gender_alpha=data.get("gender_alpha"),
            alphas=tuple(float(a) for a in data.get("alphas", DEFAULT_ALPHAS)),
            output_dir=base / data.get("output_dir", "results"),
            seed=seed,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


@dataclass
class AccuracyReport:
    alpha: float
    gender_alpha: float
    # (stage, condition) -> (labels, matrix[true, predicted])
    confusion: dict[tuple[str, str], tuple[list[str], np.ndarray]]
    model_checksums: dict[str, str] = field(default_factory=dict)

    def counts(self, stage: str, condition: str) -> tuple[int, int]:
        _, matrix = self.confusion[(stage, condition)]
        return int(np.trace(matrix)), int(matrix.sum())

    def accuracy(self, stage: str, condition: str) -> float:
        correct, total = self.counts(stage, condition)
        return correct / total * 100.0 if total else float("nan")

    def rows(self) -> list[tuple]:
        out = []
        for stage in STAGES:
            for condition in CONDITIONS:
                if (stage, condition) not in self.confusion:
                    continue
                correct, total = self.counts(stage, condition)
                out.append((self.alpha, stage, condition, correct, total, self.accuracy(stage, condition)))
        return out


@dataclass
class PreparedExperiment:
    """Enrolled models plus cached per-candidate component scores.

    Fusion happens at decision time, so every alpha reuses these scores.
    """

    config: ExperimentConfig
    models: GenderModelSet
    registry: SpeakerRegistry
    test: list[UtteranceRecord]
    gender_components: list[np.ndarray]
    speaker_components: dict[str, list[np.ndarray]]

    def checksums(self) -> dict[str, str]:
        sums = {f"gender:{p.label}": p.checksum() for p in self.models.pairs}
        for gender, pairs in self.registry.by_gender.items():
            sums.update({f"speaker:{p.label}": p.checksum() for p in pairs})
        return sums

    def report(self, alpha: float, gender_alpha: float | None = None) -> AccuracyReport:
        check_alpha(alpha)
        gender_alpha = alpha if gender_alpha is None else check_alpha(gender_alpha)
        speaker_labels = self.registry.labels()
        index = {label: i for i, label in enumerate(speaker_labels)}
        confusion = {}
        for condition in CONDITIONS:
            confusion[("gender", condition)] = (list(GENDERS), np.zeros((2, 2), dtype=np.int64))
            size = len(speaker_labels)
            confusion[("speaker", condition)] = (speaker_labels, np.zeros((size, size), dtype=np.int64))
        for i, record in enumerate(self.test):
            g = argmax_first(fused_scores(self.gender_components[i], gender_alpha))
            gender = self.models.pairs[g].label
            candidates = self.registry.speakers(gender)
            s = argmax_first(fused_scores(self.speaker_components[gender][i], alpha))
            speaker = candidates[s].label
            confusion[("gender", record.condition)][1][GENDERS.index(record.gender), GENDERS.index(gender)] += 1
            confusion[("speaker", record.condition)][1][index[record.speaker_id], index[speaker]] += 1
        present = {r.condition for r in self.test}
        confusion = {k: v for k, v in confusion.items() if k[1] in present}
        return AccuracyReport(alpha, gender_alpha, confusion, self.checksums())


def load_features(manifest_path, records, frontend: FrontendConfig) -> list[FeatureBundle]:
    return [extract_features(read_wav(resolve_audio(manifest_path, r)), frontend) for r in records]


def check_protocol(records: Sequence[UtteranceRecord]) -> None:
    """Reject manifests that cannot be scored under the train/test protocol."""
    train = [r for r in records if r.session == "train"]
    test = [r for r in records if r.session == "test"]
    if not train or not test:
        raise ProtocolError("manifest needs both train and test rows")
    for gender in GENDERS:
        if not any(r.gender == gender for r in train):
            raise ProtocolError(f"no training rows for gender {gender}")
    neutral_sentences: dict[str, set[str]] = defaultdict(set)
    for r in train:
        if r.condition == "neutral":
            neutral_sentences[r.speaker_id].add(r.sentence_id)
    for r in test:
        if r.speaker_id not in neutral_sentences:
            raise ProtocolError(f"test row {r.id}: speaker {r.speaker_id} is never enrolled")
        if r.sentence_id not in neutral_sentences[r.speaker_id]:
            raise ProtocolError(
                f"test row {r.id}: sentence {r.sentence_id} absent from speaker {r.speaker_id}'s training"
            )


def prepare(config: ExperimentConfig, models=None, registry=None) -> PreparedExperiment:
    records = load_manifest(config.manifest_path, check_audio=True)
    check_protocol(records)
    features = load_features(config.manifest_path, records, config.frontend)
    labeled = list(zip(records, features))
    log.info("loaded %d utterances", len(records))
    if models is None:
        models = enroll_gender(labeled, config.model)
    if registry is None:
        registry = enroll_speakers(labeled, config.model)
    test = [(r, f) for r, f in labeled if r.session == "test"]
    gender_components = [component_scores(models.pairs, f) for _, f in test]
    speaker_components = {
        g: [component_scores(registry.speakers(g), f) for _, f in test] for g in registry.by_gender
    }
    for block in [gender_components, *speaker_components.values()]:
        if not all(np.all(np.isfinite(c)) for c in block):
            raise NumericError("non-finite model score encountered")
    return PreparedExperiment(
        config, models, registry, [r for r, _ in test], gender_components, speaker_components
    )


def run_experiment(config: ExperimentConfig) -> AccuracyReport:
    return prepare(config).report(config.alpha, config.gender_alpha)


def sweep_alpha(config: ExperimentConfig, alphas: Sequence[float] | None = None) -> list[AccuracyReport]:
    """One report per alpha from a single enrollment."""
    alphas = list(config.alphas if alphas is None else alphas)
    if len(alphas) < 2:
        raise ValueError("an alpha sweep needs at least two values")
    prepared = prepare(config)
    return [prepared.report(a, a if config.gender_alpha is None else config.gender_alpha) for a in alphas]


# -- output ---------------------------------------------------------------


def accuracy_csv(reports: Sequence[AccuracyReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ACCURACY_COLUMNS)
    for report in reports:
        for alpha, stage, condition, correct, total, pct in report.rows():
            writer.writerow([repr(float(alpha)), stage, condition, correct, total, repr(float(pct))])
    return buf.getvalue()


def sweep_csv(reports: Sequence[AccuracyReport]) -> str:
    cells = [(s, c) for s in STAGES for c in CONDITIONS]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha"] + [f"{s}_{c}_pct" for s, c in cells])
    for report in reports:
        writer.writerow(
            [repr(float(report.alpha))]
            + [repr(float(report.accuracy(s, c))) if (s, c) in report.confusion else "" for s, c in cells]
        )
    return buf.getvalue()


def confusion_csv(labels: Sequence[str], matrix: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\predicted"] + list(labels))
    for label, row in zip(labels, matrix):
        writer.writerow([label] + [int(v) for v in row])
    return buf.getvalue()


def read_confusion_csv(text: str) -> tuple[list[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    labels = rows[0][1:]
    return labels, np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)


_PALETTE = {
    ("gender", "neutral"): "#1f77b4",
    ("gender", "shouted"): "#aec7e8",
    ("speaker", "neutral"): "#d62728",
    ("speaker", "shouted"): "#ff9896",
}


def sweep_svg(reports: Sequence[AccuracyReport], width: int = 640, height: int = 400) -> str:
    """Accuracy (%) against alpha, one polyline per stage x condition."""
    left, right, top, bottom = 60, 150, 20, 50
    plot_w, plot_h = width - left - right, height - top - bottom
    alphas = [r.alpha for r in reports]
    lo, hi = min(alphas), max(alphas)
    span = (hi - lo) or 1.0

    def x(a):
        return left + (a - lo) / span * plot_w

    def y(pct):
        return top + (100.0 - pct) / 100.0 * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>',
    ]
    for a in alphas:
        parts.append(
            f'<g class="xtick"><line x1="{x(a):.2f}" y1="{top + plot_h}" x2="{x(a):.2f}" '
            f'y2="{top + plot_h + 5}" stroke="black"/><text x="{x(a):.2f}" y="{top + plot_h + 18}" '
            f'font-size="11" text-anchor="middle">{a:g}</text></g>'
        )
    for pct in range(0, 101, 20):
        parts.append(
            f'<text x="{left - 8}" y="{y(pct) + 4:.2f}" font-size="11" text-anchor="end">{pct}</text>'
        )
    parts.append(
        f'<text x="{left + plot_w / 2:.1f}" y="{height - 10}" font-size="12" '
        f'text-anchor="middle">weighting factor alpha</text>'
    )
    parts.append(
        f'<text x="15" y="{top + plot_h / 2:.1f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 15 {top + plot_h / 2:.1f})">accuracy (%)</text>'
    )
    legend_y = top + 10
    for (stage, condition), colour in _PALETTE.items():
        if not all((stage, condition) in r.confusion for r in reports):
            continue
        points = " ".join(f"{x(r.alpha):.2f},{y(r.accuracy(stage, condition)):.2f}" for r in reports)
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{colour}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{left + plot_w + 10}" y="{legend_y}" font-size="11" fill="{colour}">'
            f"{stage} {condition}</text>"
        )
        legend_y += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(reports, output_dir, plot: bool = False) -> list[Path]:
    """Write accuracy.csv, confusion matrices, metadata and (for sweeps)
    sweep.csv / sweep.svg. Returns the written paths."""
    if isinstance(reports, AccuracyReport):
        reports = [reports]
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to emit")
    out = Path(output_dir)
    try:
        (out / "confusion").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    written = []

    def put(path: Path, text: str):
        path.write_text(text)
        written.append(path)

    put(out / "accuracy.csv", accuracy_csv(reports))
    for report in reports:
        for (stage, condition), (labels, matrix) in sorted(report.confusion.items()):
            name = f"{stage}_{condition}_alpha{report.alpha:.2f}.csv"
            put(out / "confusion" / name, confusion_csv(labels, matrix))
    metadata = {
        "reports": [
            {"alpha": r.alpha, "gender_alpha": r.gender_alpha, "model_checksums": r.model_checksums}
            for r in reports
        ]
    }
    put(out / "metadata.json", json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    if len(reports) > 1:
        put(out / "sweep.csv", sweep_csv(reports))
        if plot:
            put(out / "sweep.svg", sweep_svg(reports))
    return written
