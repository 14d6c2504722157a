"""Similarity scoring and correlation against detection-metric series.

The similarity score of a feature map is the cosine between its latent and
the GT representation; in the 2-D space (one row per camera) it is the
unweighted mean of per-camera cosines. Phase means are validated against
ingested metric series (mAP/NDS) with a population-moment Pearson
coefficient, computed two-pass in float64 and clamped to [-1, 1] against
rounding.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .embed import Representation
from .errors import (
    DegenerateVectorError,
    FormatError,
    PhaseMismatchError,
    ShapeMismatchError,
    ValidationError,
    ZeroVarianceError,
)

METRIC_NAMES = ("mAP", "NDS")


@dataclass
class SimilaritySeries:
    module_tag: str
    phase_scores: list[tuple[int, float, int]]  # (phase, mean score, sample count)

    def phases(self) -> list[int]:
        return [p for p, _, _ in self.phase_scores]

    def means(self) -> list[float]:
        return [m for _, m, _ in self.phase_scores]


@dataclass
class MetricSeries:
    name: str
    values: list[tuple[int, float]]  # (phase, value)

    def phases(self) -> list[int]:
        return [p for p, _ in self.values]


@dataclass
class SeriesReport:
    series: SimilaritySeries
    metrics: list[MetricSeries]
    rho: dict[str, float]
    embedding_source: dict
    config_digest: str


def similarity_score(r_fm: Representation, r_gt: Representation) -> float:
    """Cosine similarity between FM and GT representations; mean over cameras
    for the 2-D space."""
    if r_fm.space_tag != r_gt.space_tag:
        raise ShapeMismatchError(
            f"space tags differ: {r_fm.space_tag} vs {r_gt.space_tag} (sample {r_fm.sample_id!r})"
        )
    a, b = r_fm.vectors, r_gt.vectors
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"representation shapes differ: {a.shape} vs {b.shape} (sample {r_fm.sample_id!r})"
        )
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    for name, norms in (("feature", na), ("gt", nb)):
        bad = np.nonzero(norms <= 1e-12)[0]
        if bad.size:
            raise DegenerateVectorError(
                f"zero-norm {name} representation row (sample {r_fm.sample_id!r}, camera {bad[0]})"
            )
    cos = np.einsum("ij,ij->i", a, b) / (na * nb)
    return float(np.mean(cos))


def aggregate_phases(
    per_sample_scores: list[tuple[str, int, float]],
    module_tag: str = "",
    expected_phases: list[int] | None = None,
) -> SimilaritySeries:
    """Arithmetic mean per phase; samples are visited in sorted sample_id
    order so permuting the input never changes the result."""
    by_phase: dict[int, list[tuple[str, float]]] = {}
    for sample_id, phase, score in per_sample_scores:
        by_phase.setdefault(int(phase), []).append((sample_id, float(score)))
    phases = sorted(by_phase) if expected_phases is None else sorted(expected_phases)
    rows = []
    for phase in phases:
        entries = sorted(by_phase.get(phase, []))
        if not entries:
            raise ValidationError(f"phase {phase} has no scores")
        total = 0.0
        for _, score in entries:
            total += score
        rows.append((phase, total / len(entries), len(entries)))
    return SimilaritySeries(module_tag=module_tag, phase_scores=rows)


def pearson(s, m) -> float:
    """Population-moment Pearson correlation, two-pass, clamped to [-1, 1]."""
    s = np.asarray(s, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if s.ndim != 1 or m.ndim != 1 or s.shape != m.shape:
        raise ShapeMismatchError(f"series shapes differ: {s.shape} vs {m.shape}")
    if s.size < 2:
        raise ValidationError(f"need at least 2 points for correlation, got {s.size}")
    ds = s - s.mean()
    dm = m - m.mean()
    sig_s = float(np.sqrt(np.mean(ds * ds)))
    sig_m = float(np.sqrt(np.mean(dm * dm)))
    if sig_s <= 1e-12 or sig_m <= 1e-12:
        raise ZeroVarianceError(
            f"constant series (std {sig_s:.3e}, {sig_m:.3e}); correlation undefined"
        )
    rho = float(np.mean(ds * dm) / (sig_s * sig_m))
    return max(-1.0, min(1.0, rho))


def build_report(
    series: SimilaritySeries,
    metrics: list[MetricSeries],
    embedding_source: dict,
    config_digest: str,
) -> SeriesReport:
    rho = {}
    for metric in metrics:
        if metric.phases() != series.phases():
            raise PhaseMismatchError(
                f"metric {metric.name!r} phases {metric.phases()} != score phases {series.phases()}"
            )
        rho[metric.name] = pearson(series.means(), [v for _, v in metric.values])
    return SeriesReport(
        series=series,
        metrics=metrics,
        rho=rho,
        embedding_source=embedding_source,
        config_digest=config_digest,
    )


# ---------------------------------------------------------------------------
# file formats


def read_metrics_csv(path) -> list[MetricSeries]:
    """CSV with required header ``phase,mAP,NDS``, one row per phase."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty metrics file") from None
        if header != ["phase", "mAP", "NDS"]:
            raise FormatError(f"{path}: header must be 'phase,mAP,NDS', got {','.join(header)!r}")
        rows = []
        for i, row in enumerate(reader):
            if len(row) != 3:
                raise FormatError(f"{path}: row {i + 1} has {len(row)} fields, expected 3")
            try:
                rows.append((int(row[0]), float(row[1]), float(row[2])))
            except ValueError as e:
                raise FormatError(f"{path}: row {i + 1}: {e}") from e
    phases = [p for p, _, _ in rows]
    if len(set(phases)) != len(phases):
        raise FormatError(f"{path}: duplicate phase indices")
    rows.sort()
    return [
        MetricSeries("mAP", [(p, a) for p, a, _ in rows]),
        MetricSeries("NDS", [(p, n) for p, _, n in rows]),
    ]


def write_metrics_csv(path, metrics: list[MetricSeries]):
    by_name = {m.name: dict(m.values) for m in metrics}
    if set(by_name) != set(METRIC_NAMES):
        raise ValidationError(f"metrics CSV needs exactly {METRIC_NAMES}, got {sorted(by_name)}")
    phases = sorted(by_name["mAP"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("phase,mAP,NDS\n")
        for p in phases:
            fh.write(f"{p},{by_name['mAP'][p]!r},{by_name['NDS'][p]!r}\n")


def report_to_dict(report: SeriesReport) -> dict:
    return {
        "module_tag": report.series.module_tag,
        "phases": report.series.phases(),
        "mean_scores": report.series.means(),
        "sample_counts": [c for _, _, c in report.series.phase_scores],
        "rho": report.rho,
        "embedding_source": report.embedding_source,
        "config_digest": report.config_digest,
    }


def write_report_json(path, report: SeriesReport):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_report_csv(path, report: SeriesReport):
    """Flat plot-ready table: phase, mean score, and each metric column."""
    by_name = {m.name: dict(m.values) for m in report.metrics}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("phase,mean_score," + ",".join(METRIC_NAMES) + "\n")
        for phase, mean, _ in report.series.phase_scores:
            cells = [str(phase), repr(mean)] + [repr(by_name[n][phase]) for n in METRIC_NAMES]
            fh.write(",".join(cells) + "\n")
