"""Post-processing of HR predictions and per-subject MAE reporting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SUBJECTS_DALIA = tuple(f"S{i}" for i in range(1, 16))

# Published per-subject MAE [BPM] on PPG-DaLiA, S1..S15.
PUBLISHED_MAE = {
    "AugmentPPG": (4.37, 3.74, 2.43, 5.49, 9.41, 3.63, 2.23, 7.86, 8.94, 3.32, 5.34, 7.64, 2.03, 2.94, 3.58),
    "PULSE": (3.78, 3.04, 2.20, 4.41, 6.95, 3.71, 2.39, 8.17, 6.19, 2.60, 3.85, 5.22, 1.98, 3.13, 2.79),
    "KID-PPG*": (4.27, 3.46, 2.07, 5.61, 3.01, 2.74, 1.39, 7.13, 9.53, 2.77, 3.58, 4.52, 1.48, 2.48, 2.84),
    "PULSE+SSL+DA": (3.35, 3.15, 2.20, 4.38, 5.64, 2.35, 1.93, 5.16, 6.38, 2.87, 3.30, 5.49, 1.84, 2.43, 2.53),
}


@dataclass
class HRSeries:
    subject_id: str
    predictions: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=np.float64).ravel()
        if not np.isfinite(self.predictions).all():
            raise ValueError(f"{self.subject_id}: non-finite predictions")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
            if len(self.labels) != len(self.predictions):
                raise ValueError(
                    f"{self.subject_id}: {len(self.predictions)} predictions vs {len(self.labels)} labels"
                )

    def __len__(self):
        return len(self.predictions)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["subject", "prediction", "label"])
            for i, p in enumerate(self.predictions):
                lab = "" if self.labels is None else repr(float(self.labels[i]))
                w.writerow([self.subject_id, repr(float(p)), lab])

    @classmethod
    def load(cls, path) -> "HRSeries":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise ValueError(f"{path}: empty prediction file")
        preds = [float(r["prediction"]) for r in rows]
        labels = None if any(r["label"] == "" for r in rows) else [float(r["label"]) for r in rows]
        return cls(rows[0]["subject"], preds, labels)


def clip_postprocess(series: HRSeries, history: int = 10, tol: float = 0.10) -> HRSeries:
    """Clamp each prediction into ±tol around the mean of the previous
    ``history`` outputs. The first ``history`` values pass through; the
    rolling window holds clipped outputs."""
    if history < 1:
        raise ValueError("history must be >= 1")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    p = series.predictions
    out = np.empty_like(p)
    running = 0.0  # sum of the last `history` outputs
    for i, v in enumerate(p):
        if i >= history:
            m = running / history
            # band edges computed once so a second pass sees edge values as inside
            lo, hi = m - tol * abs(m), m + tol * abs(m)
            if v > hi:
                v = hi
            elif v < lo:
                v = lo
        out[i] = v
        running += v
        if i >= history:
            running -= out[i - history]
    return replace(series, predictions=out)


def rolling_means(values: np.ndarray, history: int) -> np.ndarray:
    """Mean of the ``history`` values preceding each index >= history."""
    c = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(history, len(values))
    return (c[idx] - c[idx - history]) / history


def mae(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(truth)}")
    if len(pred) == 0:
        raise ValueError("mae of empty arrays")
    return float(np.mean(np.abs(pred - truth)))


def series_mae(series: HRSeries) -> float:
    if series.labels is None:
        raise ValueError(f"{series.subject_id}: no labels to score against")
    return mae(series.predictions, series.labels)


@dataclass
class MetricsReport:
    per_subject_mae: dict
    mean_mae: float
    baselines: dict = field(default_factory=dict)
    name: str = "this run"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "per_subject_mae": self.per_subject_mae,
            "mean_mae": self.mean_mae,
            "baselines": {k: dict(v) for k, v in self.baselines.items()},
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _subject_key(s: str):
    digits = "".join(c for c in s if c.isdigit())
    return (int(digits) if digits else 0, s)


def aggregate_report(per_subject: dict, baselines: dict | None = None, name: str = "this run") -> MetricsReport:
    if not per_subject:
        raise ValueError("no subjects to aggregate")
    per_subject = {k: float(per_subject[k]) for k in sorted(per_subject, key=_subject_key)}
    norm_baselines = {}
    for bname, row in (baselines or {}).items():
        if not isinstance(row, dict):
            row = dict(zip(SUBJECTS_DALIA, row))
        norm_baselines[bname] = {k: float(v) for k, v in row.items()}
    return MetricsReport(per_subject, float(np.mean(list(per_subject.values()))), norm_baselines, name)


def published_baselines(names=None) -> dict:
    names = names or list(PUBLISHED_MAE)
    return {n: dict(zip(SUBJECTS_DALIA, PUBLISHED_MAE[n])) for n in names}


def render_table(report: MetricsReport, delimiter: str = "\t") -> str:
    """Rows = models, columns = subjects then Mean, values to 2 d.p."""
    subjects = list(report.per_subject_mae)
    for row in report.baselines.values():
        subjects += [s for s in row if s not in subjects]
    subjects.sort(key=_subject_key)
    lines = [delimiter.join(["Model", *subjects, "Mean"])]
    rows = list(report.baselines.items()) + [(report.name, report.per_subject_mae)]
    for name, row in rows:
        cells = [f"{row[s]:.2f}" if s in row else "-" for s in subjects]
        lines.append(delimiter.join([name, *cells, f"{np.mean(list(row.values())):.2f}"]))
    return "\n".join(lines)


def plot_report(report: MetricsReport, path) -> Path:
    """Bar per model (mean MAE) with one dot per subject."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(report.baselines.items()) + [(report.name, report.per_subject_mae)]
    fig, ax = plt.subplots(figsize=(1.4 * len(rows) + 2, 4))
    rng = np.random.default_rng(0)
    for i, (name, row) in enumerate(rows):
        vals = np.array(list(row.values()))
        ax.bar(i, vals.mean(), color="C0" if name == report.name else "0.7", width=0.6)
        ax.scatter(i + rng.uniform(-0.15, 0.15, len(vals)), vals, s=12, color="k", zorder=3)
        ax.text(i, vals.mean(), f"{vals.mean():.2f}", ha="center", va="bottom", fontsize=8)
    ax.set_xticks(range(len(rows)), [n for n, _ in rows], rotation=20, ha="right")
    ax.set_ylabel("MAE [BPM]")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def write_report(report: MetricsReport, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "table": out_dir / "mae_table.tsv",
        "json": out_dir / "report.json",
        "plot": out_dir / "mae_per_subject.png",
    }
    paths["table"].write_text(render_table(report) + "\n")
    report.save(paths["json"])
    plot_report(report, paths["plot"])
    return paths
