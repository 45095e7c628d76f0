"""
Point-wise precision, recall and F1 with anomaly (label 0) as the positive
class, plus quantile threshold sweeps over continuous scores.

Zero denominators give 0 rather than NaN so that sweeps stay well defined.
No point-adjust credit is applied.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ContractError


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def f1_from_pr(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall (0 when both are 0)."""
    return _ratio(2.0 * precision * recall, precision + recall)


@dataclass
class ClassMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "ClassMetrics":
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        return cls(int(tp), int(fp), int(fn), int(tn), p, r, f1_from_pr(p, r))


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    threshold: float | None = None
    curve: list[dict] = field(default_factory=list)
    per_class: dict[int, ClassMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): asdict(v) for k, v in self.per_class.items()}
        return d

    def to_json(self, path=None, indent: int = 2) -> str:
        text = json.dumps(self.to_dict(), indent=indent, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    def format_table(self) -> str:
        rows = [("anomaly (0)", ClassMetrics(self.tp, self.fp, self.fn, self.tn,
                                            self.precision, self.recall, self.f1))]
        rows += [(f"device {c}", m) for c, m in sorted(self.per_class.items())]
        lines = [f"{'class':<14}{'P(%)':>8}{'R(%)':>8}{'F1(%)':>8}{'tp':>8}{'fp':>8}{'fn':>8}{'tn':>9}"]
        for name, m in rows:
            lines.append(f"{name:<14}{100 * m.precision:>8.2f}{100 * m.recall:>8.2f}"
                         f"{100 * m.f1:>8.2f}{m.tp:>8d}{m.fp:>8d}{m.fn:>8d}{m.tn:>9d}")
        if self.threshold is not None:
            lines.append(f"threshold = {self.threshold:.6g}")
        return "\n".join(lines)


def evaluate(pred, true, positive: int = 0) -> EvalReport:
    """Compare predicted and true step labels.

    Steps labelled ``positive`` (anomaly by default) form the positive class
    of the binary metrics. When the labels mention more than one normal
    device id, one-vs-rest metrics for each device are added to ``per_class``.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ContractError(f"label vectors must be 1-D and equal length, got {pred.shape} and {true.shape}")
    p_pos = pred == positive
    t_pos = true == positive
    tp = int(np.sum(p_pos & t_pos))
    fp = int(np.sum(p_pos & ~t_pos))
    fn = int(np.sum(~p_pos & t_pos))
    tn = int(np.sum(~p_pos & ~t_pos))
    m = ClassMetrics.from_counts(tp, fp, fn, tn)
    report = EvalReport(tp, fp, fn, tn, m.precision, m.recall, m.f1)

    devices = sorted((set(np.unique(true).tolist()) | set(np.unique(pred).tolist())) - {positive})
    if len(devices) > 1:
        for c in devices:
            pc, tc = pred == c, true == c
            report.per_class[int(c)] = ClassMetrics.from_counts(
                int(np.sum(pc & tc)), int(np.sum(pc & ~tc)),
                int(np.sum(~pc & tc)), int(np.sum(~pc & ~tc)))
    return report


@dataclass
class SweepResult:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    best_index: int

    @property
    def best_threshold(self) -> float:
        return float(self.thresholds[self.best_index])

    @property
    def best_f1(self) -> float:
        return float(self.f1[self.best_index])

    def as_rows(self) -> list[dict]:
        return [{"threshold": float(t), "precision": float(p), "recall": float(r), "f1": float(f)}
                for t, p, r, f in zip(self.thresholds, self.precision, self.recall, self.f1)]


def threshold_sweep(scores, true, n_points: int = 200, higher_is_anomalous: bool = True) -> SweepResult:
    """P/R/F1 at score quantile thresholds.

    A step is flagged anomalous when its score is strictly above the
    threshold (strictly below when ``higher_is_anomalous`` is False). ``true``
    holds step labels; label 0 is an anomaly. The best threshold maximizes
    F1, ties going to the lower threshold.
    """
    if n_points < 2:
        raise ConfigError("a sweep needs at least 2 points")
    s = np.asarray(scores, dtype=np.float64)
    anomalous = np.asarray(true) == 0
    if s.shape != anomalous.shape or s.ndim != 1 or s.size == 0:
        raise ContractError("scores and labels must be equal-length, non-empty 1-D arrays")
    if not higher_is_anomalous:
        s = -s

    thresholds = np.unique(np.quantile(s, np.linspace(0.0, 1.0, n_points)))
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    # anomalies among the top-j scores
    top_anom = np.concatenate([[0], np.cumsum(anomalous[order][::-1])])
    n = s.size
    n_above = n - np.searchsorted(sorted_s, thresholds, side="right")
    tp = top_anom[n_above].astype(np.float64)
    total_anom = float(anomalous.sum())
    precision = np.where(n_above > 0, tp / np.maximum(n_above, 1), 0.0)
    recall = tp / total_anom if total_anom > 0 else np.zeros_like(tp)
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    best = int(np.argmax(f1))
    if not higher_is_anomalous:
        thresholds = -thresholds
    return SweepResult(thresholds, precision, recall, f1, best)


def best_f1_report(scores, true, n_points: int = 200) -> EvalReport:
    """Evaluate binary predictions at the best-F1 threshold of a sweep."""
    sweep = threshold_sweep(scores, true, n_points)
    pred = np.where(np.asarray(scores) > sweep.best_threshold, 0, 1)
    truth = np.where(np.asarray(true) == 0, 0, 1)
    report = evaluate(pred, truth)
    report.threshold = sweep.best_threshold
    report.curve = sweep.as_rows()
    return report
