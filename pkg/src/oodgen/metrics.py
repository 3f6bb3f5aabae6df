"""OOD detection metrics.

Scores follow one convention throughout: larger means "more OOD", and OOD
samples are the positive class. A sample is flagged as OOD at threshold
``t`` when its score is ``>= t``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .nn import ContractError

METRIC_COLUMNS = ("fpr_at_95_tpr", "detection_error", "auroc", "aupr_out", "aupr_in")


def _check(scores_in, scores_out):
    s_in = np.asarray(scores_in, dtype=np.float64).reshape(-1)
    s_out = np.asarray(scores_out, dtype=np.float64).reshape(-1)
    if s_in.size == 0 or s_out.size == 0:
        raise ContractError("both score sets must be nonempty")
    if not (np.all(np.isfinite(s_in)) and np.all(np.isfinite(s_out))):
        raise ContractError("scores must be finite")
    return s_in, s_out


def _sweep(s_in, s_out):
    """Cumulative (in, out) counts flagged at each distinct threshold, high to low."""
    scores = np.concatenate([s_out, s_in])
    is_out = np.concatenate([np.ones(s_out.size), np.zeros(s_in.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, is_out = scores[order], is_out[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.diff(scores) != 0)
    ends = np.append(ends, scores.size - 1)
    tp = np.cumsum(is_out)[ends]
    fp = (ends + 1) - tp
    return fp, tp, scores[ends]


def roc_curve(scores_in, scores_out):
    """FPR and TPR at every distinct threshold, starting from (0, 0)."""
    s_in, s_out = _check(scores_in, scores_out)
    fp, tp, _ = _sweep(s_in, s_out)
    fpr = np.concatenate([[0.0], fp / s_in.size])
    tpr = np.concatenate([[0.0], tp / s_out.size])
    return fpr, tpr


def auroc(scores_in, scores_out) -> float:
    """Trapezoidal area under the ROC curve; ties between classes count one half."""
    s_in, s_out = _check(scores_in, scores_out)
    fp, tp, _ = _sweep(s_in, s_out)
    # trapezoids on integer counts stay exact; normalise once at the end
    fp = np.concatenate([[0.0], fp])
    tp = np.concatenate([[0.0], tp])
    area2 = np.sum(np.diff(fp) * (tp[1:] + tp[:-1]))
    return float(area2 / (2.0 * s_in.size * s_out.size))


def fpr_at_tpr(scores_in, scores_out, tpr_target=0.95) -> float:
    """In-distribution false-positive rate at the highest threshold catching ``tpr_target`` of OOD."""
    s_in, s_out = _check(scores_in, scores_out)
    fp, tp, _ = _sweep(s_in, s_out)
    need = tpr_target * s_out.size
    k = np.flatnonzero(tp >= need - 1e-9 * s_out.size)[0]
    return float(fp[k] / s_in.size)


def detection_error(scores_in, scores_out) -> float:
    """Minimum over thresholds of ``(FPR + FNR) / 2``, i.e. error under equal priors."""
    s_in, s_out = _check(scores_in, scores_out)
    fp, tp, _ = _sweep(s_in, s_out)
    fpr = np.concatenate([[0.0], fp / s_in.size])
    fnr = np.concatenate([[1.0], 1.0 - tp / s_out.size])
    return float(np.min(0.5 * (fpr + fnr)))


def aupr(scores_in, scores_out, positive="out") -> float:
    """Average precision: sum over thresholds of recall gain times precision."""
    s_in, s_out = _check(scores_in, scores_out)
    if positive == "in":
        s_in, s_out = -s_out, -s_in
    elif positive != "out":
        raise ContractError(f"positive must be 'in' or 'out', got {positive!r}")
    fp, tp, _ = _sweep(s_in, s_out)
    precision = tp / (tp + fp)
    recall_gain = np.diff(np.concatenate([[0.0], tp])) / s_out.size
    return float(np.sum(recall_gain * precision))


@dataclass
class MetricsReport:
    in_dataset: str
    ood_dataset: str
    rule: str
    n_in: int
    n_out: int
    fpr_at_95_tpr: float
    detection_error: float
    auroc: float
    aupr_out: float
    aupr_in: float
    seed: int | None = None

    def values(self):
        return {k: getattr(self, k) for k in METRIC_COLUMNS}

    def as_row(self):
        row = asdict(self)
        for k in METRIC_COLUMNS:
            row[k] = repr(float(row[k]))
        return row


def evaluate(scores_in, scores_out, rule="", in_dataset="", ood_dataset="", seed=None) -> MetricsReport:
    s_in, s_out = _check(scores_in, scores_out)
    return MetricsReport(
        in_dataset,
        ood_dataset,
        rule,
        int(s_in.size),
        int(s_out.size),
        fpr_at_tpr(s_in, s_out, 0.95),
        detection_error(s_in, s_out),
        auroc(s_in, s_out),
        aupr(s_in, s_out, "out"),
        aupr(s_in, s_out, "in"),
        seed,
    )


REPORT_FIELDS = tuple(MetricsReport.__dataclass_fields__)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.as_row())
    return buf.getvalue()


def reports_from_csv(text) -> list:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(
            MetricsReport(
                row["in_dataset"],
                row["ood_dataset"],
                row["rule"],
                int(row["n_in"]),
                int(row["n_out"]),
                *(float(row[k]) for k in ("fpr_at_95_tpr", "detection_error", "auroc", "aupr_out", "aupr_in")),
                seed=int(row["seed"]) if row.get("seed") not in (None, "", "None") else None,
            )
        )
    return out


def reports_to_json(reports, accuracy=None) -> str:
    """Nested ``{in_dataset: {ood_dataset: {rule: metrics}}}``, the shape of a results table."""
    table = {}
    for r in reports:
        table.setdefault(r.in_dataset, {}).setdefault(r.ood_dataset, {})[r.rule] = r.values()
    doc = {"columns": list(METRIC_COLUMNS), "results": table}
    if accuracy is not None:
        doc["accuracy"] = accuracy
    return json.dumps(doc, indent=2, sort_keys=True)


def format_table(reports) -> str:
    """Percentages with one decimal, one line per (in, ood, rule)."""
    head = f"{'in':<12} {'ood':<18} {'rule':<20} " + " ".join(f"{c:>15}" for c in METRIC_COLUMNS)
    lines = [head]
    for r in reports:
        vals = " ".join(f"{100 * v:>15.1f}" for v in r.values().values())
        lines.append(f"{r.in_dataset:<12} {r.ood_dataset:<18} {r.rule:<20} {vals}")
    return "\n".join(lines)
