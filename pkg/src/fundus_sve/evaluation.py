"""Confusion-matrix metrics, one-vs-rest ROC curves and AUC summaries.

Per-class metrics come from the one-vs-rest TP/FP/FN/TN reduction of
the confusion matrix; 0/0 cases are reported as 0 with a degeneracy
flag so the aggregates stay total. ROC curves sweep every distinct
score as a threshold with tied scores grouped, and AUC is the
trapezoidal area.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METRIC_NAMES = ("precision", "recall", "specificity", "f1", "accuracy")


class EvaluationError(Exception):
    pass


def confusion(true_labels, predicted_labels, class_count: int) -> np.ndarray:
    """C x C counts; entry (i, j) = samples with true i predicted j."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise EvaluationError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= class_count):
        raise EvaluationError(f"labels outside 0..{class_count - 1}")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass
class ClassMetrics:
    per_class: list  # one dict per class with METRIC_NAMES + support + degenerate
    weighted_avg: dict
    macro_avg: dict
    overall_accuracy: float


def class_metrics(cm) -> ClassMetrics:
    """Per-class one-vs-rest metrics and their weighted/macro averages."""
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    n = cm.shape[0]
    per_class = []
    for c in range(n):
        tp = int(cm[c, c])
        fn = int(cm[c].sum() - tp)
        fp = int(cm[:, c].sum() - tp)
        tn = total - tp - fn - fp
        support = tp + fn
        degenerate = []

        def ratio(num, den, name):
            if den == 0:
                degenerate.append(name)
                return 0.0
            return num / den

        precision = ratio(tp, tp + fp, "precision")
        recall = ratio(tp, tp + fn, "recall")
        specificity = ratio(tn, tn + fp, "specificity")
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            degenerate.append("f1")
            f1 = 0.0
        accuracy = ratio(tp + tn, total, "accuracy")
        per_class.append({
            "precision": precision, "recall": recall, "specificity": specificity,
            "f1": f1, "accuracy": accuracy, "support": support,
            "degenerate": degenerate,
        })

    supports = np.array([m["support"] for m in per_class], dtype=np.float64)
    weights = supports / total if total else np.zeros(n)
    weighted = {name: float(sum(w * m[name] for w, m in zip(weights, per_class)))
                for name in METRIC_NAMES}
    macro = {name: float(np.mean([m[name] for m in per_class])) if n else 0.0
             for name in METRIC_NAMES}
    overall = float(np.trace(cm) / total) if total else 0.0
    return ClassMetrics(per_class=per_class, weighted_avg=weighted,
                        macro_avg=macro, overall_accuracy=overall)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    positive_class: int = -1


def roc_curve(scores, truth, positive_class: int = -1) -> RocCurve:
    """Threshold sweep over one score column against binary truth.

    Tied scores move TPR and FPR together; endpoints (0,0) and (1,1)
    are always present; AUC is the trapezoidal area.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.shape != truth.shape:
        raise EvaluationError("scores and truth disagree in length")
    pos = int(truth.sum())
    neg = len(truth) - pos
    if pos == 0 or neg == 0:
        raise EvaluationError("ROC needs at least one positive and one negative sample")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    # last index of every tied-score group
    distinct = np.flatnonzero(np.diff(s) != 0)
    ends = np.concatenate([distinct, [len(s) - 1]])
    cum_tp = np.cumsum(t)[ends]
    cum_fp = np.cumsum(1 - t)[ends]
    tpr = np.concatenate([[0.0], cum_tp / pos])
    fpr = np.concatenate([[0.0], cum_fp / neg])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, auc=auc, positive_class=positive_class)


def multiclass_auc(scores, truth) -> dict:
    """One-vs-rest AUC per present class plus macro/weighted averages.

    Absent classes get auc None and are excluded from both averages;
    weighted uses true-class supports.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    n_classes = scores.shape[1]
    present = np.unique(truth)
    if len(present) < 2:
        raise EvaluationError("multiclass AUC needs at least two classes present")
    per_class = {}
    defined = []
    supports = []
    for c in range(n_classes):
        binary = (truth == c).astype(np.int64)
        if 0 < binary.sum() < len(binary):
            curve = roc_curve(scores[:, c], binary, positive_class=c)
            per_class[c] = curve.auc
            defined.append(curve.auc)
            supports.append(int(binary.sum()))
        else:
            per_class[c] = None
    supports = np.asarray(supports, dtype=np.float64)
    return {
        "per_class": per_class,
        "macro": float(np.mean(defined)),
        "weighted": float(np.average(defined, weights=supports)),
    }


@dataclass
class EvaluationReport:
    confusion: np.ndarray
    metrics: ClassMetrics
    rocs: dict  # class -> RocCurve for present classes
    auc: dict
    metadata: dict = field(default_factory=dict)


def build_report(cm, metrics: ClassMetrics, rocs: dict, auc: dict,
                 metadata=None) -> EvaluationReport:
    cm = np.asarray(cm, dtype=np.int64)
    n = cm.shape[0]
    if len(metrics.per_class) != n:
        raise EvaluationError("confusion matrix and metrics disagree on class count")
    for c in rocs:
        if not (0 <= c < n):
            raise EvaluationError(f"ROC class {c} outside confusion matrix range")
    return EvaluationReport(confusion=cm, metrics=metrics, rocs=rocs, auc=auc,
                            metadata=dict(metadata or {}))


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "confusion": report.confusion.tolist(),
        "per_class": report.metrics.per_class,
        "weighted_avg": report.metrics.weighted_avg,
        "macro_avg": report.metrics.macro_avg,
        "overall_accuracy": report.metrics.overall_accuracy,
        "auc": {
            "per_class": {str(c): v for c, v in report.auc["per_class"].items()},
            "macro": report.auc["macro"],
            "weighted": report.auc["weighted"],
        },
        "roc": {str(c): {"fpr": curve.fpr.tolist(), "tpr": curve.tpr.tolist(),
                         "auc": curve.auc}
                for c, curve in report.rocs.items()},
        "metadata": report.metadata,
    }


def save_report(report: EvaluationReport, path) -> None:
    """JSON report plus confusion.csv and roc_class{c}.csv beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_to_dict(report), sort_keys=True, indent=2))
    with open(path.parent / "confusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + list(range(report.confusion.shape[0])))
        for i, row in enumerate(report.confusion):
            writer.writerow([i] + [int(v) for v in row])
    for c, curve in report.rocs.items():
        with open(path.parent / f"roc_class{c}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr"])
            for f, t in zip(curve.fpr, curve.tpr):
                writer.writerow([repr(float(f)), repr(float(t))])


def load_report(path) -> EvaluationReport:
    data = json.loads(Path(path).read_text())
    metrics = ClassMetrics(
        per_class=data["per_class"],
        weighted_avg=data["weighted_avg"],
        macro_avg=data["macro_avg"],
        overall_accuracy=data["overall_accuracy"],
    )
    rocs = {int(c): RocCurve(fpr=np.array(d["fpr"]), tpr=np.array(d["tpr"]),
                             auc=d["auc"], positive_class=int(c))
            for c, d in data["roc"].items()}
    auc = {
        "per_class": {int(c): v for c, v in data["auc"]["per_class"].items()},
        "macro": data["auc"]["macro"],
        "weighted": data["auc"]["weighted"],
    }
    return EvaluationReport(confusion=np.array(data["confusion"], dtype=np.int64),
                            metrics=metrics, rocs=rocs, auc=auc,
                            metadata=data.get("metadata", {}))


def evaluate_scores(scores, truth, class_count: int,
                    predicted=None, metadata=None) -> EvaluationReport:
    """Full report from a score matrix: argmax labels (unless given),
    confusion metrics, per-class ROC and AUC summaries."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted is None:
        predicted = scores.argmax(axis=1)
    cm = confusion(truth, predicted, class_count)
    metrics = class_metrics(cm)
    auc = multiclass_auc(scores, truth)
    rocs = {}
    for c, value in auc["per_class"].items():
        if value is not None:
            rocs[c] = roc_curve(scores[:, c], (truth == c).astype(np.int64),
                                positive_class=c)
    return build_report(cm, metrics, rocs, auc, metadata=metadata)
