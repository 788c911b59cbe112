"""Foreground-detection and background-recovery metrics.

Masks are compared pixelwise; an optional ``ignore`` mask removes pixels
(e.g. outside a region of interest) from every count.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateInputError, DimensionMismatchError, InvalidInputError

ROC_THRESHOLDS = np.round(np.linspace(0.0, 1.0, 101), 2)
HISTOGRAM_BINS = 50


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class FMeasure:
    re: float
    pre: float
    f1: float
    undefined: frozenset = frozenset()


def _as_bool(a, name):
    a = np.asarray(a)
    if a.dtype == bool:
        return a
    if not np.all((a == 0) | (a == 1)):
        raise InvalidInputError(f"{name} must be binary")
    return a.astype(bool)


def _check_shapes(*arrays):
    shapes = {np.shape(a) for a in arrays if a is not None}
    if len(shapes) > 1:
        raise DimensionMismatchError(f"shape mismatch: {sorted(shapes)}")


def confusion(mask, truth, ignore=None):
    _check_shapes(mask, truth, ignore)
    mask = _as_bool(mask, "mask")
    truth = _as_bool(truth, "truth")
    keep = np.ones_like(mask) if ignore is None else ~_as_bool(ignore, "ignore")
    return ConfusionCounts(
        tp=int(np.sum(mask & truth & keep)),
        tn=int(np.sum(~mask & ~truth & keep)),
        fp=int(np.sum(mask & ~truth & keep)),
        fn=int(np.sum(~mask & truth & keep)),
    )


def f_measure(c):
    """Recall, precision and F1; undefined ratios are reported as 0 and flagged."""
    undefined = set()
    if c.tp + c.fn == 0:
        re = 0.0
        undefined.add("re")
    else:
        re = c.tp / (c.tp + c.fn)
    if c.tp + c.fp == 0:
        pre = 0.0
        undefined.add("pre")
    else:
        pre = c.tp / (c.tp + c.fp)
    if re + pre == 0:
        f1 = 0.0
        undefined.add("f1")
    else:
        f1 = 2 * pre * re / (pre + re)
    return FMeasure(re, pre, f1, frozenset(undefined))


def binarize(W, cut=0.5):
    """Foreground where the soft mask exceeds ``cut``."""
    return np.asarray(W, dtype=float) > cut


def psnr(recovered, truth):
    """PSNR in dB with peak 1.0; identical inputs give ``inf``."""
    _check_shapes(recovered, truth)
    mse = float(np.mean((np.asarray(recovered, float) - np.asarray(truth, float)) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def roc_curve(W, truth, ignore=None, thresholds=ROC_THRESHOLDS):
    """ROC points over a threshold sweep, and the trapezoidal AUC.

    A pixel is called foreground at threshold ``t`` when ``W >= t``. Returns
    ``(points, auc)`` with ``points`` an array of ``(fpr, tpr)`` rows, one per
    threshold, in threshold order.
    """
    _check_shapes(W, truth, ignore)
    W = np.asarray(W, dtype=float)
    truth = _as_bool(truth, "truth")
    keep = np.ones(W.shape, bool) if ignore is None else ~_as_bool(ignore, "ignore")
    scores = W[keep]
    labels = truth[keep]
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("ROC needs both foreground and background pixels")
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    thresholds = np.asarray(thresholds, dtype=float)
    # count of scores >= t
    tpr = (n_pos - np.searchsorted(pos, thresholds, side="left")) / n_pos
    fpr = (n_neg - np.searchsorted(neg, thresholds, side="left")) / n_neg
    points = np.column_stack([fpr, tpr])
    return points, auc_from_points(points)


def auc_from_points(points):
    """Trapezoidal area under ROC points, anchored at (0, 0) and (1, 1)."""
    pts = np.vstack([[0.0, 0.0], np.asarray(points, float), [1.0, 1.0]])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


def mask_histogram(W, bins=HISTOGRAM_BINS):
    counts, _ = np.histogram(np.asarray(W, float), bins=bins, range=(0.0, 1.0))
    return counts


def binarity(W, margin=0.05):
    """Fraction of entries within ``margin`` of 0 or 1."""
    W = np.asarray(W, dtype=float)
    return float(np.mean((W <= margin) | (W >= 1.0 - margin)))


@dataclass
class EvalReport:
    re: float
    pre: float
    f1: float
    undefined: frozenset = frozenset()
    psnr: float = None
    roc: np.ndarray = None
    auc: float = None
    histogram: np.ndarray = None
    counts: ConfusionCounts = None
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        out = {"re": self.re, "pre": self.pre, "f1": self.f1}
        if self.undefined:
            out["undefined"] = ",".join(sorted(self.undefined))
        if self.counts is not None:
            out.update(tp=self.counts.tp, tn=self.counts.tn, fp=self.counts.fp, fn=self.counts.fn)
        if self.psnr is not None:
            out["psnr"] = self.psnr
        if self.auc is not None:
            out["auc"] = self.auc
        if self.histogram is not None:
            out["histogram"] = ",".join(str(int(c)) for c in self.histogram)
        out.update(self.extra)
        return out

    def to_keyvalue(self):
        return "".join(f"{k}={float(v)!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in self.as_dict().items())

    def to_csv(self):
        d = self.as_dict()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(d.keys())
        writer.writerow(repr(float(v)) if isinstance(v, float) else v for v in d.values())
        return buf.getvalue()

    def roc_csv(self):
        if self.roc is None:
            return None
        lines = ["fpr,tpr"] + [f"{fpr!r},{tpr!r}" for fpr, tpr in self.roc.tolist()]
        return "\n".join(lines) + "\n"


def evaluate(W, truth, ignore=None, recovered_L=None, true_L=None, roc=False, cut=0.5):
    """Full report for a (soft or binary) mask against a binary ground truth."""
    W = np.asarray(W, dtype=float)
    counts = confusion(binarize(W, cut), truth, ignore)
    fm = f_measure(counts)
    report = EvalReport(fm.re, fm.pre, fm.f1, fm.undefined, counts=counts,
                        histogram=mask_histogram(W))
    if recovered_L is not None and true_L is not None:
        report.psnr = psnr(recovered_L, true_L)
    if roc:
        report.roc, report.auc = roc_curve(W, truth, ignore)
    return report
