"""Pairwise (Fowlkes-Mallows) and BCubed clustering scores.

Both optimized routines go through a contingency table and keep the BCubed
averages as exact fractions, so they agree bit-for-bit with the literal
per-pair / per-point oracles below.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .qsim import ContractError


@dataclass(frozen=True)
class MetricReport:
    pairwise_precision: float
    pairwise_recall: float
    pairwise_f: float
    bcubed_precision: float
    bcubed_recall: float
    bcubed_f: float
    tp: int
    fp: int
    fn: int

    def as_dict(self) -> dict:
        return {
            "pairwise_precision": self.pairwise_precision,
            "pairwise_recall": self.pairwise_recall,
            "pairwise_f": self.pairwise_f,
            "bcubed_precision": self.bcubed_precision,
            "bcubed_recall": self.bcubed_recall,
            "bcubed_f": self.bcubed_f,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }

    def to_kv(self, prefix: str = "") -> str:
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{prefix}{k}={v:.10f}" if isinstance(v, float) else f"{prefix}{k}={v}")
        return "\n".join(lines)

    def summary(self) -> str:
        return (
            f"Pairwise  P={self.pairwise_precision:.4f}  R={self.pairwise_recall:.4f}  F={self.pairwise_f:.4f}\n"
            f"BCubed    P={self.bcubed_precision:.4f}  R={self.bcubed_recall:.4f}  F={self.bcubed_f:.4f}"
        )


def _check(gt, pred):
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    if gt.shape != pred.shape:
        raise ContractError(f"label vectors differ in length: {gt.shape[0]} vs {pred.shape[0]}")
    return gt.tolist(), pred.tolist()


def _pairs(n: int) -> int:
    return n * (n - 1) // 2


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def pair_counts(gt, pred):
    g, p = _check(gt, pred)
    cells = Counter(zip(g, p))
    tp = sum(_pairs(c) for c in cells.values())
    pred_pairs = sum(_pairs(c) for c in Counter(p).values())
    gt_pairs = sum(_pairs(c) for c in Counter(g).values())
    return tp, pred_pairs - tp, gt_pairs - tp


def pair_oracle(gt, pred):
    """Literal O(N^2) enumeration of (TP, FP, FN) over unordered pairs."""
    g, p = _check(gt, pred)
    tp = fp = fn = 0
    for i in range(len(g)):
        for j in range(i + 1, len(g)):
            same_g = g[i] == g[j]
            same_p = p[i] == p[j]
            if same_g and same_p:
                tp += 1
            elif same_p:
                fp += 1
            elif same_g:
                fn += 1
    return tp, fp, fn


def fowlkes_mallows(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        return 0.0
    return tp / math.sqrt((tp + fp) * (tp + fn))


def pairwise_f(gt, pred):
    """Returns (precision, recall, F_P, (TP, FP, FN))."""
    tp, fp, fn = pair_counts(gt, pred)
    return _ratio(tp, tp + fp), _ratio(tp, tp + fn), fowlkes_mallows(tp, fp, fn), (tp, fp, fn)


def _harmonic(p: Fraction, r: Fraction) -> Fraction:
    return 2 * p * r / (p + r) if p + r else Fraction(0)


def bcubed_fractions(gt, pred):
    g, p = _check(gt, pred)
    n = len(g)
    if n == 0:
        raise ContractError("empty labelings")
    cells = Counter(zip(g, p))
    g_size = Counter(g)
    p_size = Counter(p)
    # each of the c points in cell (a, b) contributes c / |pred b| and c / |gt a|
    sq_by_pred = Counter()
    sq_by_gt = Counter()
    for (a, b), c in cells.items():
        sq_by_pred[b] += c * c
        sq_by_gt[a] += c * c
    prec = sum(Fraction(s, p_size[b]) for b, s in sq_by_pred.items()) / n
    rec = sum(Fraction(s, g_size[a]) for a, s in sq_by_gt.items()) / n
    return prec, rec, _harmonic(prec, rec)


def bcubed_f(gt, pred):
    """Returns (P, R, F_B); each point counts itself as a true positive."""
    return tuple(float(x) for x in bcubed_fractions(gt, pred))


def bcubed_oracle(gt, pred):
    """Per-point enumeration of P_i and R_i (O(N^2))."""
    g, p = _check(gt, pred)
    n = len(g)
    ps, rs = Fraction(0), Fraction(0)
    for i in range(n):
        tp_i = fp_i = fn_i = 0
        for j in range(n):
            same_g = g[i] == g[j]
            same_p = p[i] == p[j]
            if same_g and same_p:
                tp_i += 1
            elif same_p:
                fp_i += 1
            elif same_g:
                fn_i += 1
        ps += Fraction(tp_i, tp_i + fp_i)
        rs += Fraction(tp_i, tp_i + fn_i)
    prec, rec = ps / n, rs / n
    return float(prec), float(rec), float(_harmonic(prec, rec))


def evaluate_labels(gt, pred) -> MetricReport:
    pp, pr, pf, (tp, fp, fn) = pairwise_f(gt, pred)
    bp, br, bf = bcubed_f(gt, pred)
    return MetricReport(pp, pr, pf, bp, br, bf, tp, fp, fn)
