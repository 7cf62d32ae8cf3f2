"""Closed-set and open-set evaluation.

Open-set detection scores are the per-sample maximum raw logit; the ROC
AUC over those scores is computed exactly via the rank statistic with
midrank tie handling (never a thresholded approximation), so oracle
tests can demand exact equality with the brute-force pairwise count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embstore import LabelSet
from .errors import EmptySide, NoClosedSamples


@dataclass(frozen=True)
class EvalReport:
    acc: float
    auc: float
    per_class_recall: np.ndarray  # NaN for closed classes absent from truth
    n_closed: int
    n_open: int


def mls_score(logits) -> np.ndarray:
    """Per-row maximum raw logit; empty input yields an empty vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] == 0:
        return np.empty(0)
    return logits.max(axis=1)


def closed_acc(pred, truth: LabelSet):
    """Class-average recall over the closed-set portion of the truth.

    Only samples whose true label is a closed-set class participate;
    closed classes absent from the truth are excluded from the average
    (their recall entry is NaN).
    """
    pred = np.asarray(pred, dtype=np.int64)
    closed = ~truth.is_open
    if not closed.any():
        raise NoClosedSamples("truth contains no closed-set samples")
    c = truth.openset_threshold
    recall = np.full(c, np.nan)
    for j in range(c):
        members = closed & (truth.labels == j)
        if members.any():
            recall[j] = float(np.mean(pred[members] == j))
    acc = float(np.nanmean(recall))
    return acc, recall


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0])
    sorted_vals = values[order]
    i = 0
    while i < sorted_vals.shape[0]:
        j = i
        while j + 1 < sorted_vals.shape[0] and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # mean of ranks i+1 .. j+1; exact in binary (sum of two ints / 2)
        ranks[order[i:j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    return ranks


def roc_auc(scores_closed, scores_open) -> float:
    """Exact AUC: P(closed score > open score) + half credit for ties."""
    sc = np.asarray(scores_closed, dtype=np.float64)
    so = np.asarray(scores_open, dtype=np.float64)
    if sc.size == 0 or so.size == 0:
        raise EmptySide("both score lists must be nonempty")
    pooled = np.concatenate([sc, so])
    ranks = _midranks(pooled)
    rank_sum = ranks[:sc.size].sum()
    nc, no = sc.size, so.size
    return (rank_sum - nc * (nc + 1) / 2.0) / (nc * no)


def evaluate(logits, truth: LabelSet) -> EvalReport:
    """Closed-set accuracy via argmax plus open-set AUC via max logit."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] != truth.n:
        raise ValueError("logits and truth must be row-aligned")
    pred = np.argmax(logits, axis=1)
    acc, recall = closed_acc(pred, truth)
    scores = mls_score(logits)
    is_open = truth.is_open
    auc = roc_auc(scores[~is_open], scores[is_open])
    return EvalReport(acc=acc, auc=auc, per_class_recall=recall,
                      n_closed=int((~is_open).sum()), n_open=int(is_open.sum()))


def report_lines(report: EvalReport) -> list:
    """Flat metric=value lines, machine-parseable and human-readable."""
    lines = [
        f"acc={report.acc:.12g}",
        f"auc={report.auc:.12g}",
        f"n_closed={report.n_closed}",
        f"n_open={report.n_open}",
    ]
    for j, r in enumerate(report.per_class_recall):
        value = "nan" if np.isnan(r) else f"{r:.12g}"
        lines.append(f"recall.{j}={value}")
    return lines


def format_report(report: EvalReport) -> str:
    return "\n".join(report_lines(report)) + "\n"
