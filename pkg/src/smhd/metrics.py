"""Segmentation evaluation: Dice, best-achievable Dice, AUPRC, permutation tests.

AUPRC and the threshold sweep are rank statistics: tied scores are grouped
into single cuts, and both metrics are invariant under strictly increasing
transforms of the scores. Permutation tests use seeded resampling with
add-one smoothing, p = (1 + hits) / (1 + rounds).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalResult:
    auprc: float
    dice_best: float
    dice_threshold: float
    n_pos: int
    n_neg: int


def _as_labels(gt) -> np.ndarray:
    gt = np.asarray(gt)
    if gt.dtype != np.bool_:
        gt = gt != 0
    return gt.reshape(-1)


def dice(pred, gt) -> float:
    """Dice overlap 2|A^B| / (|A|+|B|); two empty masks count as 1."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    a = _as_labels(pred)
    b = _as_labels(gt)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.sum(a & b)) / total


def _descending_groups(scores: np.ndarray, labels: np.ndarray):
    """Sort by descending score and group ties.

    Returns (group_values, cum_count, cum_tp): cumulative prediction size and
    true positives after including each tie group.
    """
    order = np.argsort(scores, kind="stable")[::-1]
    s = scores[order]
    l = labels[order]
    boundary = np.empty(s.size, dtype=bool)
    boundary[:-1] = s[:-1] != s[1:]
    boundary[-1] = True
    idx = np.flatnonzero(boundary)
    cum_tp = np.cumsum(l)[idx]
    cum_count = idx + 1
    return s[idx], cum_count, cum_tp


def auprc(scores, labels) -> float:
    """Area under the precision-recall curve (average-precision form).

    Precision/recall are evaluated at every distinct-score cut and the area is
    sum over cuts of (R_i - R_{i-1}) * P_i.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = _as_labels(labels)
    if scores.size != labels.size:
        raise ValueError(f"scores ({scores.size}) and labels ({labels.size}) differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("AUPRC is undefined without positive labels")
    _, cum_count, cum_tp = _descending_groups(scores, labels)
    precision = cum_tp / cum_count
    recall = cum_tp / n_pos
    delta_recall = np.diff(recall, prepend=0.0)
    return float(np.sum(delta_recall * precision))


def best_dice(scores, gt, mode: str = "exact") -> tuple:
    """Best Dice over binarization thresholds (prediction = score > threshold).

    Exact mode sweeps every distinct score value plus a cut below the minimum
    (the all-positive prediction, reported as threshold -inf); quantile mode
    evaluates 1001 evenly spaced score quantiles. Ties resolve to the lowest
    maximizing threshold.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = _as_labels(gt)
    if scores.size != labels.size:
        raise ValueError(f"scores ({scores.size}) and labels ({labels.size}) differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        warnings.warn("no positive labels; best_dice returns (1, inf) by the "
                      "empty-mask convention", stacklevel=2)
        return 1.0, float("inf")
    values, cum_count, cum_tp = _descending_groups(scores, labels)
    if mode == "exact":
        # threshold values[j] predicts everything strictly above it, i.e. the
        # first j groups; -inf predicts everything.
        thresholds = np.concatenate([values, [-np.inf]])
        pred_sizes = np.concatenate([[0], cum_count])
        tps = np.concatenate([[0], cum_tp])
    elif mode == "quantile":
        thresholds = np.quantile(scores, np.linspace(0.0, 1.0, 1001))[::-1]
        # number of scores strictly above each threshold
        k = np.searchsorted(-values, -thresholds, side="left")
        pred_sizes = np.concatenate([[0], cum_count])[k]
        tps = np.concatenate([[0], cum_tp])[k]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    dices = 2.0 * tps / (pred_sizes + n_pos)
    best = dices.max()
    candidates = thresholds[dices == best]
    return float(best), float(candidates.min())


def evaluate(scores, gt, mask=None) -> EvalResult:
    """Pooled AUPRC and best Dice for a score map against a ground-truth mask.

    An optional evaluation mask restricts both to a voxel subset.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = _as_labels(gt)
    if mask is not None:
        keep = _as_labels(mask)
        scores = scores[keep]
        labels = labels[keep]
    n_pos = int(labels.sum())
    best, threshold = best_dice(scores, labels, mode="exact")
    return EvalResult(auprc=auprc(scores, labels), dice_best=best,
                      dice_threshold=threshold, n_pos=n_pos,
                      n_neg=int(labels.size - n_pos))


def permutation_test(a, b, rounds: int = 10000, seed: int = 0) -> float:
    """Two-sided two-sample permutation test on |mean(a) - mean(b)|.

    Permutations are seeded shuffles of the pooled sample; the p-value uses
    add-one smoothing and so lies in (0, 1].
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    pooled = np.concatenate([a, b])
    observed = abs(a.mean() - b.mean())
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = max(1, min(rounds, 4_000_000 // max(pooled.size, 1)))
    done = 0
    while done < rounds:
        m = min(chunk, rounds - done)
        perm = rng.permuted(np.tile(pooled, (m, 1)), axis=1)
        stats = np.abs(perm[:, :a.size].mean(axis=1) - perm[:, a.size:].mean(axis=1))
        hits += int(np.sum(stats >= observed))
        done += m
    return (1 + hits) / (1 + rounds)


def paired_permutation_test(a, b, rounds: int = 10000, seed: int = 0) -> float:
    """Two-sided paired permutation test on |mean(a - b)| via sign flips."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or a.size != b.size:
        raise ValueError("paired samples must be nonempty and of equal length")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    d = a - b
    observed = abs(d.mean())
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=(rounds, d.size)) * 2 - 1
    stats = np.abs((signs * d).mean(axis=1))
    return (1 + int(np.sum(stats >= observed))) / (1 + rounds)
