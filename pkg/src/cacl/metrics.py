"""Classification scores and community diagnostics."""

from __future__ import annotations

import math

import numpy as np


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) with bot (1) as the positive class."""
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    return int((t & p).sum()), int((~t & p).sum()), int((~t & ~p).sum()), int((t & ~p).sum())


def scores_from_confusion(tp: int, fp: int, tn: int, fn: int) -> dict[str, float]:
    n = tp + fp + tn + fn
    if n == 0:
        raise ValueError("no predictions to score")
    acc = (tp + tn) / n
    f1_den = 2 * tp + fp + fn
    f1 = 2 * tp / f1_den if f1_den else 1.0
    den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if den == 0:
        # Degenerate marginals: a diagonal matrix is a perfect prediction.
        mcc = 1.0 if fp == 0 and fn == 0 else 0.0
    else:
        mcc = (tp * tn - fp * fn) / den
    return {"accuracy": acc, "f1": f1, "mcc": mcc}


def binary_scores(y_true, y_pred) -> dict[str, float]:
    return scores_from_confusion(*confusion(y_true, y_pred))


def entropy_bits(labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("entropy of an empty label set")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def community_entropy(community_labels) -> float:
    """Unweighted mean over communities of the base-2 label entropy.

    ``community_labels`` holds one label array per community; ``-1`` entries
    are unlabelled and ignored, and communities without labels are skipped.
    """
    vals = []
    for labels in community_labels:
        labels = np.asarray(labels)
        labels = labels[labels >= 0]
        if len(labels):
            vals.append(entropy_bits(labels))
    if not vals:
        raise ValueError("no labelled users in any community")
    return float(np.mean(vals))


def _unit(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    n = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.where(n == 0, 1.0, n)


def cosine_tracks(zs, labels, matches) -> dict[str, float | None]:
    """Mean cosine over four pair classes (pair-weighted across communities).

    ``positive``: same-label pairs between a community and its match;
    ``negative``: different-label pairs inside a community;
    ``within``: all labelled pairs inside a community;
    ``between``: all labelled pairs between matched communities.
    An empty class is reported as ``None``.
    """
    sums = dict.fromkeys(("positive", "negative", "within", "between"), 0.0)
    counts = dict.fromkeys(sums, 0)
    units = [_unit(z) for z in zs]
    labels = [np.asarray(y) for y in labels]
    for a, b in enumerate(matches):
        ya, ua = labels[a], units[a]
        la = ya >= 0
        c = ua @ ua.T
        iu = np.triu_indices(len(ya), k=1)
        both = la[iu[0]] & la[iu[1]]
        vals = c[iu][both]
        diff = (ya[iu[0]] != ya[iu[1]])[both]
        sums["within"] += vals.sum()
        counts["within"] += len(vals)
        sums["negative"] += vals[diff].sum()
        counts["negative"] += int(diff.sum())
        if b is None or b == a:
            continue
        yb, ub = labels[b], units[b]
        lb = yb >= 0
        cb = (ua @ ub.T)[np.ix_(la, lb)]
        same = ya[la][:, None] == yb[lb][None, :]
        sums["between"] += cb.sum()
        counts["between"] += cb.size
        sums["positive"] += cb[same].sum()
        counts["positive"] += int(same.sum())
    return {k: (sums[k] / counts[k] if counts[k] else None) for k in sums}
