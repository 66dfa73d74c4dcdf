"""Anomaly scoring and ranking metrics.

A row's anomaly score is its own reconstruction loss; ranking quality is
summarised by step-wise average precision over the score ordering.  Since
AP is tie-sensitive, ties are broken by stable original row order.
"""

from dataclasses import dataclass

import numpy as np

from fedledger.encoding import LABEL_GLOBAL, LABEL_LOCAL, LABEL_NONE
from fedledger.errors import NumericError
from fedledger.network import forward, row_losses

CLASS_LABELS = {"global": LABEL_GLOBAL, "local": LABEL_LOCAL}


def score_rows(params, spec, layout, rows, theta_mix):
    """Per-row reconstruction loss used as the anomaly score."""
    rows = np.asarray(rows, dtype=np.float64)
    out = forward(params, spec, rows)
    scores = row_losses(layout, rows, out, theta_mix)
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite anomaly score")
    return scores


def average_precision(scores, positives):
    """Step-wise AP over the descending score ranking.

    Returns None when there are no positives (the metric is undefined and
    the caller records it as absent).
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise ValueError("scores and positives must be equal-length vectors")
    n_pos = int(np.count_nonzero(positives))
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    ranked = positives[order]
    tp = np.cumsum(ranked)
    precision = tp / np.arange(1, len(ranked) + 1)
    # recall steps by 1/n_pos exactly at positive ranks, so AP reduces to
    # the mean precision over those ranks
    return float(np.sum(precision[ranked]) / n_pos)


def ap_per_class(scores, labels, target_class, include_other=False):
    """AP for one anomaly class against the clean rows.

    Rows of the other anomaly class are dropped from the pool unless
    ``include_other`` asks for them to count as negatives.
    """
    target = CLASS_LABELS[target_class]
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if include_other:
        keep = np.ones(len(labels), dtype=bool)
    else:
        keep = (labels == LABEL_NONE) | (labels == target)
    return average_precision(scores[keep], labels[keep] == target)


@dataclass(frozen=True)
class MetricsRecord:
    seed: int
    experience: int
    fl: str
    cl: str
    arch: str
    dept: str
    ap_global: float | None
    ap_local: float | None
    mean_rec_error: float


# Which AP column carries each architecture's headline number: the shallow
# net is the global-anomaly detector, the deep net the local-anomaly one.
HEADLINE_AP = {"shallow": "ap_global", "deep": "ap_local"}


def _seed_means(records, arch, field):
    by_seed = {}
    for r in records:
        if r.arch != arch or r.dept != "all":
            continue
        value = getattr(r, field)
        if value is None:
            continue
        by_seed.setdefault(r.seed, []).append(value)
    return {seed: float(np.mean(vals)) for seed, vals in by_seed.items()}


def summarize(records):
    """Per-strategy mean and spread on the percent scale.

    Within each seed, AP is averaged over experiences; the reported numbers
    are the mean and population standard deviation of those per-seed means,
    scaled by 100 and rounded to two decimals.
    """
    table = {}
    pairs = sorted({(r.fl, r.cl) for r in records})
    for fl, cl in pairs:
        subset = [r for r in records if r.fl == fl and r.cl == cl]
        entry = {}
        for arch, field in HEADLINE_AP.items():
            means = _seed_means(subset, arch, field)
            if not means:
                continue
            values = np.array([means[s] for s in sorted(means)])
            entry[field] = {
                "mean": round(float(np.mean(values)) * 100.0, 2),
                "std": round(float(np.std(values)) * 100.0, 2),
                "seeds": len(values),
            }
        table[f"{fl}+{cl}"] = entry
    return table
