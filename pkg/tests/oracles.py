"""Independent reference implementations used by the metric tests."""

from functools import lru_cache
from math import hypot, pi, remainder


def brute_force_matching(pred_pixels, gt_pixels, radius, allowed=None):
    """Maximum matching size by exhaustive search.

    ``allowed(p, g)`` optionally restricts the admissible pairs.
    Predictions are visited in order; the memo key keeps only the used gt
    pixels that a remaining prediction could still reach, which keeps
    local (banded) instances tractable.
    """
    pred = sorted(pred_pixels)
    gt = sorted(gt_pixels)
    adj = [
        [
            j
            for j, g in enumerate(gt)
            if hypot(p[0] - g[0], p[1] - g[1]) <= radius + 1e-12 and (allowed is None or allowed(p, g))
        ]
        for p in pred
    ]
    reach_after = [set() for _ in range(len(pred) + 1)]
    for i in range(len(pred) - 1, -1, -1):
        reach_after[i] = reach_after[i + 1] | set(adj[i])

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(pred):
            return 0
        result = best(i + 1, used & reach_after[i + 1])
        for j in adj[i]:
            if j not in used:
                result = max(result, 1 + best(i + 1, (used | {j}) & reach_after[i + 1]))
        return result

    return best(0, frozenset())


def wrap(x):
    """Angle in (-pi, pi]."""
    y = remainder(x, 2 * pi)
    return pi if y == -pi else y


def f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def enumerate_summary(per_image_counts, thresholds):
    """ODS/OIS/AP from per-image lists of (tp, n_pred, n_gt) per threshold,
    written with plain loops."""
    n_img = len(per_image_counts)
    agg = []
    for k in range(len(thresholds)):
        tp = sum(per_image_counts[i][k][0] for i in range(n_img))
        npred = sum(per_image_counts[i][k][1] for i in range(n_img))
        ngt = sum(per_image_counts[i][k][2] for i in range(n_img))
        p = 1.0 if npred == 0 else tp / npred
        agg.append((p, tp / ngt))
    ods = max(f1(p, r) for p, r in agg)
    ois_terms = []
    for i in range(n_img):
        best = 0.0
        for tp, npred, ngt in per_image_counts[i]:
            p = 1.0 if npred == 0 else tp / npred
            r = 1.0 if ngt == 0 else tp / ngt
            best = max(best, f1(p, r))
        ois_terms.append(best)
    ois = sum(ois_terms) / n_img
    recalls = sorted({r for _, r in agg})
    ap, prev = 0.0, 0.0
    for r in recalls:
        env = max(p for p, rr in agg if rr >= r)
        ap += (r - prev) * env
        prev = r
    return ods, ois, ap
