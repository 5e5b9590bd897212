"""Boundary matching and precision/recall summaries.

Two modes are reported.  EPR counts a predicted boundary pixel as a true
positive when it is matched to a ground-truth edge pixel within the distance
tolerance.  OPR additionally requires the aligned orientation to fall in the
same half-plane as the ground truth, ``|wrap(theta_pred - theta_gt)| < pi/2``:
its true positives are a maximum matching over only those pairs that pass
the side test, so the count does not depend on which of several equally
large location matchings a solver happens to return.

Conventions:

* tolerance is a fraction of the image diagonal (default 0.0075);
* precision is 1 when nothing is predicted; per-image recall is 1 when the
  image has no ground-truth edges;
* ODS is the best F1 of the aggregate (dataset-summed) counts over
  thresholds; OIS is the mean over images of each image's best F1;
* AP integrates the aggregate curve as ``sum_k (r_k - r_{k-1}) * p_env(r_k)``
  over distinct recalls in increasing order with ``r_0 = 0``, where
  ``p_env(r)`` is the best precision achieved at recall ``>= r``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial import cKDTree

from .exceptions import ConfigurationError, DataError
from .loss import wrap_angle
from .parallel import parallel_map
from .postprocess import OcclusionBoundary, postprocess

DEFAULT_TOLERANCE = 0.0075
MODES = ("EPR", "OPR")


def default_thresholds(n: int = 99) -> np.ndarray:
    if n < 1:
        raise ConfigurationError("need at least one threshold")
    return np.linspace(0.01, 0.99, n) if n > 1 else np.array([0.5])


def tolerance_pixels(shape, tol: float) -> float:
    return float(tol) * float(np.hypot(shape[0], shape[1]))


@dataclass
class Correspondence:
    """One-to-one matching between predicted and ground-truth pixels.

    Pixel references are linear (row-major) indices.
    """

    pairs: np.ndarray
    unmatched_pred: np.ndarray
    unmatched_gt: np.ndarray
    tolerance: float
    radius: float

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def precision(self) -> float:
        n = self.tp + len(self.unmatched_pred)
        return 1.0 if n == 0 else self.tp / n

    @property
    def recall(self) -> float:
        n = self.tp + len(self.unmatched_gt)
        return 1.0 if n == 0 else self.tp / n


def _neighbour_graph(pred_idx: np.ndarray, gt_idx: np.ndarray, width: int, radius: float) -> csr_matrix:
    """Biadjacency matrix (pred rows x gt columns) of pairs within ``radius``."""
    shape = (len(pred_idx), len(gt_idx))
    if 0 in shape:
        return csr_matrix(shape, dtype=np.int8)
    p = np.stack(np.divmod(pred_idx, width), axis=1).astype(np.float64)
    g = np.stack(np.divmod(gt_idx, width), axis=1).astype(np.float64)
    # tiny slack so pixels exactly at the radius are included despite rounding
    neigh = cKDTree(g).query_ball_point(p, radius * (1 + 1e-12) + 1e-12)
    indptr = np.zeros(len(p) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(n) for n in neigh])
    if indptr[-1] == 0:
        return csr_matrix(shape, dtype=np.int8)
    indices = np.concatenate([np.sort(np.asarray(n, dtype=np.int64)) for n in neigh])
    return csr_matrix((np.ones(len(indices), dtype=np.int8), indices, indptr), shape=shape)


def _match_graph(graph: csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-cardinality matching; returns matched (row, column) positions.

    Rows (pred) and columns (gt) are in ascending linear-index order, so the
    result is a deterministic function of the two pixel sets.
    """
    if graph.nnz == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    match = maximum_bipartite_matching(graph, perm_type="column")
    rows = np.nonzero(match >= 0)[0]
    return rows, match[rows].astype(np.int64)


def _max_matching(pred_idx: np.ndarray, gt_idx: np.ndarray, width: int, radius: float) -> np.ndarray:
    """(k, 2) matched pairs of linear indices."""
    rows, cols = _match_graph(_neighbour_graph(pred_idx, gt_idx, width, radius))
    return np.stack([pred_idx[rows], gt_idx[cols]], axis=1).astype(np.int64)


def match_boundaries(pred, gt, tol: float = DEFAULT_TOLERANCE) -> Correspondence:
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ConfigurationError(f"pred shape {pred.shape} and gt shape {gt.shape} must be equal 2-D maps")
    radius = tolerance_pixels(pred.shape, tol)
    p_idx = np.flatnonzero(pred)
    g_idx = np.flatnonzero(gt)
    pairs = _max_matching(p_idx, g_idx, pred.shape[1], radius)
    return Correspondence(
        pairs,
        np.setdiff1d(p_idx, pairs[:, 0]),
        np.setdiff1d(g_idx, pairs[:, 1]),
        tol,
        radius,
    )


# -- PR counts ------------------------------------------------------------------------


@dataclass
class PRCounts:
    """Per-image, per-threshold counts; arrays are (n_images, n_thresholds)
    except ``n_gt`` which is per image."""

    thresholds: np.ndarray
    tp: np.ndarray
    n_pred: np.ndarray
    n_gt: np.ndarray

    def aggregate(self) -> tuple[np.ndarray, np.ndarray]:
        tp = self.tp.sum(axis=0)
        n_pred = self.n_pred.sum(axis=0)
        n_gt = self.n_gt.sum()
        if n_gt == 0:
            raise DataError("no ground-truth edge pixels in the dataset; recall is undefined")
        precision = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 1.0)
        recall = tp / n_gt
        return precision, recall

    def per_image(self) -> tuple[np.ndarray, np.ndarray]:
        precision = np.where(self.n_pred > 0, self.tp / np.maximum(self.n_pred, 1), 1.0)
        n_gt = self.n_gt[:, None]
        recall = np.where(n_gt > 0, self.tp / np.maximum(n_gt, 1), 1.0)
        return precision, recall


def f1(precision, recall):
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    s = p + r
    return np.where(s > 0, 2 * p * r / np.where(s > 0, s, 1.0), 0.0)


def _as_boundary(pred) -> OcclusionBoundary:
    if isinstance(pred, OcclusionBoundary):
        return pred
    edge_prob, orientation = pred
    return postprocess(edge_prob, orientation)


def _as_gt(gt) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(gt, "edge") and hasattr(gt, "orientation"):
        return np.asarray(gt.edge) > 0, np.asarray(gt.orientation, dtype=np.float64)
    edge, orientation = gt
    return np.asarray(edge) > 0, np.asarray(orientation, dtype=np.float64)


def image_counts(boundary: OcclusionBoundary, gt, thresholds, tol: float = DEFAULT_TOLERANCE):
    """(EPR tp, OPR tp, n_pred) per threshold and n_gt for one image.

    A pixel is predicted at threshold ``t`` when its thinned edge value is
    ``>= t``.
    """
    gt_edge, gt_ori = _as_gt(gt)
    thin = np.asarray(boundary.thin_edge, dtype=np.float64)
    if thin.shape != gt_edge.shape:
        raise ConfigurationError(f"prediction shape {thin.shape} != ground truth shape {gt_edge.shape}")
    width = thin.shape[1]
    radius = tolerance_pixels(thin.shape, tol)
    g_idx = np.flatnonzero(gt_edge)
    flat_thin = thin.ravel()
    flat_ori = np.asarray(boundary.orientation, dtype=np.float64).ravel()
    flat_gt_ori = gt_ori.ravel()
    candidates = np.flatnonzero(flat_thin > 0)
    graph = _neighbour_graph(candidates, g_idx, width, radius)
    # orientation-gated graph: keep only pairs on the same side
    rows = np.repeat(np.arange(graph.shape[0]), np.diff(graph.indptr))
    same = np.abs(wrap_angle(flat_ori[candidates[rows]] - flat_gt_ori[g_idx[graph.indices]])) < 0.5 * np.pi
    gated = csr_matrix((same.astype(np.int8), graph.indices.copy(), graph.indptr.copy()), shape=graph.shape)
    gated.eliminate_zeros()
    cand_vals = flat_thin[candidates]
    n = len(thresholds)
    tp_e = np.zeros(n, dtype=np.int64)
    tp_o = np.zeros(n, dtype=np.int64)
    n_pred = np.zeros(n, dtype=np.int64)
    for k, t in enumerate(thresholds):
        sel = np.flatnonzero(cand_vals >= t)
        n_pred[k] = len(sel)
        if len(sel) == 0 or len(g_idx) == 0:
            continue
        tp_e[k] = len(_match_graph(graph[sel])[0])
        tp_o[k] = len(_match_graph(gated[sel])[0])
    return tp_e, tp_o, n_pred, len(g_idx)


def pr_counts(predictions, gts, thresholds=None, tol: float = DEFAULT_TOLERANCE) -> dict[str, PRCounts]:
    """Counts for both modes.  ``predictions`` holds OcclusionBoundary objects
    or ``(edge_prob, orientation)`` pairs; ``gts`` holds OcclusionSample
    objects or ``(edge, orientation)`` pairs."""
    predictions = list(predictions)
    gts = list(gts)
    if len(predictions) != len(gts):
        raise ConfigurationError(f"{len(predictions)} predictions but {len(gts)} ground-truth samples")
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if thresholds.ndim != 1 or len(thresholds) == 0:
        raise ConfigurationError("at least one threshold is required")
    if np.any(thresholds <= 0) or np.any(thresholds >= 1):
        raise ConfigurationError("thresholds must lie in (0, 1)")

    def one(args):
        pred, gt = args
        return image_counts(_as_boundary(pred), gt, thresholds, tol)

    rows = parallel_map(one, list(zip(predictions, gts)))
    m = len(rows)
    shape = (m, len(thresholds))
    tp_e = np.array([r[0] for r in rows], dtype=np.int64).reshape(shape)
    tp_o = np.array([r[1] for r in rows], dtype=np.int64).reshape(shape)
    n_pred = np.array([r[2] for r in rows], dtype=np.int64).reshape(shape)
    n_gt = np.array([r[3] for r in rows], dtype=np.int64).reshape(m)
    return {
        "EPR": PRCounts(thresholds, tp_e, n_pred, n_gt),
        "OPR": PRCounts(thresholds, tp_o, n_pred.copy(), n_gt.copy()),
    }


def pr_curve(predictions, gts, thresholds=None, mode: str = "EPR", tol: float = DEFAULT_TOLERANCE) -> PRCounts:
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    return pr_counts(predictions, gts, thresholds, tol)[mode]


# -- summaries --------------------------------------------------------------------------


def average_precision(precision, recall) -> float:
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    if p.size == 0:
        raise ConfigurationError("need at least one PR point")
    ap = 0.0
    prev = 0.0
    for rk in np.unique(r):
        env = p[r >= rk].max()
        ap += (rk - prev) * env
        prev = rk
    return float(ap)


@dataclass
class MetricsReport:
    mode: str
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    ods: float
    ois: float
    ap: float
    ods_threshold: float
    image_precision: np.ndarray = field(repr=False, default=None)
    image_recall: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ODS": self.ods,
            "OIS": self.ois,
            "AP": self.ap,
            "ODS_threshold": self.ods_threshold,
            "thresholds": [float(t) for t in self.thresholds],
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
        }


def summarize(counts: PRCounts, mode: str = "EPR") -> MetricsReport:
    if len(counts.thresholds) == 0:
        raise ConfigurationError("need at least one threshold")
    precision, recall = counts.aggregate()
    f = f1(precision, recall)
    best = int(np.argmax(f))
    ip, ir = counts.per_image()
    ois = float(f1(ip, ir).max(axis=1).mean()) if len(ip) else 0.0
    return MetricsReport(
        mode,
        counts.thresholds,
        precision,
        recall,
        float(f[best]),
        ois,
        average_precision(precision, recall),
        float(counts.thresholds[best]),
        ip,
        ir,
    )


def evaluate(predictions, gts, thresholds=None, tol: float = DEFAULT_TOLERANCE) -> dict[str, MetricsReport]:
    counts = pr_counts(predictions, gts, thresholds, tol)
    return {mode: summarize(c, mode) for mode, c in counts.items()}


# -- files -----------------------------------------------------------------------------


def write_pr_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(report.thresholds, report.precision, report.recall):
            w.writerow([f"{t:.6f}", f"{p:.9f}", f"{r:.9f}"])


def read_pr_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (thresholds, precision, recall).  Malformed rows raise a
    DataError naming the line number."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["threshold", "precision", "recall"]:
            raise DataError(f"{path}:1: expected header threshold,precision,recall")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value in {row}") from None
    if not rows:
        raise DataError(f"{path}: no PR points")
    a = np.asarray(rows)
    return a[:, 0], a[:, 1], a[:, 2]


def write_reports(reports: dict[str, MetricsReport], out_dir, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = {mode: {k: v for k, v in r.to_dict().items() if k in ("ODS", "OIS", "AP", "ODS_threshold")} for mode, r in reports.items()}
    if extra:
        body.update(extra)
    (out / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    for mode, r in reports.items():
        write_pr_csv(r, out / f"pr_{mode.lower()}.csv")
    return out
