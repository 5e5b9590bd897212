"""Inference-time chain turning network outputs into an occlusion boundary map:
NMS thinning, binarisation, orientation masking and tangent alignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import ConfigurationError, NumericError
from .loss import wrap_angle

NMS_SIGMA = 1.0
TANGENT_WINDOW = 7

# neighbour offsets (dy, dx) for the four quantised normal directions:
# 0 deg (along x), 45 deg, 90 deg (along y), 135 deg; angles from +x toward +y
_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1))


@dataclass
class OcclusionBoundary:
    """Thinned edge map, its support mask and the aligned orientation.

    ``undefined`` marks ridge pixels whose tangent could not be estimated
    (isolated pixels or isotropic neighbourhoods); their orientation is the
    wrapped prediction passed through unchanged.
    """

    thin_edge: np.ndarray
    mask: np.ndarray
    orientation: np.ndarray
    tangent: np.ndarray | None = None
    undefined: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.thin_edge.shape


def _check_map(x, name) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D map, got shape {x.shape}")
    return x


def ridge_normal_direction(x: np.ndarray, sigma: float = NMS_SIGMA) -> np.ndarray:
    """Quantised (0..3) direction across the local ridge.

    The direction is the dominant axis of the Gaussian-smoothed gradients
    (principal eigenvector of their structure tensor), which both flanks of
    a ridge agree on even though their gradients point in opposite senses.
    """
    gx = ndimage.gaussian_filter(x, sigma, order=(0, 1), mode="nearest")
    gy = ndimage.gaussian_filter(x, sigma, order=(1, 0), mode="nearest")
    jxx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    jyy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    jxy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    phi = 0.5 * np.arctan2(2.0 * jxy, jxx - jyy)
    return np.mod(np.rint(phi / (0.25 * np.pi)).astype(int), 4)


def _nms_pass(x: np.ndarray, sigma: float) -> np.ndarray:
    q = ridge_normal_direction(x, sigma)
    padded = np.pad(x, 1)
    h, w = x.shape
    keep = np.ones_like(x, dtype=bool)
    for k, (dy, dx) in enumerate(_DIRECTIONS):
        fwd = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        sel = q == k
        # strict comparison: exact ties (e.g. binary maps) are kept
        keep[sel] = (x[sel] >= fwd[sel]) & (x[sel] >= bwd[sel])
    return np.where(keep, x, 0.0)


def nms_thin(edge_prob, sigma: float = NMS_SIGMA, max_iter: int = 100) -> np.ndarray:
    """Suppress pixels that are strictly smaller than a neighbour across the
    local ridge direction.  The pass is repeated to a fixed point, which
    makes the operator idempotent."""
    x = _check_map(edge_prob, "edge_prob")
    if not np.isfinite(x).all():
        raise NumericError("edge probabilities must be finite")
    for _ in range(max_iter):
        y = _nms_pass(x, sigma)
        if np.array_equal(y, x):
            break
        x = y
    return x


def sign_mask(thin_edge) -> np.ndarray:
    return (np.asarray(thin_edge) > 0).astype(np.uint8)


def mask_orientation(mask, orientation) -> np.ndarray:
    mask = np.asarray(mask)
    orientation = np.asarray(orientation, dtype=np.float64)
    if mask.shape != orientation.shape:
        raise ConfigurationError(f"mask shape {mask.shape} != orientation shape {orientation.shape}")
    return np.where(mask > 0, wrap_angle(orientation), 0.0)


def _window_moments(mask: np.ndarray, size: int):
    r = size // 2
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    m = mask.astype(np.float64)

    def corr(k):
        return ndimage.correlate(m, k, mode="constant", cval=0.0)

    s0 = corr(np.ones_like(dx))
    sx, sy = corr(dx), corr(dy)
    sxx, syy, sxy = corr(dx * dx), corr(dy * dy), corr(dx * dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        cxx = sxx - sx * sx / s0
        cyy = syy - sy * sy / s0
        cxy = sxy - sx * sy / s0
    return s0, cxx, cyy, cxy


def estimate_tangent(mask, window: int = TANGENT_WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """Principal direction (in (-pi/2, pi/2]) of the mask pixels in a
    ``window x window`` neighbourhood, and a flag map of pixels where it is
    undefined."""
    mask = np.asarray(mask) > 0
    s0, cxx, cyy, cxy = _window_moments(mask, window)
    aniso = np.hypot(cxx - cyy, 2.0 * cxy)
    undefined = mask & ((s0 < 2) | ~(aniso > 1e-9 * np.maximum(cxx + cyy, 1.0)))
    tau = 0.5 * np.arctan2(2.0 * cxy, cxx - cyy)
    tau = np.where(mask & ~undefined, tau, 0.0)
    return tau, undefined


def snap_to_tangent(theta, tau) -> np.ndarray:
    """``tau`` if ``theta`` lies in its half-plane, else ``tau + pi`` (wrapped)."""
    theta = np.asarray(theta, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    same = np.abs(wrap_angle(theta - tau)) <= 0.5 * np.pi
    return np.where(same, wrap_angle(tau), wrap_angle(tau + np.pi))


def align_to_tangent(thin_edge, masked_orientation, window: int = TANGENT_WINDOW) -> OcclusionBoundary:
    thin = _check_map(thin_edge, "thin_edge")
    ori = _check_map(masked_orientation, "masked_orientation")
    if thin.shape != ori.shape:
        raise ConfigurationError(f"thin_edge shape {thin.shape} != orientation shape {ori.shape}")
    mask = sign_mask(thin)
    tau, undefined = estimate_tangent(mask, window)
    theta = wrap_angle(ori)
    snapped = snap_to_tangent(theta, tau)
    out = np.where(mask > 0, np.where(undefined, theta, snapped), 0.0)
    return OcclusionBoundary(thin, mask, out, tau, undefined)


def postprocess(edge_prob, orientation, sigma: float = NMS_SIGMA, window: int = TANGENT_WINDOW) -> OcclusionBoundary:
    """Full chain: NMS -> mask -> masked orientation -> tangent alignment."""
    thin = nms_thin(edge_prob, sigma)
    masked = mask_orientation(sign_mask(thin), orientation)
    return align_to_tangent(thin, masked, window)
