"""Procedural layered-shape scenes with exact occlusion ground truth.

Coordinates: x to the right (column), y downward (row), pixel centres at
integer positions.  An orientation ``theta`` points along the boundary
direction ``(cos theta, sin theta)`` and the nearer (foreground) region lies
along ``n_fg = (-sin theta, cos theta)``.

Layer 0 is the nearest shape; the background is one layer farther than the
last shape.  A pixel is an edge pixel when it shows layer ``a`` and one of
its 4-neighbours shows a farther layer.  Its orientation comes from the
analytic boundary of shape ``a`` (inward normal at the closest boundary
point).  Pixels where the discrete side test is ambiguous - the pixel one
rounded normal step inside is not strictly nearer than the one a step
outside, which only happens at junctions and sharp corners - are left out
of the edge map.

Dataset directory layout::

    manifest.json            {"format", "version", "height", "width", "count", "ids"}
    <id>.png                 8-bit RGB image
    <id>.edge.png            8-bit gray, 255 = edge
    <id>.ori.f32             row-major little-endian float32 radians, H*W values
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ConfigurationError, DataError, ManifestError

DATASET_FORMAT = "ofnet-dataset"
DATASET_VERSION = 1


# -- shapes -------------------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    radius: float

    def contains(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.radius**2

    def inward_normal(self, x, y):
        dx, dy = self.cx - x, self.cy - y
        norm = np.hypot(dx, dy)
        norm = np.where(norm == 0, 1.0, norm)
        return dx / norm, dy / norm

    def normal_candidates(self, x, y):
        return [self.inward_normal(x, y)]

    def bbox(self):
        r = self.radius
        return self.cx - r, self.cy - r, self.cx + r, self.cy + r


@dataclass(frozen=True)
class Polygon:
    """Convex polygon; vertices in any consistent winding order."""

    vertices: tuple[tuple[float, float], ...]

    def _edges(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        a = v
        b = np.roll(v, -1, axis=0)
        centroid = v.mean(axis=0)
        t = b - a
        n = np.stack([-t[:, 1], t[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        # orient every normal toward the centroid
        side = np.einsum("ij,ij->i", centroid - a, n)
        n *= np.where(side < 0, -1.0, 1.0)[:, None]
        return a, b, n

    def contains(self, x, y):
        a, _, n = self._edges()
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = np.ones(np.broadcast(x, y).shape, dtype=bool)
        for (ax, ay), (nx, ny) in zip(a, n):
            inside &= (x - ax) * nx + (y - ay) * ny >= 0
        return inside

    def inward_normal(self, x, y):
        a, b, n = self._edges()
        x = np.asarray(x, dtype=np.float64)[..., None]
        y = np.asarray(y, dtype=np.float64)[..., None]
        t = b - a
        tt = np.einsum("ij,ij->i", t, t)
        u = np.clip(((x - a[:, 0]) * t[:, 0] + (y - a[:, 1]) * t[:, 1]) / tt, 0.0, 1.0)
        px = a[:, 0] + u * t[:, 0]
        py = a[:, 1] + u * t[:, 1]
        dist = np.hypot(x - px, y - py)
        k = np.argmin(dist, axis=-1)
        return n[k, 0], n[k, 1]

    def normal_candidates(self, x, y):
        """Inward normals of every side ordered by distance, then the
        bisector at the nearest vertex."""
        a, b, n = self._edges()
        x = np.asarray(x, dtype=np.float64)[..., None]
        y = np.asarray(y, dtype=np.float64)[..., None]
        t = b - a
        tt = np.einsum("ij,ij->i", t, t)
        u = np.clip(((x - a[:, 0]) * t[:, 0] + (y - a[:, 1]) * t[:, 1]) / tt, 0.0, 1.0)
        dist = np.hypot(x - (a[:, 0] + u * t[:, 0]), y - (a[:, 1] + u * t[:, 1]))
        order = np.argsort(dist, axis=-1, kind="stable")
        out = []
        for j in range(len(n)):
            # only sides passing within 1.5 px count; a zero vector never
            # passes the side test
            near = np.take_along_axis(dist, order[..., j : j + 1], axis=-1)[..., 0] <= 1.5
            out.append((n[order[..., j], 0] * near, n[order[..., j], 1] * near))
        vd = np.hypot(x - a[:, 0], y - a[:, 1])
        v = np.argmin(vd, axis=-1)
        bis = n[v] + n[v - 1]
        bis /= np.maximum(np.linalg.norm(bis, axis=-1, keepdims=True), 1e-12)
        near = np.min(vd, axis=-1)[..., None] <= 2.0
        bis = bis * near
        out.append((bis[..., 0], bis[..., 1]))
        return out

    def min_interior_angle(self) -> float:
        v = np.asarray(self.vertices, dtype=np.float64)
        a = np.roll(v, 1, axis=0) - v
        b = np.roll(v, -1, axis=0) - v
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        return float(np.arccos(np.clip(cos, -1, 1)).min())

    def bbox(self):
        v = np.asarray(self.vertices)
        return v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()


def rectangle(cx, cy, w, h, angle=0.0) -> Polygon:
    c, s = np.cos(angle), np.sin(angle)
    pts = []
    for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)):
        pts.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
    return Polygon(tuple(pts))


def regular_ish_polygon(cx, cy, radius, n_vertices, rng) -> Polygon:
    # keep angular gaps below pi so the polygon stays convex around its centre
    angles = np.linspace(0, 2 * np.pi, n_vertices, endpoint=False) + rng.uniform(-0.3, 0.3, n_vertices) * (
        2 * np.pi / n_vertices
    )
    angles += rng.uniform(0, 2 * np.pi)
    radii = radius * rng.uniform(0.75, 1.0, n_vertices)
    pts = tuple((cx + r * np.cos(a), cy + r * np.sin(a)) for r, a in zip(radii, angles))
    return Polygon(pts)


@dataclass(frozen=True)
class Layer:
    shape: object
    color: tuple[float, float, float]
    texture_amplitude: float = 0.0
    texture_frequency: float = 0.0
    texture_angle: float = 0.0


# -- scene spec and samples ------------------------------------------------------------


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a random scene (or an explicit layer list).

    ``layers``, when given, is used verbatim (index 0 nearest) and the
    random layer parameters are ignored.
    """

    seed: int = 0
    height: int = 96
    width: int = 96
    min_layers: int = 2
    max_layers: int = 4
    families: tuple[str, ...] = ("disk", "rectangle", "polygon")
    min_size: float = 10.0
    max_size: float = 30.0
    noise: float = 0.02
    texture_amplitude: float = 0.05
    min_color_distance: float = 0.3
    min_visible_pixels: int = 30
    max_retries: int = 50
    background: tuple[float, float, float] | None = None
    layers: tuple[Layer, ...] | None = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigurationError(f"canvas must be at least 1x1, got {self.height}x{self.width}")
        if not 0 <= self.min_layers <= self.max_layers:
            raise ConfigurationError(f"invalid layer count range [{self.min_layers}, {self.max_layers}]")
        unknown = set(self.families) - {"disk", "rectangle", "polygon"}
        if unknown or not self.families:
            raise ConfigurationError(f"unknown shape families {sorted(unknown)}")
        if not 0 < self.min_size <= self.max_size:
            raise ConfigurationError("invalid shape size range")


@dataclass
class OcclusionSample:
    """Image, binary edge map and orientation map (radians, valid on edges).

    ``labels`` is the generator's visible-layer index per pixel (0 nearest);
    it is not stored on disk.
    """

    image: np.ndarray
    edge: np.ndarray
    orientation: np.ndarray
    labels: np.ndarray | None = None
    sample_id: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.edge.shape


def orientation_to_normal(theta):
    """Foreground-side unit normal ``(-sin theta, cos theta)``."""
    return -np.sin(theta), np.cos(theta)


def normal_to_orientation(nx, ny):
    theta = np.arctan2(-np.asarray(nx, dtype=np.float64), ny)
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def _sample_colors(k: int, min_dist: float, rng) -> np.ndarray:
    colors = []
    tries = 0
    while len(colors) < k:
        c = rng.uniform(0.05, 0.95, 3)
        tries += 1
        if all(np.linalg.norm(c - o) >= min_dist for o in colors) or tries > 2000:
            colors.append(c)
    return np.asarray(colors)


def _sample_shape(spec: SceneSpec, rng):
    family = spec.families[rng.integers(len(spec.families))]
    size = rng.uniform(spec.min_size, spec.max_size)
    margin = size + 1.0
    h, w = spec.height, spec.width
    lo_x, hi_x = min(margin, (w - 1) / 2), max(w - 1 - margin, (w - 1) / 2)
    lo_y, hi_y = min(margin, (h - 1) / 2), max(h - 1 - margin, (h - 1) / 2)
    cx, cy = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
    if family == "disk":
        return Disk(cx, cy, size)
    if family == "rectangle":
        aspect = rng.uniform(0.5, 1.0)
        return rectangle(cx, cy, 2 * size, 2 * size * aspect, rng.uniform(0, np.pi))
    return regular_ish_polygon(cx, cy, size, int(rng.integers(4, 8)), rng)


MIN_CORNER_ANGLE = np.deg2rad(75.0)


def _fits(shape, h, w) -> bool:
    # acute corners rasterise to one-pixel slivers that cannot be given a
    # consistent side, so they are resampled
    if isinstance(shape, Polygon) and shape.min_interior_angle() < MIN_CORNER_ANGLE:
        return False
    x0, y0, x1, y1 = shape.bbox()
    return x0 >= 0.5 and y0 >= 0.5 and x1 <= w - 1.5 and y1 <= h - 1.5


def _random_layers(spec: SceneSpec, rng) -> tuple[list[Layer], np.ndarray]:
    k = int(rng.integers(spec.min_layers, spec.max_layers + 1))
    colors = _sample_colors(k + 1, spec.min_color_distance, rng)
    layers = []
    for i in range(k):
        for _ in range(spec.max_retries):
            shape = _sample_shape(spec, rng)
            if _fits(shape, spec.height, spec.width):
                break
        else:
            raise ConfigurationError("could not place a shape inside the canvas; canvas too small for size range")
        layers.append(
            Layer(
                shape,
                tuple(colors[i]),
                spec.texture_amplitude,
                rng.uniform(0.2, 0.8),
                rng.uniform(0, np.pi),
            )
        )
    background = np.asarray(spec.background) if spec.background is not None else colors[k]
    return layers, background


def _render_labels(layers, h, w) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.full((h, w), len(layers), dtype=np.int16)
    for i in range(len(layers) - 1, -1, -1):
        labels[layers[i].shape.contains(xx, yy)] = i
    return labels


def _edges_and_orientation(layers, labels):
    h, w = labels.shape
    farther = np.zeros((h, w), dtype=bool)
    farther[:-1] |= labels[1:] > labels[:-1]
    farther[1:] |= labels[:-1] > labels[1:]
    farther[:, :-1] |= labels[:, 1:] > labels[:, :-1]
    farther[:, 1:] |= labels[:, :-1] > labels[:, 1:]
    edge = farther & (labels < len(layers))
    orientation = np.zeros((h, w), dtype=np.float64)
    ys, xs = np.nonzero(edge)
    if len(ys) == 0:
        return edge.astype(np.uint8), orientation.astype(np.float32)
    owner = labels[ys, xs]
    theta = np.zeros(len(ys))
    ok = np.zeros(len(ys), dtype=bool)
    for i in np.unique(owner):
        sel = np.nonzero(owner == i)[0]
        cands = layers[i].shape.normal_candidates(xs[sel].astype(np.float64), ys[sel].astype(np.float64))
        # the closest side's normal first; at corners fall back to the other
        # sides and the vertex bisector until the discrete side test passes
        for nx, ny in cands:
            todo = ~ok[sel]
            if not todo.any():
                break
            idx = sel[todo]
            passed = _side_test(labels, xs[idx], ys[idx], nx[todo], ny[todo])
            theta[idx[passed]] = normal_to_orientation(nx[todo][passed], ny[todo][passed])
            ok[idx[passed]] = True
    # pixels no analytic normal can orient (junctions) are left out
    edge[ys[~ok], xs[~ok]] = False
    orientation[ys[ok], xs[ok]] = theta[ok]
    return edge.astype(np.uint8), orientation.astype(np.float32)


def _side_test(labels, xs, ys, nx, ny) -> np.ndarray:
    """True where the pixel one rounded normal step away is strictly nearer
    than the pixel one step the other way (both inside the canvas)."""
    h, w = labels.shape
    ox, oy = np.rint(nx).astype(int), np.rint(ny).astype(int)
    ax, ay, bx, by = xs + ox, ys + oy, xs - ox, ys - oy
    inside = (ax >= 0) & (ax < w) & (ay >= 0) & (ay < h) & (bx >= 0) & (bx < w) & (by >= 0) & (by < h)
    ok = inside.copy()
    ok[inside] = labels[ay[inside], ax[inside]] < labels[by[inside], bx[inside]]
    return ok


def _render_image(layers, background, labels, spec: SceneSpec, rng) -> np.ndarray:
    h, w = labels.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = background
    for i, layer in enumerate(layers):
        m = labels == i
        col = np.asarray(layer.color, dtype=np.float64)
        if layer.texture_amplitude:
            phase = layer.texture_frequency * (xx[m] * np.cos(layer.texture_angle) + yy[m] * np.sin(layer.texture_angle))
            img[m] = col + layer.texture_amplitude * np.sin(phase)[:, None]
        else:
            img[m] = col
    if spec.noise:
        img += rng.normal(0.0, spec.noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_scene(spec: SceneSpec) -> OcclusionSample:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    if spec.layers is not None:
        layers = list(spec.layers)
        background = np.asarray(spec.background if spec.background is not None else (0.5, 0.5, 0.5))
        labels = _render_labels(layers, h, w)
    else:
        for _ in range(spec.max_retries):
            layers, background = _random_layers(spec, rng)
            labels = _render_labels(layers, h, w)
            counts = np.bincount(labels.ravel(), minlength=len(layers) + 1)
            if all(counts[i] >= spec.min_visible_pixels for i in range(len(layers))):
                break
        else:
            raise DataError(f"scene seed {spec.seed}: no valid layout after {spec.max_retries} retries")
    edge, orientation = _edges_and_orientation(layers, labels)
    image = _render_image(layers, background, labels, spec, rng)
    return OcclusionSample(image, edge, orientation, labels)


def generate_dataset(n: int, seed: int = 0, **spec_kw) -> list[OcclusionSample]:
    """``n`` scenes with per-sample seeds derived from ``seed``."""
    samples = []
    for i in range(n):
        child = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        s = generate_scene(SceneSpec(seed=child, **spec_kw))
        s.sample_id = f"{i:05d}"
        samples.append(s)
    return samples


def random_crop(sample: OcclusionSample, size, rng: np.random.Generator | int | None = None) -> OcclusionSample:
    ch, cw = (size, size) if np.isscalar(size) else size
    h, w = sample.shape
    if ch > h or cw > w or ch < 1 or cw < 1:
        raise ConfigurationError(f"crop {ch}x{cw} does not fit in {h}x{w}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    sl = (slice(y0, y0 + ch), slice(x0, x0 + cw))
    return OcclusionSample(
        sample.image[sl],
        sample.edge[sl],
        sample.orientation[sl],
        None if sample.labels is None else sample.labels[sl],
        sample.sample_id,
    )


# -- dataset files --------------------------------------------------------------------


def write_raw_f32(path, arr) -> None:
    Path(path).write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_raw_f32(path, shape) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    raw = path.read_bytes()
    expected = 4 * shape[0] * shape[1]
    if len(raw) != expected:
        raise DataError(f"{path}: {len(raw)} bytes, expected {expected} for {shape[0]}x{shape[1]}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def write_dataset(samples, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = []
    shape = samples[0].shape if samples else (0, 0)
    for i, s in enumerate(samples):
        if s.shape != shape:
            raise ConfigurationError(f"all samples must share one size; {s.shape} != {shape}")
        sid = s.sample_id or f"{i:05d}"
        ids.append(sid)
        img8 = np.rint(np.clip(s.image, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(img8, mode="RGB").save(d / f"{sid}.png")
        Image.fromarray((s.edge > 0).astype(np.uint8) * 255, mode="L").save(d / f"{sid}.edge.png")
        write_raw_f32(d / f"{sid}.ori.f32", s.orientation)
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "height": int(shape[0]),
        "width": int(shape[1]),
        "count": len(ids),
        "ids": ids,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return d


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise ManifestError(f"missing manifest {path}")
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: unreadable manifest ({exc})") from None
    for key in ("height", "width", "count", "ids"):
        if key not in m:
            raise ManifestError(f"{path}: manifest field {key!r} missing")
    if m["count"] != len(m["ids"]):
        raise ManifestError(f"{path}: manifest field 'count' is {m['count']} but 'ids' lists {len(m['ids'])} samples")
    return m


def read_dataset(directory) -> list[OcclusionSample]:
    d = Path(directory)
    m = read_manifest(d)
    h, w = int(m["height"]), int(m["width"])
    samples = []
    for sid in m["ids"]:
        img_path, edge_path = d / f"{sid}.png", d / f"{sid}.edge.png"
        for p in (img_path, edge_path):
            if not p.exists():
                raise DataError(f"missing file {p}")
        img = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
        edge = (np.asarray(Image.open(edge_path).convert("L")) > 127).astype(np.uint8)
        if img.shape[:2] != (h, w) or edge.shape != (h, w):
            raise ManifestError(f"{sid}: size {img.shape[:2]} does not match manifest height/width {(h, w)}")
        ori = read_raw_f32(d / f"{sid}.ori.f32", (h, w))
        samples.append(OcclusionSample(img, edge, ori, None, sid))
    return samples


def stack_images(samples) -> np.ndarray:
    """N x 3 x H x W float32 batch."""
    return np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float32)
