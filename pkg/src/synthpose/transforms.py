"""Appearance and geometry transforms with exact actions on labels.

Two families, mirroring how a keypoint model is expected to behave:

- Invariance transforms touch pixels only (noise, color, blur, background
  patches); predictions and labels must not move.
- Equivariance transforms are invertible geometric maps (rotation and
  scaling about the image center, horizontal flip); they carry their exact
  2x3 affine matrix, act on keypoints by that matrix, and act on heatmap
  stacks by the matrix conjugated into heatmap coordinates.

A horizontal flip additionally permutes left/right keypoint identities
(and heatmap channels); without the permutation the equivariance relation
is false for any skeleton with left/right labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FLIP_PERMUTATION, HEATMAP_SCALE, IMAGE_SIZE, KeypointSet

ROTATE_LIMIT_DEGREES = 45.0
SCALE_RANGE = (0.7, 1.4)

INVARIANCE_KINDS = ("color_perturb", "gaussian_noise", "gaussian_blur", "background_patch")
EQUIVARIANCE_KINDS = ("rotate", "scale", "flip_horizontal")


# ---------------------------------------------------------------------------
# affine machinery


def rotation_matrix(degrees: float, center: tuple[float, float]) -> np.ndarray:
    """2x3 matrix rotating points by ``degrees`` about ``center``."""
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    cx, cy = center
    return np.array(
        [[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy]], dtype=np.float64
    )


def scale_matrix(s: float, center: tuple[float, float]) -> np.ndarray:
    cx, cy = center
    return np.array([[s, 0.0, cx * (1.0 - s)], [0.0, s, cy * (1.0 - s)]], dtype=np.float64)


def flip_matrix(width: int) -> np.ndarray:
    return np.array([[-1.0, 0.0, width - 1.0], [0.0, 1.0, 0.0]], dtype=np.float64)


def invert_affine(m: np.ndarray) -> np.ndarray:
    a = m[:, :2]
    inv = np.linalg.inv(a)
    t = -inv @ m[:, 2]
    return np.concatenate([inv, t[:, None]], axis=1)


def compose_affine(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """The 2x3 matrix applying ``inner`` first, then ``outer``."""
    a = outer[:, :2] @ inner[:, :2]
    t = outer[:, :2] @ inner[:, 2] + outer[:, 2]
    return np.concatenate([a, t[:, None]], axis=1)


_GRID_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    key = (h, w)
    if key not in _GRID_CACHE:
        _GRID_CACHE[key] = np.meshgrid(
            np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64)
        )
    return _GRID_CACHE[key]


def apply_affine_to_points(m: np.ndarray, xy: np.ndarray) -> np.ndarray:
    return xy @ m[:, :2].T + m[:, 2]


def affine_warp(arr: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Warp an (H, W) or (H, W, C) array by a display transform.

    ``matrix`` maps input coordinates to output coordinates; each output
    pixel is bilinearly sampled at the inverse-mapped location. Samples
    falling outside the frame replicate the nearest edge pixel.
    """
    h, w = arr.shape[:2]
    sampler = invert_affine(matrix)
    xs, ys = _grid(h, w)
    sx = sampler[0, 0] * xs + sampler[0, 1] * ys + sampler[0, 2]
    sy = sampler[1, 0] * xs + sampler[1, 1] * ys + sampler[1, 2]
    np.clip(sx, 0.0, w - 1.0, out=sx)
    np.clip(sy, 0.0, h - 1.0, out=sy)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0).astype(arr.dtype, copy=False)
    fy = (sy - y0).astype(arr.dtype, copy=False)
    flat = arr.reshape(h * w, -1)
    v00 = flat[y0 * w + x0]
    v01 = flat[y0 * w + x1]
    v10 = flat[y1 * w + x0]
    v11 = flat[y1 * w + x1]
    fx = fx[..., None]
    fy = fy[..., None]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    out = top * (1.0 - fy) + bot * fy
    return out.reshape(arr.shape).astype(arr.dtype, copy=False)


# ---------------------------------------------------------------------------
# transform types


@dataclass(frozen=True)
class EquivarianceTransform:
    """Invertible geometric transform about the image center."""

    kind: str
    theta: float = 0.0  # degrees, rotate only
    s: float = 1.0  # scale only
    size: int = IMAGE_SIZE

    def __post_init__(self):
        if self.kind not in EQUIVARIANCE_KINDS:
            raise ValueError(f"unknown equivariance kind {self.kind!r}")

    @property
    def center(self) -> tuple[float, float]:
        c = (self.size - 1) / 2.0
        return (c, c)

    @property
    def matrix(self) -> np.ndarray:
        if self.kind == "rotate":
            return rotation_matrix(self.theta, self.center)
        if self.kind == "scale":
            return scale_matrix(self.s, self.center)
        return flip_matrix(self.size)

    def inverse(self) -> "EquivarianceTransform":
        if self.kind == "rotate":
            return EquivarianceTransform("rotate", theta=-self.theta, size=self.size)
        if self.kind == "scale":
            return EquivarianceTransform("scale", s=1.0 / self.s, size=self.size)
        return self  # flip is its own inverse

    def validate_training_range(self) -> None:
        if self.kind == "rotate" and abs(self.theta) > ROTATE_LIMIT_DEGREES:
            raise ValueError(f"rotation {self.theta} exceeds +-{ROTATE_LIMIT_DEGREES} degrees")
        if self.kind == "scale" and not (SCALE_RANGE[0] <= self.s <= SCALE_RANGE[1]):
            raise ValueError(f"scale {self.s} outside {SCALE_RANGE}")


@dataclass(frozen=True)
class InvarianceTransform:
    """Appearance-only transform; never changes image geometry."""

    kind: str
    amplitude: float = 0.0  # gaussian_noise
    sigma: float = 1.0  # gaussian_blur
    gains: tuple = (1.0, 1.0, 1.0)  # color_perturb
    offsets: tuple = (0.0, 0.0, 0.0)  # color_perturb
    rect: tuple = (0, 0, 0, 0)  # background_patch: x, y, w, h
    fill: tuple = (0.5, 0.5, 0.5)  # background_patch

    def __post_init__(self):
        if self.kind not in INVARIANCE_KINDS:
            raise ValueError(f"unknown invariance kind {self.kind!r}")
        if self.kind == "gaussian_noise" and self.amplitude < 0:
            raise ValueError(f"noise amplitude must be >= 0, got {self.amplitude}")
        if self.kind == "gaussian_blur" and not self.sigma > 0:
            raise ValueError(f"blur sigma must be positive, got {self.sigma}")


# ---------------------------------------------------------------------------
# operations


def apply_invariance(
    img: np.ndarray, t: InvarianceTransform, rng: np.random.Generator
) -> np.ndarray:
    """Apply an appearance transform; output is clamped to [0, 1]."""
    if t.kind == "gaussian_noise":
        noise = rng.standard_normal(img.shape).astype(img.dtype)
        out = img + t.amplitude * noise
    elif t.kind == "color_perturb":
        gains = np.asarray(t.gains, dtype=img.dtype)
        offsets = np.asarray(t.offsets, dtype=img.dtype)
        out = img * gains + offsets
    elif t.kind == "gaussian_blur":
        out = _gaussian_blur_wrap(img, t.sigma)
    else:  # background_patch
        out = img.copy()
        x, y, w, h = (int(v) for v in t.rect)
        out[y : y + h, x : x + w] = np.asarray(t.fill, dtype=img.dtype)
    return np.clip(out, 0.0, 1.0)


def _gaussian_blur_wrap(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with wrap-around boundary.

    The wrapped boundary keeps the (normalized) kernel mass balanced, so
    the image mean is preserved to float precision.
    """
    radius = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    out = img.astype(np.float64)
    for axis in (0, 1):
        acc = np.zeros_like(out)
        for off, kv in zip(range(-radius, radius + 1), kernel):
            acc += kv * np.roll(out, -off, axis=axis)
        out = acc
    return out.astype(img.dtype, copy=False)


def apply_equivariance(img: np.ndarray, t: EquivarianceTransform) -> np.ndarray:
    """Warp the image by the transform (training-time parameter ranges enforced)."""
    t.validate_training_range()
    return affine_warp(img, t.matrix)


def transform_keypoints(kps: KeypointSet, t: EquivarianceTransform) -> KeypointSet:
    """Apply the transform's exact affine action to keypoints.

    A horizontal flip also swaps left/right keypoint identities. Points
    that leave the frame are marked invisible.
    """
    xy = apply_affine_to_points(t.matrix, kps.xy)
    visible = kps.visible.copy()
    if t.kind == "flip_horizontal":
        xy = xy[FLIP_PERMUTATION]
        visible = visible[FLIP_PERMUTATION]
    inside = (
        (xy[:, 0] >= 0.0)
        & (xy[:, 0] <= t.size - 1.0)
        & (xy[:, 1] >= 0.0)
        & (xy[:, 1] <= t.size - 1.0)
    )
    return KeypointSet(xy=xy, visible=visible & inside, skeleton_id=kps.skeleton_id)


def heatmap_matrix(t: EquivarianceTransform) -> np.ndarray:
    """The transform's affine matrix expressed in heatmap coordinates.

    Heatmap coordinates are image coordinates scaled by HEATMAP_SCALE, so
    the linear part is unchanged and the translation scales.
    """
    m = t.matrix.copy()
    m[:, 2] *= HEATMAP_SCALE
    return m


def inverse_on_heatmaps(stack: np.ndarray, t: EquivarianceTransform) -> np.ndarray:
    """Undo a transform on a predicted heatmap stack.

    Each map is warped by the inverse affine (bilinear, edge replication);
    a flip also restores the original channel order.
    """
    m_inv = invert_affine(heatmap_matrix(t))
    maps = stack
    if t.kind == "flip_horizontal":
        maps = maps[FLIP_PERMUTATION]
    warped = affine_warp(np.moveaxis(maps, 0, -1), m_inv)
    return np.ascontiguousarray(np.moveaxis(warped, -1, 0))


# ---------------------------------------------------------------------------
# drawing transforms from config


def draw_invariance(cfg: dict, rng: np.random.Generator) -> InvarianceTransform:
    """Instantiate an invariance transform from a config entry.

    Scalar entries may be fixed numbers or [lo, hi] ranges to draw from.
    """
    kind = cfg["kind"]
    if kind == "gaussian_noise":
        return InvarianceTransform(kind, amplitude=_draw(cfg.get("amplitude", 0.05), rng))
    if kind == "gaussian_blur":
        return InvarianceTransform(kind, sigma=_draw(cfg.get("sigma", 1.0), rng))
    if kind == "color_perturb":
        glo, ghi = cfg.get("gain_range", (0.8, 1.25))
        olo, ohi = cfg.get("offset_range", (-0.08, 0.08))
        return InvarianceTransform(
            kind,
            gains=tuple(rng.uniform(glo, ghi, 3)),
            offsets=tuple(rng.uniform(olo, ohi, 3)),
        )
    if kind == "background_patch":
        size = cfg.get("max_size", 16)
        w = int(rng.integers(4, size + 1))
        h = int(rng.integers(4, size + 1))
        x = int(rng.integers(0, IMAGE_SIZE - w + 1))
        y = int(rng.integers(0, IMAGE_SIZE - h + 1))
        return InvarianceTransform(kind, rect=(x, y, w, h), fill=tuple(rng.uniform(0, 1, 3)))
    raise ValueError(f"unknown invariance kind {kind!r}")


def draw_equivariance(cfg: dict, rng: np.random.Generator) -> EquivarianceTransform:
    """Instantiate an equivariance transform from a config entry.

    ``rotate`` accepts either ``degrees`` (fixed magnitude, random sign) or
    ``range``; ``scale`` accepts ``choices`` or ``range``.
    """
    kind = cfg["kind"]
    if kind == "rotate":
        if "range" in cfg:
            theta = float(rng.uniform(*cfg["range"]))
        else:
            theta = float(cfg.get("degrees", 15.0)) * (1.0 if rng.random() < 0.5 else -1.0)
        return EquivarianceTransform("rotate", theta=theta)
    if kind == "scale":
        if "range" in cfg:
            s = float(rng.uniform(*cfg["range"]))
        else:
            choices = cfg.get("choices", (0.85, 1.15))
            s = float(choices[int(rng.integers(0, len(choices)))])
        return EquivarianceTransform("scale", s=s)
    if kind == "flip_horizontal":
        return EquivarianceTransform("flip_horizontal")
    raise ValueError(f"unknown equivariance kind {kind!r}")


def _draw(value, rng: np.random.Generator) -> float:
    if isinstance(value, (list, tuple)):
        return float(rng.uniform(value[0], value[1]))
    return float(value)
