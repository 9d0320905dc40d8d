"""Shared domain types and coordinate conventions.

Conventions used everywhere in the package:

- Images are (H, W, 3) float arrays with values in [0, 1], H = W = 64,
  row-major, x to the right, y down.
- Heatmap stacks are (K, 32, 32) float32 arrays, one map per keypoint, at
  half the image resolution. Heatmap coordinates are image coordinates
  times ``HEATMAP_SCALE``.
- Ground-truth maps are unnormalized Gaussians (peak exactly 1.0) centered
  on the nearest heatmap cell; maps of invisible keypoints are all zero.
- Keypoint order is fixed: eyes, chin, shoulders, hip, then elbows, knees
  and hooves in front-left / front-right / back-left / back-right order.
  The neck keypoint of the usual quadruped layout is dropped because it
  has no left/right identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

IMAGE_SIZE = 64
IMAGE_CHANNELS = 3
HEATMAP_SIZE = 32
HEATMAP_SCALE = HEATMAP_SIZE / IMAGE_SIZE  # 0.5
HEATMAP_SIGMA = 1.0
SKELETON_ID = "quadruped18"

KEYPOINT_NAMES = (
    "eye_left",
    "eye_right",
    "chin",
    "shoulder_left",
    "shoulder_right",
    "hip",
    "elbow_front_left",
    "elbow_front_right",
    "elbow_back_left",
    "elbow_back_right",
    "knee_front_left",
    "knee_front_right",
    "knee_back_left",
    "knee_back_right",
    "hoof_front_left",
    "hoof_front_right",
    "hoof_back_left",
    "hoof_back_right",
)
KEYPOINT_COUNT = len(KEYPOINT_NAMES)  # 18

# Left/right swap used by horizontal flips; chin and hip are midline points.
FLIP_PERMUTATION = np.array(
    [1, 0, 2, 4, 3, 5, 7, 6, 9, 8, 11, 10, 13, 12, 15, 14, 17, 16], dtype=np.intp
)

KEYPOINT_GROUPS = {
    "eyes": (0, 1),
    "chin": (2,),
    "shoulders": (3, 4),
    "hip": (5,),
    "elbows": (6, 7, 8, 9),
    "knees": (10, 11, 12, 13),
    "hooves": (14, 15, 16, 17),
}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class KeypointSet:
    """K keypoints as (x, y) image coordinates plus per-point visibility."""

    xy: np.ndarray  # (K, 2) float64
    visible: np.ndarray  # (K,) bool
    skeleton_id: str = SKELETON_ID

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValueError(f"xy must be (K, 2), got {xy.shape}")
        if vis.shape != (xy.shape[0],):
            raise ValueError(f"visible must be (K,), got {vis.shape}")
        object.__setattr__(self, "xy", _readonly(xy))
        object.__setattr__(self, "visible", _readonly(vis))

    @property
    def count(self) -> int:
        return self.xy.shape[0]

    def with_xy(self, xy: np.ndarray, visible: np.ndarray | None = None) -> "KeypointSet":
        vis = self.visible if visible is None else visible
        return replace(self, xy=xy, visible=vis)

    def in_bounds(self, width: int = IMAGE_SIZE, height: int = IMAGE_SIZE) -> np.ndarray:
        """Boolean mask of points inside [0, width-1] x [0, height-1]."""
        x, y = self.xy[:, 0], self.xy[:, 1]
        return (x >= 0.0) & (x <= width - 1.0) & (y >= 0.0) & (y <= height - 1.0)


@dataclass
class FrameRecord:
    """One frame of a dataset: the image plus its (optional) annotation."""

    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    keypoints: KeypointSet | None
    file: str = ""
    index: int = 0


@dataclass
class SequenceData:
    """An ordered run of frames; consecutive indices are temporal neighbors."""

    sequence_id: str
    frames: list[FrameRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class KeypointDataset:
    """A split of the benchmark: sequences (target) or singleton frames (source)."""

    domain: str  # "source" | "target"
    split: str  # "train" | "val"
    labeled: bool
    sequences: list[SequenceData] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return sum(len(s) for s in self.sequences)

    def iter_frames(self):
        for seq in self.sequences:
            for frame in seq.frames:
                yield seq.sequence_id, frame

    def all_frames(self) -> list[FrameRecord]:
        return [f for _, f in self.iter_frames()]

    def unlabeled_view(self) -> "KeypointDataset":
        """A copy with every annotation stripped.

        This is the only form in which the self-training driver may see
        target training data; the labels stay on disk for the evaluator.
        """
        seqs = [
            SequenceData(
                s.sequence_id,
                [FrameRecord(f.image, None, f.file, f.index) for f in s.frames],
            )
            for s in self.sequences
        ]
        return KeypointDataset(self.domain, self.split, labeled=False, sequences=seqs)


def validate_image(img: np.ndarray) -> None:
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS):
        raise ValueError(f"expected ({IMAGE_SIZE}, {IMAGE_SIZE}, {IMAGE_CHANNELS}) image, got {img.shape}")


def encode_heatmaps(
    kps: KeypointSet,
    size: int = HEATMAP_SIZE,
    sigma: float = HEATMAP_SIGMA,
) -> np.ndarray:
    """Encode keypoints as one Gaussian bump per visible keypoint.

    The bump is centered on the heatmap cell nearest to the scaled
    coordinate so its peak value is exactly 1.0; invisible keypoints
    produce all-zero maps.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if kps.count != KEYPOINT_COUNT:
        raise ValueError(f"expected {KEYPOINT_COUNT} keypoints, got {kps.count}")
    if not np.all(np.isfinite(kps.xy)):
        raise ValueError("keypoint coordinates must be finite")

    scale = size / IMAGE_SIZE
    grid = np.arange(size, dtype=np.float64)
    stack = np.zeros((kps.count, size, size), dtype=np.float32)
    inv = 1.0 / (2.0 * sigma * sigma)
    for k in range(kps.count):
        if not kps.visible[k]:
            continue
        cx = min(max(int(np.rint(kps.xy[k, 0] * scale)), 0), size - 1)
        cy = min(max(int(np.rint(kps.xy[k, 1] * scale)), 0), size - 1)
        gx = np.exp(-((grid - cx) ** 2) * inv)
        gy = np.exp(-((grid - cy) ** 2) * inv)
        stack[k] = np.outer(gy, gx).astype(np.float32)
    return stack


def decode_heatmaps(stack: np.ndarray) -> tuple[KeypointSet, np.ndarray]:
    """Decode a heatmap stack to keypoints and per-keypoint confidences.

    Location is the per-map argmax scaled back to image coordinates (ties
    resolved to the lowest row, then lowest column); confidence is the map
    maximum. Visibility is a dataset property, not a prediction, so every
    decoded point is marked visible. An all-zero map decodes to (0, 0)
    with confidence 0.
    """
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise ValueError(f"expected (K, S, S) stack, got {stack.shape}")
    k, size, _ = stack.shape
    flat = stack.reshape(k, -1)
    idx = flat.argmax(axis=1)  # first occurrence: lowest row, then column
    conf = flat[np.arange(k), idx].astype(np.float64)
    ys, xs = np.divmod(idx, size)
    scale = IMAGE_SIZE / size
    xy = np.stack([xs * scale, ys * scale], axis=1).astype(np.float64)
    kps = KeypointSet(xy=xy, visible=np.ones(k, dtype=bool))
    return kps, conf
