"""Joint loss, RMSProp, and the mini-batch training loop.

The loss is a sum of two mean-squared-error terms on heatmaps: a
supervised term over source items and a weight ``gamma`` times a masked
term over target items, where a binary per-keypoint mask zeroes both the
loss and the gradient of unselected channels. Batches take equal halves
from each domain when both are present.

All randomness (shuffling, augmentation) is drawn from streams keyed by
(seed, purpose, epoch, step), so runs are bitwise reproducible, resumable
from any epoch boundary, and the source-side draws are unaffected by the
presence or absence of target data; with gamma = 0 the parameter
trajectory is bitwise identical to a supervised-only run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convnet import ConvWorkspace, backward, forward
from .core import (
    FLIP_PERMUTATION,
    HEATMAP_SIZE,
    IMAGE_SIZE,
    KEYPOINT_COUNT,
    KeypointDataset,
    KeypointSet,
    encode_heatmaps,
)
from .errors import NumericalError
from .seeding import substream
from .transforms import (
    affine_warp,
    apply_affine_to_points,
    compose_affine,
    flip_matrix,
    rotation_matrix,
    scale_matrix,
)

BASE_LEARNING_RATE = 2.5e-4
DECAY_POINTS = (0.6, 0.9)
DECAY_FACTOR = 0.1


def learning_rate_at(epoch: int, total_epochs: int, base: float = BASE_LEARNING_RATE) -> float:
    """Step schedule: times 0.1 at 60% and again at 90% of the epoch budget."""
    frac = epoch / total_epochs
    lr = base
    for point in DECAY_POINTS:
        if frac >= point:
            lr *= DECAY_FACTOR
    return lr


# ---------------------------------------------------------------------------
# optimizer


def rmsprop_init(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def rmsprop_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict[str, np.ndarray],
    lr: float,
    rho: float = 0.99,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """One RMSProp update; returns fresh (params, state)."""
    new_params, new_state = {}, {}
    for k, p in params.items():
        g = grads[k].astype(p.dtype, copy=False)
        acc = rho * state[k] + (1.0 - rho) * g * g
        new_params[k] = p - lr * g / (np.sqrt(acc) + eps)
        new_state[k] = acc
    return new_params, new_state


# ---------------------------------------------------------------------------
# loss


def joint_loss_and_grads(
    params: dict[str, np.ndarray],
    src_images: np.ndarray,
    src_stacks: np.ndarray,
    tgt_images: np.ndarray | None,
    tgt_stacks: np.ndarray | None,
    tgt_masks: np.ndarray | None,
    gamma: float,
    ws: ConvWorkspace | None = None,
) -> tuple[float, dict[str, np.ndarray], ConvWorkspace]:
    """Loss and gradients of the joint objective on one batch.

    ``src_stacks``/``tgt_stacks`` are (., K, 32, 32) heatmap targets;
    ``tgt_masks`` is a (., K) binary array selecting which target
    channels participate. Per-term normalization is the mean over items
    and heatmap cells, so the loss scale is batch-size independent.
    """
    a = src_images.shape[0]
    b = 0 if tgt_images is None else tgt_images.shape[0]
    if a == 0:
        raise ValueError("batch must contain at least one source item")
    dtype = params["w1"].dtype
    if b:
        images = np.concatenate([src_images, tgt_images], axis=0)
    else:
        images = src_images
    out, ws = forward(params, images.astype(dtype, copy=False), ws)

    cells = KEYPOINT_COUNT * HEATMAP_SIZE * HEATMAP_SIZE
    dout = np.empty_like(out)
    res_s = out[:a] - src_stacks.astype(dtype, copy=False)
    denom_s = a * cells
    loss_s = float(np.vdot(res_s, res_s)) / denom_s
    dout[:a] = res_s * (2.0 / denom_s)

    loss_t = 0.0
    if b:
        mask = tgt_masks.astype(dtype, copy=False)[:, :, None, None]
        res_t = (out[a:] - tgt_stacks.astype(dtype, copy=False)) * mask
        denom_t = b * cells
        loss_t = float(np.vdot(res_t, res_t)) / denom_t
        dout[a:] = res_t * (2.0 * gamma / denom_t)
    loss = loss_s + gamma * loss_t
    grads = backward(params, ws, dout)
    return loss, grads, ws


# ---------------------------------------------------------------------------
# training data


@dataclass
class TrainSplit:
    """Arrays backing one domain's training stream."""

    domain: str
    images: np.ndarray  # (N, H, W, 3) float32
    kps_xy: np.ndarray  # (N, K, 2) float64
    kps_vis: np.ndarray  # (N, K) bool
    masks: np.ndarray  # (N, K) float32 channel masks
    stacks: np.ndarray = field(default=None, repr=False)  # cached clean targets

    def __post_init__(self):
        if self.stacks is None:
            self.stacks = np.stack(
                [
                    encode_heatmaps(KeypointSet(xy=xy, visible=vis))
                    for xy, vis in zip(self.kps_xy, self.kps_vis)
                ]
            )

    @property
    def n(self) -> int:
        return self.images.shape[0]


def split_from_dataset(ds: KeypointDataset) -> TrainSplit:
    frames = ds.all_frames()
    if not frames:
        raise ValueError(f"dataset {ds.domain}_{ds.split} has no frames")
    if any(f.keypoints is None for f in frames):
        raise ValueError(f"dataset {ds.domain}_{ds.split} is missing labels")
    return TrainSplit(
        domain=ds.domain,
        images=np.stack([f.image.astype(np.float32) for f in frames]),
        kps_xy=np.stack([f.keypoints.xy for f in frames]),
        kps_vis=np.stack([f.keypoints.visible for f in frames]),
        masks=np.ones((len(frames), KEYPOINT_COUNT), dtype=np.float32),
    )


# ---------------------------------------------------------------------------
# augmentation


def _augment_item(
    img: np.ndarray,
    xy: np.ndarray,
    vis: np.ndarray,
    rng: np.random.Generator,
    cfg: dict,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Geometric + appearance augmentation with consistent label action."""
    center = ((IMAGE_SIZE - 1) / 2.0, (IMAGE_SIZE - 1) / 2.0)
    m = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    flipped = False
    if rng.random() < cfg.get("flip_probability", 0.5):
        m = compose_affine(flip_matrix(IMAGE_SIZE), m)
        flipped = True
    lo, hi = cfg.get("scale_range", (1.0, 1.0))
    m = compose_affine(scale_matrix(float(rng.uniform(lo, hi)), center), m)
    lo, hi = cfg.get("rotate_range", (0.0, 0.0))
    m = compose_affine(rotation_matrix(float(rng.uniform(lo, hi)), center), m)

    out = affine_warp(img, m)
    new_xy = apply_affine_to_points(m, xy)
    new_vis = vis.copy()
    if flipped:
        new_xy = new_xy[FLIP_PERMUTATION]
        new_vis = new_vis[FLIP_PERMUTATION]
    inside = (
        (new_xy[:, 0] >= 0.0)
        & (new_xy[:, 0] <= IMAGE_SIZE - 1.0)
        & (new_xy[:, 1] >= 0.0)
        & (new_xy[:, 1] <= IMAGE_SIZE - 1.0)
    )
    new_vis &= inside

    color = cfg.get("color")
    if color:
        gains = rng.uniform(*color["gain_range"], 3).astype(out.dtype)
        offsets = rng.uniform(*color["offset_range"], 3).astype(out.dtype)
        out = out * gains + offsets
    amp_range = cfg.get("noise_amplitude")
    if amp_range:
        amp = float(rng.uniform(*amp_range))
        out = out + amp * rng.standard_normal(out.shape).astype(out.dtype)
    if rng.random() < cfg.get("blur_probability", 0.0):
        sigma = float(rng.uniform(*cfg.get("blur_sigma", (0.5, 1.0))))
        from .transforms import _gaussian_blur_wrap

        out = _gaussian_blur_wrap(out, sigma)
    return np.clip(out, 0.0, 1.0), new_xy, new_vis


def _gather_batch(
    split: TrainSplit,
    indices: np.ndarray,
    rng: np.random.Generator,
    aug_cfg: dict | None,
    aug_prob: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assemble (images, target stacks, masks) for the given items."""
    images = np.empty((len(indices), IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    stacks = np.empty((len(indices), KEYPOINT_COUNT, HEATMAP_SIZE, HEATMAP_SIZE), np.float32)
    masks = split.masks[indices].copy()
    for slot, idx in enumerate(indices):
        if aug_cfg is not None and rng.random() < aug_prob:
            img, xy, vis = _augment_item(
                split.images[idx], split.kps_xy[idx], split.kps_vis[idx], rng, aug_cfg
            )
            images[slot] = img
            stacks[slot] = encode_heatmaps(KeypointSet(xy=xy, visible=vis))
        else:
            images[slot] = split.images[idx]
            stacks[slot] = split.stacks[idx]
    return images, stacks, masks


# ---------------------------------------------------------------------------
# training loop


def train_model(
    params: dict[str, np.ndarray],
    opt_state: dict[str, np.ndarray] | None,
    source: TrainSplit,
    target: TrainSplit | None = None,
    *,
    epochs: int,
    seed: int,
    gamma: float = 0.0,
    batch_size: int = 16,
    learning_rate: float = BASE_LEARNING_RATE,
    rho: float = 0.99,
    eps: float = 1e-8,
    aug_cfg: dict | None = None,
    aug_prob: float = 0.5,
    epoch_offset: int = 0,
    schedule_total: int | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], list[dict]]:
    """Run mini-batch RMSProp; returns (params, optimizer state, history).

    One epoch is a full shuffled pass over the primary (source) split;
    when a target split is present each batch is half source, half
    target, with target indices cycling independently. ``epoch_offset``
    and ``schedule_total`` place this run inside a larger schedule so
    iterative drivers can thread one learning-rate decay pattern through
    several calls.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if opt_state is None:
        opt_state = rmsprop_init(params)
    total = schedule_total if schedule_total is not None else epoch_offset + epochs
    src_per_batch = batch_size // 2 if target is not None else batch_size
    steps_per_epoch = max(1, math.ceil(source.n / src_per_batch))
    history: list[dict] = []
    ws: ConvWorkspace | None = None

    for e in range(epochs):
        epoch = epoch_offset + e
        lr = learning_rate_at(epoch, max(total, 1), learning_rate)
        order = substream(seed, "order-src", epoch).permutation(source.n)
        if target is not None:
            tgt_order = substream(seed, "order-tgt", epoch).permutation(target.n)
        losses = []
        for step in range(steps_per_epoch):
            src_idx = order[step * src_per_batch : (step + 1) * src_per_batch]
            if len(src_idx) == 0:
                continue
            src_rng = substream(seed, "aug-src", epoch, step)
            s_img, s_stk, _ = _gather_batch(source, src_idx, src_rng, aug_cfg, aug_prob)
            t_img = t_stk = t_msk = None
            if target is not None:
                base = step * len(src_idx)
                tgt_idx = tgt_order[np.arange(base, base + len(src_idx)) % target.n]
                tgt_rng = substream(seed, "aug-tgt", epoch, step)
                t_img, t_stk, t_msk = _gather_batch(
                    target, tgt_idx, tgt_rng, aug_cfg, aug_prob
                )
            loss, grads, ws = joint_loss_and_grads(
                params, s_img, s_stk, t_img, t_stk, t_msk, gamma, ws
            )
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch} step {step}")
            params, opt_state = rmsprop_step(params, grads, opt_state, lr, rho, eps)
            losses.append(loss)
        history.append(
            {"epoch": epoch, "loss": float(np.mean(losses)) if losses else 0.0, "lr": lr}
        )
    return params, opt_state, history
