"""Procedural generator for the articulated-quadruped benchmark.

A scene is a factored parameter pair: pose factors (everything that moves
keypoints) and appearance factors (everything that does not). Rendering is
a pure function of the scene, and the keypoints come from closed-form
forward kinematics, so ground truth is exact by construction.

Figure model, all lengths in pixels at scale 1 and scaled by the global
scale factor ``s``. ``F`` is the forward unit vector (facing times the
torso orientation), ``D`` the body-down unit vector (orientation only):

- torso: ellipse, semi-axes ``(a, b)`` along ``F`` / ``D``.
- head: disc of radius ``HEAD_R`` centered at
  ``c + (a + 0.55 HEAD_R) F - 0.55 HEAD_R D``; the head frame
  ``(F2, D2)`` is ``(F, D)`` rotated by ``facing * head_angle``.
- eyes:  ``h + (0.30 F2 - 0.42 D2) HEAD_R`` (left),
  ``h + (0.10 F2 - 0.62 D2) HEAD_R`` (right); chin:
  ``h + (0.55 F2 + 0.75 D2) HEAD_R``.
- shoulders: ``c + 0.55 a F - 0.45 b D +- 0.9 s F`` (left +, right -).
- hip: ``c - 0.78 a F - 0.15 b D``.
- legs attach at ``c +- 0.55 a F + 0.35 b D`` (front/back), with the same
  ``+- 0.9 s F`` left/right offset; the attachment is the elbow keypoint.
  Upper and lower segments have length ``LEG_UPPER`` / ``LEG_LOWER``; the
  knee sits along ``D`` rotated by ``facing * j1``, the hoof continues
  along ``D`` rotated by ``facing * (j1 + j2)``.

The keypoint order matches ``core.KEYPOINT_NAMES``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import GeneratorConfig
from .core import (
    IMAGE_SIZE,
    FrameRecord,
    KeypointDataset,
    KeypointSet,
    SequenceData,
)
from .dataset_io import write_manifest, write_split
from .errors import DataError, GenerationError
from .seeding import substream

TORSO_A_RANGE = (11.5, 14.5)
TORSO_B_RANGE = (5.5, 7.5)
HEAD_R = 4.5
LEG_UPPER = 6.0
LEG_LOWER = 6.0
LEG_HALF_WIDTH = 1.3
SCALE_RANGE = (0.6, 1.2)
JOINT_LIMIT_DEGREES = 60.0
ORIENT_RANGE_DEGREES = (-18.0, 18.0)
HEAD_ANGLE_RANGE_DEGREES = (-25.0, 25.0)
CENTER_RANGE = (24.0, 40.0)
LIGHTING_RANGE = (0.7, 1.3)
NOISE_AMP_RANGE = (0.01, 0.05)
FAR_LEG_SHADE = 0.72
MAX_REJECTIONS = 100

LEG_ORDER = ("front_left", "front_right", "back_left", "back_right")


@dataclass(frozen=True)
class PoseParams:
    """Factors that determine keypoint locations."""

    center: tuple  # (cx, cy)
    orientation: float  # radians
    axes: tuple  # (a, b) torso semi-axes
    head_angle: float  # radians
    leg_angles: tuple  # 4 legs x (upper, lower), radians
    scale: float
    facing: int  # +1 rightward, -1 leftward


@dataclass(frozen=True)
class ClutterShape:
    kind: str  # "ellipse" | "rect"
    center: tuple
    size: tuple
    angle: float
    color: tuple


@dataclass(frozen=True)
class AppearanceParams:
    """Factors independent of the keypoints."""

    body_texture: int
    body_colors: tuple  # two RGB triples
    background_texture: int
    background_colors: tuple
    lighting: float
    noise_amplitude: float
    noise_seed: int
    phase: tuple  # texture phase offsets (x, y)
    clutter: tuple = ()


@dataclass(frozen=True)
class SceneParams:
    alpha: PoseParams
    beta: AppearanceParams


@dataclass
class DomainProfile:
    name: str
    body_textures: tuple
    background_textures: tuple
    body_palette: tuple  # ((rlo, rhi), (glo, ghi), (blo, bhi))
    background_palette: tuple
    clutter_count: tuple  # (lo, hi) inclusive
    sequence_mode: bool

    @classmethod
    def from_dict(cls, d: dict) -> "DomainProfile":
        return cls(
            name=d["name"],
            body_textures=tuple(d["body_textures"]),
            background_textures=tuple(d["background_textures"]),
            body_palette=tuple(tuple(r) for r in d["body_palette"]),
            background_palette=tuple(tuple(r) for r in d["background_palette"]),
            clutter_count=tuple(d["clutter_count"]),
            sequence_mode=bool(d["sequence_mode"]),
        )


# ---------------------------------------------------------------------------
# forward kinematics


def _rot(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def keypoints_from_pose(alpha: PoseParams) -> np.ndarray:
    """Exact keypoint locations for a pose, in keypoint order; shape (18, 2)."""
    c = np.asarray(alpha.center, dtype=np.float64)
    a, b = alpha.axes
    s = alpha.scale
    f = float(alpha.facing)
    u = np.array([np.cos(alpha.orientation), np.sin(alpha.orientation)])
    d = np.array([-np.sin(alpha.orientation), np.cos(alpha.orientation)])
    fwd = f * u

    head = c + (a + 0.55 * HEAD_R) * s * fwd - 0.55 * HEAD_R * s * d
    rot_head = _rot(f * alpha.head_angle)
    f2 = rot_head @ fwd
    d2 = rot_head @ d
    eye_left = head + (0.30 * f2 - 0.42 * d2) * HEAD_R * s
    eye_right = head + (0.10 * f2 - 0.62 * d2) * HEAD_R * s
    chin = head + (0.55 * f2 + 0.75 * d2) * HEAD_R * s

    sh_base = c + 0.55 * a * s * fwd - 0.45 * b * s * d
    shoulder_left = sh_base + 0.9 * s * fwd
    shoulder_right = sh_base - 0.9 * s * fwd
    hip = c - 0.78 * a * s * fwd - 0.15 * b * s * d

    pts = [eye_left, eye_right, chin, shoulder_left, shoulder_right, hip]
    elbows, knees, hooves = [], [], []
    for i, leg in enumerate(LEG_ORDER):
        front = leg.startswith("front")
        left = leg.endswith("left")
        attach = c + (0.55 if front else -0.55) * a * s * fwd + 0.35 * b * s * d
        attach = attach + (0.9 if left else -0.9) * s * fwd
        j1, j2 = alpha.leg_angles[i]
        upper_dir = _rot(f * j1) @ d
        knee = attach + LEG_UPPER * s * upper_dir
        lower_dir = _rot(f * (j1 + j2)) @ d
        hoof = knee + LEG_LOWER * s * lower_dir
        elbows.append(attach)
        knees.append(knee)
        hooves.append(hoof)
    pts.extend(elbows)
    pts.extend(knees)
    pts.extend(hooves)
    return np.stack(pts, axis=0)


# ---------------------------------------------------------------------------
# procedural textures

TEXTURE_NAMES = {
    0: "solid",
    1: "h_stripes",
    2: "v_stripes",
    3: "checker",
    4: "diag_stripes",
    5: "spots",
    6: "grad_x",
    7: "rings",
    8: "grad_y",
    9: "fine_checker",
}


def texture_field(tid: int, colors, phase, size: int = IMAGE_SIZE) -> np.ndarray:
    """Evaluate texture ``tid`` over the image grid; returns (H, W, 3)."""
    c1 = np.asarray(colors[0], dtype=np.float64)
    c2 = np.asarray(colors[1], dtype=np.float64)
    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64))
    px, py = phase
    xs = xs + px
    ys = ys + py
    if tid == 0:
        mask = np.zeros((size, size))
    elif tid == 1:
        mask = (np.floor(ys / 4.0) % 2).astype(float)
    elif tid == 2:
        mask = (np.floor(xs / 4.0) % 2).astype(float)
    elif tid == 3:
        mask = ((np.floor(xs / 5.0) + np.floor(ys / 5.0)) % 2).astype(float)
    elif tid == 4:
        mask = (np.floor((xs + ys) / 5.0) % 2).astype(float)
    elif tid == 5:
        mask = ((np.sin(xs * 0.9) * np.sin(ys * 0.9)) > 0.25).astype(float)
    elif tid == 6:
        mask = xs / max(size - 1, 1)
    elif tid == 7:
        r = np.hypot(xs - size / 2.0, ys - size / 2.0)
        mask = (np.sin(r * 0.8) > 0.0).astype(float)
    elif tid == 8:
        mask = ys / max(size - 1, 1)
    elif tid == 9:
        mask = ((np.floor(xs / 2.0) + np.floor(ys / 2.0)) % 2).astype(float)
    else:
        raise ValueError(f"unknown texture id {tid}")
    return c1[None, None, :] * (1.0 - mask[..., None]) + c2[None, None, :] * mask[..., None]


# ---------------------------------------------------------------------------
# rasterization


def _pixel_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64))
    return xs, ys


def _ellipse_mask(xs, ys, center, axes, angle) -> np.ndarray:
    dx = xs - center[0]
    dy = ys - center[1]
    cu, su = np.cos(angle), np.sin(angle)
    pu = dx * cu + dy * su
    pv = -dx * su + dy * cu
    return (pu / axes[0]) ** 2 + (pv / axes[1]) ** 2 <= 1.0


def _segment_mask(xs, ys, p0, p1, half_width) -> np.ndarray:
    d = np.asarray(p1, dtype=np.float64) - np.asarray(p0, dtype=np.float64)
    len2 = float(d @ d)
    rx = xs - p0[0]
    ry = ys - p0[1]
    if len2 <= 1e-12:
        return rx**2 + ry**2 <= half_width**2
    t = np.clip((rx * d[0] + ry * d[1]) / len2, 0.0, 1.0)
    qx = rx - t * d[0]
    qy = ry - t * d[1]
    return qx**2 + qy**2 <= half_width**2


def _rect_mask(xs, ys, center, size, angle) -> np.ndarray:
    dx = xs - center[0]
    dy = ys - center[1]
    cu, su = np.cos(angle), np.sin(angle)
    pu = dx * cu + dy * su
    pv = -dx * su + dy * cu
    return (np.abs(pu) <= size[0]) & (np.abs(pv) <= size[1])


def render(params: SceneParams) -> tuple[np.ndarray, KeypointSet]:
    """Render a scene; returns the image and its exact keypoints.

    Pure function of the scene parameters: pixel noise comes from the
    dedicated noise seed stored in the appearance factors.
    """
    alpha, beta = params.alpha, params.beta
    size = IMAGE_SIZE
    xs, ys = _pixel_grid(size)
    img = texture_field(beta.background_texture, beta.background_colors, beta.phase, size).copy()

    for shape in beta.clutter:
        if shape.kind == "ellipse":
            m = _ellipse_mask(xs, ys, shape.center, shape.size, shape.angle)
        else:
            m = _rect_mask(xs, ys, shape.center, shape.size, shape.angle)
        img[m] = np.asarray(shape.color, dtype=np.float64)

    kp = keypoints_from_pose(alpha)
    body_tex = texture_field(beta.body_texture, beta.body_colors, beta.phase, size)
    base_color = np.asarray(beta.body_colors[0], dtype=np.float64)
    s = alpha.scale
    leg_w = LEG_HALF_WIDTH * s

    def paint_leg(i: int, shade: float):
        elbow, knee, hoof = kp[6 + i], kp[10 + i], kp[14 + i]
        m = _segment_mask(xs, ys, elbow, knee, leg_w) | _segment_mask(xs, ys, knee, hoof, leg_w)
        img[m] = np.clip(base_color * shade, 0.0, 1.0)

    # far (right-side) legs behind the torso, near (left-side) legs in front
    paint_leg(1, FAR_LEG_SHADE)
    paint_leg(3, FAR_LEG_SHADE)

    a, b = alpha.axes
    torso = _ellipse_mask(xs, ys, alpha.center, (a * s, b * s), alpha.orientation)
    img[torso] = body_tex[torso]

    head_center = _head_center(alpha)
    head = _ellipse_mask(xs, ys, head_center, (HEAD_R * s, HEAD_R * s), 0.0)
    img[head] = body_tex[head]

    paint_leg(0, 1.0)
    paint_leg(2, 1.0)

    # eye dots: strong local cues, drawn last
    for eye in (kp[0], kp[1]):
        m = _ellipse_mask(xs, ys, eye, (0.9 * s, 0.9 * s), 0.0)
        img[m] = np.asarray([0.05, 0.05, 0.05])

    img = img * beta.lighting
    noise_rng = np.random.default_rng(beta.noise_seed)
    img = img + beta.noise_amplitude * noise_rng.standard_normal(img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)

    kps = KeypointSet(xy=kp, visible=np.ones(kp.shape[0], dtype=bool))
    return img, kps


def _head_center(alpha: PoseParams) -> np.ndarray:
    c = np.asarray(alpha.center, dtype=np.float64)
    a, _ = alpha.axes
    u = np.array([np.cos(alpha.orientation), np.sin(alpha.orientation)])
    d = np.array([-np.sin(alpha.orientation), np.cos(alpha.orientation)])
    fwd = alpha.facing * u
    return c + (a + 0.55 * HEAD_R) * alpha.scale * fwd - 0.55 * HEAD_R * alpha.scale * d


# ---------------------------------------------------------------------------
# sampling


def _sample_pose(rng: np.random.Generator) -> PoseParams:
    limit = np.deg2rad(JOINT_LIMIT_DEGREES)
    return PoseParams(
        center=(rng.uniform(*CENTER_RANGE), rng.uniform(*CENTER_RANGE)),
        orientation=np.deg2rad(rng.uniform(*ORIENT_RANGE_DEGREES)),
        axes=(rng.uniform(*TORSO_A_RANGE), rng.uniform(*TORSO_B_RANGE)),
        head_angle=np.deg2rad(rng.uniform(*HEAD_ANGLE_RANGE_DEGREES)),
        leg_angles=tuple(
            (rng.uniform(-limit, limit), rng.uniform(-limit, limit)) for _ in range(4)
        ),
        scale=rng.uniform(*SCALE_RANGE),
        facing=1 if rng.random() < 0.5 else -1,
    )


def _sample_color(rng: np.random.Generator, palette) -> tuple:
    return tuple(float(rng.uniform(lo, hi)) for lo, hi in palette)


def _sample_appearance(rng: np.random.Generator, profile: DomainProfile) -> AppearanceParams:
    body_tid = int(profile.body_textures[rng.integers(0, len(profile.body_textures))])
    bg_tid = int(
        profile.background_textures[rng.integers(0, len(profile.background_textures))]
    )
    body_colors = (_sample_color(rng, profile.body_palette), _sample_color(rng, profile.body_palette))
    bg_colors = (
        _sample_color(rng, profile.background_palette),
        _sample_color(rng, profile.background_palette),
    )
    lo, hi = profile.clutter_count
    n_clutter = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    clutter = []
    for _ in range(n_clutter):
        kind = "ellipse" if rng.random() < 0.5 else "rect"
        clutter.append(
            ClutterShape(
                kind=kind,
                center=(float(rng.uniform(0, IMAGE_SIZE)), float(rng.uniform(0, IMAGE_SIZE))),
                size=(float(rng.uniform(2.0, 8.0)), float(rng.uniform(2.0, 8.0))),
                angle=float(rng.uniform(0, np.pi)),
                color=_sample_color(rng, profile.background_palette),
            )
        )
    return AppearanceParams(
        body_texture=body_tid,
        body_colors=body_colors,
        background_texture=bg_tid,
        background_colors=bg_colors,
        lighting=float(rng.uniform(*LIGHTING_RANGE)),
        noise_amplitude=float(rng.uniform(*NOISE_AMP_RANGE)),
        noise_seed=int(rng.integers(0, 2**31 - 1)),
        phase=(float(rng.uniform(0, 16.0)), float(rng.uniform(0, 16.0))),
        clutter=tuple(clutter),
    )


def _pose_in_frame(alpha: PoseParams, margin: float) -> bool:
    kp = keypoints_from_pose(alpha)
    lo, hi = margin, IMAGE_SIZE - 1 - margin
    return bool(np.all((kp >= lo) & (kp <= hi)))


def sample_scene(
    rng: np.random.Generator, profile: DomainProfile, margin: float = 2.0
) -> SceneParams:
    """Draw a scene whose keypoints all fall inside the frame.

    Pose factors are resampled on rejection (appearance factors never move
    keypoints); after MAX_REJECTIONS failed draws a GenerationError is
    raised.
    """
    beta = _sample_appearance(rng, profile)
    alpha = _sample_pose(rng)
    rejections = 0
    while not _pose_in_frame(alpha, margin):
        rejections += 1
        if rejections >= MAX_REJECTIONS:
            raise GenerationError(
                f"no in-frame pose found after {MAX_REJECTIONS} rejected samples"
            )
        alpha = _sample_pose(rng)
    return SceneParams(alpha=alpha, beta=beta)


# ---------------------------------------------------------------------------
# sequences


def _walk_pose(
    alpha: PoseParams,
    rng: np.random.Generator,
    center_step: float,
    angle_step: float,
    margin: float,
) -> PoseParams:
    """One bounded random-walk step; keypoints stay in frame.

    Rejected steps are redrawn; if no valid step is found the pose is held
    (a standstill frame).
    """
    limit = np.deg2rad(JOINT_LIMIT_DEGREES)
    step = np.deg2rad(angle_step)
    head_limit = np.deg2rad(HEAD_ANGLE_RANGE_DEGREES[1])
    for _ in range(MAX_REJECTIONS):
        legs = tuple(
            (
                float(np.clip(j1 + rng.uniform(-step, step), -limit, limit)),
                float(np.clip(j2 + rng.uniform(-step, step), -limit, limit)),
            )
            for j1, j2 in alpha.leg_angles
        )
        candidate = PoseParams(
            center=(
                alpha.center[0] + float(rng.uniform(-center_step, center_step)),
                alpha.center[1] + float(rng.uniform(-center_step, center_step)),
            ),
            orientation=alpha.orientation,
            axes=alpha.axes,
            head_angle=float(
                np.clip(alpha.head_angle + rng.uniform(-step, step), -head_limit, head_limit)
            ),
            leg_angles=legs,
            scale=alpha.scale,
            facing=alpha.facing,
        )
        if _pose_in_frame(candidate, margin):
            return candidate
    return alpha


def generate_sequence(
    rng: np.random.Generator,
    profile: DomainProfile,
    length: int,
    sequence_id: str,
    center_step: float = 2.0,
    angle_step: float = 5.0,
    margin: float = 2.0,
) -> SequenceData:
    """Generate a sequence: pose performs a bounded random walk, appearance is fixed."""
    if length < 2:
        raise ValueError(f"sequence length must be >= 2, got {length}")
    scene = sample_scene(rng, profile, margin)
    frames = []
    alpha = scene.alpha
    for t in range(length):
        if t > 0:
            alpha = _walk_pose(alpha, rng, center_step, angle_step, margin)
        img, kps = render(SceneParams(alpha=alpha, beta=scene.beta))
        frames.append(
            FrameRecord(image=img, keypoints=kps, file=f"{sequence_id}_f{t:03d}.png", index=t)
        )
    return SequenceData(sequence_id=sequence_id, frames=frames)


# ---------------------------------------------------------------------------
# benchmark


def build_benchmark(cfg: GeneratorConfig, out_dir: str | Path, force: bool = False) -> dict:
    """Generate and write the full benchmark; returns the manifest dict.

    Every frame/sequence derives its own random stream from the master
    seed and its index, so regeneration is reproducible and order
    independent. Refuses to overwrite an existing benchmark unless forced.
    """
    cfg.validate()
    out = Path(out_dir)
    if (out / "manifest.json").exists() and not force:
        raise DataError(f"benchmark already exists at {out} (use force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    source = DomainProfile.from_dict(cfg.profiles["source"])
    target = DomainProfile.from_dict(cfg.profiles["target"])
    margin = cfg.keypoint_margin

    n_train = int(round(cfg.source_frames * cfg.source_train_fraction))
    src_frames = []
    for i in range(cfg.source_frames):
        rng = substream(cfg.master_seed, "source", i)
        img, kps = render(sample_scene(rng, source, margin))
        src_frames.append(
            FrameRecord(image=img, keypoints=kps, file=f"frame_{i:05d}.png", index=0)
        )

    def singleton(frame: FrameRecord) -> SequenceData:
        return SequenceData(sequence_id=frame.file.rsplit(".", 1)[0], frames=[frame])

    splits_data = {
        "source_train": KeypointDataset(
            "source", "train", True, [singleton(f) for f in src_frames[:n_train]]
        ),
        "source_val": KeypointDataset(
            "source", "val", True, [singleton(f) for f in src_frames[n_train:]]
        ),
    }

    for split, count, offset in (
        ("train", cfg.target_train_sequences, 0),
        ("val", cfg.target_val_sequences, cfg.target_train_sequences),
    ):
        seqs = []
        for j in range(count):
            rng = substream(cfg.master_seed, "target", offset + j)
            seqs.append(
                generate_sequence(
                    rng,
                    target,
                    cfg.sequence_length,
                    f"seq_{offset + j:03d}",
                    cfg.walk_center_step,
                    cfg.walk_angle_step_degrees,
                    margin,
                )
            )
        # target train labels stay on disk for evaluation but are flagged
        # unavailable for training
        splits_data[f"target_{split}"] = KeypointDataset(
            "target", split, split == "val", seqs
        )

    entries = {}
    for key, ds in splits_data.items():
        entries[key] = write_split(out, ds)
    digest = write_manifest(out, entries, cfg.master_seed, cfg.to_dict())
    manifest = {
        "hash": digest,
        "elapsed_seconds": time.perf_counter() - t0,
        "root": str(out),
    }
    return manifest
