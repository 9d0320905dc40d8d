"""On-disk benchmark format.

Layout under the benchmark root::

    manifest.json
    <domain>_<split>/
        images/<frame-file>.png
        annotations/<sequence_id>.json

Each annotation document is ``{"sequence_id": ..., "frames": [{"file": ...,
"keypoints": [[x, y, visible], ...]}, ...]}``. Source splits hold singleton
sequences (independent frames); target splits hold real sequences. The
manifest records the generator seed, counts, keypoint layout and the
texture pools of both domains. All JSON is written in canonical form
(sorted keys) so identical runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import (
    IMAGE_SIZE,
    KEYPOINT_COUNT,
    KEYPOINT_NAMES,
    SKELETON_ID,
    FrameRecord,
    KeypointDataset,
    KeypointSet,
    SequenceData,
)
from .errors import DataError

FORMAT_VERSION = 1

SPLIT_KEYS = ("source_train", "source_val", "target_train", "target_val")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def split_dir(root: Path, domain: str, split: str) -> Path:
    return Path(root) / f"{domain}_{split}"


def image_to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def save_image(path: Path, img: np.ndarray) -> None:
    PILImage.fromarray(image_to_uint8(img)).save(path, format="PNG")


def load_image(path: Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def _sequence_doc(seq: SequenceData) -> dict:
    frames = []
    for f in seq.frames:
        rec = {"file": f.file}
        if f.keypoints is not None:
            rec["keypoints"] = [
                [float(x), float(y), bool(v)]
                for (x, y), v in zip(f.keypoints.xy, f.keypoints.visible)
            ]
        frames.append(rec)
    return {"sequence_id": seq.sequence_id, "frames": frames}


def write_split(root: Path, dataset: KeypointDataset) -> dict:
    """Write one split to disk; returns its manifest entry."""
    d = split_dir(root, dataset.domain, dataset.split)
    (d / "images").mkdir(parents=True, exist_ok=True)
    (d / "annotations").mkdir(parents=True, exist_ok=True)
    for seq in dataset.sequences:
        for frame in seq.frames:
            save_image(d / "images" / frame.file, frame.image)
        doc = _sequence_doc(seq)
        (d / "annotations" / f"{seq.sequence_id}.json").write_text(canonical_json(doc))
    return {
        "domain": dataset.domain,
        "split": dataset.split,
        "labeled": dataset.labeled,
        "dir": d.name,
        "sequences": len(dataset.sequences),
        "frames": dataset.n_frames,
    }


def write_manifest(root: Path, splits: dict, seed: int, generator_config: dict) -> str:
    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "image_size": IMAGE_SIZE,
        "keypoint_count": KEYPOINT_COUNT,
        "keypoint_names": list(KEYPOINT_NAMES),
        "skeleton_id": SKELETON_ID,
        "splits": splits,
        "generator": generator_config,
    }
    text = canonical_json(manifest)
    (Path(root) / "manifest.json").write_text(text)
    return sha256_text(text)


def load_manifest(root: Path) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DataError(f"no benchmark manifest at {path}")
    return json.loads(path.read_text())


def benchmark_hash(root: Path) -> str:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DataError(f"no benchmark manifest at {path}")
    return sha256_text(path.read_text())


def load_split(root: Path, domain: str, split: str) -> KeypointDataset:
    """Load a split eagerly (images and annotations) into memory."""
    manifest = load_manifest(root)
    key = f"{domain}_{split}"
    entry = manifest["splits"].get(key)
    if entry is None:
        raise DataError(f"split {key} not present in manifest")
    d = split_dir(root, domain, split)
    ann_dir = d / "annotations"
    if not ann_dir.is_dir():
        raise DataError(f"missing annotations directory {ann_dir}")
    sequences = []
    for ann_path in sorted(ann_dir.glob("*.json")):
        doc = json.loads(ann_path.read_text())
        frames = []
        for i, rec in enumerate(doc["frames"]):
            img = load_image(d / "images" / rec["file"])
            if img.shape[0] != IMAGE_SIZE or img.shape[1] != IMAGE_SIZE:
                raise DataError(f"bad image size in {rec['file']}: {img.shape}")
            kps = None
            if "keypoints" in rec:
                pts = np.asarray(rec["keypoints"], dtype=np.float64)
                if pts.shape != (KEYPOINT_COUNT, 3):
                    raise DataError(
                        f"bad keypoint array in {ann_path.name}: {pts.shape}"
                    )
                kps = KeypointSet(xy=pts[:, :2], visible=pts[:, 2] > 0.5)
            frames.append(FrameRecord(image=img, keypoints=kps, file=rec["file"], index=i))
        sequences.append(SequenceData(doc["sequence_id"], frames))
    labeled = bool(entry["labeled"]) and all(
        f.keypoints is not None for s in sequences for f in s.frames
    )
    return KeypointDataset(domain=domain, split=split, labeled=labeled, sequences=sequences)
