"""Four-layer convolutional heatmap regressor with explicit backprop.

The network maps a 64x64x3 image to one 32x32 score map per keypoint:

    conv 3x3,  3->16, stride 1 | relu
    conv 3x3, 16->32, stride 2 | relu
    conv 3x3, 32->32, stride 1 | relu
    conv 3x3, 32->K,  stride 1   (unbounded outputs)

Convolutions are evaluated as patch-matrix products (im2col + GEMM) in
NHWC layout; gradients are derived by hand and checked against finite
differences in the test suite. All buffers live in a reusable workspace
so a training step allocates almost nothing.

Weights are stored GEMM-ready with shape (3*3*C_in, C_out), the patch
axis ordered (ky, kx, channel); biases have shape (C_out,).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import HEATMAP_SIZE, IMAGE_SIZE, KEYPOINT_COUNT
from .errors import DataError

# (c_in, c_out, stride) per layer
ARCH = ((3, 16, 1), (16, 32, 2), (32, 32, 1), (32, KEYPOINT_COUNT, 1))
PARAM_KEYS = tuple(f"{kind}{i}" for i in range(1, len(ARCH) + 1) for kind in ("w", "b"))

_SIZES = (IMAGE_SIZE, IMAGE_SIZE, HEATMAP_SIZE, HEATMAP_SIZE, HEATMAP_SIZE)
# input spatial size per layer / output spatial size per layer
_IN_SIZE = (IMAGE_SIZE, IMAGE_SIZE, HEATMAP_SIZE, HEATMAP_SIZE)
_OUT_SIZE = (IMAGE_SIZE, HEATMAP_SIZE, HEATMAP_SIZE, HEATMAP_SIZE)


def init_params(seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, (cin, cout, _) in enumerate(ARCH, start=1):
        fan_in = 9 * cin
        std = np.sqrt(2.0 / fan_in)
        params[f"w{i}"] = (rng.standard_normal((fan_in, cout)) * std).astype(dtype)
        params[f"b{i}"] = np.zeros(cout, dtype=dtype)
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return sum(int(v.size) for v in params.values())


def cast_params(params: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype) for k, v in params.items()}


class ConvWorkspace:
    """Preallocated buffers for forward/backward at a fixed batch size."""

    def __init__(self, n: int, dtype=np.float32):
        self.n = n
        self.dtype = dtype
        self.xp = []  # zero-padded layer inputs
        self.cols = []  # im2col patch matrices
        self.act = []  # layer outputs (post-relu except the last)
        for (cin, cout, stride), isz, osz in zip(ARCH, _IN_SIZE, _OUT_SIZE):
            self.xp.append(np.zeros((n, isz + 2, isz + 2, cin), dtype=dtype))
            self.cols.append(np.empty((n * osz * osz, 9 * cin), dtype=dtype))
            self.act.append(np.empty((n, osz, osz, cout), dtype=dtype))
        self._bwd_ready = False

    def _ensure_backward(self):
        if self._bwd_ready:
            return
        self.dcols = []
        self.dxp = []
        self.dact = []
        for (cin, cout, stride), isz, osz in zip(ARCH, _IN_SIZE, _OUT_SIZE):
            self.dcols.append(np.empty((self.n * osz * osz, 9 * cin), dtype=self.dtype))
            self.dxp.append(np.zeros((self.n, isz + 2, isz + 2, cin), dtype=self.dtype))
            self.dact.append(np.empty((self.n, isz, isz, cin), dtype=self.dtype))
        self._bwd_ready = True


def _im2col(xp: np.ndarray, cols: np.ndarray, osz: int, stride: int) -> None:
    n = xp.shape[0]
    cin = xp.shape[3]
    c6 = cols.reshape(n, osz, osz, 3, 3, cin)
    for ky in range(3):
        for kx in range(3):
            c6[:, :, :, ky, kx, :] = xp[
                :, ky : ky + osz * stride : stride, kx : kx + osz * stride : stride, :
            ]


def _col2im(dcols: np.ndarray, dxp: np.ndarray, osz: int, stride: int) -> None:
    n = dxp.shape[0]
    cin = dxp.shape[3]
    dxp.fill(0)
    d6 = dcols.reshape(n, osz, osz, 3, 3, cin)
    for ky in range(3):
        for kx in range(3):
            dxp[
                :, ky : ky + osz * stride : stride, kx : kx + osz * stride : stride, :
            ] += d6[:, :, :, ky, kx, :]


def forward(
    params: dict[str, np.ndarray],
    images: np.ndarray,
    ws: ConvWorkspace | None = None,
) -> tuple[np.ndarray, ConvWorkspace]:
    """Run the network on a batch of (N, 64, 64, 3) images.

    Returns heatmap stacks with shape (N, K, 32, 32) plus the workspace
    holding the activations needed by :func:`backward`. The same
    workspace instance may be reused across calls with the same batch
    size and dtype.
    """
    n = images.shape[0]
    assert images.shape == (n, IMAGE_SIZE, IMAGE_SIZE, 3), images.shape
    dtype = params["w1"].dtype
    if ws is None or ws.n != n or ws.dtype != dtype:
        ws = ConvWorkspace(n, dtype)
    x = images.astype(dtype, copy=False)
    for i, ((cin, cout, stride), isz, osz) in enumerate(zip(ARCH, _IN_SIZE, _OUT_SIZE)):
        ws.xp[i][:, 1 : isz + 1, 1 : isz + 1, :] = x
        _im2col(ws.xp[i], ws.cols[i], osz, stride)
        z2d = ws.act[i].reshape(n * osz * osz, cout)
        np.matmul(ws.cols[i], params[f"w{i + 1}"], out=z2d)
        z2d += params[f"b{i + 1}"]
        if i < len(ARCH) - 1:
            np.maximum(ws.act[i], 0, out=ws.act[i])
        x = ws.act[i]
    out = np.ascontiguousarray(np.moveaxis(ws.act[-1], 3, 1))
    return out, ws


def backward(
    params: dict[str, np.ndarray], ws: ConvWorkspace, dout: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given d(loss)/d(output).

    ``dout`` has the public output shape (N, K, 32, 32). Must be called
    on the workspace produced by the immediately preceding
    :func:`forward` with the same parameters.
    """
    ws._ensure_backward()
    n = ws.n
    grads = {}
    d = np.ascontiguousarray(np.moveaxis(dout, 1, 3)).astype(ws.dtype, copy=False)
    for i in range(len(ARCH) - 1, -1, -1):
        cin, cout, stride = ARCH[i]
        isz, osz = _IN_SIZE[i], _OUT_SIZE[i]
        d2d = d.reshape(n * osz * osz, cout)
        grads[f"w{i + 1}"] = ws.cols[i].T @ d2d
        grads[f"b{i + 1}"] = d2d.sum(axis=0)
        if i == 0:
            break
        np.matmul(d2d, params[f"w{i + 1}"].T, out=ws.dcols[i])
        _col2im(ws.dcols[i], ws.dxp[i], osz, stride)
        da = ws.dact[i]
        da[:] = ws.dxp[i][:, 1 : isz + 1, 1 : isz + 1, :]
        da *= ws.act[i - 1] > 0
        d = da
    return grads


def predict(params: dict[str, np.ndarray], images: np.ndarray, ws=None) -> np.ndarray:
    out, _ = forward(params, images, ws)
    return out


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"SPCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray],
    opt_state: dict[str, np.ndarray] | None = None,
    epoch: int = 0,
    meta: dict | None = None,
) -> None:
    """Write a versioned binary checkpoint with deterministic bytes."""
    arrays: list[tuple[str, np.ndarray]] = [(f"p/{k}", params[k]) for k in sorted(params)]
    if opt_state:
        arrays += [(f"o/{k}", opt_state[k]) for k in sorted(opt_state)]
    header = {
        "version": CHECKPOINT_VERSION,
        "epoch": int(epoch),
        "meta": meta or {},
        "arrays": [
            {"name": name, "shape": list(a.shape), "dtype": str(a.dtype)}
            for name, a in arrays
        ],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)))
        f.write(hbytes)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a).tobytes())


def load_checkpoint(path: str | Path):
    """Read a checkpoint; returns (params, opt_state, epoch, meta)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise DataError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[12 : 12 + hlen])
    offset = 12 + hlen
    params: dict[str, np.ndarray] = {}
    opt_state: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(
            spec["shape"]
        ).copy()
        offset += nbytes
        group, name = spec["name"].split("/", 1)
        (params if group == "p" else opt_state)[name] = arr
    return params, opt_state or None, header["epoch"], header["meta"]
