"""Small encoder-decoder segmentation network, its losses and optimiser.

Layout for depth ``D`` and base width ``B``::

    enc0   conv3x3  in -> B, ReLU                      (full resolution)
    downL  conv3x3 stride 2, B*2^(L-1) -> B*2^L, ReLU   L = 1..D
    upL    upsample x2, conv3x3 B*2^L -> B*2^(L-1), ReLU, + skip   L = D..1
    out    conv3x3 B -> B, ReLU
    head   conv1x1 B -> 1                               (logits)

Skip connections are additive. Parameters are float64 arrays held in a
:class:`NetworkParams`; all computation goes through :mod:`sizeseg.autodiff`.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .grid import GridError

CHECKPOINT_MAGIC = b"SZSEGCKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    depth: int = 2
    base_channels: int = 8
    in_channels: int = 1

    def layers(self):
        """(name, (cout, cin, kh, kw), stride) in declaration order."""
        b, d = self.base_channels, self.depth
        out = [("enc0", (b, self.in_channels, 3, 3), 1)]
        for lvl in range(1, d + 1):
            out.append((f"down{lvl}", (b * 2 ** lvl, b * 2 ** (lvl - 1), 3, 3), 2))
        for lvl in range(d, 0, -1):
            out.append((f"up{lvl}", (b * 2 ** (lvl - 1), b * 2 ** lvl, 3, 3), 1))
        out.append(("out", (b, b, 3, 3), 1))
        out.append(("head", (1, b, 1, 1), 1))
        return out

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for name, wshape, _ in self.layers():
            shapes[f"{name}.w"] = wshape
            shapes[f"{name}.b"] = (wshape[0],)
        return shapes


@dataclass
class NetworkParams:
    arch: Architecture
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.arch.param_shapes()
        if list(self.tensors) != list(expected):
            raise ValueError("parameter names do not match the architecture")
        for k, shape in expected.items():
            if self.tensors[k].shape != shape:
                raise ValueError(f"{k}: shape {self.tensors[k].shape} != {shape}")

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(arch: Architecture = Architecture(), seed: int = 0) -> NetworkParams:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    tensors = {}
    for name, (cout, cin, kh, kw), _ in arch.layers():
        bound = np.sqrt(6.0 / (cin * kh * kw))
        if name == "head":
            bound = np.sqrt(3.0 / (cin * kh * kw))
        tensors[f"{name}.w"] = rng.uniform(-bound, bound, (cout, cin, kh, kw))
        tensors[f"{name}.b"] = np.zeros(cout)
    return NetworkParams(arch, tensors)


def zero_params(arch: Architecture = Architecture()) -> NetworkParams:
    return NetworkParams(arch, {k: np.zeros(s) for k, s in arch.param_shapes().items()})


@dataclass
class ForwardPass:
    """Recorded graph of one forward evaluation."""
    logits: ad.Tensor
    leaves: dict[str, ad.Tensor]
    gates: list[np.ndarray] = field(default_factory=list)  # ReLU on/off patterns

    def backward(self, seed) -> dict[str, np.ndarray]:
        """Backpropagate a per-pixel logit gradient of shape (N, H, W)."""
        seed = np.asarray(seed, dtype=np.float64)
        self.logits.backward(seed.reshape(self.logits.shape))
        return _collect(self.leaves)


def _collect(leaves):
    return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in leaves.items()}


def _as_batch(images, arch: Architecture) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    h, w = x.shape[-2:]
    step = 2 ** arch.depth
    if h % step or w % step:
        raise GridError(f"image {h}x{w} is not divisible by {step}")
    return x


def record(params: NetworkParams, images) -> ForwardPass:
    """Forward pass with graph recording. ``images`` is (H, W) or (N, H, W)."""
    arch = params.arch
    x = ad.Tensor(_as_batch(images, arch))
    leaves = {k: ad.Tensor(v, name=k) for k, v in params.tensors.items()}
    strides = {name: s for name, _, s in arch.layers()}

    gates = []

    def block(h, name):
        z = ad.conv2d(h, leaves[f"{name}.w"], leaves[f"{name}.b"], stride=strides[name])
        gates.append(z.data > 0)
        return ad.relu(z)

    h = block(x, "enc0")
    skips = [h]
    for lvl in range(1, arch.depth + 1):
        h = block(h, f"down{lvl}")
        skips.append(h)
    for lvl in range(arch.depth, 0, -1):
        h = block(ad.upsample2x(h), f"up{lvl}") + skips[lvl - 1]
    h = block(h, "out")
    logits = ad.conv2d(h, leaves["head.w"], leaves["head.b"])
    return ForwardPass(logits, leaves, gates)


def forward(params: NetworkParams, images) -> np.ndarray:
    """Logit map(s) with the spatial shape of the input; (H, W) in, (H, W) out."""
    out = record(params, images).logits.data[:, 0]
    return out[0] if np.ndim(images) == 2 else out


def bce_with_logits(logits, gt) -> float:
    """Summed BCE-with-logits against a ±1 mask."""
    a = np.asarray(logits, dtype=np.float64)
    y = np.asarray(gt)
    if a.shape != y.shape:
        raise GridError(f"dimension mismatch: {a.shape} vs {y.shape}")
    t = (y + 1) / 2.0
    return float(np.sum(a * (1.0 - t) + np.logaddexp(0.0, -a)))


def bce_loss_and_grads(params: NetworkParams, images, masks) -> tuple[float, dict[str, np.ndarray]]:
    """Summed BCE over the batch and its parameter gradients."""
    fp = record(params, images)
    t = (np.asarray(masks, dtype=np.float64).reshape(fp.logits.shape) + 1) / 2.0
    loss = ad.bce_with_logits_sum(fp.logits, t)
    loss.backward()
    return float(loss.data), _collect(fp.leaves)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    lr: float
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def sgd_step(params: NetworkParams, grads: dict[str, np.ndarray],
             state: OptimizerState) -> tuple[NetworkParams, OptimizerState]:
    """Momentum SGD: ``v <- mu v + g``; ``theta <- theta - lr v``.

    A non-finite gradient aborts the step with both inputs left untouched.
    """
    for k, g in grads.items():
        if g.shape != params.tensors[k].shape:
            raise ValueError(f"gradient {k} has shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {k}")
    velocity, tensors = {}, {}
    for k, theta in params.tensors.items():
        v = state.velocity.get(k, np.zeros_like(theta))
        v = state.momentum * v + grads.get(k, 0.0)
        velocity[k] = v
        tensors[k] = theta - state.lr * v
    return NetworkParams(params.arch, tensors), OptimizerState(state.lr, state.momentum, velocity)


# --- checkpoints -----------------------------------------------------------
#
# Binary layout (little-endian):
#   8 bytes  magic "SZSEGCKP"
#   u32      format version
#   u32      length of the JSON descriptor, then the UTF-8 descriptor
#            {"depth", "base_channels", "in_channels", "params": [[name, shape], ...]}
#   float64  raw tensor values in declaration order, C order
# A text manifest next to it lists shapes and the SHA-256 of the binary file.

def _descriptor(params: NetworkParams) -> dict:
    a = params.arch
    return {"depth": a.depth, "base_channels": a.base_channels, "in_channels": a.in_channels,
            "params": [[k, list(v.shape)] for k, v in params.tensors.items()]}


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.txt")


def save_checkpoint(params: NetworkParams, path) -> Path:
    path = Path(path)
    desc = json.dumps(_descriptor(params), sort_keys=True).encode()
    blob = bytearray(CHECKPOINT_MAGIC)
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(desc))
    blob += desc
    for v in params.tensors.values():
        blob += np.ascontiguousarray(v, dtype="<f8").tobytes()
    path.write_bytes(bytes(blob))
    lines = [f"format {CHECKPOINT_MAGIC.decode()} v{CHECKPOINT_VERSION}"]
    lines += [f"{k} {'x'.join(map(str, v.shape))}" for k, v in params.tensors.items()]
    lines.append(f"sha256 {hashlib.sha256(bytes(blob)).hexdigest()}")
    manifest_path(path).write_text("\n".join(lines) + "\n")
    return path


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, verify: bool = True) -> NetworkParams:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, dlen = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if verify and manifest_path(path).exists():
        recorded = manifest_path(path).read_text().split("sha256 ")[-1].strip()
        if recorded != hashlib.sha256(blob).hexdigest():
            raise CheckpointError("checksum mismatch")
    desc = json.loads(blob[16:16 + dlen])
    arch = Architecture(desc["depth"], desc["base_channels"], desc["in_channels"])
    offset = 16 + dlen
    tensors = {}
    for name, shape in desc["params"]:
        n = int(np.prod(shape))
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * n
    if offset != len(blob):
        raise CheckpointError("trailing bytes after tensor data")
    return NetworkParams(arch, tensors)
