"""Datasets: sample types, synthetic single-object generator, splits, PGM I/O.

On-disk layout::

    root/{train,val,test}/img_000000.pgm
    root/{train,val,test}/mask_000000.pgm      (fully annotated samples only)
    root/{train,val,test}/manifest.json

Images and masks are binary PGM (P5). Masks store 0 for background and 255
for foreground. Each manifest has the keys ``samples`` (a list of
``{"image", "mask", "size", "kind"}`` with ``kind`` "full" or "size"),
``seed``, ``height`` and ``width``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import BACKGROUND, FOREGROUND, GridError, as_image, as_mask
from .sizefn import object_size

SHAPE_FAMILIES = ("disc", "ellipse", "rectangle")
MIN_FOREGROUND_FRACTION = 0.01


@dataclass(frozen=True)
class MaskedSample:
    image: np.ndarray
    mask: np.ndarray
    uid: int = -1

    def __post_init__(self):
        object.__setattr__(self, "image", as_image(self.image))
        object.__setattr__(self, "mask", as_mask(self.mask))
        if self.image.shape != self.mask.shape:
            raise GridError("image and mask dimensions differ")
        if not np.any(self.mask == FOREGROUND):
            raise GridError("a fully annotated sample needs a foreground pixel")


@dataclass(frozen=True)
class SizedSample:
    image: np.ndarray
    size: float
    uid: int = -1

    def __post_init__(self):
        object.__setattr__(self, "image", as_image(self.image))
        if not self.size > 0:
            raise GridError("weak samples need a positive object size")


@dataclass
class DatasetSplit:
    train_full: list[MaskedSample] = field(default_factory=list)
    train_weak: list[SizedSample] = field(default_factory=list)
    validation: list[MaskedSample] = field(default_factory=list)
    test: list[MaskedSample] = field(default_factory=list)
    seed: int = 0


def derive_size(mask) -> int:
    """Size label of a ground-truth mask; needs both foreground and background."""
    m = as_mask(mask)
    if not (np.any(m == FOREGROUND) and np.any(m == BACKGROUND)):
        raise GridError("size annotations need a mask with foreground and background")
    return object_size(m)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _render_shape(family: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    # half-extents keep a >= 1 pixel background margin on each side
    max_ry = (h - 2) / 2.0
    max_rx = (w - 2) / 2.0
    lo = 1.0
    if family == "disc":
        r = rng.uniform(lo, min(max_ry, max_rx))
        ry = rx = r
    elif family in ("ellipse", "rectangle"):
        ry = rng.uniform(lo, max_ry)
        rx = rng.uniform(lo, max_rx)
    else:
        raise ValueError(f"unknown shape family {family!r}")
    cy = rng.uniform(1 + ry - 0.5, h - 2 - ry + 0.5)
    cx = rng.uniform(1 + rx - 0.5, w - 2 - rx + 0.5)
    if family == "rectangle":
        fg = (np.abs(rr - cy) <= ry) & (np.abs(cc - cx) <= rx)
    else:
        fg = ((rr - cy) / ry) ** 2 + ((cc - cx) / rx) ** 2 <= 1.0
    fg[0, :] = fg[-1, :] = False
    fg[:, 0] = fg[:, -1] = False
    return fg


def generate_synthetic(count: int, height: int, width: int,
                       families: Sequence[str] = SHAPE_FAMILIES, seed: int = 0) -> list[MaskedSample]:
    """Single-object images with exact masks.

    Each sample draws its family and geometry from its own substream. The image
    is 0.3 on background and 0.7 on the object, plus a random linear ramp of
    amplitude up to 0.1 and Gaussian noise of standard deviation 0.1, clipped
    to [0, 1]. Shapes covering less than 1% of the grid are redrawn.
    """
    if min(height, width) < 5:
        raise ValueError("grid too small for a shape with a background margin")
    for fam in families:
        if fam not in SHAPE_FAMILIES:
            raise ValueError(f"unknown shape family {fam!r}")
    min_fg = max(1, int(np.ceil(MIN_FOREGROUND_FRACTION * height * width)))
    rr, cc = np.mgrid[0:height, 0:width].astype(np.float64)
    out = []
    for k in range(count):
        rng = _sample_rng(seed, k)
        family = families[rng.integers(len(families))]
        for _ in range(1000):
            fg = _render_shape(family, height, width, rng)
            if fg.sum() >= min_fg:
                break
        else:
            raise ValueError("could not place a shape meeting the foreground filter")
        ramp = rng.uniform(-0.1, 0.1, 2)
        img = np.where(fg, 0.7, 0.3)
        img = img + ramp[0] * (rr / max(height - 1, 1) - 0.5) + ramp[1] * (cc / max(width - 1, 1) - 0.5)
        img = np.clip(img + rng.normal(0.0, 0.1, fg.shape), 0.0, 1.0)
        out.append(MaskedSample(img, np.where(fg, FOREGROUND, BACKGROUND), uid=k))
    return out


def split_dataset(samples: Sequence[MaskedSample], fractions=(0.7, 0.1, 0.2),
                  m_full: int = 85, seed: int = 0) -> DatasetSplit:
    """Shuffle by ``seed`` and cut into train/validation/test.

    The first ``m_full`` training samples keep their masks; the remaining
    training samples are reduced to size labels.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    n = len(samples)
    n_train = int(round(fr[0] * n))
    n_val = min(int(round(fr[1] * n)), n - n_train)
    if not 0 <= m_full <= n_train:
        raise ValueError(f"m_full={m_full} exceeds the {n_train} training samples")
    order = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed))).permutation(n)
    shuffled = [samples[i] for i in order]
    train = shuffled[:n_train]
    return DatasetSplit(
        train_full=list(train[:m_full]),
        train_weak=[SizedSample(s.image, derive_size(s.mask), s.uid) for s in train[m_full:]],
        validation=list(shuffled[n_train:n_train + n_val]),
        test=list(shuffled[n_train + n_val:]),
        seed=seed,
    )


def augment_flip(sample: MaskedSample, rng: np.random.Generator) -> MaskedSample:
    """Flip image and mask together, vertically then horizontally, each with p = 0.5."""
    img, mask = sample.image, sample.mask
    if rng.random() < 0.5:
        img, mask = img[::-1, :], mask[::-1, :]
    if rng.random() < 0.5:
        img, mask = img[:, ::-1], mask[:, ::-1]
    return MaskedSample(img, mask, sample.uid)


# --- PGM -------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Binary PGM (P5) -> (integer array, maxval)."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    width, height, maxval = (int(x) for x in fields[1:])
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    pos += 1  # single whitespace byte after maxval
    arr = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return arr.reshape(height, width).astype(np.int64), maxval


def write_pgm(path, values: np.ndarray, maxval: int = 255) -> None:
    arr = np.asarray(values)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + arr.astype(dtype).tobytes())


def load_image(path) -> np.ndarray:
    arr, maxval = read_pgm(path)
    return as_image(arr / float(maxval))


def load_mask(path) -> np.ndarray:
    arr, _ = read_pgm(path)
    return as_mask(arr > 0)


def _write_part(folder: Path, samples, seed: int, shape) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, s in enumerate(samples):
        img_name = f"img_{k:06d}.pgm"
        write_pgm(folder / img_name, np.round(s.image * 255.0))
        if isinstance(s, MaskedSample):
            mask_name = f"mask_{k:06d}.pgm"
            write_pgm(folder / mask_name, np.where(s.mask > 0, 255, 0))
            entries.append({"image": img_name, "mask": mask_name, "size": None, "kind": "full"})
        else:
            entries.append({"image": img_name, "mask": None, "size": float(s.size), "kind": "size"})
    manifest = {"samples": entries, "seed": int(seed), "height": int(shape[0]), "width": int(shape[1])}
    (folder / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def save_split(split: DatasetSplit, root) -> Path:
    root = Path(root)
    ref = (split.train_full or split.train_weak or split.validation or split.test)
    shape = ref[0].image.shape if ref else (0, 0)
    _write_part(root / "train", list(split.train_full) + list(split.train_weak), split.seed, shape)
    _write_part(root / "val", split.validation, split.seed, shape)
    _write_part(root / "test", split.test, split.seed, shape)
    return root


def _read_part(folder: Path, first_uid: int = 0):
    manifest = json.loads((folder / "manifest.json").read_text())
    out = []
    for k, e in enumerate(manifest["samples"], start=first_uid):
        img = load_image(folder / e["image"])
        if e["kind"] == "full":
            out.append(MaskedSample(img, load_mask(folder / e["mask"]), k))
        elif e["kind"] == "size":
            out.append(SizedSample(img, float(e["size"]), k))
        else:
            raise ValueError(f"{folder}: unknown sample kind {e['kind']!r}")
    return out, manifest


def load_split(root) -> DatasetSplit:
    root = Path(root)
    train, manifest = _read_part(root / "train")
    val, _ = _read_part(root / "val", len(train))
    test, _ = _read_part(root / "test", len(train) + len(val))
    for part in (val, test):
        if any(isinstance(s, SizedSample) for s in part):
            raise ValueError("validation and test samples must carry masks")
    return DatasetSplit(
        train_full=[s for s in train if isinstance(s, MaskedSample)],
        train_weak=[s for s in train if isinstance(s, SizedSample)],
        validation=val, test=test, seed=manifest["seed"],
    )
