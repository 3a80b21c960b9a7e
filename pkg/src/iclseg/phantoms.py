"""Deterministic synthetic segmentation phantoms and split/batch plumbing.

Each sample is a concentric-structure phantom: a bright inner ellipse,
a surrounding ring, and an adjacent crescent hugging the ring, over a
noisy, bias-shaded background whose intensity range overlaps the
foreground classes. Geometry, intensities, bias field and noise are all
drawn from a single per-seed stream, so a seed fully determines a sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import ConfigError

MAGIC = b"ICLS"
VERSION = 1


class GenerationError(RuntimeError):
    """Phantom geometry could not be placed within the retry budget."""


class FormatError(ValueError):
    """Malformed sample file; message carries the byte offset."""


@dataclass
class PhantomConfig:
    height: int = 64
    width: int = 64
    n_classes: int = 4
    noise_sigma: float = 0.05
    max_retries: int = 100

    def __post_init__(self):
        if not 2 <= self.n_classes <= 4:
            raise ConfigError(f"phantom supports 2..4 classes, got {self.n_classes}")


@dataclass
class SegSample:
    image: np.ndarray        # (1, h, w) float32 in [0, 1]
    mask: np.ndarray | None  # (h, w) uint8, None when withheld
    seed: int


def _ellipse(yy, xx, cy, cx, a, b, theta):
    ct, st = np.cos(theta), np.sin(theta)
    u = (xx - cx) * ct + (yy - cy) * st
    v = -(xx - cx) * st + (yy - cy) * ct
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_sample(seed: int, config: PhantomConfig = PhantomConfig()) -> SegSample:
    """One phantom; bitwise reproducible from the seed."""
    rng = np.random.default_rng(seed)
    h, w = config.height, config.width
    s = min(h, w) / 64.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    for _ in range(config.max_retries):
        cy = h / 2 + rng.uniform(-6, 6) * s
        cx = w / 2 + rng.uniform(-6, 6) * s
        theta = rng.uniform(0, np.pi)
        a_in = rng.uniform(5, 9) * s
        b_in = rng.uniform(5, 9) * s
        thick = rng.uniform(3, 6) * s
        phi = rng.uniform(0, 2 * np.pi)
        a_cr = rng.uniform(4.5, 8) * s
        b_cr = rng.uniform(4.5, 8) * s
        reach = max(a_in, b_in) + thick
        dist = reach + 0.45 * min(a_cr, b_cr)
        ccy = cy + dist * np.sin(phi)
        ccx = cx + dist * np.cos(phi)

        inner = _ellipse(yy, xx, cy, cx, a_in, b_in, theta)
        outer = _ellipse(yy, xx, cy, cx, a_in + thick, b_in + thick, theta)
        ring = outer & ~inner
        crescent = _ellipse(yy, xx, ccy, ccx, a_cr, b_cr, phi) & ~outer

        # innermost structure always takes the highest label
        structures = {2: [inner], 3: [ring, inner],
                      4: [crescent, ring, inner]}[config.n_classes]
        mask = np.zeros((h, w), dtype=np.uint8)
        for label, region in enumerate(structures, start=1):
            mask[region] = label

        counts = np.bincount(mask.reshape(-1), minlength=config.n_classes)
        if (counts[1:config.n_classes] > 0).all():
            break
    else:
        raise GenerationError(
            f"seed {seed}: no valid layout in {config.max_retries} attempts")

    bg_mean = rng.uniform(0.30, 0.50)
    crescent_mean = rng.uniform(0.40, 0.62)
    ring_mean = rng.uniform(0.32, 0.55)
    inner_mean = rng.uniform(0.55, 0.80)
    structure_means = {2: [inner_mean], 3: [ring_mean, inner_mean],
                       4: [crescent_mean, ring_mean, inner_mean]}[config.n_classes]
    image = np.full((h, w), bg_mean, dtype=np.float64)
    for label, mean in enumerate(structure_means, start=1):
        image[mask == label] = mean

    fx, fy = rng.uniform(0.5, 1.5, 2)
    px, py = rng.uniform(0, 2 * np.pi, 2)
    amp = rng.uniform(0.0, 0.12)
    gx, gy = rng.uniform(-0.1, 0.1, 2)
    image += amp * np.sin(2 * np.pi * fx * xx / w + px) * np.cos(2 * np.pi * fy * yy / h + py)
    image += gx * (xx / w - 0.5) + gy * (yy / h - 0.5)
    image += rng.normal(0.0, config.noise_sigma, (h, w))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    return SegSample(image=image[None], mask=mask, seed=seed)


def foreground_fraction(sample: SegSample) -> float:
    return float((sample.mask > 0).mean())


# ---------------------------------------------------------------------------
# splits

@dataclass
class SplitConfig:
    n_labeled: int = 4
    n_unlabeled: int = 60
    n_val: int = 20
    master_seed: int = 0
    phantom: PhantomConfig = field(default_factory=PhantomConfig)

    def __post_init__(self):
        for name in ("n_labeled", "n_unlabeled", "n_val"):
            v = getattr(self, name)
            if not 0 < v < 100_000:
                raise ConfigError(f"{name}={v} out of range (0, 100000)")


@dataclass
class DatasetSplit:
    labeled: list[SegSample]
    unlabeled: list[SegSample]
    val: list[SegSample]
    config: SplitConfig

    def seed_sets(self):
        return ({s.seed for s in self.labeled},
                {s.seed for s in self.unlabeled},
                {s.seed for s in self.val})


def make_split(config: SplitConfig) -> DatasetSplit:
    """Disjoint-seed labeled/unlabeled/val pools from one master seed.

    Unlabeled samples have their masks withheld at split time.
    """
    base = config.master_seed * 1_000_000
    labeled = [generate_sample(base + i, config.phantom)
               for i in range(config.n_labeled)]
    unlabeled = []
    for j in range(config.n_unlabeled):
        sample = generate_sample(base + 100_000 + j, config.phantom)
        unlabeled.append(SegSample(image=sample.image, mask=None, seed=sample.seed))
    val = [generate_sample(base + 200_000 + k, config.phantom)
           for k in range(config.n_val)]
    return DatasetSplit(labeled, unlabeled, val, config)


# ---------------------------------------------------------------------------
# batches

def _augment(image: np.ndarray, mask: np.ndarray | None, rng):
    """Identical flip/rot90 for image and mask (label-preserving permutations)."""
    square = image.shape[-2] == image.shape[-1]
    k = int(rng.integers(0, 4)) if square else int(rng.integers(0, 2)) * 2
    flip_h = bool(rng.integers(0, 2))
    flip_v = bool(rng.integers(0, 2))

    def apply(arr):
        out = np.rot90(arr, k, axes=(-2, -1))
        if flip_h:
            out = out[..., ::-1]
        if flip_v:
            out = out[..., ::-1, :]
        return np.ascontiguousarray(out)

    return apply(image), (None if mask is None else apply(mask))


def compose_batch(split: DatasetSplit, step: int, batch_size: int = 4):
    """Half labeled / half unlabeled batch for one optimization step.

    Labeled pairs are drawn with replacement; unlabeled images are
    consumed without replacement within deterministic per-epoch shuffles.
    (master seed, step) fully determine the batch, augmentation included.
    """
    if batch_size % 2:
        raise ConfigError(f"batch size must be even, got {batch_size}")
    per_side = batch_size // 2
    if not split.labeled or not split.unlabeled:
        raise ConfigError("labeled and unlabeled pools must be nonempty")
    master = split.config.master_seed

    rng_l = np.random.default_rng(np.random.SeedSequence([master, 11, step]))
    labeled_idx = rng_l.integers(0, len(split.labeled), per_side)

    m = len(split.unlabeled)
    unlabeled_idx = []
    pos = step * per_side
    while len(unlabeled_idx) < per_side:
        epoch, offset = divmod(pos, m)
        perm = np.random.default_rng(
            np.random.SeedSequence([master, 13, epoch])).permutation(m)
        take = min(per_side - len(unlabeled_idx), m - offset)
        unlabeled_idx.extend(perm[offset:offset + take])
        pos += take

    rng_a = np.random.default_rng(np.random.SeedSequence([master, 17, step]))
    labeled = []
    for i in labeled_idx:
        s = split.labeled[int(i)]
        img, msk = _augment(s.image, s.mask, rng_a)
        labeled.append((img, msk))
    unlabeled = []
    for j in unlabeled_idx:
        s = split.unlabeled[int(j)]
        img, _ = _augment(s.image, None, rng_a)
        unlabeled.append(img)
    return labeled, unlabeled


# ---------------------------------------------------------------------------
# flat binary export (magic ICLS)

def write_sample(sample: SegSample, path, n_classes: int):
    h, w = sample.image.shape[-2:]
    mask = sample.mask if sample.mask is not None else np.zeros((h, w), np.uint8)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, h, w, n_classes))
        fh.write(sample.image.astype("<f4").tobytes())
        fh.write(mask.astype(np.uint8).tobytes())


def read_sample(path) -> tuple[SegSample, int]:
    """Returns (sample, n_classes); the seed is not stored in the file."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    if len(raw) < 20:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    version, h, w, z = struct.unpack("<IIII", raw[4:20])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    need = 20 + 4 * h * w + h * w
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload at offset {len(raw)}")
    image = np.frombuffer(raw, dtype="<f4", count=h * w, offset=20).reshape(1, h, w)
    mask = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=20 + 4 * h * w)
    return SegSample(image=image.copy(), mask=mask.reshape(h, w).copy(), seed=-1), z
