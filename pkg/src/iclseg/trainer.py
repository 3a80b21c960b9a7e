"""Optimization loop: SGD with poly LR decay, validation, checkpointing.

A training step forwards the labeled and unlabeled half-batches through
the backbone, pairs them up for the SSPA/USCL heads, combines the loss
terms for the configured mode, backpropagates, and applies momentum SGD.
Validation runs the backbone alone (the heads do not exist at inference)
and tracks the best mean foreground Dice.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from .attention import ConfigError
from .autodiff import GradTape, Tensor
from .backbone import Backbone, ModelConfig
from .heads import SSPA, USCL
from .metrics import ClassScores, evaluate_volume
from .phantoms import DatasetSplit, compose_batch

CKPT_MAGIC = b"ICLC"
CKPT_VERSION = 1

MODES = ("icl", "supervised", "sspa")


class TrainingError(RuntimeError):
    """Training aborted (non-finite losses, bad state)."""


class FormatError(ValueError):
    """Malformed checkpoint; message carries the byte offset."""


@dataclass
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_iters: int = 2000
    poly_power: float = 0.9
    batch_size: int = 4
    val_every: int = 100
    alpha: float = 1.0
    beta: float = 50.0
    master_seed: int = 0
    mode: str = "icl"
    dtype: str = "float64"

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.batch_size % 2:
            raise ConfigError(f"batch_size must be even, got {self.batch_size}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(alpha=self.alpha, beta=self.beta)


def poly_lr(iteration: int, config: TrainConfig) -> float:
    """lr0 * (1 - t/T)^power, reaching zero at the final iteration."""
    if not 0 <= iteration <= config.max_iters:
        raise ValueError(
            f"iteration {iteration} outside [0, {config.max_iters}]")
    return config.lr0 * (1.0 - iteration / config.max_iters) ** config.poly_power


class ICLModel:
    """Backbone plus the two training-only heads, under one name space."""

    def __init__(self, config: ModelConfig, seed: int, dtype=np.float64):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence([seed, 20240601]))
        self.backbone = Backbone(config, rng, dtype)
        self.sspa = SSPA(config, rng, dtype)
        self.uscl = USCL(config, rng, dtype)

    def named_parameters(self):
        yield from self.backbone.named_parameters("backbone")
        yield from self.sspa.named_parameters("sspa")
        yield from self.uscl.named_parameters("uscl")

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Backbone-only inference: argmax class masks for a (b,1,h,w) stack."""
        p, _ = self.backbone.forward(Tensor(images.astype(self.dtype)))
        logits = p.data if p.data.ndim == 4 else p.data[None]
        return np.argmax(logits, axis=1)


class SGD:
    """Momentum SGD with decoupled-from-nothing classic L2 weight decay.

    update: g = grad + wd * p;  buf = mu * buf + g;  p -= lr * buf.
    Parameters whose grad is absent are skipped entirely.
    """

    def __init__(self, named_params, momentum: float, weight_decay: float):
        self.params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float):
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf = self.buffers[name]
            buf *= self.momentum
            buf += g
            p.data -= lr * buf


def _mean_terms(terms: list) -> Tensor | None:
    if not terms:
        return None
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc * (1.0 / len(terms))


def train_step(model: ICLModel, opt: SGD, batch, config: TrainConfig,
               iteration: int) -> L.LossReport:
    """One forward/backward/update; returns the step's loss report."""
    labeled, unlabeled = batch
    dtype = model.dtype
    lab_imgs = np.stack([img for img, _ in labeled]).astype(dtype)
    lab_masks = [mask for _, mask in labeled]
    use_unlabeled = config.mode == "icl"
    use_sspa = config.mode in ("icl", "sspa")

    opt.zero_grad()
    with GradTape() as tape:
        p_l, feats_l = model.backbone.forward(Tensor(lab_imgs))
        if use_unlabeled:
            unl_imgs = np.stack(unlabeled).astype(dtype)
            p_u, feats_u = model.backbone.forward(Tensor(unl_imgs))

        seg_terms, spa_terms, usc_terms, con_terms = [], [], [], []
        for i, mask in enumerate(lab_masks):
            seg_terms.append(L.loss_seg(ad.batch_select(p_l, i), mask))
            if not use_sspa:
                continue
            fl = feats_l.at(i)
            if use_unlabeled:
                fu = feats_u.at(i)
                m_l, m_u, proxies = model.sspa.forward(fl, fu)
                guided = model.uscl.forward(fu, proxies)
                usc_terms.append(L.loss_usc(guided, ad.batch_select(p_u, i)))
                con_terms.append(L.loss_con(guided, m_u))
            else:
                m_l, _, _ = model.sspa.forward(fl, None)
            spa_terms.append(L.loss_spa(m_l, mask))

        report = L.loss_total(_mean_terms(seg_terms), _mean_terms(spa_terms),
                              _mean_terms(usc_terms), _mean_terms(con_terms),
                              config.weights)
        bad = report.first_nonfinite()
        if bad is not None:
            raise TrainingError(
                f"loss term '{bad}' became non-finite at iteration {iteration}")
        tape.backward(report.total)

    opt.step(poly_lr(iteration, config))
    return report


def validate(model: ICLModel, val_samples, n_classes: int) -> list[ClassScores]:
    """Backbone-only eval over the held-out set; never mutates parameters."""
    images = np.stack([s.image for s in val_samples])
    preds = model.predict(images)
    gts = [s.mask for s in val_samples]
    return evaluate_volume(list(preds), gts, n_classes)


# ---------------------------------------------------------------------------
# checkpoints (magic ICLC)

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(state: dict[str, np.ndarray], path):
    """Write named tensors in insertion order; see module docs for layout."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(state)))
        for name, arr in state.items():
            arr = np.asarray(arr)
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(struct.pack("<B", code))
            fh.write(arr.astype(_CODE_DTYPES[code], copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    version, count = struct.unpack("<IQ", raw[4:16])
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    state: dict[str, np.ndarray] = {}
    off = 16
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + nlen].decode("utf-8")
            if len(raw[off:off + nlen]) != nlen:
                raise struct.error
            off += nlen
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}Q", raw, off)
            off += 8 * ndim
            (code,) = struct.unpack_from("<B", raw, off)
            off += 1
            dtype = _CODE_DTYPES.get(code)
            if dtype is None:
                raise FormatError(f"{path}: unknown dtype code {code} at offset {off - 1}")
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if off + nbytes > len(raw):
                raise struct.error
            arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)),
                                offset=off).reshape(dims)
            off += nbytes
        except struct.error:
            raise FormatError(f"{path}: truncated record at offset {off}") from None
        state[name] = arr.copy()
    return state


def model_state(model: ICLModel, opt: SGD | None, iteration: int,
                best_dsc: float) -> dict[str, np.ndarray]:
    state: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        state[f"param/{name}"] = p.data
    if opt is not None:
        for name, buf in opt.buffers.items():
            state[f"momentum/{name}"] = buf
    state["meta/iteration"] = np.array([float(iteration)])
    state["meta/best_dsc"] = np.array([best_dsc])
    return state


def restore_model(model: ICLModel, state: dict[str, np.ndarray],
                  backbone_only: bool = False):
    """Copy parameters back by name. With ``backbone_only`` the head
    parameters may be absent from the state (the inference contract);
    backbone parameters are always required."""
    for name, p in model.named_parameters():
        if backbone_only and not name.startswith("backbone"):
            continue
        key = f"param/{name}"
        if key not in state:
            raise FormatError(f"checkpoint is missing {'required ' if name.startswith('backbone') else ''}tensor {key}")
        arr = state[key]
        if arr.shape != p.data.shape:
            raise FormatError(
                f"tensor {key} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr.astype(model.dtype, copy=True)


def restore_optimizer(opt: SGD, state: dict[str, np.ndarray]):
    for name in opt.buffers:
        key = f"momentum/{name}"
        if key in state:
            opt.buffers[name] = state[key].astype(opt.buffers[name].dtype, copy=True)


# ---------------------------------------------------------------------------
# full run

@dataclass
class RunResult:
    best_dsc: float
    final_rows: list[ClassScores]
    csv_lines: list[str]


def run_training(split: DatasetSplit, model_config: ModelConfig,
                 config: TrainConfig, out_dir) -> RunResult:
    """Train, validate periodically, keep the best model, write artifacts.

    Writes metrics.csv, best.ckpt and final.ckpt under ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = ICLModel(model_config, config.master_seed, config.np_dtype)
    opt = SGD(model.named_parameters(), config.momentum, config.weight_decay)

    csv_lines = ["iter,class,dsc,hd95"]
    best = -1.0
    final_rows: list[ClassScores] = []

    def run_validation(iteration: int):
        nonlocal best, final_rows
        rows = validate(model, split.val, model_config.n_classes)
        for row in rows:
            csv_lines.append(f"{iteration},{row.label},{row.dsc:.6f},{row.hd95:.6f}")
        mean_dsc = rows[-1].dsc
        if mean_dsc > best:
            best = mean_dsc
            save_checkpoint(model_state(model, opt, iteration, best), out / "best.ckpt")
        final_rows = rows

    for iteration in range(config.max_iters):
        batch = compose_batch(split, iteration, config.batch_size)
        train_step(model, opt, batch, config, iteration)
        done = iteration + 1
        if done % config.val_every == 0 or done == config.max_iters:
            run_validation(done)

    save_checkpoint(model_state(model, opt, config.max_iters, best), out / "final.ckpt")
    (out / "metrics.csv").write_text("\n".join(csv_lines) + "\n")
    return RunResult(best_dsc=best, final_rows=final_rows, csv_lines=csv_lines)
