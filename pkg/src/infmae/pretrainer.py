"""Pretraining: learning-rate schedule, AdamW steps, the data loop and resume logic."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoint import Checkpoint, save_checkpoint
from .exceptions import ConfigurationError, DataError, NonFiniteLossError
from .io import atomic_write, list_images, load_image
from .model import InfMAENet, to_nchw

logger = logging.getLogger(__name__)


@dataclass
class TrainLogRecord:
    step: int
    epoch: int
    lr: float
    loss: float
    wall_ms: float

    def to_json(self):
        return json.dumps(asdict(self))


def lr_at(epoch, cfg):
    """Linear warmup to ``base_lr`` then half-cosine decay to ``min_lr``."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside the schedule domain [0, {cfg.epochs}]")
    if epoch < cfg.warmup_epochs:
        return cfg.base_lr * epoch / cfg.warmup_epochs
    span = cfg.epochs - cfg.warmup_epochs
    progress = (epoch - cfg.warmup_epochs) / span if span else 1.0
    return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def make_optimizer(model, cfg):
    """AdamW over the parameters the reconstruction loss reaches.

    Biases, norm parameters and the mask token are not decayed.
    """
    named = model.pretrain_parameters() if hasattr(model, "pretrain_parameters") else model.named_parameters()
    decay, no_decay = [], []
    for name, p in named:
        (no_decay if p.ndim <= 1 or name.endswith("mask_token") else decay).append(p)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=cfg.base_lr, betas=cfg.betas, eps=cfg.eps, foreach=False)


def train_step(model, optimizer, images, lr, *, step=0, epoch=0, plans=None):
    """One AdamW update on a ``(B, H, W, C)`` batch; returns the log record.

    Raises :class:`NonFiniteLossError` (parameters untouched) if the loss is not finite.
    """
    t0 = time.perf_counter()
    if plans is None:
        plans = model.make_plans(images, rng=step)
    dtype = next(model.parameters()).dtype
    x = to_nchw(images, dtype=dtype)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=False)
    loss, _ = model.forward_pretrain(x, plans)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(TrainLogRecord(step, epoch, lr, value, 0.0))
    loss.backward()
    optimizer.step()
    return TrainLogRecord(step, epoch, lr, value, (time.perf_counter() - t0) * 1e3)


# -- checkpoint <-> live objects ---------------------------------------------

def model_state(model):
    return {n: p.detach().cpu().numpy().copy() for n, p in model.named_parameters()}


def optimizer_state(model, optimizer):
    names = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for p, state in optimizer.state.items():
        for key, value in state.items():
            out[f"{names[id(p)]}/{key}"] = torch.as_tensor(value).detach().cpu().numpy().copy()
    return out


def load_model_state(model, params):
    own = dict(model.named_parameters())
    missing, extra = set(own) - set(params), set(params) - set(own)
    if missing or extra:
        raise DataError(f"checkpoint/model parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    with torch.no_grad():
        for name, p in own.items():
            arr = params[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise DataError(f"parameter {name!r} has shape {arr.shape}, model expects {tuple(p.shape)}")
            p.copy_(torch.as_tensor(arr, dtype=p.dtype))


def load_optimizer_state(model, optimizer, arrays):
    own = dict(model.named_parameters())
    for key, arr in arrays.items():
        name, slot = key.rsplit("/", 1)
        p = own[name]
        dtype = torch.float32 if slot == "step" else p.dtype
        optimizer.state[p][slot] = torch.as_tensor(arr, dtype=dtype).clone()


def model_from_checkpoint(ckpt, dtype=torch.float32):
    model = InfMAENet(ckpt.model_config, seed=ckpt.train_config.seed)
    model.to(dtype)
    load_model_state(model, ckpt.params)
    return model


def snapshot(model, optimizer, model_cfg, train_cfg, epoch, step):
    return Checkpoint(
        model_config=model_cfg,
        train_config=train_cfg,
        params=model_state(model),
        optimizer=optimizer_state(model, optimizer) if optimizer is not None else {},
        epoch=epoch,
        step=step,
        rng_state=torch.get_rng_state().numpy().tobytes(),
    )


# -- data ---------------------------------------------------------------------

def resize_and_crop(image, crop, rng):
    """Upscale so both sides cover ``crop`` (keeping aspect), then take a random crop."""
    ch, cw = crop
    h, w, c = image.shape
    scale = max(ch / h, cw / w, 1.0)
    if scale > 1.0:
        nh, nw = max(ch, math.ceil(h * scale)), max(cw, math.ceil(w * scale))
        image = np.stack([
            np.asarray(Image.fromarray(image[:, :, k].astype(np.float32), mode="F")
                       .resize((nw, nh), Image.BILINEAR), dtype=np.float64)
            for k in range(c)
        ], axis=2)
        h, w = nh, nw
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return image[top:top + ch, left:left + cw]


def load_dataset(directory, channel_mode="gray"):
    """Decode every image under ``directory``; unreadable files are skipped and counted."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {str(directory)!r} does not exist")
    images, skipped = [], []
    for path in list_images(directory):
        try:
            images.append(load_image(path, channel_mode))
        except (OSError, ValueError) as exc:
            logger.warning("skipping unreadable image %s: %s", path, exc)
            skipped.append(str(path))
    if not images:
        raise DataError(f"no readable images in {str(directory)!r}")
    return images, skipped


def steps_per_epoch(n_images, batch_size):
    return max(1, n_images // batch_size)


def batch_for_step(images, cfg, step):
    """Deterministic batch for global ``step``: order from (seed, epoch), crops from (seed, step)."""
    spe = steps_per_epoch(len(images), cfg.batch_size)
    epoch, i = divmod(step, spe)
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(images))
    idx = order[i * cfg.batch_size:(i + 1) * cfg.batch_size]
    rng = np.random.default_rng([cfg.seed, epoch, i, 1])
    return np.stack([resize_and_crop(images[j], cfg.crop_size, rng) for j in idx]), epoch, i


# -- loops --------------------------------------------------------------------

class Pretrainer:
    """Owns the model/optimizer pair; the only mutator of training state."""

    def __init__(self, model_cfg, train_cfg, *, dtype=torch.float32, checkpoint=None):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.model = InfMAENet(model_cfg, seed=train_cfg.seed).to(dtype)
        self.optimizer = make_optimizer(self.model, train_cfg)
        self.step = 0
        if checkpoint is not None:
            load_model_state(self.model, checkpoint.params)
            load_optimizer_state(self.model, self.optimizer, checkpoint.optimizer)
            self.step = checkpoint.step
            if checkpoint.rng_state:
                torch.set_rng_state(torch.from_numpy(
                    np.frombuffer(checkpoint.rng_state, dtype=np.uint8).copy()))

    def total_steps(self, n_images):
        spe = steps_per_epoch(n_images, self.train_cfg.batch_size)
        total = spe * self.train_cfg.epochs
        if self.train_cfg.max_steps is not None:
            total = min(total, self.train_cfg.max_steps)
        return total

    def checkpoint(self, n_images):
        spe = steps_per_epoch(n_images, self.train_cfg.batch_size)
        return snapshot(self.model, self.optimizer, self.model_cfg, self.train_cfg,
                        self.step // spe, self.step)

    def run(self, images, *, until=None, log=None, out_dir=None):
        """Train from the current step up to ``until`` (default: end of schedule)."""
        cfg = self.train_cfg
        spe = steps_per_epoch(len(images), cfg.batch_size)
        end = self.total_steps(len(images)) if until is None else min(until, self.total_steps(len(images)))
        records = []
        self.model.train()
        while self.step < end:
            batch, epoch, i = batch_for_step(images, cfg, self.step)
            lr = lr_at(epoch + i / spe, cfg)
            rec = train_step(self.model, self.optimizer, batch, lr, step=self.step, epoch=epoch)
            records.append(rec)
            if log is not None:
                log(rec)
            self.step += 1
            if (out_dir is not None and cfg.checkpoint_every
                    and self.step % spe == 0 and (self.step // spe) % cfg.checkpoint_every == 0):
                save_checkpoint(self.checkpoint(len(images)),
                                Path(out_dir) / f"epoch{self.step // spe:04d}.ckpt")
        return records


def fit_images(images, model_cfg, train_cfg, *, resume=None, log=None, out_dir=None):
    """Pretrain on an in-memory list of ``(H, W, C)`` images; returns ``(Checkpoint, records)``."""
    if len(images) == 0:
        raise DataError("cannot pretrain on an empty dataset")
    trainer = Pretrainer(model_cfg, train_cfg, checkpoint=resume)
    records = trainer.run(images, log=log, out_dir=out_dir)
    return trainer.checkpoint(len(images)), records


def pretrain_loop(dataset_dir, model_cfg, train_cfg, *, out_dir=None, resume=None):
    """Pretrain on an image directory, writing ``train_log.jsonl`` and ``last.ckpt`` to ``out_dir``."""
    if model_cfg.in_channels != (3 if train_cfg.channel_mode == "replicate" else 1):
        raise ConfigurationError(
            f"in_channels={model_cfg.in_channels} does not match channel_mode={train_cfg.channel_mode!r}"
        )
    images, skipped = load_dataset(dataset_dir, train_cfg.channel_mode)
    lines = [json.dumps({"event": "dataset", "images": len(images), "skipped": len(skipped)})]

    def log(rec):
        lines.append(rec.to_json())

    ckpt, _ = fit_images(images, model_cfg, train_cfg, resume=resume, log=log, out_dir=out_dir)
    if out_dir is not None:
        log_path = Path(out_dir) / "train_log.jsonl"
        if resume is not None and log_path.exists():
            lines = log_path.read_text().splitlines() + lines[1:]
        with atomic_write(log_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        save_checkpoint(ckpt, Path(out_dir) / "last.ckpt")
    return ckpt
