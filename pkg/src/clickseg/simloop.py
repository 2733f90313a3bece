"""Iterative training-loop orchestration and the training-side pure functions.

Each tracked object carries its click set and the mask predicted in the
previous epoch. At every epoch the clicks are either reset to a fresh
initial sample (with the configured probability) or extended by one
correction click derived from the previous prediction's errors.

No gradients live here: a pluggable train-step callback receives the
assembled input stack, the ground truth, and the probability map, so an
external learner can consume the loop.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from PIL import Image

from .guidance import ClickSet, assemble_stack
from .predictor import threshold
from .raster import Bitmask, DimensionMismatchError, iou
from .sampling import InitialSamplingParams, InstanceTruth, next_correction_click, sample_initial_clicks

CE_CLAMP = 1e-7  # probability clamp for cross-entropy


@dataclass(frozen=True)
class LoopConfig:
    reset_probability: float = 0.3
    bootstrap_fraction: float = 0.25
    crop_size: int = 350
    max_epochs: int = 20
    encoding: str = "gaussian"
    use_mask_channel: bool = False
    sampling: InitialSamplingParams = field(default_factory=InitialSamplingParams)

    def __post_init__(self) -> None:
        if not 0.0 <= self.reset_probability <= 1.0:
            raise ValueError("reset_probability must be in [0, 1]")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ValueError("bootstrap_fraction must be in (0, 1]")


@dataclass(frozen=True)
class ObjectTrainState:
    """Per-object loop state; previous mask is empty at birth and after resets."""

    instance_id: str
    clicks: ClickSet
    prev_mask: Bitmask
    mask_channel_enabled: bool = False
    epoch: int = 0
    was_reset: bool = False


def new_train_state(
    instance_id: str,
    truth: InstanceTruth,
    rng: np.random.Generator,
    config: LoopConfig,
) -> ObjectTrainState:
    """Birth state: freshly sampled initial clicks, empty previous mask."""
    sample = sample_initial_clicks(truth, config.sampling, rng)
    empty = Bitmask.empty(truth.gt.width, truth.gt.height)
    return ObjectTrainState(
        instance_id=instance_id,
        clicks=sample.clicks,
        prev_mask=empty,
        mask_channel_enabled=config.use_mask_channel,
    )


def epoch_update(
    state: ObjectTrainState,
    truth: InstanceTruth,
    rng: np.random.Generator,
    config: LoopConfig,
) -> ObjectTrainState:
    """One epoch's click-state evolution.

    With probability reset_probability the clicks are re-initialised and the
    previous mask emptied; otherwise one correction click against the stored
    previous mask is appended (a no-op when that mask already matches the
    ground truth).
    """
    if rng.random() < config.reset_probability:
        sample = sample_initial_clicks(truth, config.sampling, rng)
        empty = Bitmask.empty(truth.gt.width, truth.gt.height)
        return replace(
            state, clicks=sample.clicks, prev_mask=empty, epoch=state.epoch + 1, was_reset=True
        )
    click = next_correction_click(state.prev_mask, truth.gt, state.clicks, rng)
    clicks = state.clicks if click is None else ClickSet(state.clicks.clicks + (click,))
    return replace(state, clicks=clicks, epoch=state.epoch + 1, was_reset=False)


def bootstrapped_ce(p: np.ndarray, gt: Bitmask, k: float = 0.25) -> float:
    """Mean cross-entropy over the worst ceil(k*N) pixel predictions."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != gt.a.shape:
        raise DimensionMismatchError(
            f"probability map {p.shape} does not match mask {gt.a.shape}"
        )
    if not 0.0 < k <= 1.0:
        raise ValueError("k must be in (0, 1]")
    q = np.clip(p, CE_CLAMP, 1.0 - CE_CLAMP)
    ce = np.where(gt.a, -np.log(q), -np.log1p(-q)).ravel()
    m = math.ceil(k * ce.size)
    worst = np.partition(ce, ce.size - m)[ce.size - m:]
    return float(worst.mean())


@dataclass(frozen=True)
class CropSample:
    """A training crop; offsets are in the (possibly upscaled) image frame."""

    image: np.ndarray
    mask: Bitmask
    x0: int
    y0: int
    scale: float


def _resize_bilinear(image: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    chans = [
        np.asarray(
            Image.fromarray(image[:, :, c].astype(np.float32), mode="F").resize(
                (new_w, new_h), Image.BILINEAR
            )
        )
        for c in range(3)
    ]
    return np.stack(chans, axis=-1).astype(np.float32)


def _resize_nearest(mask: Bitmask, new_w: int, new_h: int) -> Bitmask:
    img = Image.fromarray(mask.a.astype(np.uint8) * 255, mode="L")
    return Bitmask(np.asarray(img.resize((new_w, new_h), Image.NEAREST)) > 127)


def sample_training_crop(
    image: np.ndarray,
    gt: Bitmask,
    rng: np.random.Generator,
    crop_size: int = 350,
) -> CropSample:
    """Uniform random crop constrained to contain part of the object.

    Images whose smaller side is below crop_size are first bilinearly
    upscaled so the smaller side equals crop_size (the mask is scaled with
    nearest-neighbor). After 100 rejected draws the crop is centered on a
    random object pixel instead.
    """
    if gt.is_empty:
        raise ValueError("cannot sample an object-covering crop of an empty mask")
    h, w = image.shape[:2]
    scale = 1.0
    if min(h, w) < crop_size:
        scale = crop_size / min(h, w)
        if h <= w:
            new_h, new_w = crop_size, round(w * crop_size / h)
        else:
            new_w, new_h = crop_size, round(h * crop_size / w)
        image = _resize_bilinear(image, new_w, new_h)
        gt = _resize_nearest(gt, new_w, new_h)
        h, w = new_h, new_w

    max_y = h - crop_size
    max_x = w - crop_size
    bits = gt.a
    for _ in range(100):
        y0 = int(rng.integers(0, max_y + 1))
        x0 = int(rng.integers(0, max_x + 1))
        if bits[y0:y0 + crop_size, x0:x0 + crop_size].any():
            break
    else:
        oy, ox = np.nonzero(bits)
        i = int(rng.integers(len(oy)))
        y0 = min(max(int(oy[i]) - crop_size // 2, 0), max_y)
        x0 = min(max(int(ox[i]) - crop_size // 2, 0), max_x)
    return CropSample(
        image=image[y0:y0 + crop_size, x0:x0 + crop_size],
        mask=Bitmask(bits[y0:y0 + crop_size, x0:x0 + crop_size]),
        x0=x0,
        y0=y0,
        scale=scale,
    )


def gamma_augment(
    image: np.ndarray,
    rng: np.random.Generator,
    gamma_range: tuple[float, float] = (0.7, 1.5),
) -> np.ndarray:
    """Per-image gamma curve with log-uniform exponent."""
    lo, hi = gamma_range
    if lo <= 0 or hi < lo:
        raise ValueError(f"bad gamma range {gamma_range}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    gamma = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    return np.power(image, gamma, dtype=np.float64).astype(image.dtype)


@dataclass(frozen=True)
class TrainItem:
    instance_id: str
    image: np.ndarray
    truth: InstanceTruth


def derive_instance_seed(master_seed: int, instance_id: str) -> int:
    """Stable per-object seed: master XOR the instance id's hash, mod 2^64."""
    digest = hashlib.sha256(instance_id.encode("utf-8")).digest()
    return (master_seed ^ int.from_bytes(digest[:8], "little")) % (1 << 64)


TrainStep = Callable[..., float]


def run_training_loop(
    items: Sequence[TrainItem],
    predictor,
    config: LoopConfig,
    master_seed: int = 0,
    train_step: Optional[TrainStep] = None,
    log_stream=None,
) -> list[ObjectTrainState]:
    """Run the full iterative loop over the given objects.

    Per-object generators are derived from the master seed so the result is
    independent of iteration or scheduling order. Emits one JSON line per
    (epoch, object) to log_stream when given: epoch, instance id, reset
    flag, click count, loss (if a train step is attached), and the IoU of
    the stored previous mask.
    """
    rngs = {it.instance_id: np.random.default_rng(derive_instance_seed(master_seed, it.instance_id))
            for it in items}
    states = {
        it.instance_id: new_train_state(it.instance_id, it.truth, rngs[it.instance_id], config)
        for it in items
    }
    for epoch in range(config.max_epochs):
        for it in items:
            state = states[it.instance_id]
            if epoch > 0:
                state = epoch_update(state, it.truth, rngs[it.instance_id], config)
            mask_in = state.prev_mask if state.mask_channel_enabled else None
            stack = assemble_stack(it.image, state.clicks, prev_mask=mask_in,
                                   encoding=config.encoding)
            p = predictor.predict(stack)
            loss = None
            if train_step is not None:
                loss = float(train_step(stack, it.truth.gt, p))
            mask = threshold(p)
            state = replace(state, prev_mask=mask, epoch=epoch)
            states[it.instance_id] = state
            if log_stream is not None:
                rec = {
                    "epoch": epoch,
                    "instance": it.instance_id,
                    "reset": state.was_reset,
                    "clicks": len(state.clicks),
                    "loss": loss,
                    "iou": iou(mask, it.truth.gt),
                }
                log_stream.write(json.dumps(rec, sort_keys=True) + "\n")
    return [states[it.instance_id] for it in items]
