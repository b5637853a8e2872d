"""Input augmentation: Bernoulli patch masking and crop-and-resize (C&R)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .datagen import hue_rotation
from .errors import ConfigError, ShapeError

P_MASK_DEFAULT = 0.5


@dataclass(frozen=True)
class PatchMask:
    keep: np.ndarray  # bool, (..., Hp, Wp); True = patch kept
    p_mask: float
    seed: int

    @property
    def drop_fraction(self) -> float:
        return 1.0 - float(self.keep.mean())


def sample_mask(shape: tuple[int, ...], p_mask: float = P_MASK_DEFAULT, seed: int = 0) -> PatchMask:
    """Drop each patch independently with probability ``p_mask``.

    Masks with the same seed share their uniforms, so the kept set shrinks
    monotonically as ``p_mask`` grows.
    """
    if not 0.0 <= p_mask <= 1.0 or math.isnan(p_mask):
        raise ConfigError("p_mask", f"must be in [0, 1], got {p_mask}")
    u = np.random.default_rng(seed).random(shape)
    return PatchMask(keep=u >= p_mask, p_mask=p_mask, seed=seed)


def apply_mask(tokens: torch.Tensor, mask) -> torch.Tensor:
    """Zero the content tokens of dropped patches; position embeddings go on afterwards."""
    keep = mask.keep if isinstance(mask, PatchMask) else mask
    keep = torch.as_tensor(keep)
    if keep.shape != tokens.shape[:-1] and keep.shape != tokens.shape[-3:-1]:
        raise ShapeError(f"mask {tuple(keep.shape)} does not match tokens {tuple(tokens.shape)}")
    return tokens * keep.to(tokens.dtype)[..., None]


@dataclass(frozen=True)
class CropSpec:
    scale: float
    top_left: tuple[int, int]


@dataclass(frozen=True)
class JitterPreset:
    hue: float  # max absolute hue rotation (radians)
    brightness: float  # max absolute brightness offset


JITTER_PRESETS = {
    "full": JitterPreset(hue=0.6, brightness=0.15),
    "light": JitterPreset(hue=0.1, brightness=0.03),
}


def crop_window(spec: CropSpec, height: int, width: int, patch_size: int) -> tuple[int, int, int, int]:
    """(top, left, crop_h, crop_w) snapped to patch boundaries; raises if out of bounds."""
    if not 0.0 < spec.scale <= 1.0:
        raise ConfigError("scale", f"must be in (0, 1], got {spec.scale}")
    ch = max(patch_size, int(round(spec.scale * height / patch_size)) * patch_size)
    cw = max(patch_size, int(round(spec.scale * width / patch_size)) * patch_size)
    top, left = spec.top_left
    if top % patch_size or left % patch_size:
        raise ConfigError("top_left", f"{spec.top_left} not on a patch boundary")
    if top < 0 or left < 0 or top + ch > height or left + cw > width:
        raise ConfigError("top_left", f"window {ch}x{cw} at {spec.top_left} leaves the image")
    return top, left, ch, cw


def crop_resize_pair(image: np.ndarray, spec: CropSpec, patch_size: int = 8):
    """Nearest-neighbour crop-and-resize to the input size.

    Returns the augmented image and an (H, W, 2) map giving, for every
    augmented pixel, the (row, col) of the original pixel it was sampled from.
    """
    h, w = image.shape[:2]
    top, left, ch, cw = crop_window(spec, h, w, patch_size)
    rows = top + (np.arange(h) * ch) // h
    cols = left + (np.arange(w) * cw) // w
    corr = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1)
    return image[rows[:, None], cols[None, :]], corr


def inverse_correspondence(spec: CropSpec, height: int, width: int, patch_size: int = 8) -> np.ndarray:
    """Original -> augmented pixel map (first augmented pixel sampling it); -1 outside the window."""
    top, left, ch, cw = crop_window(spec, height, width, patch_size)
    inv = np.full((height, width, 2), -1, dtype=np.int64)
    ys = np.arange(ch)
    xs = np.arange(cw)
    ay = -((-ys * height) // ch)  # ceil
    ax = -((-xs * width) // cw)
    inv[top : top + ch, left : left + cw, 0] = ay[:, None]
    inv[top : top + ch, left : left + cw, 1] = ax[None, :]
    return inv


def random_crop(rng: np.random.Generator, height: int, width: int, patch_size: int,
                scale_range: tuple[float, float]) -> CropSpec:
    lo = max(1, math.ceil(scale_range[0] * height / patch_size))
    hi = max(lo, math.floor(scale_range[1] * height / patch_size))
    side = int(rng.integers(lo, hi + 1))
    top = int(rng.integers(0, height // patch_size - side + 1)) * patch_size
    left = int(rng.integers(0, width // patch_size - side + 1)) * patch_size
    return CropSpec(scale=side * patch_size / height, top_left=(top, left))


def color_jitter(image: np.ndarray, rng: np.random.Generator, preset: JitterPreset) -> np.ndarray:
    hue = rng.uniform(-preset.hue, preset.hue)
    bright = rng.uniform(-preset.brightness, preset.brightness)
    out = image @ hue_rotation(hue).T.astype(image.dtype) + bright
    return np.clip(out, 0.0, 1.0).astype(image.dtype)
