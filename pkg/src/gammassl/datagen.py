"""Deterministic synthetic multi-domain segmentation scenes.

A domain is a palette of class appearances plus a global appearance shift.
Scenes are 2-6 geometric objects on a background; with probability
``ood_rate`` an extra object in a reserved appearance (no known class) is
drawn on top and labelled IGNORE.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

IGNORE = 255
SHAPES = ("rect", "ellipse", "band")

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ClassAppearance:
    color: tuple[float, float, float]
    texture: float


@dataclass(frozen=True)
class DomainShift:
    hue: float = 0.0
    brightness: float = 0.0
    noise_sigma: float = 0.0


DEFAULT_PALETTE = (
    ClassAppearance((0.45, 0.50, 0.40), 0.05),
    ClassAppearance((0.80, 0.20, 0.20), 0.10),
    ClassAppearance((0.20, 0.30, 0.80), 0.10),
    ClassAppearance((0.85, 0.80, 0.20), 0.30),
    ClassAppearance((0.20, 0.75, 0.70), 0.30),
    ClassAppearance((0.25, 0.20, 0.30), 0.45),
)
OOD_APPEARANCE = ClassAppearance((0.90, 0.55, 0.90), 0.35)


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    num_classes_known: int = 6
    palette: tuple[ClassAppearance, ...] = DEFAULT_PALETTE
    shift: DomainShift = field(default_factory=DomainShift)
    ood_rate: float = 0.0
    seed: int = 0
    height: int = 64
    width: int = 64
    patch_size: int = 8
    ood_appearance: ClassAppearance = OOD_APPEARANCE

    def validate(self) -> None:
        if not self.domain_id:
            raise ConfigError("domain_id", "must be non-empty")
        if self.num_classes_known < 2:
            raise ConfigError("num_classes_known", f"need K >= 2, got {self.num_classes_known}")
        if len(self.palette) != self.num_classes_known:
            raise ConfigError(
                "palette", f"{len(self.palette)} entries for {self.num_classes_known} classes"
            )
        for k, app in enumerate(self.palette + (self.ood_appearance,)):
            name = "ood_appearance" if k == len(self.palette) else f"palette[{k}]"
            if len(app.color) != 3 or not all(0.0 <= c <= 1.0 for c in app.color):
                raise ConfigError(name, "color must be a triplet in [0, 1]")
            if not 0.0 <= app.texture <= 1.0:
                raise ConfigError(name, "texture amplitude must be in [0, 1]")
        if not -0.5 <= self.shift.brightness <= 0.5:
            raise ConfigError("shift.brightness", "must be in [-0.5, 0.5]")
        if not 0.0 <= self.shift.noise_sigma <= 0.3:
            raise ConfigError("shift.noise_sigma", "must be in [0, 0.3]")
        if not math.isfinite(self.shift.hue):
            raise ConfigError("shift.hue", "must be finite")
        if not 0.0 <= self.ood_rate <= 1.0:
            raise ConfigError("ood_rate", "must be in [0, 1]")
        if not 0 <= self.seed <= _MASK64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        p = self.patch_size
        if p < 1 or self.height % p or self.width % p:
            raise ConfigError("patch_size", f"{self.height}x{self.width} not divisible by {p}")

    def replace(self, **changes) -> "DomainSpec":
        return dataclasses.replace(self, **changes)


@dataclass
class LabeledSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    labels: np.ndarray  # (H, W) int64, IGNORE for undefined pixels
    ood_mask: np.ndarray  # (H, W) bool


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def sample_seed(seed: int, index: int) -> int:
    return (seed ^ _splitmix64(index)) & _MASK64


def hue_rotation(angle: float) -> np.ndarray:
    """RGB rotation about the grey axis (Rodrigues formula)."""
    axis = np.full(3, 1.0 / math.sqrt(3.0))
    kx = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(h // 4, w // 4))
    fine = rng.uniform(-1.0, 1.0, size=(h, w))
    return 0.6 * np.kron(coarse, np.ones((4, 4))) + 0.4 * fine


def _shape_mask(rng: np.random.Generator, kind: str, h: int, w: int, scale: float = 1.0) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    unit = min(h, w) / 64.0  # sizes are tuned for 64x64 scenes
    if kind == "rect":
        lo, hi = max(2, round(8 * unit)), max(3, round(28 * unit) + 1)
        rh = min(h, int(rng.integers(lo, hi) * scale))
        rw = min(w, int(rng.integers(lo, hi) * scale))
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        return (yy >= top) & (yy < top + rh) & (xx >= left) & (xx < left + rw)
    if kind == "ellipse":
        ry = min(rng.uniform(5.0, 14.0) * unit * scale, h / 2)
        rx = min(rng.uniform(5.0, 14.0) * unit * scale, w / 2)
        cy = rng.uniform(ry, h - ry)
        cx = rng.uniform(rx, w - rx)
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if kind == "band":
        width = rng.uniform(4.0, 10.0) * unit
        theta = rng.uniform(0.0, math.pi)
        offset = rng.uniform(-0.3, 0.3) * min(h, w)
        d = (xx - w / 2) * math.cos(theta) + (yy - h / 2) * math.sin(theta) - offset
        return np.abs(d) <= width / 2
    raise ValueError(kind)


def render_sample(spec: DomainSpec, index: int) -> LabeledSample:
    rng = np.random.default_rng(sample_seed(spec.seed, index))
    h, w, k = spec.height, spec.width, spec.num_classes_known
    image = np.empty((h, w, 3))
    labels = np.zeros((h, w), dtype=np.int64)
    ood = np.zeros((h, w), dtype=bool)

    def paint(region: np.ndarray, app: ClassAppearance) -> None:
        tex = app.texture * _texture(rng, h, w)
        image[region] = np.asarray(app.color)[None, :] + tex[region][:, None] * 0.5

    paint(np.ones((h, w), dtype=bool), spec.palette[0])
    for _ in range(int(rng.integers(2, 7))):
        kind = SHAPES[int(rng.integers(len(SHAPES)))]
        cls = int(rng.integers(1, k))
        region = _shape_mask(rng, kind, h, w)
        paint(region, spec.palette[cls])
        labels[region] = cls
        ood[region] = False
    if rng.random() < spec.ood_rate:
        kind = SHAPES[int(rng.integers(2))]
        region = _shape_mask(rng, kind, h, w, scale=1.2)
        paint(region, spec.ood_appearance)
        labels[region] = IGNORE
        ood[region] = True

    s = spec.shift
    image = image @ hue_rotation(s.hue).T + s.brightness
    if s.noise_sigma > 0:
        image = image + rng.normal(0.0, s.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return LabeledSample(image=image, labels=labels, ood_mask=ood)


def generate_domain(spec: DomainSpec, count: int, start: int = 0) -> list[LabeledSample]:
    """Samples ``start .. start+count-1`` of a domain; each depends only on (spec, index)."""
    spec.validate()
    if count < 1:
        raise ConfigError("count", f"must be >= 1, got {count}")
    return [render_sample(spec, start + i) for i in range(count)]


SHIFT_WEIGHTS = (1.0, 2.0, 3.0, 1.0)


def shift_distance(a: DomainSpec, b: DomainSpec) -> float:
    """Weighted Euclidean distance over (hue, brightness, noise sigma, ood_rate)."""
    va = (a.shift.hue, a.shift.brightness, a.shift.noise_sigma, a.ood_rate)
    vb = (b.shift.hue, b.shift.brightness, b.shift.noise_sigma, b.ood_rate)
    return math.hypot(*(math.sqrt(wt) * (x - y) for wt, x, y in zip(SHIFT_WEIGHTS, va, vb)))


def stack(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.labels for s in samples])
    ood = np.stack([s.ood_mask for s in samples])
    return images, labels, ood
