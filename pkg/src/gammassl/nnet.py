"""Patch-transformer segmentation network f = D o E.

The encoder is a linear patch embedding with learned position embeddings
followed by pre-norm transformer blocks; the decoder maps each token to the
P*P*K logits of its patch. Gradients come from torch autograd.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericalError, ShapeError, UsageError


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 64
    patch_size: int = 8
    num_classes: int = 6
    dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    dropout_rate: float = 0.1

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch_size, self.width // self.patch_size

    def validate(self) -> None:
        p = self.patch_size
        if p < 1 or self.height % p or self.width % p:
            raise ConfigError("patch_size", f"{self.height}x{self.width} not divisible by {p}")
        if self.dim % self.heads:
            raise ConfigError("heads", f"dim {self.dim} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate", "must be in [0, 1)")
        if self.num_classes < 2:
            raise ConfigError("num_classes", "need at least 2 classes")


@dataclass
class SegOutput:
    logits: torch.Tensor  # (N, K, H, W)
    probs: torch.Tensor
    pred: torch.Tensor  # (N, H, W) int64
    conf: torch.Tensor  # (N, H, W)

    @classmethod
    def from_logits(cls, logits: torch.Tensor) -> "SegOutput":
        probs = torch.softmax(logits, dim=1)
        return cls.from_probs(probs, logits)

    @classmethod
    def from_probs(cls, probs: torch.Tensor, logits: torch.Tensor | None = None) -> "SegOutput":
        conf, pred = probs.max(dim=1)
        return cls(logits=logits, probs=probs, pred=pred, conf=conf)

    def detach(self) -> "SegOutput":
        return SegOutput(
            logits=None if self.logits is None else self.logits.detach(),
            probs=self.probs.detach(),
            pred=self.pred,
            conf=self.conf.detach(),
        )


def dropout(x: torch.Tensor, rate: float, generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout drawing from an explicit generator."""
    if rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= rate
    return x * keep / (1.0 - rate)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, t, d = x.shape
        q, k, v = self.qkv(x).reshape(n, t, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // self.heads), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, t, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, hidden: int, dropout_rate: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-5)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-5)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.dropout_rate = dropout_rate

    def forward(self, x, dropout_on=False, generator=None):
        x = x + self.attn(self.norm1(x))
        rate = self.dropout_rate if dropout_on else 0.0
        h = dropout(F.gelu(self.fc1(self.norm2(x))), rate, generator)
        return x + dropout(self.fc2(h), rate, generator)


class SegNet(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        p, d = cfg.patch_size, cfg.dim
        gh, gw = cfg.grid
        self.patch_proj = nn.Linear(p * p * 3, d)
        self.pos = nn.Parameter(torch.zeros(gh, gw, d))
        self.blocks = nn.ModuleList(
            Block(d, cfg.heads, cfg.mlp_ratio * d, cfg.dropout_rate) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(d, eps=1e-5)
        self.decoder = nn.Linear(d, p * p * cfg.num_classes)
        self.to(dtype)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, prm in self.named_parameters():
                if name.endswith("bias"):
                    prm.zero_()
                elif "norm" in name:
                    prm.fill_(1.0)
                else:
                    prm.copy_(torch.randn(prm.shape, generator=g, dtype=prm.dtype) * 0.02)

    def reset_decoder(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.decoder.weight.copy_(
                torch.randn(self.decoder.weight.shape, generator=g, dtype=self.decoder.weight.dtype)
                * 0.02
            )
            self.decoder.bias.zero_()

    def encoder_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("decoder.")]

    @property
    def dtype(self) -> torch.dtype:
        return self.pos.dtype

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        """(N, H, W, 3) -> (N, Hp, Wp, P*P*3)."""
        if images.ndim == 3:
            images = images[None]
        n, h, w, c = images.shape
        p = self.cfg.patch_size
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        if (h // p, w // p) != self.cfg.grid:
            raise ShapeError(f"image {h}x{w} does not match model grid {self.cfg.grid}")
        x = images.reshape(n, h // p, p, w // p, p, c).permute(0, 1, 3, 2, 4, 5)
        return x.reshape(n, h // p, w // p, p * p * c)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Content tokens without position embeddings, (N, Hp, Wp, d)."""
        return self.patch_proj(self.patchify(images.to(self.dtype)))

    def encode(self, tokens, dropout_on=False, generator=None) -> torch.Tensor:
        n, gh, gw, d = tokens.shape
        x = tokens.reshape(n, gh * gw, d)
        for i, block in enumerate(self.blocks):
            x = block(x, dropout_on, generator)
            if not torch.isfinite(x).all():
                raise NumericalError("non-finite activations", block=i)
        return self.norm(x).reshape(n, gh, gw, d)

    def decode(self, features: torch.Tensor) -> torch.Tensor:
        n, gh, gw, _ = features.shape
        p, k = self.cfg.patch_size, self.cfg.num_classes
        x = self.decoder(features).reshape(n, gh, gw, p, p, k)
        return x.permute(0, 5, 1, 3, 2, 4).reshape(n, k, gh * p, gw * p)

    def segment(self, images, keep=None, dropout_on=False, generator=None) -> SegOutput:
        """Full pipeline: embed, optionally mask, add positions, encode, decode."""
        from .masking import apply_mask

        content = self.embed(images)
        if keep is not None:
            content = apply_mask(content, keep)
        return forward(content + self.pos, self, dropout_on, generator)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        return self.encode(self.embed(images) + self.pos)


def patch_embed(image: torch.Tensor, model: SegNet) -> torch.Tensor:
    """Token grid (Hp, Wp, d) for one (H, W, 3) image, or batched (N, ...)."""
    tokens = model.embed(image) + model.pos
    return tokens[0] if image.ndim == 3 else tokens


def forward(tokens: torch.Tensor, model: SegNet, dropout_on: bool = False, generator=None) -> SegOutput:
    batched = tokens.ndim == 4
    if not batched:
        tokens = tokens[None]
    if not torch.isfinite(tokens).all():
        raise NumericalError("non-finite input tokens")
    out = SegOutput.from_logits(model.decode(model.encode(tokens, dropout_on, generator)))
    if not batched:
        out = SegOutput(out.logits[0], out.probs[0], out.pred[0], out.conf[0])
    return out


def backward(loss: torch.Tensor, model: nn.Module) -> dict[str, torch.Tensor]:
    """Gradient of a scalar loss w.r.t. every named parameter (zeros if unused)."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise UsageError("loss was not produced by a recorded computation")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=True)
    return {
        n: torch.zeros_like(p) if g is None else g for n, p, g in zip(names, params, grads)
    }


def clone_model(model: SegNet) -> SegNet:
    new = SegNet(model.cfg, dtype=model.dtype)
    new.load_state_dict(model.state_dict())
    return new


def freeze(model: nn.Module) -> nn.Module:
    for p in model.parameters():
        p.requires_grad_(False)
    return model
