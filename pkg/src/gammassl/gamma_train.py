"""Task learning and masked-consistency uncertainty training.

``f_theta`` is trained on the labelled source domain and frozen. ``f_phi``
starts from the shared encoder with a fresh decoder and is trained on the
source labels plus a consistency loss on unlabelled target images, restricted
to the pixels it is confident about. The confidence threshold gamma is picked
per batch so the confident fraction equals the fraction of pixels where the
masked ``f_phi`` agrees with ``f_theta``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import TaskConfig, UncertTrainConfig, derive_seed
from .datagen import IGNORE, sample_seed
from .errors import DataError, NumericalError, ShapeError, TrainingError, UsageError
from .masking import JITTER_PRESETS, color_jitter, crop_resize_pair, random_crop, sample_mask
from .nnet import SegNet, SegOutput, clone_model, freeze

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass
class GammaResult:
    gamma: float
    m_gamma: torch.Tensor
    m_c: torch.Tensor
    target_mean: float


def confidence_mask(conf, gamma: float):
    """True where confidence strictly exceeds gamma (compared in float64)."""
    if isinstance(conf, torch.Tensor):
        return conf.double() > gamma
    return np.asarray(conf, dtype=np.float64) > gamma


def hard_consistency_mask(s_theta: SegOutput, s_phi_masked: SegOutput) -> torch.Tensor:
    if s_theta.pred.shape != s_phi_masked.pred.shape:
        raise ShapeError(f"{tuple(s_theta.pred.shape)} vs {tuple(s_phi_masked.pred.shape)}")
    return s_theta.pred == s_phi_masked.pred


def compute_gamma(conf, target_mean: float) -> float:
    """Threshold whose strict confident fraction matches ``target_mean``.

    With k = round(target_mean * n) the k largest confidences end up above
    gamma: the midpoint between the k-th and (k+1)-th largest values.
    """
    c = np.asarray(conf.detach().cpu() if isinstance(conf, torch.Tensor) else conf, dtype=np.float64)
    c = c.ravel()
    n = c.size
    if n == 0:
        raise UsageError("compute_gamma needs at least one confidence value")
    if not 0.0 <= target_mean <= 1.0:
        raise UsageError(f"target_mean must be in [0, 1], got {target_mean}")
    k = int(math.floor(target_mean * n + 0.5))
    if k == 0:
        return float(c.max())
    if k == n:
        return float(c.min() - 1.0)
    top = -np.partition(-c, (k - 1, k))
    return float((top[k - 1] + top[k]) / 2.0)


def gamma_match(conf_phi: torch.Tensor, m_c: torch.Tensor) -> GammaResult:
    target = float(m_c.double().mean())
    gamma = compute_gamma(conf_phi, target)
    return GammaResult(gamma, confidence_mask(conf_phi, gamma), m_c, target)


def sharpen(probs: torch.Tensor, temperature: float, dim: int = 1) -> torch.Tensor:
    if not temperature > 0:
        raise UsageError("temperature must be positive")
    powered = probs ** (1.0 / temperature)
    total = powered.sum(dim=dim, keepdim=True)
    if (total <= 0).any():
        raise NumericalError("sharpening a row with no probability mass")
    return powered / total


def masked_consistency_loss(s_theta: SegOutput, s_phi_masked: SegOutput, m_gamma, temperature: float):
    """Cross-entropy of sharpened frozen targets against masked predictions, averaged over M_gamma."""
    if s_theta.probs.shape != s_phi_masked.probs.shape:
        raise ShapeError(f"{tuple(s_theta.probs.shape)} vs {tuple(s_phi_masked.probs.shape)}")
    q = s_phi_masked.probs
    target = sharpen(s_theta.probs.detach(), temperature)
    ce = -(target * q.clamp_min(LOG_CLAMP).log()).sum(dim=1)
    m = torch.as_tensor(m_gamma).to(q.dtype).detach()
    denom = m.sum()
    if denom == 0:
        return (q * 0.0).sum()
    return (m * ce).sum() / denom


def supervised_loss(s: SegOutput, labels: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross-entropy over non-IGNORE pixels (0 if none)."""
    labels = torch.as_tensor(labels)
    k = s.probs.shape[1]
    valid = labels != IGNORE
    if ((labels[valid] < 0) | (labels[valid] >= k)).any():
        raise DataError(f"labels must lie in [0, {k}) or equal IGNORE")
    if not valid.any():
        return (s.probs * 0.0).sum()
    idx = torch.where(valid, labels, torch.zeros_like(labels))
    p = s.probs.gather(1, idx.unsqueeze(1)).squeeze(1)
    nll = -p.clamp_min(LOG_CLAMP).log()
    return nll[valid].mean()


# -- batching ----------------------------------------------------------------

class BatchOrder:
    """Endless reshuffled epochs of indices from a seeded generator."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < 1:
            raise UsageError("empty dataset")
        self.n = n
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self._perm = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        while self._perm.size < self.batch_size:
            self._perm = np.concatenate([self._perm, self.rng.permutation(self.n)])
        out, self._perm = self._perm[: self.batch_size], self._perm[self.batch_size :]
        return out


def _as_tensors(images, labels=None):
    images = torch.as_tensor(np.asarray(images)) if not isinstance(images, torch.Tensor) else images
    if labels is not None and not isinstance(labels, torch.Tensor):
        labels = torch.as_tensor(np.asarray(labels), dtype=torch.int64)
    return images, labels


def _optimizer(model, lr, momentum):
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.SGD(params, lr=lr, momentum=momentum)


@dataclass
class TrainResult:
    model: SegNet
    log: list = field(default_factory=list)
    init: SegNet | None = None  # starting weights


def train_task(images, labels, model: SegNet, cfg: TaskConfig, dropout_on: bool = True) -> TrainResult:
    """SGD-with-momentum cross-entropy training of a copy of ``model``; returns it frozen."""
    cfg.validate()
    images, labels = _as_tensors(images, labels)
    net = clone_model(model)
    order = BatchOrder(len(images), cfg.batch_size, derive_seed(cfg.seed, "order"))
    drop_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "dropout"))
    opt = _optimizer(net, cfg.learning_rate, cfg.momentum)
    rows = []
    for step in range(cfg.steps):
        idx = torch.as_tensor(order.next())
        try:
            out = net.segment(images[idx], dropout_on=dropout_on, generator=drop_gen)
        except NumericalError as exc:
            raise TrainingError(str(exc), step) from exc
        loss = supervised_loss(out, labels[idx])
        if not torch.isfinite(loss):
            raise TrainingError("loss is not finite", step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        rows.append({"step": step, "L_sup": loss.item()})
        if step % 250 == 0:
            log.debug("task step %d loss %.4f", step, loss.item())
    return TrainResult(freeze(net), rows, init=model)


def init_phi(init_model: SegNet, seed: int) -> SegNet:
    """Shared encoder weights plus a freshly initialised decoder."""
    phi = clone_model(init_model)
    phi.reset_decoder(derive_seed(seed, "decoder"))
    return phi


def _gather_pixels(x: torch.Tensor, corr: torch.Tensor) -> torch.Tensor:
    """x (N, [K,] H, W) sampled at corr (N, H, W, 2) source coordinates."""
    n, h, w = corr.shape[:3]
    flat = corr[..., 0] * x.shape[-1] + corr[..., 1]  # (N, H, W)
    if x.ndim == 3:
        return x.reshape(n, -1).gather(1, flat.reshape(n, -1)).reshape(n, h, w)
    k = x.shape[1]
    idx = flat.reshape(n, 1, -1).expand(n, k, h * w)
    return x.reshape(n, k, -1).gather(2, idx).reshape(n, k, h, w)


def candr_views(images: torch.Tensor, cfg: UncertTrainConfig, seed: int, patch_size: int):
    """Crop-resize + colour-jitter each image; returns augmented batch and correspondence maps."""
    rng = np.random.default_rng(seed)
    preset = JITTER_PRESETS[cfg.jitter]
    h, w = images.shape[1:3]
    augs, corrs = [], []
    for img in images.numpy():
        spec = random_crop(rng, h, w, patch_size, cfg.crop_scale)
        aug, corr = crop_resize_pair(img, spec, patch_size)
        augs.append(color_jitter(aug, rng, preset))
        corrs.append(corr)
    return torch.as_tensor(np.stack(augs)), torch.as_tensor(np.stack(corrs))


def uncertainty_losses(
    target_images: torch.Tensor,
    source_images: torch.Tensor,
    source_labels: torch.Tensor,
    f_theta: SegNet,
    f_phi: SegNet,
    cfg: UncertTrainConfig,
    step_seed: int,
    dropout_gen: torch.Generator | None = None,
    m_gamma: torch.Tensor | None = None,
):
    """(L_sup, L_c, GammaResult, stats) for one batch; no parameter update.

    Passing ``m_gamma`` pins the confidence mask instead of re-deriving it.
    """
    with torch.no_grad():
        s_theta = f_theta.segment(target_images)
        s_phi = f_phi.segment(target_images)
    conf_phi = s_phi.conf
    if cfg.augment == "mask":
        mask = sample_mask((len(target_images), *f_phi.cfg.grid), cfg.p_mask, step_seed)
        s_phi_m = f_phi.segment(target_images, keep=torch.as_tensor(mask.keep))
    else:
        aug, corr = candr_views(target_images, cfg, step_seed, f_phi.cfg.patch_size)
        s_phi_m = f_phi.segment(aug)
        s_theta = SegOutput.from_probs(_gather_pixels(s_theta.probs, corr))
        conf_phi = _gather_pixels(conf_phi, corr)

    m_c = hard_consistency_mask(s_theta, s_phi_m)
    g = gamma_match(conf_phi, m_c)
    if m_gamma is not None:
        g.m_gamma = m_gamma
    l_c = masked_consistency_loss(s_theta, s_phi_m, g.m_gamma, cfg.temperature)
    s_src = f_phi.segment(source_images, dropout_on=dropout_gen is not None, generator=dropout_gen)
    l_sup = supervised_loss(s_src, source_labels)
    stats = {
        "conf_min": float(conf_phi.min()),
        "conf_max": float(conf_phi.max()),
        "n_pixels": int(conf_phi.numel()),
    }
    return l_sup, l_c, g, stats


def uncertainty_train_step(
    target_images: torch.Tensor,
    source_images: torch.Tensor,
    source_labels: torch.Tensor,
    f_theta: SegNet,
    f_phi: SegNet,
    optimizer: torch.optim.Optimizer,
    cfg: UncertTrainConfig,
    step_seed: int,
    dropout_gen: torch.Generator | None = None,
) -> dict:
    """One update of f_phi on L_sup + consistency_weight * L_c; returns the logged scalars.

    Gradients reach f_phi only through the masked prediction and the source
    branch: f_theta outputs, M_c, gamma and M_gamma are constants.
    """
    l_sup, l_c, g, stats = uncertainty_losses(
        target_images, source_images, source_labels, f_theta, f_phi, cfg, step_seed, dropout_gen
    )
    total = l_sup + cfg.consistency_weight * l_c
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return {
        "L_sup": l_sup.item(),
        "L_c": l_c.item(),
        "gamma": g.gamma,
        "mean_Mc": g.target_mean,
        "mean_Mgamma": float(g.m_gamma.double().mean()),
        **stats,
    }


def run_uncertainty_training(
    source_images,
    source_labels,
    target_images,
    f_theta: SegNet,
    init_model: SegNet,
    cfg: UncertTrainConfig,
    dropout_on: bool = True,
) -> TrainResult:
    """Train f_phi (shared init encoder, fresh decoder) against frozen f_theta."""
    cfg.validate()
    source_images, source_labels = _as_tensors(source_images, source_labels)
    target_images, _ = _as_tensors(target_images)
    f_theta = freeze(f_theta)
    f_phi = init_phi(init_model, cfg.seed)
    start = freeze(clone_model(f_phi))
    src_order = BatchOrder(len(source_images), cfg.batch_size, derive_seed(cfg.seed, "order"))
    tgt_order = BatchOrder(len(target_images), cfg.batch_size, derive_seed(cfg.seed, "target_order"))
    drop_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "dropout")) if dropout_on else None
    mask_seed = derive_seed(cfg.seed, "masking")
    opt = _optimizer(f_phi, cfg.learning_rate, cfg.momentum)
    rows = []
    for step in range(cfg.steps):
        si = torch.as_tensor(src_order.next())
        ti = torch.as_tensor(tgt_order.next())
        try:
            row = uncertainty_train_step(
                target_images[ti], source_images[si], source_labels[si],
                f_theta, f_phi, opt, cfg, sample_seed(mask_seed, step), drop_gen,
            )
        except NumericalError as exc:
            raise TrainingError(str(exc), step) from exc
        if not (math.isfinite(row["L_sup"]) and math.isfinite(row["L_c"])):
            raise TrainingError("loss is not finite", step)
        rows.append({"step": step, **row})
        if step % 100 == 0:
            log.debug("uncert step %d L_sup %.4f L_c %.4f", step, row["L_sup"], row["L_c"])
    return TrainResult(freeze(f_phi), rows, init=start)
