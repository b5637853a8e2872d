"""Reference confidence scorers: max-softmax, Mahalanobis, ensembles, MC dropout."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .datagen import sample_seed
from .errors import FittingError, UsageError
from .nnet import SegNet, SegOutput


def max_softmax_score(s: SegOutput) -> torch.Tensor:
    return s.conf


@dataclass
class ClassGaussians:
    means: np.ndarray  # (K, d)
    cov: np.ndarray  # (d, d), shared
    precision: np.ndarray  # inverse of cov


def fit_gaussians(features, labels, num_classes: int, sample_weight=None) -> ClassGaussians:
    """Class means and one tied covariance (+ 1e-3 * trace/d ridge)."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).ravel()
    x = x.reshape(len(y), -1)
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    d = x.shape[1]
    means = np.empty((num_classes, d))
    for k in range(num_classes):
        sel = y == k
        wk = w[sel].sum()
        if wk <= 0:
            raise FittingError(f"class {k} has no samples")
        means[k] = (w[sel, None] * x[sel]).sum(0) / wk
    centered = x - means[y]
    cov = (centered * w[:, None]).T @ centered / w.sum()
    cov = (cov + cov.T) / 2 + (1e-3 * np.trace(cov) / d) * np.eye(d)
    return ClassGaussians(means=means, cov=cov, precision=np.linalg.inv(cov))


def mahalanobis_confidence(feature, g: ClassGaussians) -> np.ndarray:
    """-min_k (x - mu_k)^T Sigma^-1 (x - mu_k); 0 is the most confident value."""
    x = np.asarray(feature, dtype=np.float64)
    diff = x[..., None, :] - g.means  # (..., K, d)
    dist = np.einsum("...kd,de,...ke->...k", diff, g.precision, diff)
    return -dist.min(axis=-1)


def ensemble_confidence(models: list[SegNet], images, dropout_on=False, generator=None) -> SegOutput:
    if not models:
        raise UsageError("ensemble needs at least one member")
    with torch.no_grad():
        probs = [m.segment(images, dropout_on=dropout_on, generator=generator).probs for m in models]
    return SegOutput.from_probs(torch.stack(probs).mean(0))


def mc_dropout_confidence(model: SegNet, images, samples: int, seed: int) -> SegOutput:
    if samples < 1:
        raise UsageError("need at least one dropout sample")
    if model.cfg.dropout_rate == 0.0 and samples > 1:
        warnings.warn("dropout_rate is 0: Monte-Carlo samples are identical", stacklevel=2)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        probs = [
            model.segment(images, dropout_on=True, generator=gen).probs for _ in range(samples)
        ]
    return SegOutput.from_probs(torch.stack(probs).mean(0))


# -- scorers: images -> (per-pixel score, per-pixel prediction) -----------------

def _chunks(images, size=32):
    images = torch.as_tensor(np.asarray(images)) if not isinstance(images, torch.Tensor) else images
    for i in range(0, len(images), size):
        yield images[i : i + size]


def _collect(fn, images):
    scores, preds = [], []
    for chunk in _chunks(images):
        s, p = fn(chunk)
        scores.append(np.asarray(s, dtype=np.float64))
        preds.append(np.asarray(p))
    return np.concatenate(scores), np.concatenate(preds)


def softmax_scorer(model: SegNet):
    def fn(chunk):
        with torch.no_grad():
            out = model.segment(chunk)
        return out.conf.double().numpy(), out.pred.numpy()

    return lambda images: _collect(fn, images)


def ensemble_scorer(models: list[SegNet]):
    def fn(chunk):
        out = ensemble_confidence(models, chunk)
        return out.conf.double().numpy(), out.pred.numpy()

    return lambda images: _collect(fn, images)


def mcd_scorer(model: SegNet, samples: int, seed: int):
    def score(images):
        scores, preds = [], []
        for i, chunk in enumerate(_chunks(images)):
            out = mc_dropout_confidence(model, chunk, samples, sample_seed(seed, i))
            scores.append(out.conf.double().numpy())
            preds.append(out.pred.numpy())
        return np.concatenate(scores), np.concatenate(preds)

    return score


def patch_features(model: SegNet, images) -> np.ndarray:
    feats = []
    with torch.no_grad():
        for chunk in _chunks(images):
            feats.append(model.features(chunk).double().numpy())
    return np.concatenate(feats)  # (N, Hp, Wp, d)


def fit_model_gaussians(model: SegNet, images, labels) -> ClassGaussians:
    """Fit on final encoder tokens; each patch weighted by its per-class pixel counts."""
    feats = patch_features(model, images)
    n, gh, gw, d = feats.shape
    p, k = model.cfg.patch_size, model.cfg.num_classes
    lab = np.asarray(labels).reshape(n, gh, p, gw, p).transpose(0, 1, 3, 2, 4).reshape(n * gh * gw, -1)
    counts = np.stack([(lab == c).sum(1) for c in range(k)], axis=1)  # IGNORE pixels drop out
    rows, cls = np.nonzero(counts)
    return fit_gaussians(feats.reshape(-1, d)[rows], cls, k, sample_weight=counts[rows, cls])


def mahalanobis_scorer(model: SegNet, g: ClassGaussians):
    p = model.cfg.patch_size

    def fn(chunk):
        with torch.no_grad():
            feats = model.features(chunk).double().numpy()
            pred = model.segment(chunk).pred.numpy()
        score = mahalanobis_confidence(feats, g)  # (n, Hp, Wp)
        return np.repeat(np.repeat(score, p, axis=1), p, axis=2), pred

    return lambda images: _collect(fn, images)

