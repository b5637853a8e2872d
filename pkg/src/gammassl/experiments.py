"""End-to-end pipeline shared by the CLI, scripts and acceptance tests.

general/narrow init -> f_theta task learning -> uncertainty-trained variants
-> per-domain misclassification-detection reports for every method.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .baselines import (
    ensemble_scorer,
    fit_model_gaussians,
    mahalanobis_scorer,
    mcd_scorer,
    softmax_scorer,
)
from .config import ExperimentConfig, TaskConfig, VariantConfig, derive_seed
from .datagen import IGNORE, generate_domain, stack
from .gamma_train import TrainResult, init_phi, run_uncertainty_training, train_task
from .metrics import MetricsReport, evaluate_model
from .nnet import SegNet

log = logging.getLogger(__name__)


@dataclass
class Split:
    images: np.ndarray
    labels: np.ndarray
    ood: np.ndarray


@dataclass
class DomainData:
    train: Split
    test: Split


def build_datasets(cfg: ExperimentConfig, domains=None) -> dict[str, DomainData]:
    names = domains or sorted({cfg.data.source, *cfg.data.targets, *cfg.eval_domains})
    out = {}
    for name in names:
        spec = cfg.data.domain_spec(name, cfg.seed)
        train = Split(*stack(generate_domain(spec, cfg.data.train_count)))
        test = Split(*stack(generate_domain(spec, cfg.data.test_count, start=cfg.data.train_count)))
        out[name] = DomainData(train, test)
    return out


def pretrain_encoder(cfg: ExperimentConfig, data: dict[str, DomainData], domains, tag: str) -> TrainResult:
    """Supervised pretraining whose throwaway decoder gets one extra "undefined" class.

    Returns a K-class model carrying the pretrained encoder and a fresh decoder.
    """
    k = cfg.model.num_classes
    images = np.concatenate([data[d].train.images for d in domains])
    labels = np.concatenate([data[d].train.labels for d in domains])
    labels = np.where(labels == IGNORE, k, labels)
    wide = SegNet(dataclasses.replace(cfg.model, num_classes=k + 1), seed=derive_seed(cfg.seed, "init"))
    pcfg = dataclasses.replace(cfg.pretrain, seed=derive_seed(cfg.seed, f"pretrain/{tag}"))
    res = train_task(images, labels, wide, pcfg)
    trained = res.model
    net = SegNet(cfg.model, seed=derive_seed(cfg.seed, "init"))
    enc = {n: t for n, t in trained.state_dict().items() if not n.startswith("decoder.")}
    net.load_state_dict(enc, strict=False)
    net.reset_decoder(derive_seed(cfg.seed, f"pretrain/{tag}/decoder"))
    return TrainResult(net, res.log, init=wide)


def general_init(cfg, data) -> TrainResult:
    return pretrain_encoder(cfg, data, [cfg.data.source, *cfg.data.targets], "general")


def narrow_init(cfg, data) -> TrainResult:
    return pretrain_encoder(cfg, data, [cfg.data.source], "narrow")


def train_f_theta(cfg: ExperimentConfig, init: SegNet, data, tag: str = "task") -> TrainResult:
    src = data[cfg.data.source].train
    tcfg = dataclasses.replace(cfg.task, seed=derive_seed(cfg.seed, tag))
    start = init_phi(init, tcfg.seed)
    return train_task(src.images, src.labels, start, tcfg)


def task_tag(family: str, member: int = 0) -> str:
    return f"task/{family}" if member == 0 else f"task/{family}/ens{member}"


def train_variant(cfg: ExperimentConfig, variant: VariantConfig, f_theta: SegNet, init: SegNet, data):
    src = data[cfg.data.source].train
    target = np.concatenate([data[t].train.images for t in cfg.data.targets])
    ucfg = dataclasses.replace(cfg.variant_uncert(variant), seed=derive_seed(cfg.seed, f"uncert/{variant.name}"))
    return run_uncertainty_training(src.images, src.labels, target, f_theta, init, ucfg)


@dataclass
class PipelineResult:
    models: dict[str, SegNet] = field(default_factory=dict)
    logs: dict[str, list] = field(default_factory=dict)
    reports: dict[tuple[str, str], MetricsReport] = field(default_factory=dict)


def evaluate(scorers: dict, data, domains) -> dict[tuple[str, str], MetricsReport]:
    out = {}
    for method, scorer in scorers.items():
        for d in domains:
            test = data[d].test
            out[(method, d)] = evaluate_model(scorer, test.images, test.labels, d)
    return out


def run_pipeline(cfg: ExperimentConfig, baselines: bool = True, data=None) -> PipelineResult:
    cfg.validate()
    torch.manual_seed(derive_seed(cfg.seed, "torch") & 0xFFFFFFFF)
    data = data or build_datasets(cfg)
    res = PipelineResult()
    inits = {"general": general_init(cfg, data).model}
    if any(v.init == "narrow" for v in cfg.variants):
        inits["narrow"] = narrow_init(cfg, data).model
    thetas = {}
    for family in inits:
        thetas[family] = train_f_theta(cfg, inits[family], data, tag=task_tag(family)).model
    res.models.update({f"theta-{'d2' if f == 'general' else 'd1'}": m for f, m in thetas.items()})
    scorers = {"maxs-d2": softmax_scorer(thetas["general"])}
    for v in cfg.variants:
        r = train_variant(cfg, v, thetas[v.init], inits[v.init], data)
        res.models[v.name] = r.model
        res.logs[v.name] = r.log
        scorers[v.name] = softmax_scorer(r.model)
    if baselines:
        src = data[cfg.data.source].train
        g = fit_model_gaussians(thetas["general"], src.images, src.labels)
        scorers["mahalanobis-d2"] = mahalanobis_scorer(thetas["general"], g)
        scorers["mcd-d2"] = mcd_scorer(thetas["general"], cfg.baselines.mcd_samples, derive_seed(cfg.seed, "mcd"))
        members = [thetas["general"]] + [
            train_f_theta(cfg, inits["general"], data, tag=task_tag("general", i)).model
            for i in range(1, cfg.baselines.ensemble_size)
        ]
        scorers["ensemble-d2"] = ensemble_scorer(members)
    res.reports = evaluate(scorers, data, cfg.eval_domains)
    return res


# -- acceptance scenario ---------------------------------------------------------

ACCEPTANCE_VARIANTS = (
    VariantConfig("mask-d2"),
    VariantConfig("mask-d1", init="narrow"),
    VariantConfig("mask-p25", p_mask=0.25),
    VariantConfig("mask-p75", p_mask=0.75),
    VariantConfig("candr-full", augment="candr", jitter="full"),
    VariantConfig("candr-light", augment="candr", jitter="light"),
)


def acceptance_config(seed: int, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    return dataclasses.replace(base, seed=seed, variants=ACCEPTANCE_VARIANTS, eval_domains=("far",))


@dataclass
class TrendSummary:
    """Per-seed far-domain numbers and the medians the trend checks use."""

    seeds: tuple[int, ...]
    aupr: dict[str, list[float]]
    max_f: dict[str, list[float]]

    def paired(self, table: dict, a: str, b: str) -> list[float]:
        return [x - y for x, y in zip(table[a], table[b])]

    @property
    def gain_over_maxs(self) -> float:
        return float(np.median(self.paired(self.aupr, "mask-d2", "maxs-d2")))

    @property
    def general_minus_narrow(self) -> float:
        return float(np.median(self.paired(self.aupr, "mask-d2", "mask-d1")))

    @property
    def mask_spread(self) -> float:
        return float(np.median(np.abs(self.paired(self.max_f, "mask-p25", "mask-p75"))))

    @property
    def candr_spread(self) -> float:
        return float(np.median(np.abs(self.paired(self.max_f, "candr-full", "candr-light"))))

    def rows(self):
        for m in sorted(self.aupr):
            for i, s in enumerate(self.seeds):
                yield m, s, self.aupr[m][i], self.max_f[m][i]


def run_trend_experiments(seeds=(0, 1, 2), base: ExperimentConfig | None = None, domain: str = "far") -> TrendSummary:
    aupr: dict[str, list[float]] = {}
    max_f: dict[str, list[float]] = {}
    for seed in seeds:
        cfg = dataclasses.replace(acceptance_config(seed, base), eval_domains=(domain,))
        res = run_pipeline(cfg, baselines=False)
        for (method, _), rep in sorted(res.reports.items()):
            aupr.setdefault(method, []).append(rep.aupr)
            max_f.setdefault(method, []).append(rep.max_f_half)
        log.info("seed %d done", seed)
    return TrendSummary(tuple(seeds), aupr, max_f)
