"""Acceptance criteria 1-8, one PASS/FAIL line each (see the terminal summary).

Criteria 4-6 train the full desk-scale pipeline for three seeds and take
about a quarter of an hour on one CPU core; they are marked ``slow``.
"""
import time

import numpy as np
import pytest
import torch

from gammassl.config import TaskConfig, UncertTrainConfig
from gammassl.datagen import DEFAULT_PALETTE, DomainShift, DomainSpec, generate_domain, stack
from gammassl.experiments import run_trend_experiments
from gammassl.gamma_train import (
    compute_gamma,
    confidence_mask,
    init_phi,
    run_uncertainty_training,
    train_task,
    uncertainty_losses,
)
from gammassl.masking import sample_mask
from gammassl.metrics import EvalRecord, aupr, max_f_beta_with_pac, pr_curve
from gammassl.nnet import ModelConfig, SegNet, backward

from acceptance_log import record
from oracles import enumerate_thresholds_np, finite_difference, rel_err
from test_cli import digest, run, write_cfg

SEEDS = (0, 1, 2)


def test_criterion_1_gamma_matching():
    gen = np.random.default_rng(101)
    cases = []
    for _ in range(1000):
        n = int(gen.integers(1, 2000))
        conf = torch.as_tensor(gen.permutation(n) / n + gen.random() * 1e-3)  # distinct values
        cases.append((conf, float(gen.random())))
    start = time.perf_counter()
    worst = 0.0
    for conf, target in cases:
        mean = confidence_mask(conf, compute_gamma(conf, target)).double().mean().item()
        worst = max(worst, abs(mean - target) * conf.numel())
    elapsed = time.perf_counter() - start
    ok = worst <= 1.0 + 1e-9 and elapsed < 1.0
    record(1, ok, f"max n*|mean(M_gamma)-target| = {worst:.3f} (<= 1), {elapsed:.2f}s (< 1s)")
    assert ok


def _fd_batch(seed, cfg):
    geom = dict(num_classes_known=cfg.num_classes, palette=DEFAULT_PALETTE[: cfg.num_classes],
                height=cfg.height, width=cfg.width, patch_size=cfg.patch_size)
    shift = DomainShift(hue=0.5, brightness=0.05, noise_sigma=0.05)
    tgt = stack(generate_domain(DomainSpec("tgt", seed=seed, ood_rate=0.5, shift=shift, **geom), 2))
    src = stack(generate_domain(DomainSpec("src", seed=seed + 1, **geom), 2))
    as64 = lambda a: torch.as_tensor(a, dtype=torch.float64)
    return as64(tgt[0]), as64(src[0]), torch.as_tensor(src[1])


def test_criterion_2_loss_gradients():
    cfg = ModelConfig(height=16, width=16, patch_size=4, num_classes=3, dim=8, depth=1, heads=2)
    init = SegNet(cfg, seed=5, dtype=torch.float64)
    theta = SegNet(cfg, seed=6, dtype=torch.float64)
    ucfg = UncertTrainConfig()
    gen = np.random.default_rng(202)
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for b in range(5):
        tgt, src, lab = _fd_batch(1000 + b, cfg)
        phi = init_phi(init, b)
        for p in phi.parameters():
            p.requires_grad_(True)
        step_seed = int(gen.integers(2**31))
        l_sup, l_c, g, _ = uncertainty_losses(tgt, src, lab, theta, phi, ucfg, step_seed)
        grads = backward(l_sup + l_c, phi)

        def total():
            a, c, _, _ = uncertainty_losses(tgt, src, lab, theta, phi, ucfg, step_seed, m_gamma=g.m_gamma)
            return a + c

        params = dict(phi.named_parameters())
        names = sorted(params)
        for _ in range(20):
            name = names[gen.integers(len(names))]
            idx = tuple(int(gen.integers(s)) for s in params[name].shape)
            fd = finite_difference(total, params[name].data, idx)
            worst = max(worst, rel_err(grads[name][idx].item(), fd))
            checked += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and checked == 100 and elapsed < 60
    record(2, ok, f"max rel err {worst:.2e} over {checked} params (<= 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_3_metric_oracle():
    gen = np.random.default_rng(303)
    cases = []
    for _ in range(200):
        n = int(gen.integers(2, 1001))
        score = np.round(gen.random(n), int(gen.integers(1, 4)))  # coarse rounding makes ties
        accurate = gen.random(n) < gen.random()
        accurate[gen.integers(n)] = True
        cases.append((score, accurate))
    start = time.perf_counter()
    ours = []
    for score, accurate in cases:
        rec = EvalRecord(score=score, accurate=accurate)
        curve = pr_curve(rec)
        ours.append((aupr(curve), *max_f_beta_with_pac(rec, 0.5, curve)))
    elapsed = time.perf_counter() - start
    worst = 0.0
    for (score, accurate), (ap, f, pac, thr) in zip(cases, ours):
        o_ap, o_f, o_pac, o_thr = enumerate_thresholds_np(score, accurate)
        worst = max(worst, abs(ap - o_ap), abs(f - o_f), abs(pac - o_pac))
        assert thr == o_thr
    ok = worst <= 1e-9 and elapsed < 10
    record(3, ok, f"max |ours-oracle| {worst:.1e} on 200 instances (<= 1e-9), {elapsed:.2f}s (< 10s)")
    assert ok


@pytest.fixture(scope="module")
def trend():
    start = time.perf_counter()
    summary = run_trend_experiments(SEEDS)
    return summary, time.perf_counter() - start


def _per_seed(values):
    return ", ".join(f"{v:+.4f}" for v in values)


@pytest.mark.slow
def test_criterion_4_far_domain_gain(trend):
    s, elapsed = trend
    gain = s.gain_over_maxs
    ok = gain >= 0.02
    record(4, ok, f"median AUPR(mask-d2) - AUPR(maxs-d2) on far = {gain:+.4f} (>= 0.02); "
                  f"per seed [{_per_seed(s.paired(s.aupr, 'mask-d2', 'maxs-d2'))}]; "
                  f"all 3 seeds incl. criteria 5-6 variants {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_5_general_beats_narrow(trend):
    s, _ = trend
    diff = s.general_minus_narrow
    ok = diff >= 0
    record(5, ok, f"median AUPR(mask-d2) - AUPR(mask-d1) on far = {diff:+.4f} (>= 0); "
                  f"per seed [{_per_seed(s.paired(s.aupr, 'mask-d2', 'mask-d1'))}]")
    assert ok


@pytest.mark.slow
def test_criterion_6_mask_less_sensitive_than_candr(trend):
    s, elapsed = trend
    ok = s.mask_spread <= s.candr_spread and elapsed <= 45 * 60
    record(6, ok, f"median MaxF0.5 spread p_mask 0.25/0.75 = {s.mask_spread:.4f} <= "
                  f"C&R full/light = {s.candr_spread:.4f}; {elapsed / 60:.1f} min (<= 45)")
    assert ok


def test_criterion_7_masking_statistics():
    start = time.perf_counter()
    fractions = [sample_mask((32, 32), 0.5, seed).drop_fraction for seed in range(100)]
    inside = sum(abs(f - 0.5) <= 0.06 for f in fractions)
    exact = all(sample_mask((32, 32), 0.0, s).keep.all() for s in range(20)) and not any(
        sample_mask((32, 32), 1.0, s).keep.any() for s in range(20)
    )
    elapsed = time.perf_counter() - start
    ok = inside == 100 and exact and elapsed < 1.0
    record(7, ok, f"{inside}/100 masks within 0.5 +- 0.06 (range {min(fractions):.3f}-{max(fractions):.3f}); "
                  f"p_mask 0/1 exact: {exact}; {elapsed:.2f}s")
    assert ok


def test_criterion_8_frozen_theta_and_determinism(tmp_path):
    cfg = ModelConfig(height=16, width=16, patch_size=4, num_classes=3, dim=8, depth=1, heads=2)
    gen = np.random.default_rng(8)
    images = gen.random((8, 16, 16, 3))
    labels = (images[..., 0] > 0.5).astype(np.int64)
    init = SegNet(cfg, seed=1, dtype=torch.float64)
    theta = train_task(images, labels, init, TaskConfig(steps=5, batch_size=4, seed=2)).model
    before = {k: v.clone() for k, v in theta.state_dict().items()}
    run_uncertainty_training(images, labels, gen.random((8, 16, 16, 3)), theta, init,
                             UncertTrainConfig(steps=10, batch_size=4, seed=3))
    frozen = all(torch.equal(v, before[k]) for k, v in theta.state_dict().items())

    path = write_cfg(tmp_path)
    digests, theta_stable = [], True
    for name in ("a", "b"):
        out = tmp_path / name
        for verb in ("generate", "train-task", "train-uncertainty", "evaluate", "compare"):
            if verb == "train-uncertainty":
                ckpt = (out / "checkpoints" / "theta-d2.gssl").read_bytes()
            assert run(path, out, verb) == 0, verb
            if verb == "train-uncertainty":
                theta_stable &= ckpt == (out / "checkpoints" / "theta-d2.gssl").read_bytes()
        d = digest(out)
        d.pop("config.resolved.yaml")  # records its own output_dir
        digests.append(d)
    reproducible = digests[0] == digests[1]
    ok = frozen and theta_stable and reproducible
    record(8, ok, f"theta frozen in memory: {frozen}, theta checkpoint untouched: {theta_stable}, "
                  f"{len(digests[0])} output files byte-identical across runs: {reproducible}")
    assert ok
