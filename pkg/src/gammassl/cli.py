"""Command line: generate, train-task, train-uncertainty, evaluate, compare."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import shutil
import sys
from pathlib import Path

import torch

from . import experiments as ex
from .archive import load_model_state, read_samples, save_model, write_samples
from .baselines import (
    ensemble_scorer,
    fit_model_gaussians,
    mahalanobis_scorer,
    mcd_scorer,
    softmax_scorer,
)
from .config import ExperimentConfig, derive_seed, dump_config, load_config
from .datagen import generate_domain, stack
from .errors import GammaSSLError, UsageError
from .metrics import evaluate_model
from .nnet import SegNet
from .reporting import (
    compare_tables,
    curve_csv,
    log_csv,
    metrics_csv,
    read_metrics_csv,
    sweep_svg,
)

log = logging.getLogger("gammassl")

BASELINE_METHODS = ("maxs-d2", "mahalanobis-d2", "mcd-d2", "ensemble-d2")


class Run:
    """Resolved config plus the output directory layout."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.data_dir = out / "data"
        self.ckpt_dir = out / "checkpoints"
        self.log_dir = out / "logs"
        self.metrics_dir = out / "metrics"

    def write_config(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.resolved.yaml").write_text(dump_config(self.cfg))

    def ckpt(self, name: str) -> Path:
        return self.ckpt_dir / f"{name}.gssl"

    def domains(self) -> list[str]:
        c = self.cfg
        return sorted({c.data.source, *c.data.targets, *c.eval_domains})

    def load_data(self) -> dict[str, ex.DomainData]:
        data = {}
        for d in self.domains():
            splits = []
            for split in ("train", "test"):
                path = self.data_dir / d / split
                if not (path / "manifest.txt").exists():
                    raise UsageError(f"dataset {path} missing; run `generate` first")
                meta, samples = read_samples(path)
                if int(meta.get("seed", -1)) != self.cfg.seed:
                    raise UsageError(f"dataset {path} was generated with seed {meta.get('seed')}")
                splits.append(ex.Split(*stack(samples)))
            data[d] = ex.DomainData(*splits)
        return data

    def save(self, name: str, model: SegNet, init: SegNet | None = None, rows=None, columns=None) -> None:
        self.ckpt_dir.mkdir(parents=True, exist_ok=True)
        save_model(self.ckpt(name), model)
        if init is not None:
            save_model(self.ckpt_dir / f"{name}.init.gssl", init)
        if rows is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            text = log_csv(rows) if columns is None else log_csv(rows, columns)
            (self.log_dir / f"{name}.csv").write_text(text)

    def load(self, name: str, num_classes: int | None = None) -> SegNet:
        path = self.ckpt(name)
        if not path.exists():
            raise UsageError(f"checkpoint for {name!r} missing: {path}")
        cfg = self.cfg.model
        if num_classes is not None:
            cfg = dataclasses.replace(cfg, num_classes=num_classes)
        model = SegNet(cfg)
        load_model_state(model, path)
        return model


def _resolve(args) -> Run:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output_dir=str(args.out))
    cfg.validate()
    run = Run(cfg, Path(cfg.output_dir))
    run.write_config()
    return run


def cmd_generate(run: Run, overwrite: bool = False) -> None:
    cfg = run.cfg
    if run.data_dir.exists() and any(run.data_dir.iterdir()):
        if not overwrite:
            raise UsageError(f"{run.data_dir} is not empty; pass --overwrite to replace it")
        shutil.rmtree(run.data_dir)
    for d in run.domains():
        spec = cfg.data.domain_spec(d, cfg.seed)
        splits = {
            "train": generate_domain(spec, cfg.data.train_count),
            "test": generate_domain(spec, cfg.data.test_count, start=cfg.data.train_count),
        }
        for split, samples in splits.items():
            meta = {
                "domain": d,
                "split": split,
                "seed": cfg.seed,
                "height": cfg.data.height,
                "width": cfg.data.width,
                "num_classes": cfg.data.num_classes,
            }
            write_samples(run.data_dir / d / split, samples, meta)
        log.info("generated %s", d)


TASK_LOG = ["step", "L_sup"]


def _families(cfg) -> list[str]:
    return ["general"] + (["narrow"] if any(v.init == "narrow" for v in cfg.variants) else [])


def cmd_train_task(run: Run) -> None:
    """General/narrow encoder inits, f_theta per init family, and extra ensemble members."""
    cfg = run.cfg
    data = run.load_data()
    for family in _families(cfg):
        pre = ex.general_init(cfg, data) if family == "general" else ex.narrow_init(cfg, data)
        run.save(f"pretrain-{family}", pre.model, rows=pre.log, columns=TASK_LOG)
        tag = "d2" if family == "general" else "d1"
        members = cfg.baselines.ensemble_size if family == "general" else 1
        for i in range(members):
            res = ex.train_f_theta(cfg, pre.model, data, tag=ex.task_tag(family, i))
            name = f"theta-{tag}" if i == 0 else f"theta-{tag}-ens{i}"
            run.save(name, res.model, init=res.init, rows=res.log, columns=TASK_LOG)
            log.info("trained %s", name)


def cmd_train_uncertainty(run: Run, variant: str | None = None) -> None:
    cfg = run.cfg
    variants = [v for v in cfg.variants if variant is None or v.name == variant]
    if not variants:
        raise UsageError(f"no configured variant named {variant!r}")
    data = run.load_data()
    for v in variants:
        tag = "d2" if v.init == "general" else "d1"
        theta = run.load(f"theta-{tag}")
        init = run.load(f"pretrain-{v.init}")
        res = ex.train_variant(cfg, v, theta, init, data)
        run.save(v.name, res.model, init=res.init, rows=res.log)
        log.info("trained %s", v.name)


def method_checkpoints(cfg: ExperimentConfig) -> dict[str, list[str]]:
    ens = ["theta-d2"] + [f"theta-d2-ens{i}" for i in range(1, cfg.baselines.ensemble_size)]
    out = {
        "maxs-d2": ["theta-d2"],
        "mahalanobis-d2": ["theta-d2"],
        "mcd-d2": ["theta-d2"],
        "ensemble-d2": ens,
    }
    out.update({v.name: [v.name] for v in cfg.variants})
    return out


def _check_checkpoints(run: Run) -> None:
    for method, names in method_checkpoints(run.cfg).items():
        for n in names:
            if not run.ckpt(n).exists():
                raise UsageError(f"method {method!r}: checkpoint {run.ckpt(n)} missing")


def build_scorers(run: Run, data) -> dict:
    cfg = run.cfg
    _check_checkpoints(run)
    theta = run.load("theta-d2")
    src = data[cfg.data.source].train
    scorers = {
        "maxs-d2": softmax_scorer(theta),
        "mahalanobis-d2": mahalanobis_scorer(theta, fit_model_gaussians(theta, src.images, src.labels)),
        "mcd-d2": mcd_scorer(theta, cfg.baselines.mcd_samples, derive_seed(cfg.seed, "mcd")),
        "ensemble-d2": ensemble_scorer([run.load(n) for n in method_checkpoints(cfg)["ensemble-d2"]]),
    }
    for v in cfg.variants:
        scorers[v.name] = softmax_scorer(run.load(v.name))
    return scorers


def write_reports(run: Run, reports) -> None:
    mdir = run.metrics_dir
    (mdir / "curves").mkdir(parents=True, exist_ok=True)
    (mdir / "plots").mkdir(parents=True, exist_ok=True)
    (mdir / "metrics.csv").write_text(metrics_csv(reports))
    for (m, d), r in reports.items():
        (mdir / "curves" / f"{m}__{d}.csv").write_text(curve_csv(r))
    for d in dict.fromkeys(d for _, d in reports):
        per = {m: r for (m, dd), r in reports.items() if dd == d}
        (mdir / "plots" / f"{d}.svg").write_text(sweep_svg(d, per))


def evaluate_scorers(run: Run, scorers: dict, data) -> dict:
    reports = {}
    for method, scorer in scorers.items():
        for d in run.cfg.eval_domains:
            test = data[d].test
            reports[(method, d)] = evaluate_model(scorer, test.images, test.labels, d)
    write_reports(run, reports)
    return reports


def cmd_evaluate(run: Run) -> dict:
    data = run.load_data()
    return evaluate_scorers(run, build_scorers(run, data), data)


def cmd_compare(run: Run) -> str:
    cfg = run.cfg
    _check_checkpoints(run)
    path = run.metrics_dir / "metrics.csv"
    if not path.exists():
        raise UsageError(f"{path} missing; run `evaluate` first")
    rows = read_metrics_csv(path)
    methods = list(method_checkpoints(cfg))
    have = {r["method"] for r in rows}
    for m in methods:
        if m not in have:
            raise UsageError(f"method {m!r} has no rows in {path}")
    md, csv_text = compare_tables(rows, methods, list(cfg.eval_domains))
    (run.out / "compare.md").write_text(md)
    (run.out / "compare.csv").write_text(csv_text)
    return md


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gammassl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train-task", "train-uncertainty", "evaluate", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML config (defaults if omitted)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="global seed override")
        p.add_argument("--overwrite", action="store_true")
        if name == "train-uncertainty":
            p.add_argument("--variant", default=None, help="train only this variant")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        run = _resolve(args)
        if args.command == "generate":
            cmd_generate(run, args.overwrite)
        elif args.command == "train-task":
            cmd_train_task(run)
        elif args.command == "train-uncertainty":
            cmd_train_uncertainty(run, args.variant)
        elif args.command == "evaluate":
            cmd_evaluate(run)
        elif args.command == "compare":
            print(cmd_compare(run), end="")
    except GammaSSLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
