"""Command-line entry point: ``dgpfm {generate,train,eval,predict}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure,
4 IO or file-format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np
import torch

from . import baselines, checkpoint
from . import data as D
from .inference import Learner, NoiseSource, TrainConfig, TrainingAborted, evaluate, predict, train, write_history
from .kernels import NumericalFailure
from .metrics import report
from .model import DGPFM, ModelConfig
from .quadrature import RULE_KINDS, make_rule, tensor_grid

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
TASKS = ("antiderivative", "burgers1d", "poisson2d")
MODEL_KINDS = ("dgpfm", "flr_gp", "flr_fourier")


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------


@dataclass
class GeneratorSpec:
    task: str = "antiderivative"
    n: int = 250
    grid: int = 128
    seed: int = 0
    keep_in: float = 1.0
    keep_out: float = 1.0
    noise_sd: float = 0.0
    independent_masks: bool = True
    nu: float = 0.1


@dataclass
class DataSection:
    path: str | None = None  # DGFM file; when null the generator spec is used
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    n_train: int | None = None  # first n_train instances train, the rest validate; null: all train
    test_path: str | None = None  # optional separate validation file


@dataclass
class GridSection:
    rules: list[str] = field(default_factory=lambda: ["gauss_legendre"])  # one per dimension
    nodes: list[int] = field(default_factory=lambda: [64])
    intervals: list[list[float]] | None = None  # default [0, 1] per dimension


@dataclass
class FlrSection:
    K: int = 33
    L: int = 17
    lam: float = 0.1
    curvature: bool = False


@dataclass
class ModelSection:
    kind: str = "dgpfm"
    config: dict = field(default_factory=dict)  # ModelConfig fields; d, d_in, d_out come from the data
    flr: FlrSection = field(default_factory=FlrSection)


@dataclass
class EvalSection:
    samples: int = 128
    include_noise: bool = True
    moment_matched: bool = False
    seed: int = 1
    levels: list[float] = field(default_factory=lambda: [0.68, 0.95])


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: dict = field(default_factory=dict)  # TrainConfig fields
    eval: EvalSection = field(default_factory=EvalSection)
    output: str = "run"


def _strict(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise UsageError(f"{where}: expected an object")
    unknown = sorted(set(raw) - {f.name for f in fields(cls)})
    if unknown:
        raise UsageError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in raw.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _strict(sub, value, f"{where}.{name}") if sub is not None else value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "data"): DataSection, (RunConfig, "grid"): GridSection, (RunConfig, "model"): ModelSection,
    (RunConfig, "eval"): EvalSection, (DataSection, "generator"): GeneratorSpec, (ModelSection, "flr"): FlrSection,
}


def _check_fields(cls, raw: dict, where: str) -> None:
    unknown = sorted(set(raw) - {f.name for f in fields(cls)})
    if unknown:
        raise UsageError(f"{where}: unknown keys {unknown}")


def parse_run_config(text: str) -> RunConfig:
    """Parse a JSON run configuration; unknown keys anywhere are an error."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    cfg = _strict(RunConfig, raw, "config")
    _check_fields(ModelConfig, cfg.model.config, "config.model.config")
    for key in ("d", "d_in", "d_out"):
        if key in cfg.model.config:
            raise UsageError(f"config.model.config.{key} is taken from the data")
    _check_fields(TrainConfig, cfg.train, "config.train")
    if cfg.model.kind not in MODEL_KINDS:
        raise UsageError(f"config.model.kind must be one of {MODEL_KINDS}")
    if cfg.data.generator.task not in TASKS:
        raise UsageError(f"config.data.generator.task must be one of {TASKS}")
    if len(cfg.grid.rules) != len(cfg.grid.nodes):
        raise UsageError("config.grid.rules and config.grid.nodes differ in length")
    for kind in cfg.grid.rules:
        if kind not in RULE_KINDS:
            raise UsageError(f"unknown quadrature rule {kind!r}")
    try:
        TrainConfig(**cfg.train).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config.train: {exc}") from exc
    return cfg


def default_config_json() -> str:
    return json.dumps(asdict(RunConfig()), indent=2)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def generate_dataset(spec: GeneratorSpec) -> D.Dataset:
    if spec.task == "antiderivative":
        ds = D.gen_antiderivative(spec.n, spec.grid, seed=spec.seed)
    elif spec.task == "burgers1d":
        ds = D.gen_burgers_1d(spec.n, spec.grid, nu=spec.nu, seed=spec.seed)
    elif spec.task == "poisson2d":
        ds = D.gen_poisson_2d(spec.n, spec.grid, seed=spec.seed)
    else:
        raise UsageError(f"unknown task {spec.task!r}")
    if spec.keep_in < 1.0 or spec.keep_out < 1.0 or spec.noise_sd > 0.0:
        ds = D.corrupt(ds, spec.keep_in, spec.keep_out, spec.noise_sd, spec.independent_masks, seed=spec.seed + 1)
    return ds


def cmd_generate(args) -> int:
    if args.nu is not None and args.task != "burgers1d":
        raise UsageError("--nu only applies to --task burgers1d")
    for name in ("keep_in", "keep_out"):
        if not 0.0 < getattr(args, name) <= 1.0:
            raise UsageError(f"--{name.replace('_', '-')} must lie in (0, 1]")
    if args.noise_sd < 0:
        raise UsageError("--noise-sd must be non-negative")
    spec = GeneratorSpec(args.task, args.n, args.grid, args.seed, args.keep_in, args.keep_out, args.noise_sd,
                         not args.shared_masks, 0.1 if args.nu is None else args.nu)
    D.save(generate_dataset(spec), args.out)
    return EXIT_OK


def _load_data(cfg: RunConfig) -> tuple[D.Dataset, D.Dataset | None]:
    ds = D.load(cfg.data.path) if cfg.data.path else generate_dataset(cfg.data.generator)
    val = D.load(cfg.data.test_path) if cfg.data.test_path else None
    if cfg.data.n_train is not None:
        if not 0 < cfg.data.n_train <= len(ds):
            raise UsageError("config.data.n_train out of range")
        ds, rest = ds.split(cfg.data.n_train)
        if val is None and len(rest):
            val = rest
    return ds, val


def _grid(cfg: RunConfig, d: int):
    if len(cfg.grid.rules) != d:
        raise UsageError(f"config.grid lists {len(cfg.grid.rules)} dimensions but the data have {d}")
    intervals = cfg.grid.intervals or [[0.0, 1.0]] * d
    return tensor_grid([make_rule(k, n, *iv) for k, n, iv in zip(cfg.grid.rules, cfg.grid.nodes, intervals)])


def cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        text = fh.read()
    cfg = parse_run_config(text)
    out = args.out or cfg.output
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(text)
    raw_train, raw_val = _load_data(cfg)
    norm = D.Normalizer.fit(raw_train)
    trn = norm.apply_dataset(raw_train)
    val = norm.apply_dataset(raw_val) if raw_val is not None else None
    if cfg.model.kind == "flr_fourier":
        f = cfg.model.flr
        model = baselines.flr_fit(trn, f.K, f.L, f.lam, f.curvature)
        rep = baselines.flr_evaluate(model, trn, norm, cfg.eval.levels)
        extra = {"train_nrmse": rep.mean_nrmse}
        checkpoint.save_flr(os.path.join(out, "final.ckpt"), model, norm, extra)
        checkpoint.save_flr(os.path.join(out, "best.ckpt"), model, norm, extra)
        write_history([], os.path.join(out, "history.csv"))
        return EXIT_OK
    mcfg = ModelConfig(**cfg.model.config)
    if cfg.model.kind == "flr_gp":
        mcfg = baselines.flr_gp_config(mcfg)
    mcfg = replace(mcfg, d=trn.d, d_in=trn.d_in, d_out=trn.d_out)
    try:
        mcfg.validate()
        learner = Learner(DGPFM(mcfg, _grid(cfg, trn.d)))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    tcfg = TrainConfig(**cfg.train)
    try:
        result = train(learner, trn, tcfg, val=val, norm=norm)
    except TrainingAborted as exc:
        write_history(exc.history, os.path.join(out, "history.csv"))
        checkpoint.save_learner(os.path.join(out, "final.ckpt"), learner, norm, {"aborted": str(exc)})
        raise
    write_history(result.history, os.path.join(out, "history.csv"))
    rep = evaluate(learner, trn, norm, cfg.eval.samples, NoiseSource(cfg.eval.seed), cfg.eval.include_noise,
                   cfg.eval.levels)
    extra = {"train_nrmse": rep.mean_nrmse, "eval_samples": cfg.eval.samples, "eval_seed": cfg.eval.seed,
             "best_epoch": result.best_epoch}
    checkpoint.save_learner(os.path.join(out, "final.ckpt"), learner, norm, extra)
    learner.load_state_dict(result.best_state)
    checkpoint.save_learner(os.path.join(out, "best.ckpt"), learner, norm, {"best_epoch": result.best_epoch})
    return EXIT_OK


def _load_any(path):
    kind = checkpoint.checkpoint_kind(path)
    if kind == "dgpfm":
        return kind, *checkpoint.load_learner(path)
    if kind == "flr_fourier":
        return kind, *checkpoint.load_flr(path)
    raise D.FormatError(f"unknown checkpoint kind {kind!r}", 0)


def cmd_eval(args) -> int:
    if args.samples < 2:
        raise UsageError("--samples must be >= 2")
    kind, model, norm, _ = _load_any(args.checkpoint)
    ds = norm.apply_dataset(D.load(args.data))
    if kind == "dgpfm":
        rep = evaluate(model, ds, norm, args.samples, NoiseSource(args.seed), not args.no_noise)
    else:
        preds = [baselines.flr_summary(model, p).denormalize(norm) for p in ds.instances]
        rep = report(preds, [norm.y_inverse(p.y_out) for p in ds.instances], include_noise=not args.no_noise)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(rep.to_json())
    rep.write_csv(os.path.join(args.out, "report.csv"))
    print(f"nrmse {rep.mean_nrmse:.6g} mnll {rep.mean_nll:.6g} coverage {json.dumps(rep.coverage)}")
    return EXIT_OK


def write_prediction_csv(path, x: np.ndarray, truth: np.ndarray | None, mean: np.ndarray, sd: np.ndarray) -> None:
    d = x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] + ["component", "truth", "pred_mean", "pred_sd"])
        for i in range(mean.shape[1]):
            for n in range(mean.shape[0]):
                t = repr(float(truth[n, i])) if truth is not None else ""
                w.writerow([repr(float(v)) for v in x[n]] + [i + 1, t, repr(float(mean[n, i])), repr(float(sd[n, i]))])


def cmd_predict(args) -> int:
    if args.samples < 2:
        raise UsageError("--samples must be >= 2")
    kind, model, norm, _ = _load_any(args.checkpoint)
    raw = D.load(args.data)
    ds = norm.apply_dataset(raw)
    os.makedirs(args.out, exist_ok=True)
    for i, (pair, raw_pair) in enumerate(zip(ds.instances, raw.instances)):
        if kind == "dgpfm":
            s = predict(model, pair, args.samples, NoiseSource(args.seed), instance_id=i,
                        add_noise=not args.no_noise_in_sd)
        else:
            s = baselines.flr_summary(model, pair)
            if args.no_noise_in_sd:
                s.sd = np.zeros_like(s.mean)
        s = s.denormalize(norm)
        write_prediction_csv(os.path.join(args.out, f"instance_{i:04d}.csv"), raw_pair.x_out, raw_pair.y_out, s.mean, s.sd)
    return EXIT_OK


def cmd_config(args) -> int:
    print(default_config_json())
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="dgpfm", description="Deep GP functional maps: data, training and evaluation.",
                formatter_class=fmt)
    p.add_argument("--threads", type=int, default=1, help="intra-op threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="synthesize a benchmark dataset", formatter_class=fmt)
    g.add_argument("--task", choices=TASKS, required=True, help="operator to sample")
    g.add_argument("--n", type=int, default=100, help="number of instances")
    g.add_argument("--grid", type=int, default=128, help="grid points per dimension")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--keep-in", type=float, default=1.0, help="fraction of input locations kept")
    g.add_argument("--keep-out", type=float, default=1.0, help="fraction of output locations kept")
    g.add_argument("--noise-sd", type=float, default=0.0, help="Gaussian noise added to input values")
    g.add_argument("--shared-masks", action="store_true", default=False,
                   help="use one location subset for input and output")
    g.add_argument("--nu", type=float, default=None, help="Burgers viscosity (burgers1d only; 0.1 when unset)")
    g.add_argument("--out", required=True, help="output DGFM file")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model from a JSON run configuration", formatter_class=fmt)
    t.add_argument("config", help="JSON run configuration")
    t.add_argument("--out", default=None, help="output directory (overrides the config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset", formatter_class=fmt)
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="DGFM dataset file")
    e.add_argument("--samples", type=int, default=128, help="predictive samples per instance")
    e.add_argument("--seed", type=int, default=1, help="prediction noise seed")
    e.add_argument("--no-noise", action="store_true", default=False,
                   help="leave observation noise out of MNLL and coverage")
    e.add_argument("--out", default="eval", help="output directory for report.json and report.csv")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="write per-instance prediction CSVs", formatter_class=fmt)
    r.add_argument("--checkpoint", required=True, help="checkpoint file")
    r.add_argument("--data", required=True, help="DGFM dataset file")
    r.add_argument("--samples", type=int, default=128, help="predictive samples per instance")
    r.add_argument("--seed", type=int, default=1, help="prediction noise seed")
    r.add_argument("--no-noise-in-sd", action="store_true", default=False,
                   help="report the sample standard deviation without the observation noise")
    r.add_argument("--out", default="predictions", help="output directory")
    r.set_defaults(func=cmd_predict)

    c = sub.add_parser("config", help="print the default run configuration", formatter_class=fmt)
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        torch.set_num_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (D.FormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
