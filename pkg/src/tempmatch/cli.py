"""Command-line entry point: ``tempmatch {gen,train,eval,grid-temp,grad-analysis}``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or config error.
"""

import argparse
import json
import logging
import os
import sys

from .errors import ConfigError, NumericalError
from .synthdata import GenerationError, SynthConfig, generate_split
from .training import (
    ExperimentConfig,
    Model,
    TrainingDiverged,
    evaluate,
    grad_variants,
    gradient_analysis,
    grid_temperature,
    load_split,
    train,
)

log = logging.getLogger("tempmatch")


def _floats(text):
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}")


def _load_config(path, **overrides):
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            cfg = ExperimentConfig.load(path)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    kw = {k: v for k, v in overrides.items() if v is not None}
    if kw:
        cfg = ExperimentConfig.from_json({**cfg.to_json(), **kw})
    return cfg


def cmd_gen(args):
    synth = SynthConfig(size=args.size, warp_kind=args.warp)
    paths = generate_split(args.seed, args.n_train, args.n_val, args.n_test, synth, args.out,
                           inline=args.inline)
    for split, path in paths.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args):
    cfg = _load_config(args.config, seed=args.seed, epochs=args.epochs)
    train_pairs = load_split(args.data, "train", cfg.ratio, cfg.n_s, cfg.n_k)
    val_pairs = load_split(args.data, "val", cfg.ratio, cfg.n_s, cfg.n_k)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.csv")
    res = train(cfg, train_pairs, val_pairs, log_path=log_path)
    weights = os.path.join(args.out, "weights")
    res.model.save(weights)
    print(f"best epoch {res.best_epoch}: val PCK@{cfg.select_alpha} = {res.best_val:.4f} "
          f"(beta_eval {res.best_beta_eval:g})")
    print(f"weights: {weights}\nlog: {log_path}")
    return 0


def cmd_eval(args):
    try:
        model = Model.load(args.weights)
    except OSError as exc:
        raise ConfigError(f"cannot load weights from {args.weights}: {exc}") from exc
    cfg = model.config
    betas = args.beta_eval
    if betas is None:
        betas = cfg.eval_betas() if cfg.mode != "unit" else None
    if betas is None:
        raise ConfigError("unit-temperature weights need an explicit --beta-eval sweep")
    pairs = load_split(args.data, args.split, cfg.ratio, cfg.n_s, cfg.n_k)
    results, temps = evaluate(model, pairs, args.alphas, args.convention, betas,
                              sigma=args.sigma)
    if len(betas) == 1:
        doc = results[betas[0]].to_json()
        doc["beta_eval"] = float(betas[0])
    else:
        doc = {"sweep": {repr(float(b)): r.to_json() for b, r in results.items()}}
    doc["beta_trn_mean"] = float(temps.mean())
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    for b, r in results.items():
        summary = ", ".join(f"PCK@{a:g}={v:.4f}" for a, v in zip(r.alphas, r.per_alpha))
        print(f"beta_eval={b:g}: {summary}", file=sys.stderr)
    return 0


def cmd_grid_temp(args):
    cfg = _load_config(args.config, seed=args.seed, epochs=args.epochs)
    train_pairs = load_split(args.data, "train", cfg.ratio, cfg.n_s, cfg.n_k)
    val_pairs = load_split(args.data, "val", cfg.ratio, cfg.n_s, cfg.n_k)
    rows = grid_temperature(cfg, args.betas, train_pairs, val_pairs, args.out)
    for r in rows:
        print(f"beta={r['beta']:g} pck@0.1={r['pck_01']:.4f} {r['status']}")
    return 0


def cmd_grad_analysis(args):
    if args.configs and len(args.configs) == 3:
        labels = ("WithL2Norm", "NoL2Norm", "SimSC")
        configs = {lab: _load_config(p, seed=args.seed, epochs=args.epochs)
                   for lab, p in zip(labels, args.configs)}
    elif len(args.configs or []) <= 1:
        base = _load_config(args.configs[0] if args.configs else None, seed=args.seed,
                            epochs=args.epochs)
        configs = grad_variants(base)
    else:
        raise ConfigError("--configs takes one base config or three (WithL2Norm NoL2Norm SimSC)")
    first = next(iter(configs.values()))
    train_pairs = load_split(args.data, "train", first.ratio, first.n_s, first.n_k)
    val_pairs = load_split(args.data, "val", first.ratio, first.n_s, first.n_k)
    rows = gradient_analysis(configs, train_pairs, val_pairs, args.out)
    print(f"{len(rows)} gradient rows written to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tempmatch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic train/val/test split")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--n-train", type=int, default=512)
    g.add_argument("--n-val", type=int, default=64)
    g.add_argument("--n-test", type=int, default=64)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--warp", default="affine", choices=["affine", "thin", "mixed"])
    g.add_argument("--inline", action="store_true", help="embed images in the JSON files")
    g.set_defaults(func=cmd_gen)

    def run_flags(q, config_required=False):
        q.add_argument("--config", required=config_required)
        q.add_argument("--data", required=True)
        q.add_argument("--seed", type=int)
        q.add_argument("--epochs", type=int)

    t = sub.add_parser("train", help="fine-tune one model")
    run_flags(t)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PCK of saved weights")
    e.add_argument("--weights", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--alphas", type=_floats, default=[0.05, 0.1, 0.15])
    e.add_argument("--convention", default="img", choices=["img", "kps", "bbox"])
    e.add_argument("--beta-eval", type=_floats)
    e.add_argument("--sigma", type=float)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    gt = sub.add_parser("grid-temp", help="sweep manual training temperatures")
    run_flags(gt)
    gt.add_argument("--betas", type=_floats, default=[1.0, 0.3, 0.1, 0.03, 0.01])
    gt.add_argument("--out", default="grid_temp.csv")
    gt.set_defaults(func=cmd_grid_temp)

    ga = sub.add_parser("grad-analysis", help="log backbone gradients for three configurations")
    ga.add_argument("--configs", nargs="*")
    ga.add_argument("--data", required=True)
    ga.add_argument("--seed", type=int)
    ga.add_argument("--epochs", type=int)
    ga.add_argument("--out", default="grad_analysis.csv")
    ga.set_defaults(func=cmd_grad_analysis)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
