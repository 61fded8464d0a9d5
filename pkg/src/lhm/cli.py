"""``lhm`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (missing or invalid
files), 3 numerical failure (empty intersection, solver or fine-tuning
divergence).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from lhm import verify
from lhm.data import DataError, Dataset, SynthSpec, gen_synthetic, load_csv, save_csv
from lhm.khhm import TrainConfig
from lhm.latent import (
    TrainTrace,
    assign,
    dumps_model,
    load_model,
    predict_value,
    train_lhm,
)
from lhm.metrics import accuracy, boundary_svg, eer, loss_curve_svg
from lhm.minimax import EmptyIntersectionError, QPConvergenceError
from lhm.netmap import (
    FinetuneConfig,
    NetSpec,
    dumps_net,
    finetune,
    forward,
    load_net,
    map_binary,
    map_multiclass,
    predict_classes,
)
from lhm.stats import estimate_gaussian

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None


def _load_data(path) -> Dataset:
    try:
        return load_csv(path)
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None


def _write(path, text):
    try:
        with open(path, "w", newline="") as f:
            f.write(text)
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None


def _load_model_file(path):
    try:
        return load_model(path)
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: not a valid model ({e})") from None


def _load_net_file(path):
    try:
        return load_net(path)
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: not a valid network ({e})") from None


# gen

def cmd_gen(args):
    try:
        spec = SynthSpec.from_dict(_read_json(args.spec))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, DataError):
            raise
        raise DataError(f"{args.spec}: invalid synthetic spec ({e})") from None
    if args.seed is not None:
        spec.seed = args.seed
    save_csv(gen_synthetic(spec), args.out)


# train

TRAIN_FLAGS = ("lam", "alpha", "learning_rate", "max_iters", "max_outer", "stop_tol", "seed", "init")


def _train_config(args) -> TrainConfig:
    base = _read_json(args.config) if args.config else {}
    if not isinstance(base, dict):
        raise DataError(f"{args.config}: config must be a JSON object")
    try:
        cfg = TrainConfig.from_dict(base)
    except (TypeError, ValueError) as e:
        raise DataError(f"{args.config}: {e}") from None
    overrides = {k: getattr(args, k) for k in TRAIN_FLAGS if getattr(args, k) is not None}
    if args.refine_stats:
        overrides["refine_stats"] = True
    if args.unit_norm:
        overrides["unit_norm"] = True
    try:
        return cfg.replace(**overrides)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _training_sets(args):
    if args.data:
        if args.pos or args.neg:
            raise UsageError("use either --data or --pos/--neg")
        ds = _load_data(args.data)
        is_pos = ds.labels == args.positive_label
        return ds.features[is_pos], ds.features[~is_pos]
    if not (args.pos and args.neg):
        raise UsageError("train needs --pos and --neg (or --data)")
    pos, neg = _load_data(args.pos), _load_data(args.neg)
    if pos.dim != neg.dim:
        raise DataError("positive and negative files differ in dimension")
    return pos.features, neg.features


def cmd_train(args):
    cfg = _train_config(args)
    X_pos, X_neg = _training_sets(args)
    if X_pos.shape[0] < args.C:
        raise DataError(f"need at least C={args.C} positives, got {X_pos.shape[0]}")
    if X_neg.shape[0] < 2:
        raise DataError("need at least two negatives")
    model, assignment, trace = train_lhm(X_pos, X_neg, args.C, args.K, cfg, jobs=args.jobs)
    _write(args.out, dumps_model(model))
    if args.trace:
        _write(args.trace, trace.to_csv())
    if args.assignment:
        _write(args.assignment, "".join(f"{int(v)}\n" for v in assignment.labels))
    print(f"trained C={model.C} K={model.K}: {trace.final_iteration} iterations, "
          f"final risk {trace.risks[-1]!r} ({trace.stop_reason})", file=sys.stderr)


# eval

def _binary_truth(labels):
    if not set(np.unique(labels).tolist()) <= {-1, 1}:
        raise DataError("binary evaluation needs labels in {-1, +1}")
    return labels


def cmd_eval(args):
    ds = _load_data(args.data)
    doc = _read_json(args.model)
    if isinstance(doc, dict) and "layers" in doc:
        net = _load_net_file(args.model)
        if net.input_dim != ds.dim:
            raise DataError("network and data differ in dimension")
        if args.metric == "eer":
            out = net_binary_scores(net, ds.features)
            value = eer(out, _binary_truth(ds.labels))
        else:
            pred = predict_classes(net, ds.features)
            if net.output_count == 2 and set(np.unique(ds.labels).tolist()) <= {-1, 1}:
                pred = np.where(pred == 1, 1, -1)
            value = accuracy(pred, ds.labels)
    else:
        model = _load_model_file(args.model)
        if model.dim != ds.dim:
            raise DataError("model and data differ in dimension")
        scores = predict_value(model, ds.features)
        truth = _binary_truth(ds.labels)
        if args.metric == "eer":
            value = eer(scores, truth)
        else:
            value = accuracy(np.where(scores >= 0, 1, -1), truth)
    print(repr(float(value)))


def net_binary_scores(net: NetSpec, X):
    """Score of the first (positive) output over the second."""
    if net.output_count != 2:
        raise DataError("EER needs a two-output network")
    out = np.atleast_2d(forward(net, X))
    return out[:, 0] - out[:, 1]


# map

def cmd_map(args):
    paths = [p for p in args.models.split(",") if p]
    if not paths:
        raise UsageError("--models needs at least one path")
    models = [_load_model_file(p) for p in paths]
    if args.binary:
        if len(models) != 1:
            raise UsageError("--binary maps exactly one model")
        net = map_binary(models[0])
    else:
        try:
            net = map_multiclass(models, args.noise_sigma, args.seed)
        except ValueError as e:
            raise DataError(str(e)) from None
    _write(args.out, dumps_net(net))


# finetune

FT_FLAGS = ("epochs", "batch_size", "beta", "seed")


def cmd_finetune(args):
    base = _read_json(args.config) if args.config else {}
    if not isinstance(base, dict):
        raise DataError(f"{args.config}: config must be a JSON object")
    try:
        cfg = FinetuneConfig(**base)
    except (TypeError, ValueError) as e:
        raise DataError(f"{args.config}: {e}") from None
    overrides = {k: getattr(args, k) for k in FT_FLAGS if getattr(args, k) is not None}
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.freeze_logic_layers:
        overrides["freeze_logic_layers"] = True
    try:
        cfg = replace(cfg, **overrides)
    except ValueError as e:
        raise UsageError(str(e)) from None
    net = _load_net_file(args.net)
    ds = _load_data(args.train)
    if ds.dim != net.input_dim:
        raise DataError("network and data differ in dimension")
    labels = ds.labels
    if set(np.unique(labels).tolist()) <= {-1, 1} and net.output_count == 2:
        labels = np.where(labels == 1, 1, 2)
    if labels.min() < 1 or labels.max() > net.output_count:
        raise DataError(f"labels must lie in 1..{net.output_count}")
    tuned, losses = finetune(net, ds.features, labels, cfg)
    _write(args.out, dumps_net(tuned))
    if args.losses:
        _write(args.losses, "epoch,loss\n" + "".join(f"{k + 1},{v!r}\n" for k, v in enumerate(losses)))


# verify

def cmd_verify(args):
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        kw = {"seed": args.seed}
        if args.count is not None:
            kw["count"] = args.count
        res = verify.SUITES[name](**kw)
        print(res.summary())
        ok &= res.passed
    return EXIT_OK if ok else 1


# plot

def cmd_plot(args):
    if args.trace:
        if args.model or args.data:
            raise UsageError("use either --trace or --model/--data")
        try:
            with open(args.trace) as f:
                trace = TrainTrace.from_csv(f.read())
        except OSError as e:
            raise DataError(f"{args.trace}: {e.strerror}") from None
        except (ValueError, IndexError) as e:
            raise DataError(f"{args.trace}: invalid trace ({e})") from None
        svg = loss_curve_svg(trace.risks)
    else:
        if not (args.model and args.data):
            raise UsageError("plot needs --trace, or --model with --data")
        model = _load_model_file(args.model)
        ds = _load_data(args.data)
        if ds.dim != 2 or model.dim != 2:
            raise DataError("boundary plots need 2-D data and a 2-D model")
        labels = np.where(ds.labels == args.positive_label, 1, -1)
        pos = ds.features[labels == 1]
        parts = None
        if pos.shape[0] and model.C > 1:
            stats = estimate_gaussian(ds.features[labels == -1]) if np.sum(labels == -1) >= 2 else None
            if stats is not None:
                cfg = TrainConfig(lam=model.meta.get("lambda", 1.0), alpha=model.meta.get("alpha", 1.0))
                parts = np.array([assign(x, model, stats, cfg) for x in pos], dtype=int)
        svg = boundary_svg(model, ds.features, labels, parts)
    _write(args.out, svg)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lhm", description="Latent hinge-minimax classifiers and their network mapping.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--spec", required=True, help="JSON synthetic spec")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, help="override the spec's seed")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train an LHM model")
    t.add_argument("--pos", help="CSV of positive samples (labels ignored)")
    t.add_argument("--neg", help="CSV of negative samples (labels ignored)")
    t.add_argument("--data", help="single labelled CSV instead of --pos/--neg")
    t.add_argument("--positive-label", type=int, default=1, help="label treated as positive with --data")
    t.add_argument("-C", type=int, required=True, help="number of components")
    t.add_argument("-K", type=int, required=True, help="hyperplanes per component")
    t.add_argument("--config", help="JSON TrainConfig; flags override it")
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--max-iters", dest="max_iters", type=int)
    t.add_argument("--max-outer", dest="max_outer", type=int)
    t.add_argument("--stop-tol", dest="stop_tol", type=float)
    t.add_argument("--init", choices=["kmeans", "random"])
    t.add_argument("--seed", type=int)
    t.add_argument("--refine-stats", action="store_true")
    t.add_argument("--unit-norm", action="store_true")
    t.add_argument("--jobs", type=int, default=1, help="threads for the per-component model step")
    t.add_argument("--out", required=True)
    t.add_argument("--trace", help="write iter,risk,reassigned CSV")
    t.add_argument("--assignment", help="write one component index per positive")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model or network")
    e.add_argument("--model", required=True, help="LHM model or network JSON")
    e.add_argument("--data", required=True)
    e.add_argument("--metric", choices=["eer", "accuracy"], default="eer")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("map", help="compile LHM models into a network")
    m.add_argument("--models", required=True, help="comma-separated model files, one per class")
    m.add_argument("--out", required=True)
    m.add_argument("--binary", action="store_true", help="two-output AND/OR network for one model")
    m.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.01)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_map)

    f = sub.add_parser("finetune", help="fine-tune a mapped network with cross-entropy")
    f.add_argument("--net", required=True)
    f.add_argument("--train", required=True, help="labelled CSV (labels 1..C, or +-1 for binary nets)")
    f.add_argument("--config", help="JSON FinetuneConfig; flags override it")
    f.add_argument("--epochs", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--batch-size", dest="batch_size", type=int)
    f.add_argument("--beta", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--freeze-logic-layers", action="store_true")
    f.add_argument("--out", required=True)
    f.add_argument("--losses", help="write epoch,loss CSV")
    f.set_defaults(func=cmd_finetune)

    v = sub.add_parser("verify", help="run oracle verification suites")
    v.add_argument("--suite", choices=["all", *verify.SUITES], default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--count", type=int, help="instances per suite (suite default otherwise)")
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="SVG of decision regions or of a loss trace")
    pl.add_argument("--model")
    pl.add_argument("--data")
    pl.add_argument("--positive-label", type=int, default=1)
    pl.add_argument("--trace")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"lhm: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (EmptyIntersectionError, QPConvergenceError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"lhm: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError) as e:
        print(f"lhm: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
