"""Command-line interface.

Subcommands: synth, preprocess, train-extractor, extract, baseline, cpc,
sweep, cv. Exit codes: 0 success, 1 usage or configuration error, 2 data
error, 3 numerical failure. Reports embed the full configuration and seed,
and identical invocations produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict

import numpy as np

from .classifiers import forest_spec, softmax_spec, svm_spec
from .cpc import (
    EXCLUDE_IN_FOLD,
    INCLUDE_ALL,
    SINGLE_FOLD,
    COMPLEMENT,
    CpcConfig,
    cpc_predict_many,
    train_cpc,
)
from .dataset import generate_two_regime, load_dataset, write_dataset
from .errors import ConfigError, DataError, NumericalError
from .harness import (
    ExtractorConfig,
    PipelineConfig,
    PreprocessConfig,
    cross_validate,
    evaluate,
    report_to_json,
    theta_sweep,
    write_report,
    write_sweep_curve,
)
from .mlp import (
    TrainConfig,
    build_mlp,
    extract_features,
    load_mlp,
    parse_arch,
    save_mlp,
    train,
)
from .preprocess import (
    apply_whitening,
    fit_zca,
    load_transform,
    normalize_samples,
    save_transform,
    standardize_columns,
)
from . import classifiers as clf_mod


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; this CLI reserves 2 for
    data errors, so usage problems are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _echo(args: argparse.Namespace) -> dict:
    skip = {"func"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _clf_spec(args) -> object:
    if args.clf == "softmax":
        return softmax_spec(
            learning_rate=args.lr,
            epochs=args.epochs,
            batch_size=args.batch,
            l2=args.l2,
            seed=args.seed,
        )
    if args.clf == "svm":
        return svm_spec(
            learning_rate=args.lr,
            epochs=args.epochs,
            batch_size=args.batch,
            l2=args.l2,
            seed=args.seed,
        )
    return forest_spec(
        tree_count=args.trees, max_depth=args.max_depth, seed=args.seed
    )


def _add_clf_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--clf", choices=["softmax", "svm", "forest"], default="softmax")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)


def _add_cpc_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--disc-k", type=int, default=25)
    p.add_argument(
        "--ease-mode", choices=[INCLUDE_ALL, EXCLUDE_IN_FOLD], default=INCLUDE_ALL
    )
    p.add_argument(
        "--fold-training", choices=[SINGLE_FOLD, COMPLEMENT], default=SINGLE_FOLD
    )


def _parse_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid {text!r} must look like start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid {text!r} has non-numeric parts") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"grid {text!r} needs step > 0 and stop >= start")
    out = []
    i = 0
    while True:
        v = round(start + i * step, 10)
        if v > stop + 1e-9:
            break
        out.append(v)
        i += 1
    return out


def _cpc_config(args, spec) -> CpcConfig:
    return CpcConfig(
        base_spec=spec,
        expert_spec=spec,
        k_folds=args.k_folds,
        repetitions=args.m,
        theta=getattr(args, "theta", 0.5),
        disc_k=args.disc_k,
        ease_mode=args.ease_mode,
        fold_training=args.fold_training,
        seed=args.seed,
    )


# handlers ----------------------------------------------------------------

def _cmd_synth(args) -> int:
    ds = generate_two_regime(
        args.n_easy,
        args.n_hard,
        args.classes,
        args.dim,
        args.easy_margin,
        args.hard_margin,
        seed=args.seed,
    )
    write_dataset(ds, args.out)
    return 0


def _cmd_preprocess(args) -> int:
    ds = load_dataset(args.input, has_header=args.has_header)
    if args.normalize:
        ds = normalize_samples(ds, args.eps_norm)
    if args.per_feature:
        ds = standardize_columns(ds, args.eps_norm)
    if args.transform_in:
        t = load_transform(args.transform_in)
        ds = apply_whitening(t, ds)
    elif args.zca:
        t = fit_zca(ds, args.epsilon)
        ds = apply_whitening(t, ds)
        if args.transform_out:
            save_transform(t, args.transform_out)
    write_dataset(ds, args.out)
    return 0


def _cmd_train_extractor(args) -> int:
    ds = load_dataset(args.input, has_header=args.has_header)
    input_dim, blocks, class_count = parse_arch(args.arch)
    if input_dim != ds.d:
        raise ConfigError(f"arch expects in:{input_dim} but data has d={ds.d}")
    if class_count < ds.class_count:
        raise ConfigError(
            f"arch head:{class_count} is narrower than {ds.class_count} classes"
        )
    model = build_mlp(
        input_dim,
        blocks,
        class_count,
        seed=args.seed,
        feature_tap=args.feature_tap,
    )
    cfg = TrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        dropout=args.dropout,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
    )
    model, trace = train(model, ds, cfg)
    save_mlp(model, args.model_out)
    if trace:
        print(f"final epoch loss {trace[-1]:.6f}")
    return 0


def _cmd_extract(args) -> int:
    model = load_mlp(args.model)
    ds = load_dataset(args.input, has_header=args.has_header)
    write_dataset(extract_features(model, ds), args.out)
    return 0


def _cmd_baseline(args) -> int:
    train_ds = load_dataset(args.train, has_header=args.has_header)
    test_ds = load_dataset(args.test, has_header=args.has_header)
    spec = _clf_spec(args)
    clf = clf_mod.fit(spec, train_ds)
    preds = clf.predict_many(test_ds.features)
    report = evaluate(
        preds,
        test_ds.labels,
        train_ds.class_count,
        config={**_echo(args), "spec": asdict(spec.hyperparams)},
        seed=args.seed,
    )
    write_report(report_to_json(report), args.report)
    print(f"accuracy {report.overall_accuracy:.4f}")
    return 0


def _cmd_cpc(args) -> int:
    train_ds = load_dataset(args.train, has_header=args.has_header)
    test_ds = load_dataset(args.test, has_header=args.has_header)
    spec = _clf_spec(args)
    cfg = _cpc_config(args, spec)
    model = train_cpc(train_ds, cfg)
    routed = cpc_predict_many(model, test_ds.features)
    preds = np.array([r.label for r in routed], dtype=np.int64)
    report = evaluate(
        preds,
        test_ds.labels,
        train_ds.class_count,
        routes=[r.route for r in routed],
        config={**_echo(args), "spec": asdict(spec.hyperparams)},
        seed=args.seed,
    )
    write_report(report_to_json(report), args.report)
    print(f"accuracy {report.overall_accuracy:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    train_ds = load_dataset(args.train, has_header=args.has_header)
    val_ds = load_dataset(args.val, has_header=args.has_header)
    spec = _clf_spec(args)
    cfg = _cpc_config(args, spec)
    grid = _parse_grid(args.grid)
    result = theta_sweep(train_ds, val_ds, grid, cfg)
    if args.curve_out:
        write_sweep_curve(result, args.curve_out)
    if args.report:
        write_report(
            {
                "thetas": result.thetas,
                "accuracies": result.accuracies,
                "baseline_accuracy": result.baseline_accuracy,
                "best_theta": result.best_theta,
                "config": {**_echo(args), "spec": asdict(spec.hyperparams)},
                "seed": args.seed,
            },
            args.report,
        )
    print(f"best theta {result.best_theta}")
    return 0


def _cmd_cv(args) -> int:
    ds = load_dataset(args.input, has_header=args.has_header)
    spec = _clf_spec(args)
    pipeline = PipelineConfig(
        mode=args.mode,
        spec=spec,
        cpc=_cpc_config(args, spec) if args.mode == "cpc" else None,
        preprocess=PreprocessConfig(
            normalize=args.normalize, zca=args.zca, epsilon=args.epsilon
        ),
        extractor=(
            ExtractorConfig(
                arch=args.arch,
                train=TrainConfig(epochs=args.extractor_epochs, seed=args.seed),
            )
            if args.arch
            else None
        ),
    )
    result = cross_validate(ds, pipeline, folds=args.folds, seed=args.seed)
    write_report(
        {
            "folds": [report_to_json(r) for r in result.fold_reports],
            "mean_accuracy": result.mean_accuracy,
            "std_accuracy": result.std_accuracy,
            "config": {**_echo(args), "spec": asdict(spec.hyperparams)},
            "seed": args.seed,
        },
        args.report,
    )
    print(f"mean accuracy {result.mean_accuracy:.4f} (+/- {result.std_accuracy:.4f})")
    return 0


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpckit", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate two-regime Gaussian data")
    p.add_argument("--n-easy", type=int, required=True)
    p.add_argument("--n-hard", type=int, required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--easy-margin", type=float, default=6.0)
    p.add_argument("--hard-margin", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("preprocess", help="normalize and whiten a dataset CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--per-feature", action="store_true")
    p.add_argument("--eps-norm", type=float, default=1e-8)
    p.add_argument("--zca", action="store_true")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--transform-in", default=None)
    p.add_argument("--transform-out", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train-extractor", help="train the residual MLP extractor")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--arch", required=True)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.5)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--feature-tap", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=_cmd_train_extractor)

    p = sub.add_parser("extract", help="export tap-layer features to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("baseline", help="train and score a single classifier")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--has-header", action="store_true")
    _add_clf_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("cpc", help="train and score the routed model")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--has-header", action="store_true")
    _add_clf_flags(p)
    _add_cpc_flags(p)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_cpc)

    p = sub.add_parser("sweep", help="validation sweep over the ease threshold")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--grid", default="0.0:1.0:0.1")
    _add_clf_flags(p)
    _add_cpc_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve-out", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("cv", help="k-fold cross-validation of a pipeline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--mode", choices=["baseline", "cpc"], default="baseline")
    _add_clf_flags(p)
    _add_cpc_flags(p)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--zca", action="store_true")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--arch", default=None)
    p.add_argument("--extractor-epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_cv)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 1
    try:
        return int(args.func(args) or 0)
    except ConfigError as e:
        print(f"cpckit: configuration error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"cpckit: data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"cpckit: data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"cpckit: numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
