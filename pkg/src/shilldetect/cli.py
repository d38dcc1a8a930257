"""Command-line entry point for reproducible batch runs.

Subcommands: stats, inject, features, train, eval, grid, ablation.
Exit codes: 0 success, 1 usage error, 2 data/validation error.  Progress and
diagnostics go to stderr; data outputs stay machine-clean.  Every output file
carries the seed and resolved parameters needed to regenerate it, either as
``#`` header comments or a sidecar ``.manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import attack_models as am
from . import harness as hn
from .attack_models import (ALL_MODELS, AttackConfig, AttackIntent,
                            AttackParams, LabeledDataset, dump_labels,
                            inject_profiles, load_labels)
from .dataset import (ParseError, ValidationError, dump_ratings, global_stats,
                      load_ratings)
from .features import FeatureSubset, FeatureTable, extract_all
from .learners import (TrainConfig, adaboost_train, knn_train, load_model,
                       radaboost_train, save_model, select_hyperparams)

DATA_ENV = "SHILLDETECT_DATA"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract here is exit 1
    def error(self, message):
        raise _UsageError(message)


def _data_path(value: str | None) -> Path:
    if value:
        return Path(value)
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    raise ValidationError(
        f"no data file given; pass --data or set ${DATA_ENV}")


def _load_labeled(data, labels) -> LabeledDataset:
    matrix = load_ratings(_data_path(data))
    if labels:
        return LabeledDataset(matrix, load_labels(labels))
    return LabeledDataset(matrix, {int(u): 0 for u in matrix.user_ids})


def _intent(name: str) -> AttackIntent:
    return AttackIntent.NUKE if name == "nuke" else AttackIntent.PUSH


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def _parse_models(text: str) -> tuple[str, ...]:
    if text == "all":
        return ALL_MODELS
    models = tuple(x for x in text.split(",") if x)
    for m in models:
        if m not in ALL_MODELS:
            raise ValidationError(
                f"unknown model {m!r}; choose from {', '.join(ALL_MODELS)}")
    return models


def build_parser() -> _Parser:
    parser = _Parser(prog="shilldetect",
                     description="Shilling-attack detection workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="summarize a ratings file")
    p.add_argument("--data", help=f"ratings file (default ${DATA_ENV})")

    p = sub.add_parser("inject", help="generate one attack and write the dataset")
    p.add_argument("--data")
    p.add_argument("--model", required=True, choices=ALL_MODELS)
    p.add_argument("--intent", choices=("nuke", "push"), default="nuke")
    p.add_argument("--attack-size", type=float, required=True,
                   help="attackers / genuine users, e.g. 0.17")
    p.add_argument("--filler-size", type=float, required=True,
                   help="filler items / total items, e.g. 0.103")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--aop-top-fraction", type=float, default=None)
    p.add_argument("--out", required=True, help="output ratings file")
    p.add_argument("--labels-out", help="label sidecar (default <out>.labels)")

    p = sub.add_parser("features", help="extract the detection feature table")
    p.add_argument("--data")
    p.add_argument("--labels")
    p.add_argument("--subset", type=int, choices=(10, 15, 18), default=18)
    p.add_argument("--mode", choices=("nuke", "push"), default="nuke")
    p.add_argument("--k-popular", type=int, default=None,
                   help="popular/unpopular boundary (default 10%% of items)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit a classifier on a feature table")
    p.add_argument("--features", required=True, help="feature CSV from `features`")
    p.add_argument("--algorithm", required=True,
                   choices=("adaboost", "radaboost", "knn"))
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--shrink-u", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--cv", action="store_true",
                   help="pick hyperparameters by 5-fold cross validation")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="apply a model to a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--labels", required=True)

    p = sub.add_parser("grid", help="run the attack-size x filler-size grid")
    p.add_argument("--data")
    p.add_argument("--models", default="all")
    p.add_argument("--attack-sizes", default=",".join(map(str, hn.ATTACK_SIZES)))
    p.add_argument("--filler-sizes", default=",".join(map(str, hn.FILLER_SIZES)))
    p.add_argument("--classifiers", default="adaboost,knn,radaboost")
    p.add_argument("--subset", type=int, choices=(10, 15, 18), default=18)
    p.add_argument("--seed", type=int, default=hn.DEFAULT_MASTER_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cv", action="store_true")
    p.add_argument("--record-runtime", action="store_true",
                   help="keep wall-clock times (breaks byte-reproducibility)")
    p.add_argument("--surfaces", help="also write 6x6 surface files here")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablation", help="feature-subset study on a grid slice")
    p.add_argument("--data")
    p.add_argument("--models", default="bandwagon_average")
    p.add_argument("--attack-sizes", default="0.17")
    p.add_argument("--filler-sizes", default=",".join(map(str, hn.FILLER_SIZES)))
    p.add_argument("--subsets", default="10,15,18")
    p.add_argument("--classifier", default="radaboost",
                   choices=("adaboost", "radaboost", "knn"))
    p.add_argument("--seed", type=int, default=hn.DEFAULT_MASTER_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    return parser


def _cmd_stats(args) -> int:
    matrix = load_ratings(_data_path(args.data))
    gs = global_stats(matrix)
    print(f"users={matrix.n_users} items={matrix.n_items} "
          f"ratings={matrix.n_ratings}")
    print(f"mean_rating={gs.mean:.4f} sigma={gs.sigma:.4f} "
          f"sparsity={gs.sparsity:.4f} mean_profile_len={gs.mean_profile_len:.2f}")
    return 0


def _cmd_inject(args) -> int:
    matrix = load_ratings(_data_path(args.data))
    params = hn.default_attack_params(matrix)
    if args.aop_top_fraction is not None:
        params = AttackParams(
            aop_top_fraction=args.aop_top_fraction,
            popular_item_ids=params.popular_item_ids,
            segment_item_ids=params.segment_item_ids)
    config = AttackConfig(model=args.model, intent=_intent(args.intent),
                          attack_size=args.attack_size,
                          filler_size=args.filler_size, seed=args.seed,
                          params=params)
    dataset = inject_profiles(matrix, am.generate(config, matrix))
    out = Path(args.out)
    dump_ratings(dataset.matrix, out)
    labels_out = Path(args.labels_out) if args.labels_out else out.with_suffix(
        out.suffix + ".labels")
    dump_labels(dataset.labels, labels_out)
    manifest = {
        "command": "inject", "model": args.model, "intent": args.intent,
        "attack_size": args.attack_size, "filler_size": args.filler_size,
        "seed": args.seed, "attackers": sum(dataset.labels.values()),
        "labels_file": labels_out.name,
    }
    out.with_suffix(out.suffix + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out} (+labels, +manifest): "
          f"{dataset.matrix.n_users} users, "
          f"{sum(dataset.labels.values())} attackers", file=sys.stderr)
    return 0


def _cmd_features(args) -> int:
    dataset = _load_labeled(args.data, args.labels)
    table = extract_all(dataset, FeatureSubset.from_size(args.subset),
                        _intent(args.mode), args.k_popular)
    manifest = {"command": "features", "subset": args.subset,
                "mode": args.mode, "k_popular": args.k_popular or "default"}
    table.save(args.out, manifest)
    print(f"wrote {args.out}: {len(table.user_ids)} rows x "
          f"{len(table.columns)} features", file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    table = FeatureTable.from_csv(args.features)
    X, y = table.values, table.signed_labels()
    meta = {"algorithm": args.algorithm, "feature_subset": len(table.columns),
            "features_ref": Path(args.features).name}
    if args.algorithm == "knn":
        k = args.k
        if args.cv or k is None:
            k = select_hyperparams(X, y, "knn") if args.cv else hn.DEFAULT_KNN_K
        model = knn_train(X, y, k)
        meta["k"] = k
    else:
        if args.cv:
            config = select_hyperparams(X, y, args.algorithm)
        else:
            base = (hn.DEFAULT_RADABOOST if args.algorithm == "radaboost"
                    else hn.DEFAULT_ADABOOST)
            config = TrainConfig(
                max_rounds=args.rounds or base.max_rounds,
                u=args.shrink_u or base.u)
        trainer = radaboost_train if args.algorithm == "radaboost" else adaboost_train
        model = trainer(X, y, config)
        meta.update(rounds=config.max_rounds, u=config.u)
    save_model(model, args.out, meta)
    print(f"wrote {args.out}", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    model, meta = load_model(args.model)
    dataset = _load_labeled(args.data, args.labels)
    subset = FeatureSubset.from_size(int(meta.get("feature_subset", 18)))
    mode = _intent(meta.get("mode", "nuke"))
    table = extract_all(dataset, subset, mode)
    predictions = hn.predict_labels(model, table)
    counts, metrics = hn.compute_metrics(table.signed_labels(), predictions)
    print(f"classification_error={metrics.classification_error:.6f} "
          f"detection_rate={metrics.detection_rate:.6f} "
          f"false_alarm_rate={metrics.false_alarm_rate:.6f}")
    print(f"tp={counts.tp} fp={counts.fp} tn={counts.tn} fn={counts.fn}")
    return 0


def _progress(cell, secs, err):
    model, a, f, _ = cell
    status = f"ERROR {err}" if err is not None else f"{secs:.1f}s"
    print(f"cell {model} attack={a} filler={f}: {status}", file=sys.stderr)


def _cmd_grid(args) -> int:
    genuine = load_ratings(_data_path(args.data))
    grid = hn.ExperimentGrid(models=_parse_models(args.models),
                             attack_sizes=_float_list(args.attack_sizes),
                             filler_sizes=_float_list(args.filler_sizes),
                             master_seed=args.seed)
    subset = FeatureSubset.from_size(args.subset)
    train_ds = hn.build_training_set(genuine,
                                     hn.derive_seed(args.seed, "training-set"))
    train_table = extract_all(train_ds, subset)
    names = tuple(x for x in args.classifiers.split(",") if x)
    if args.cv:
        X, y = train_table.values, train_table.signed_labels()
        classifiers = hn.train_classifiers(
            train_table, names,
            adaboost_config=(select_hyperparams(X, y, "adaboost")
                             if "adaboost" in names else hn.DEFAULT_ADABOOST),
            radaboost_config=(select_hyperparams(X, y, "radaboost")
                              if "radaboost" in names else hn.DEFAULT_RADABOOST),
            knn_k=(select_hyperparams(X, y, "knn")
                   if "knn" in names else hn.DEFAULT_KNN_K))
    else:
        classifiers = hn.train_classifiers(train_table, names)
    report = hn.run_grid(genuine, grid, classifiers, subset, jobs=args.jobs,
                         progress=_progress)
    manifest = {"command": "grid", "models": ",".join(grid.models),
                "attack_sizes": args.attack_sizes,
                "filler_sizes": args.filler_sizes,
                "classifiers": ",".join(names), "subset": args.subset,
                "master_seed": args.seed}
    hn.write_report(report, args.out, manifest,
                    runtime="recorded" if args.record_runtime else "zero")
    if args.surfaces:
        hn.export_surfaces(report, args.surfaces)
    print(f"wrote {args.out}: {len(report.rows)} rows", file=sys.stderr)
    return 0


def _cmd_ablation(args) -> int:
    genuine = load_ratings(_data_path(args.data))
    grid = hn.ExperimentGrid(models=_parse_models(args.models),
                             attack_sizes=_float_list(args.attack_sizes),
                             filler_sizes=_float_list(args.filler_sizes),
                             master_seed=args.seed)
    subsets = tuple(FeatureSubset.from_size(int(s))
                    for s in args.subsets.split(",") if s)
    report = hn.feature_ablation(genuine, grid, subsets, args.classifier,
                                 jobs=args.jobs, progress=_progress)
    manifest = {"command": "ablation", "models": ",".join(grid.models),
                "attack_sizes": args.attack_sizes,
                "filler_sizes": args.filler_sizes,
                "subsets": args.subsets, "classifier": args.classifier,
                "master_seed": args.seed}
    hn.write_report(report, args.out, manifest)
    print(f"wrote {args.out}: {len(report.rows)} rows", file=sys.stderr)
    return 0


_COMMANDS = {
    "stats": _cmd_stats,
    "inject": _cmd_inject,
    "features": _cmd_features,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "grid": _cmd_grid,
    "ablation": _cmd_ablation,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
