"""Command-line interface.

Subcommands cover the full workflow: generate a synthetic dataset, train a
model, evaluate a checkpoint, benchmark attention cost, verify gradients,
run a random hyperparameter search, and execute a manifest-driven
experiment.  Every subcommand takes an explicit ``--seed`` and equal seeds
reproduce equal outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from functools import partial

from .attention import init_imab, init_mab, imab, mab
from .data import (
    SAMPLERS,
    build_sine_dataset,
    infer_channel_count,
    load_jsonl,
    make_random_instance,
    preprocess,
    write_jsonl,
)
from .evaluation import config_fingerprint, evaluate, run_experiment, split_records
from .model import (
    TripletformerConfig,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .rng import spawn
from .tensor import Tensor, op_counters
from .training import (
    TrainConfig,
    full_loss_grad_check,
    random_search,
    train,
)


def _split_and_scale(records, seed):
    """Common train/val/test split plus normalisation fit on train."""
    raw_train, raw_val, raw_test = split_records(records, seed)
    transformed, stats = preprocess(raw_train, records)
    by_id = {r.id: r for r in transformed}
    train_set = [by_id[r.id] for r in raw_train]
    val_set = [by_id[r.id] for r in raw_val]
    test_set = [by_id[r.id] for r in raw_test]
    return train_set, val_set, test_set, stats


def _cmd_generate(args) -> int:
    records, manifest = build_sine_dataset(
        n_series=args.n_series,
        length=args.length,
        channels=args.channels,
        noise_sd=args.noise_sd,
        seed=args.seed,
    )
    write_jsonl(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    if args.manifest:
        with open(args.manifest, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        print(f"wrote generator manifest to {args.manifest}")
    return 0


def _cmd_train(args) -> int:
    records = load_jsonl(args.dataset)
    channels = infer_channel_count(records)
    train_set, val_set, _test_set, _stats = _split_and_scale(records, args.seed)

    overrides = {"model": {}, "training": {}}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - {"model", "training"}
        if unknown:
            raise SystemExit(f"config file has unknown sections: {sorted(unknown)}")
        overrides["model"].update(loaded.get("model", {}))
        overrides["training"].update(loaded.get("training", {}))

    model_config = TripletformerConfig.from_dict({"channels": channels, **overrides["model"]})
    train_config = TrainConfig.from_dict(
        {
            **overrides["training"],
            "sampler": args.sampler,
            "observed_frac": args.observed_frac,
            "lam": args.lam,
            "seed": args.seed,
        }
    )
    params, history = train(model_config, train_config, train_set, val_set)
    save_checkpoint(params, args.out)
    print(
        f"trained {len(history.train_loss)} epochs, "
        f"best val nll {history.val_nll[history.best_epoch]:.6f} "
        f"at epoch {history.best_epoch}, checkpoint -> {args.out}"
    )
    if args.history:
        with open(args.history, "w", encoding="utf-8") as fh:
            json.dump(history.to_records(), fh, indent=2)
        print(f"wrote training history to {args.history}")
    return 0


def _cmd_evaluate(args) -> int:
    params = load_checkpoint(args.checkpoint)
    records = load_jsonl(args.dataset)
    _train_set, _val_set, test_set, _stats = _split_and_scale(records, args.seed)
    report = evaluate(
        partial(predict, params),
        test_set,
        args.sampler,
        args.observed_frac,
        args.seed,
        dataset=args.dataset,
        model="tripletformer",
        fingerprint=config_fingerprint(params.config.to_dict()),
    )
    payload = report.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    return 0


def _cmd_benchmark_attention(args) -> int:
    d = args.model_dim
    rng = spawn(args.seed, "benchmark-attention")
    mab_params = init_mab(rng, d, args.num_heads)
    imab_params = init_imab(rng, d, args.num_heads, args.num_induced)
    counters = op_counters()
    rows = []
    for size in args.set_sizes:
        x_np = rng.normal_array(0.0, 1.0, (size, d))
        for block in ("mab", "imab"):
            x = Tensor(x_np)
            counters.reset()
            start = time.perf_counter()
            if block == "mab":
                mab(x, x, x, mab_params)
            else:
                imab(x, x, x, imab_params)
            wall = time.perf_counter() - start
            rows.append(
                {
                    "block": block,
                    "set_size": size,
                    "model_dim": d,
                    "num_heads": args.num_heads,
                    "num_induced": args.num_induced,
                    "score_madds": counters.score_madds,
                    "matmul_madds": counters.matmul_madds,
                    "wall_seconds": f"{wall:.6f}",
                }
            )
    fieldnames = list(rows[0])
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
            print(f"wrote benchmark table to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    instance = make_random_instance(
        n_context=6, n_queries=3, channels=2, seed=args.seed
    )
    base = dict(
        channels=2,
        depth=1,
        input_embed_dim=8,
        attn_dim=8,
        query_embed_dim=8,
        cross_attn_dim=8,
        mlp_hidden=8,
        num_induced=2,
        num_heads=1,
    )
    variants = [
        ("imab-encoder/mab-decoder", {}),
        ("mab-encoder/mab-decoder", {"encoder_block": "mab"}),
        ("imab-encoder/imab-decoder", {"decoder_block": "imab"}),
    ]
    ok = True
    for name, extra in variants:
        config = TripletformerConfig(**{**base, **extra})
        err = full_loss_grad_check(
            config, instance, lam=1.0, eps=args.eps, seed=args.seed
        )
        passed = err < args.threshold
        ok = ok and passed
        print(f"{name}: max rel err {err:.3e} ({'ok' if passed else 'FAIL'})")
    return 0 if ok else 1


def _cmd_search(args) -> int:
    # bound late so the spaces can be swapped out programmatically
    from .training import DEFAULT_MODEL_SPACE, DEFAULT_TRAIN_SPACE

    records = load_jsonl(args.dataset)
    train_set, val_set, _test_set, _stats = _split_and_scale(records, args.seed)
    model_config, train_config = random_search(
        DEFAULT_MODEL_SPACE,
        DEFAULT_TRAIN_SPACE,
        k=args.trials,
        seed=args.seed,
        train_records=train_set,
        val_records=val_set,
    )
    best = {"model": model_config.to_dict(), "training": train_config.to_dict()}
    print(json.dumps(best, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(best, fh, indent=2, sort_keys=True)
        print(f"wrote best configuration to {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    result = run_experiment(args.manifest, out_dir=args.out_dir)
    print(json.dumps(result.aggregates, indent=2, sort_keys=True))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletformer",
        description="Probabilistic interpolation of asynchronous time series.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic sine dataset as JSONL")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--n-series", type=int, default=500)
    p.add_argument("--length", type=int, default=40)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--noise-sd", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="also write the generator manifest JSON here")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("train", help="train a model on a JSONL dataset")
    p.add_argument("dataset", help="JSONL dataset path")
    p.add_argument("--config", help="JSON file with model/training override sections")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", help="write per-epoch history JSON here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=sorted(SAMPLERS), default="random")
    p.add_argument("--observed-frac", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("checkpoint", help="checkpoint path")
    p.add_argument("dataset", help="JSONL dataset path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=sorted(SAMPLERS), default="random")
    p.add_argument("--observed-frac", type=float, default=0.5)
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser(
        "benchmark-attention",
        help="compare attention score cost across set sizes",
    )
    p.add_argument("--set-sizes", type=int, nargs="+", default=[256, 512, 1024])
    p.add_argument("--model-dim", type=int, default=64)
    p.add_argument("--num-heads", type=int, default=2)
    p.add_argument("--num-induced", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(fn=_cmd_benchmark_attention)

    p = sub.add_parser("gradcheck", help="verify model gradients numerically")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--threshold", type=float, default=1e-4)
    # relu has kinks; a seed whose preactivations sit further than eps from
    # zero keeps the finite-difference comparison meaningful
    p.add_argument("--seed", type=int, default=4)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("dataset", help="JSONL dataset path")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the best configuration JSON here")
    p.set_defaults(fn=_cmd_search)

    p = sub.add_parser("experiment", help="run a manifest-driven experiment")
    p.add_argument("manifest", help="experiment manifest JSON path")
    p.add_argument("--out-dir", help="directory for reports.json and aggregates.json")
    p.set_defaults(fn=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
