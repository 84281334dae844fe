"""Evaluation reports and experiment orchestration.

``evaluate`` scores any predictor on a test split: one interpolation instance
is sampled per test record (seeded per record), the predictor sees context
and queries only, and the report carries the mean NLL and mean squared error
pooled over every target observation.  All report fields except the wall
time are a pure function of (predictor, dataset, sampler, fraction, seed);
``to_dict(canonical=True)`` drops the wall time so deterministic runs can be
compared byte for byte.

``run_experiment`` executes a manifest: split the dataset 80/20 into train
and test, hold out 20% of train for validation, fit normalisation statistics
on the remaining train records, then train/fit and evaluate the requested
model on every (sampler, observed fraction, repetition) cell and aggregate
mean and standard deviation over repetitions.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass
from functools import partial

import numpy as np

from .baselines import fit_baseline
from .data import SAMPLERS, AsTSRecord, infer_channel_count, load_jsonl, preprocess
from .model import TripletformerConfig, predict
from .rng import derive_seed, spawn
from .training import TrainConfig, gaussian_nll, train

__all__ = [
    "EvalReport",
    "ExperimentResult",
    "config_fingerprint",
    "split_records",
    "evaluate",
    "run_experiment",
]


def config_fingerprint(payload) -> str:
    """Short stable digest of a JSON-serialisable configuration."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass
class EvalReport:
    dataset: str
    model: str
    sampler: str
    observed_frac: float
    seed: int
    nll_mean: float
    mse_mean: float
    n_targets: int
    wall_seconds: float
    config_fingerprint: str

    def to_dict(self, canonical: bool = False) -> dict:
        out = asdict(self)
        if canonical:
            # wall time is the one field that is not a pure function of the
            # inputs; canonical form exists for byte-identity comparisons
            del out["wall_seconds"]
        return out

    def to_json(self, canonical: bool = False) -> str:
        return json.dumps(self.to_dict(canonical), sort_keys=True, separators=(",", ":"))


def split_records(
    records: list[AsTSRecord], seed: int
) -> tuple[list[AsTSRecord], list[AsTSRecord], list[AsTSRecord]]:
    """Shuffled 80/20 train/test split, then 20% of train held out as val.

    Returns (train, val, test); sizes are rounded to the nearest record and
    every part is non-empty.
    """
    if len(records) < 3:
        raise ValueError(f"need at least 3 records to split, got {len(records)}")
    order = list(records)
    spawn(seed, "split").shuffle(order)
    n = len(order)
    n_test = min(max(1, round(0.2 * n)), n - 2)
    rest = order[: n - n_test]
    test = order[n - n_test:]
    n_val = min(max(1, round(0.2 * len(rest))), len(rest) - 1)
    train = rest[: len(rest) - n_val]
    val = rest[len(rest) - n_val:]
    return train, val, test


def evaluate(
    predict_fn,
    test_records: list[AsTSRecord],
    sampler: str,
    observed_frac: float,
    seed: int,
    dataset: str = "",
    model: str = "",
    fingerprint: str = "",
) -> EvalReport:
    """Score a predictor on one instance per test record.

    ``predict_fn(context, queries)`` must return a prediction with one
    Gaussian per query; by construction it never receives target values.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {sorted(SAMPLERS)}, got {sampler!r}")
    if not test_records:
        raise ValueError("no test records to evaluate")
    sampler_fn = SAMPLERS[sampler]
    instance_seed = derive_seed(seed, "eval-sample")
    start = time.perf_counter()
    nll_parts = []
    mse_parts = []
    for record in test_records:
        inst = sampler_fn(record, observed_frac, instance_seed)
        pred = predict_fn(inst.context, inst.queries)
        if len(pred) != len(inst.queries):
            raise ValueError(
                f"predictor returned {len(pred)} Gaussians for {len(inst.queries)} queries"
            )
        mu = pred.mean.data
        nll_parts.append(gaussian_nll(inst.targets, mu, pred.std.data))
        diff = inst.targets - mu
        mse_parts.append(diff * diff)
    nll_all = np.concatenate(nll_parts)
    mse_all = np.concatenate(mse_parts)
    wall = time.perf_counter() - start
    return EvalReport(
        dataset=dataset,
        model=model,
        sampler=sampler,
        observed_frac=observed_frac,
        seed=seed,
        nll_mean=float(np.mean(nll_all)),
        mse_mean=float(np.mean(mse_all)),
        n_targets=int(nll_all.size),
        wall_seconds=wall,
        config_fingerprint=fingerprint,
    )


# ---------------------------------------------------------------------------
# manifest-driven experiments


@dataclass
class ExperimentResult:
    reports: list[EvalReport]
    aggregates: list[dict]


_MODEL_KINDS = ("tripletformer", "mean", "forward")


def _manifest_error(field: str, problem: str):
    return ValueError(f"manifest field {field!r}: {problem}")


def _validate_manifest(manifest: dict) -> dict:
    if not isinstance(manifest, dict):
        raise ValueError(f"manifest must be an object, got {type(manifest).__name__}")
    known = {
        "dataset",
        "seed",
        "samplers",
        "observed_fracs",
        "repetitions",
        "model",
        "training",
        "out_dir",
    }
    unknown = set(manifest) - known
    if unknown:
        raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
    for required in ("dataset", "seed", "samplers", "observed_fracs", "repetitions", "model"):
        if required not in manifest:
            raise _manifest_error(required, "missing")
    if not isinstance(manifest["dataset"], str):
        raise _manifest_error("dataset", "must be a path string")
    if isinstance(manifest["seed"], bool) or not isinstance(manifest["seed"], int):
        raise _manifest_error("seed", "must be an integer")
    samplers = manifest["samplers"]
    if not (isinstance(samplers, list) and samplers):
        raise _manifest_error("samplers", "must be a non-empty list")
    for s in samplers:
        if s not in SAMPLERS:
            raise _manifest_error("samplers", f"unknown sampler {s!r}")
    fracs = manifest["observed_fracs"]
    if not (isinstance(fracs, list) and fracs):
        raise _manifest_error("observed_fracs", "must be a non-empty list")
    for f in fracs:
        if not isinstance(f, (int, float)) or not (0.0 < float(f) < 1.0):
            raise _manifest_error("observed_fracs", f"fraction {f!r} not in (0, 1)")
    reps = manifest["repetitions"]
    if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        raise _manifest_error("repetitions", "must be a positive integer")
    model = manifest["model"]
    if not isinstance(model, dict) or model.get("kind") not in _MODEL_KINDS:
        raise _manifest_error("model", f"needs 'kind' in {_MODEL_KINDS}")
    if "training" in manifest and not isinstance(manifest["training"], dict):
        raise _manifest_error("training", "must be an object")
    if "out_dir" in manifest and not isinstance(manifest["out_dir"], str):
        raise _manifest_error("out_dir", "must be a path string")
    return manifest


def run_experiment(manifest, out_dir=None) -> ExperimentResult:
    """Execute every (sampler, fraction, repetition) cell of a manifest.

    ``manifest`` is a dict or a path to a JSON file.  Returns one report per
    cell plus per-(sampler, fraction) aggregates; when an output directory is
    given (argument or manifest field), reports and aggregates are written
    there as JSON.
    """
    if not isinstance(manifest, dict):
        with open(manifest, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    manifest = _validate_manifest(manifest)
    out_dir = out_dir if out_dir is not None else manifest.get("out_dir")

    records = load_jsonl(manifest["dataset"])
    channels = infer_channel_count(records)
    seed = manifest["seed"]
    raw_train, raw_val, raw_test = split_records(records, seed)
    transformed, _stats = preprocess(raw_train, records)
    by_id = {r.id: r for r in transformed}
    train_set = [by_id[r.id] for r in raw_train]
    val_set = [by_id[r.id] for r in raw_val]
    test_set = [by_id[r.id] for r in raw_test]

    model_spec = dict(manifest["model"])
    kind = model_spec.pop("kind")
    training_overrides = dict(manifest.get("training", {}))

    reports: list[EvalReport] = []
    for sampler in manifest["samplers"]:
        for frac in manifest["observed_fracs"]:
            frac = float(frac)
            for rep in range(manifest["repetitions"]):
                rep_seed = derive_seed(seed, sampler, repr(frac), rep) % 2**32
                if kind == "tripletformer":
                    model_config = TripletformerConfig.from_dict(
                        {"channels": channels, **model_spec}
                    )
                    train_config = TrainConfig.from_dict(
                        {
                            **training_overrides,
                            "sampler": sampler,
                            "observed_frac": frac,
                            "seed": rep_seed,
                        }
                    )
                    params, _history = train(model_config, train_config, train_set, val_set)
                    predict_fn = partial(predict, params)
                    fingerprint = config_fingerprint(
                        {"model": model_config.to_dict(), "training": train_config.to_dict()}
                    )
                else:
                    sampler_fn = SAMPLERS[sampler]
                    sigma_seed = derive_seed(rep_seed, "sigma-sample")
                    val_instances = [
                        sampler_fn(record, frac, sigma_seed) for record in val_set
                    ]
                    baseline = fit_baseline(kind, train_set, val_instances, channels)
                    predict_fn = baseline.predict
                    fingerprint = config_fingerprint(
                        {"model": kind, "sigma": baseline.sigma.tolist()}
                    )
                reports.append(
                    evaluate(
                        predict_fn,
                        test_set,
                        sampler,
                        frac,
                        rep_seed,
                        dataset=manifest["dataset"],
                        model=kind,
                        fingerprint=fingerprint,
                    )
                )

    aggregates = []
    for sampler in manifest["samplers"]:
        for frac in manifest["observed_fracs"]:
            frac = float(frac)
            cell = [
                r for r in reports if r.sampler == sampler and r.observed_frac == frac
            ]
            nlls = np.array([r.nll_mean for r in cell])
            mses = np.array([r.mse_mean for r in cell])
            aggregates.append(
                {
                    "model": kind,
                    "sampler": sampler,
                    "observed_frac": frac,
                    "repetitions": len(cell),
                    "nll_mean": float(nlls.mean()),
                    "nll_sd": float(nlls.std()),
                    "mse_mean": float(mses.mean()),
                    "mse_sd": float(mses.std()),
                }
            )

    result = ExperimentResult(reports=reports, aggregates=aggregates)
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "reports.json"), "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=2)
        with open(os.path.join(out_dir, "aggregates.json"), "w", encoding="utf-8") as fh:
            json.dump(aggregates, fh, indent=2)
    return result
