"""Asynchronous time series as sets of (time, channel, value) triplets.

A record is a set of observation triplets; channels are 1-based integers and
at most one observation of a channel may exist at any time point.  The module
covers the full data path: JSONL reading/writing, a seeded synthetic sine
generator, train-statistics preprocessing, the two interpolation-task
samplers, dense encoding for the model and padded batching.

Sampling is a pure function of (record, observed_frac, seed): both samplers
split the record's distinct time points into a conditioning set and a target
set, hand every observation at conditioning times to the model as context and
ask for the actually observed values at target times.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import Xoshiro256StarStar, spawn

__all__ = [
    "Triplet",
    "AsTSRecord",
    "QueryPoint",
    "InterpolationInstance",
    "Batch",
    "DenseSeries",
    "ChannelStats",
    "load_jsonl",
    "write_jsonl",
    "infer_channel_count",
    "generate_sine_mts",
    "make_synthetic_asts",
    "build_sine_dataset",
    "preprocess",
    "sample_random_missing",
    "sample_burst_missing",
    "SAMPLERS",
    "encode_context",
    "encode_queries",
    "decode_context",
    "decode_queries",
    "batch_pad",
]


@dataclass(frozen=True, slots=True)
class Triplet:
    """One observation: value ``u`` of channel ``c`` at time ``t``."""

    t: float
    c: int
    u: float

    def __post_init__(self):
        if not isinstance(self.c, int) or self.c < 1:
            raise ValueError(f"channel must be a positive integer, got {self.c!r}")
        if not (math.isfinite(self.t) and math.isfinite(self.u)):
            raise ValueError(f"non-finite observation ({self.t}, {self.c}, {self.u})")


@dataclass(frozen=True, slots=True)
class QueryPoint:
    """A (time, channel) pair whose value is requested."""

    t: float
    c: int

    def __post_init__(self):
        if not isinstance(self.c, int) or self.c < 1:
            raise ValueError(f"channel must be a positive integer, got {self.c!r}")
        if not math.isfinite(self.t):
            raise ValueError(f"non-finite query time {self.t}")


@dataclass(frozen=True)
class AsTSRecord:
    """An identified set of triplets; (t, c) pairs are unique within a record."""

    id: str
    observations: tuple[Triplet, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        seen = set()
        for obs in self.observations:
            key = (obs.t, obs.c)
            if key in seen:
                raise ValueError(
                    f"record {self.id!r}: duplicate observation of channel "
                    f"{obs.c} at time {obs.t}"
                )
            seen.add(key)

    def times(self) -> list[float]:
        """Sorted distinct observation times."""
        return sorted({obs.t for obs in self.observations})


@dataclass(frozen=True)
class InterpolationInstance:
    """Context triplets, query points and their ground-truth values."""

    context: tuple[Triplet, ...]
    queries: tuple[QueryPoint, ...]
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(self.context))
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(
            self, "targets", np.ascontiguousarray(self.targets, dtype=np.float64)
        )
        if len(self.context) == 0:
            raise ValueError("instance needs at least one context observation")
        if len(self.queries) == 0:
            raise ValueError("instance needs at least one query")
        if self.targets.shape != (len(self.queries),):
            raise ValueError(
                f"{len(self.queries)} queries but targets shape {self.targets.shape}"
            )


@dataclass
class Batch:
    """Instances padded to shared sizes; masks mark real rows."""

    context_matrix: np.ndarray  # (B, s_max, C + 2)
    context_mask: np.ndarray    # (B, s_max) bool
    query_matrix: np.ndarray    # (B, r_max, C + 1)
    query_mask: np.ndarray      # (B, r_max) bool
    targets: np.ndarray         # (B, r_max), zero at padded rows

    def __len__(self) -> int:
        return self.context_matrix.shape[0]


# ---------------------------------------------------------------------------
# JSONL dataset files


def load_jsonl(path) -> list[AsTSRecord]:
    """Read one record per line: {"id": str, "observations": [[t, c, u], ...]}."""
    records = []
    seen_ids = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc})") from None
            try:
                records.append(_parse_record(raw))
            except (ValueError, TypeError, KeyError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if records[-1].id in seen_ids:
                raise ValueError(f"{path}: line {lineno}: duplicate id {records[-1].id!r}")
            seen_ids.add(records[-1].id)
    return records


def _parse_record(raw) -> AsTSRecord:
    if not isinstance(raw, dict):
        raise ValueError(f"record must be an object, got {type(raw).__name__}")
    if "id" not in raw or "observations" not in raw:
        raise ValueError("record needs 'id' and 'observations' fields")
    rid = raw["id"]
    if not isinstance(rid, str):
        raise ValueError(f"id must be a string, got {rid!r}")
    obs_raw = raw["observations"]
    if not isinstance(obs_raw, list):
        raise ValueError("observations must be a list")
    observations = []
    for i, entry in enumerate(obs_raw):
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ValueError(f"observation {i} must be a [t, c, u] triple, got {entry!r}")
        t, c, u = entry
        if isinstance(c, bool) or not isinstance(c, int):
            raise ValueError(f"observation {i}: channel must be an integer, got {c!r}")
        observations.append(Triplet(t=float(t), c=c, u=float(u)))
    return AsTSRecord(id=rid, observations=tuple(observations))


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            row = {
                "id": record.id,
                "observations": [[obs.t, obs.c, obs.u] for obs in record.observations],
            }
            fh.write(json.dumps(row) + "\n")


def infer_channel_count(records) -> int:
    """Highest channel index appearing in any record."""
    channels = [obs.c for record in records for obs in record.observations]
    if not channels:
        raise ValueError("cannot infer channel count from records with no observations")
    return max(channels)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class DenseSeries:
    """A fully observed multivariate series on a shared time grid."""

    times: np.ndarray   # (length,)
    values: np.ndarray  # (length, channels)


def generate_sine_mts(
    n_series: int, length: int, channels: int, noise_sd: float, seed: int
) -> list[DenseSeries]:
    """Dense sine mixtures: per channel a*sin(2*pi*f*t + phase) + noise.

    Per series and channel, amplitude ~ U(0.5, 1.5), frequency ~ U(1, 3) and
    phase ~ U(0, 2*pi); noise is Gaussian with sd ``noise_sd``.  Times are the
    regular grid [0, 1].  Fully reproducible from ``seed``.
    """
    if n_series < 1 or length < 2 or channels < 1:
        raise ValueError(
            f"need n_series >= 1, length >= 2, channels >= 1; got "
            f"({n_series}, {length}, {channels})"
        )
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be non-negative, got {noise_sd}")
    rng = spawn(seed, "sine-mts")
    times = np.linspace(0.0, 1.0, length)
    series = []
    for _ in range(n_series):
        amp = np.array([rng.uniform(0.5, 1.5) for _ in range(channels)])
        freq = np.array([rng.uniform(1.0, 3.0) for _ in range(channels)])
        phase = np.array([rng.uniform(0.0, 2.0 * math.pi) for _ in range(channels)])
        values = amp * np.sin(2.0 * math.pi * freq * times[:, None] + phase)
        if noise_sd > 0:
            values = values + rng.normal_array(0.0, noise_sd, values.shape)
        series.append(DenseSeries(times=times.copy(), values=values))
    return series


def make_synthetic_asts(
    series: DenseSeries, rng: Xoshiro256StarStar, record_id: str
) -> AsTSRecord:
    """Keep exactly one uniformly chosen channel per time step of a dense series."""
    length, channels = series.values.shape
    observations = []
    for i in range(length):
        c = 1 + rng.randint(channels)
        observations.append(
            Triplet(t=float(series.times[i]), c=c, u=float(series.values[i, c - 1]))
        )
    return AsTSRecord(id=record_id, observations=tuple(observations))


def build_sine_dataset(
    n_series: int, length: int, channels: int, noise_sd: float, seed: int
) -> tuple[list[AsTSRecord], dict]:
    """Generate sine mixtures and sparsify them to one channel per time step.

    Returns the records and a manifest describing how they were produced.
    """
    series = generate_sine_mts(n_series, length, channels, noise_sd, seed)
    channel_rng = spawn(seed, "asts-channels")
    records = [
        make_synthetic_asts(s, channel_rng, f"sine-{i:05d}") for i, s in enumerate(series)
    ]
    manifest = {
        "generator": "sine_asts",
        "parameters": {
            "n_series": n_series,
            "length": length,
            "channels": channels,
            "noise_sd": noise_sd,
        },
        "seed": seed,
    }
    return records, manifest


# ---------------------------------------------------------------------------
# preprocessing


@dataclass
class ChannelStats:
    """Training statistics used to normalise every split."""

    channels: int
    value_upper: np.ndarray  # (C,) per-channel removal bound
    mean: np.ndarray         # (C,)
    std: np.ndarray          # (C,)
    time_min: float
    time_max: float

    def transform(self, record: AsTSRecord) -> AsTSRecord:
        """Drop anomalous values, rescale time, standardise per channel."""
        span = self.time_max - self.time_min
        observations = []
        for obs in record.observations:
            if obs.u > self.value_upper[obs.c - 1]:
                continue
            t = 0.0 if span == 0.0 else (obs.t - self.time_min) / span
            u = (obs.u - self.mean[obs.c - 1]) / self.std[obs.c - 1]
            observations.append(Triplet(t=t, c=obs.c, u=u))
        return AsTSRecord(id=record.id, observations=tuple(observations))


def preprocess(
    train_records: list[AsTSRecord], all_records: list[AsTSRecord]
) -> tuple[list[AsTSRecord], ChannelStats]:
    """Fit normalisation on the training split and apply it everywhere.

    Per channel, the 99.9th-percentile upper bound of training values defines
    anomaly removal (strictly above the bound, applied to every record); the
    remaining training observations define the time range mapped affinely to
    [0, 1] and the per-channel standardisation.  A channel with zero training
    spread is clamped to unit scale with a warning; a channel absent from the
    training split is an error.

    Returns the transformed records (aligned with ``all_records``) and the
    fitted statistics.
    """
    train_ids = {r.id for r in train_records}
    all_ids = {r.id for r in all_records}
    if not train_ids <= all_ids:
        missing = sorted(train_ids - all_ids)[:3]
        raise ValueError(f"train records not contained in all_records, e.g. {missing}")
    channels = infer_channel_count(all_records)

    per_channel: list[list[float]] = [[] for _ in range(channels)]
    for record in train_records:
        for obs in record.observations:
            per_channel[obs.c - 1].append(obs.u)
    upper = np.empty(channels)
    for c in range(channels):
        if not per_channel[c]:
            raise ValueError(f"channel {c + 1} has no observations in the training split")
        upper[c] = np.percentile(np.array(per_channel[c]), 99.9)

    kept_times: list[float] = []
    kept_values: list[list[float]] = [[] for _ in range(channels)]
    for record in train_records:
        for obs in record.observations:
            if obs.u > upper[obs.c - 1]:
                continue
            kept_times.append(obs.t)
            kept_values[obs.c - 1].append(obs.u)
    if not kept_times:
        raise ValueError("anomaly removal left no training observations")

    mean = np.empty(channels)
    std = np.empty(channels)
    for c in range(channels):
        vals = np.array(kept_values[c])
        if vals.size == 0:
            raise ValueError(
                f"channel {c + 1} has no training observations after anomaly removal"
            )
        mean[c] = vals.mean()
        std[c] = vals.std()
        if std[c] == 0.0:
            warnings.warn(
                f"channel {c + 1} has zero training spread; clamping scale to 1"
            )
            std[c] = 1.0

    stats = ChannelStats(
        channels=channels,
        value_upper=upper,
        mean=mean,
        std=std,
        time_min=float(min(kept_times)),
        time_max=float(max(kept_times)),
    )
    return [stats.transform(r) for r in all_records], stats


# ---------------------------------------------------------------------------
# interpolation-task samplers


def _conditioning_size(n_times: int, observed_frac: float) -> int:
    if not (0.0 < observed_frac < 1.0):
        raise ValueError(f"observed_frac must lie in (0, 1), got {observed_frac}")
    if n_times < 2:
        raise ValueError(f"need at least two distinct time points, got {n_times}")
    # ceil of the real-valued product; the tiny slack keeps float artefacts
    # like 0.7 * 10 -> 7.000000000000001 from inflating the ceiling
    return math.ceil(observed_frac * n_times - 1e-12)


def _package(
    record: AsTSRecord, conditioning_times: set[float]
) -> InterpolationInstance:
    context = [obs for obs in record.observations if obs.t in conditioning_times]
    held_out = [obs for obs in record.observations if obs.t not in conditioning_times]
    queries = [QueryPoint(t=obs.t, c=obs.c) for obs in held_out]
    targets = np.array([obs.u for obs in held_out])
    return InterpolationInstance(
        context=tuple(context), queries=tuple(queries), targets=targets
    )


def sample_random_missing(
    record: AsTSRecord, observed_frac: float, seed: int
) -> InterpolationInstance:
    """Condition on a uniformly random subset of time points, query the rest."""
    times = record.times()
    k = _conditioning_size(len(times), observed_frac)
    order = list(times)
    spawn(seed, "random-missing", record.id).shuffle(order)
    conditioning = set(order[:k])
    if len(conditioning) == len(times):
        raise ValueError(
            f"record {record.id!r}: observed_frac {observed_frac} leaves no target times"
        )
    return _package(record, conditioning)


def sample_burst_missing(
    record: AsTSRecord, observed_frac: float, seed: int
) -> InterpolationInstance:
    """Hold out one contiguous run of time points starting at a random index."""
    times = record.times()
    n = len(times)
    p = n - _conditioning_size(n, observed_frac)
    if p == 0:
        raise ValueError(
            f"record {record.id!r}: observed_frac {observed_frac} leaves no burst to remove"
        )
    start = spawn(seed, "burst-missing", record.id).randint(n - p + 1)
    conditioning = set(times[:start]) | set(times[start + p:])
    return _package(record, conditioning)


SAMPLERS = {
    "random": sample_random_missing,
    "burst": sample_burst_missing,
}


def make_random_instance(
    n_context: int, n_queries: int, channels: int, seed: int
) -> InterpolationInstance:
    """A standalone interpolation instance with random times, channels, values.

    Handy for gradient checks and unit tests where no dataset is needed.
    """
    rng = spawn(seed, "random-instance")
    n = n_context + n_queries
    times = sorted(rng.uniform(0.0, 1.0) for _ in range(n))
    obs = [
        Triplet(t=times[i], c=1 + i % channels, u=rng.normal()) for i in range(n)
    ]
    context = tuple(obs[:n_context])
    held_out = obs[n_context:]
    queries = tuple(QueryPoint(t=o.t, c=o.c) for o in held_out)
    targets = np.array([o.u for o in held_out])
    return InterpolationInstance(context=context, queries=queries, targets=targets)


# ---------------------------------------------------------------------------
# dense encoding and batching


def encode_context(triplets, channels: int) -> np.ndarray:
    """Rows [t, one_hot(c), u] of width channels + 2."""
    out = np.zeros((len(triplets), channels + 2))
    for i, obs in enumerate(triplets):
        if obs.c > channels:
            raise ValueError(f"channel {obs.c} exceeds channel count {channels}")
        out[i, 0] = obs.t
        out[i, obs.c] = 1.0
        out[i, channels + 1] = obs.u
    return out


def encode_queries(queries, channels: int) -> np.ndarray:
    """Rows [t, one_hot(c)] of width channels + 1."""
    out = np.zeros((len(queries), channels + 1))
    for i, query in enumerate(queries):
        if query.c > channels:
            raise ValueError(f"channel {query.c} exceeds channel count {channels}")
        out[i, 0] = query.t
        out[i, query.c] = 1.0
    return out


def _decode_one_hot(row: np.ndarray) -> int:
    hot = np.flatnonzero(row)
    if hot.size != 1 or row[hot[0]] != 1.0:
        raise ValueError(f"row is not a one-hot channel encoding: {row}")
    return int(hot[0]) + 1


def decode_context(matrix: np.ndarray, channels: int) -> list[Triplet]:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] != channels + 2:
        raise ValueError(f"expected width {channels + 2}, got shape {matrix.shape}")
    return [
        Triplet(t=float(row[0]), c=_decode_one_hot(row[1:-1]), u=float(row[-1]))
        for row in matrix
    ]


def decode_queries(matrix: np.ndarray, channels: int) -> list[QueryPoint]:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] != channels + 1:
        raise ValueError(f"expected width {channels + 1}, got shape {matrix.shape}")
    return [
        QueryPoint(t=float(row[0]), c=_decode_one_hot(row[1:])) for row in matrix
    ]


def batch_pad(instances, channels: int) -> Batch:
    """Pad instances to per-batch maxima with zero rows and false masks."""
    instances = list(instances)
    if not instances:
        raise ValueError("batch_pad needs at least one instance")
    b = len(instances)
    s_max = max(len(inst.context) for inst in instances)
    r_max = max(len(inst.queries) for inst in instances)
    context_matrix = np.zeros((b, s_max, channels + 2))
    context_mask = np.zeros((b, s_max), dtype=bool)
    query_matrix = np.zeros((b, r_max, channels + 1))
    query_mask = np.zeros((b, r_max), dtype=bool)
    targets = np.zeros((b, r_max))
    for i, inst in enumerate(instances):
        s, r = len(inst.context), len(inst.queries)
        context_matrix[i, :s] = encode_context(inst.context, channels)
        context_mask[i, :s] = True
        query_matrix[i, :r] = encode_queries(inst.queries, channels)
        query_mask[i, :r] = True
        targets[i, :r] = inst.targets
    return Batch(
        context_matrix=context_matrix,
        context_mask=context_mask,
        query_matrix=query_matrix,
        query_mask=query_mask,
        targets=targets,
    )
