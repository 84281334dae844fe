"""Encoder-decoder over observation sets with Gaussian output heads.

The encoder embeds each context triplet row [t, one_hot(c), u] with a
two-layer pointwise network and refines the set through a stack of induced
attention blocks (plain MAB blocks in the ``encoder_block="mab"`` variant).
The decoder embeds query rows [t, one_hot(c)], lets each query cross-attend
to the encoded context exactly once (no query self-attention, no positional
encodings) and reads out an independent Gaussian per query through two linear
heads; the scale head is ``softplus(x) + 1e-8``, the additive term acting as
a floor on the standard deviation.

There is no weight sharing across encoder blocks and each induced block owns
its induced points.  Padded rows are controlled entirely through boolean
masks: padded context rows are excluded as attention keys, padded query rows
are dropped from the returned prediction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import (
    FeedForwardParams,
    ImabParams,
    MabParams,
    MhaParams,
    feed_forward,
    glorot_matrix,
    imab,
    mab,
    resolve_activation,
)
from .data import InterpolationInstance, encode_context, encode_queries
from .rng import Xoshiro256StarStar, spawn
from .tensor import Tensor, matmul, reshape, softplus, take_rows

SIGMA_FLOOR = 1e-8

CHECKPOINT_FORMAT = "tripletformer-checkpoint"

__all__ = [
    "SIGMA_FLOOR",
    "TripletformerConfig",
    "TripletformerParams",
    "GaussianPrediction",
    "init_params",
    "encoder_forward",
    "decoder_forward",
    "predict",
    "predict_distribution",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class TripletformerConfig:
    """Architecture hyperparameters.

    The residual form of the attention blocks ties some widths together:
    encoder blocks map their own input back to the same width, so
    ``input_embed_dim`` must equal ``attn_dim``; likewise the decoder block
    output width equals the query embedding width, so ``query_embed_dim``
    must equal ``cross_attn_dim``.
    """

    channels: int
    depth: int = 2
    input_embed_dim: int = 64
    attn_dim: int = 64
    query_embed_dim: int = 64
    cross_attn_dim: int = 64
    mlp_hidden: int = 64
    num_induced: int = 16
    num_heads: int = 2
    activation: str = "relu"
    encoder_block: str = "imab"
    decoder_block: str = "mab"

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        for name in (
            "input_embed_dim",
            "attn_dim",
            "query_embed_dim",
            "cross_attn_dim",
            "mlp_hidden",
            "num_induced",
            "num_heads",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.input_embed_dim != self.attn_dim:
            raise ValueError(
                f"input_embed_dim {self.input_embed_dim} must equal attn_dim "
                f"{self.attn_dim}: encoder blocks add their input residually"
            )
        if self.query_embed_dim != self.cross_attn_dim:
            raise ValueError(
                f"query_embed_dim {self.query_embed_dim} must equal cross_attn_dim "
                f"{self.cross_attn_dim}: the decoder block adds its input residually"
            )
        if self.attn_dim % self.num_heads != 0:
            raise ValueError(
                f"attn_dim {self.attn_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.cross_attn_dim % self.num_heads != 0:
            raise ValueError(
                f"cross_attn_dim {self.cross_attn_dim} not divisible by num_heads "
                f"{self.num_heads}"
            )
        resolve_activation(self.activation)
        if self.encoder_block not in ("imab", "mab"):
            raise ValueError(f"encoder_block must be 'imab' or 'mab', got {self.encoder_block!r}")
        if self.decoder_block not in ("mab", "imab"):
            raise ValueError(f"decoder_block must be 'mab' or 'imab', got {self.decoder_block!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TripletformerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor

    def named_tensors(self, prefix: str = ""):
        yield f"{prefix}w", self.w
        yield f"{prefix}b", self.b


@dataclass
class TripletformerParams:
    config: TripletformerConfig
    input_embed: FeedForwardParams
    encoder_blocks: list
    query_embed: FeedForwardParams
    cross_block: object
    mean_head: LinearParams
    std_head: LinearParams

    def named_tensors(self):
        yield from self.input_embed.named_tensors("input_embed.")
        for i, block in enumerate(self.encoder_blocks):
            yield from block.named_tensors(f"encoder.{i}.")
        yield from self.query_embed.named_tensors("query_embed.")
        yield from self.cross_block.named_tensors("cross.")
        yield from self.mean_head.named_tensors("mean_head.")
        yield from self.std_head.named_tensors("std_head.")


@dataclass
class GaussianPrediction:
    """Independent Gaussians for the unmasked queries, in query order."""

    mean: Tensor  # (n,)
    std: Tensor   # (n,)

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError(
                f"prediction vectors must be 1-D and equal: {self.mean.shape} vs "
                f"{self.std.shape}"
            )

    def __len__(self) -> int:
        return self.mean.shape[0]


# ---------------------------------------------------------------------------
# parameter construction


class _RandomSource:
    """Glorot-uniform matrices, zero biases, N(0, 1/sqrt(d)) induced points."""

    def __init__(self, rng: Xoshiro256StarStar):
        self.rng = rng

    def matrix(self, fan_in: int, fan_out: int) -> Tensor:
        return glorot_matrix(self.rng, fan_in, fan_out)

    def bias(self, dim: int) -> Tensor:
        return Tensor(np.zeros(dim))

    def induced(self, rows: int, dim: int) -> Tensor:
        # second Gaussian argument read as the variance 1/sqrt(dim)
        return Tensor(self.rng.normal_array(0.0, dim**-0.25, (rows, dim)))


class _ZeroSource:
    """Shape-only skeleton used when loading checkpoints."""

    def matrix(self, fan_in: int, fan_out: int) -> Tensor:
        return Tensor(np.zeros((fan_in, fan_out)))

    def bias(self, dim: int) -> Tensor:
        return Tensor(np.zeros(dim))

    def induced(self, rows: int, dim: int) -> Tensor:
        return Tensor(np.zeros((rows, dim)))


def _build_feed_forward(src, in_dim: int, hidden: int, out_dim: int) -> FeedForwardParams:
    return FeedForwardParams(
        w1=src.matrix(in_dim, hidden),
        b1=src.bias(hidden),
        w2=src.matrix(hidden, out_dim),
        b2=src.bias(out_dim),
    )


def _build_mha(src, model_dim: int, num_heads: int, kv_dim: int) -> MhaParams:
    head_dim = model_dim // num_heads
    return MhaParams(
        w_q=[src.matrix(model_dim, head_dim) for _ in range(num_heads)],
        w_k=[src.matrix(kv_dim, head_dim) for _ in range(num_heads)],
        w_v=[src.matrix(kv_dim, head_dim) for _ in range(num_heads)],
        w_o=src.matrix(model_dim, model_dim),
    )


def _build_mab(src, model_dim: int, num_heads: int, kv_dim: int, activation: str) -> MabParams:
    return MabParams(
        mha=_build_mha(src, model_dim, num_heads, kv_dim),
        mlp=_build_feed_forward(src, model_dim, model_dim, model_dim),
        activation=activation,
    )


def _build_imab(
    src,
    model_dim: int,
    num_heads: int,
    num_induced: int,
    kv_dim: int,
    induced_dim: int,
    activation: str,
) -> ImabParams:
    inner = _build_mab(src, induced_dim, num_heads, kv_dim, activation)
    outer = _build_mab(src, model_dim, num_heads, induced_dim, activation)
    return ImabParams(inner=inner, outer=outer, induced_points=src.induced(num_induced, induced_dim))


def _build_params(config: TripletformerConfig, src) -> TripletformerParams:
    enc, dec = config.attn_dim, config.cross_attn_dim
    input_embed = _build_feed_forward(
        src, config.channels + 2, config.mlp_hidden, config.input_embed_dim
    )
    encoder_blocks = []
    for _ in range(config.depth):
        if config.encoder_block == "imab":
            encoder_blocks.append(
                _build_imab(
                    src,
                    model_dim=enc,
                    num_heads=config.num_heads,
                    num_induced=config.num_induced,
                    kv_dim=enc,
                    induced_dim=enc,
                    activation=config.activation,
                )
            )
        else:
            encoder_blocks.append(
                _build_mab(src, enc, config.num_heads, kv_dim=enc, activation=config.activation)
            )
    query_embed = _build_feed_forward(
        src, config.channels + 1, config.mlp_hidden, config.query_embed_dim
    )
    if config.decoder_block == "imab":
        cross_block = _build_imab(
            src,
            model_dim=dec,
            num_heads=config.num_heads,
            num_induced=config.num_induced,
            kv_dim=enc,
            induced_dim=dec,
            activation=config.activation,
        )
    else:
        cross_block = _build_mab(
            src, dec, config.num_heads, kv_dim=enc, activation=config.activation
        )
    mean_head = LinearParams(w=src.matrix(dec, 1), b=src.bias(1))
    std_head = LinearParams(w=src.matrix(dec, 1), b=src.bias(1))
    return TripletformerParams(
        config=config,
        input_embed=input_embed,
        encoder_blocks=encoder_blocks,
        query_embed=query_embed,
        cross_block=cross_block,
        mean_head=mean_head,
        std_head=std_head,
    )


def init_params(config: TripletformerConfig, seed: int) -> TripletformerParams:
    """Seeded initialisation; a pure function of (config, seed)."""
    return _build_params(config, _RandomSource(spawn(seed, "init-params")))


class _ListSource:
    """Hands out pre-made tensors in construction order."""

    def __init__(self, tensors):
        self._iter = iter(tensors)

    def _next(self, shape) -> Tensor:
        try:
            t = next(self._iter)
        except StopIteration:
            raise ValueError("not enough tensors to rebuild the parameter structure")
        if t.shape != shape:
            raise ValueError(f"tensor shape {t.shape} does not fit slot {shape}")
        return t

    def matrix(self, fan_in: int, fan_out: int) -> Tensor:
        return self._next((fan_in, fan_out))

    def bias(self, dim: int) -> Tensor:
        return self._next((dim,))

    def induced(self, rows: int, dim: int) -> Tensor:
        return self._next((rows, dim))


def rebuild_params(config: TripletformerConfig, tensors) -> TripletformerParams:
    """Assemble a parameter structure around existing tensors.

    ``tensors`` must follow ``named_tensors`` order, which matches the
    construction order of ``init_params``.  Used to evaluate the model as a
    function of a flat tensor list, e.g. for gradient checking.
    """
    source = _ListSource(tensors)
    params = _build_params(config, source)
    leftovers = sum(1 for _ in source._iter)
    if leftovers:
        raise ValueError(f"{leftovers} tensors left over after rebuilding parameters")
    return params


# ---------------------------------------------------------------------------
# forward passes


def _as_bool_mask(mask, n: int, what: str) -> np.ndarray:
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"{what} shape {mask.shape} does not match {n} rows")
    return mask


def encoder_forward(
    params: TripletformerParams,
    context_matrix: np.ndarray | Tensor,
    context_mask: np.ndarray | None = None,
) -> Tensor:
    """Embed and self-attend the context set; returns (s, attn_dim)."""
    config = params.config
    x = context_matrix if isinstance(context_matrix, Tensor) else Tensor(context_matrix)
    if x.ndim != 2 or x.shape[1] != config.channels + 2:
        raise ValueError(
            f"context matrix must be (s, {config.channels + 2}), got {x.shape}"
        )
    mask = _as_bool_mask(context_mask, x.shape[0], "context_mask")
    if not mask.any():
        raise ValueError("empty context: every row is masked")
    z = feed_forward(x, params.input_embed, config.activation)
    for block in params.encoder_blocks:
        if isinstance(block, ImabParams):
            z = imab(z, z, z, block, query_mask=mask, key_mask=mask)
        else:
            z = mab(z, z, z, block, key_mask=mask)
    return z


def decoder_forward(
    params: TripletformerParams,
    encoded_context: Tensor,
    context_mask: np.ndarray | None,
    query_matrix: np.ndarray | Tensor,
    query_mask: np.ndarray | None = None,
) -> GaussianPrediction:
    """Cross-attend queries to the encoded context and read out Gaussians.

    Masked query rows are dropped from the returned prediction; the rest keep
    query order.
    """
    config = params.config
    w = query_matrix if isinstance(query_matrix, Tensor) else Tensor(query_matrix)
    if w.ndim != 2 or w.shape[1] != config.channels + 1:
        raise ValueError(
            f"query matrix must be (r, {config.channels + 1}), got {w.shape}"
        )
    kmask = _as_bool_mask(context_mask, encoded_context.shape[0], "context_mask")
    qmask = _as_bool_mask(query_mask, w.shape[0], "query_mask")
    if not qmask.any():
        raise ValueError("empty query set: every row is masked")
    y = feed_forward(w, params.query_embed, config.activation)
    if isinstance(params.cross_block, ImabParams):
        z = imab(
            y,
            encoded_context,
            encoded_context,
            params.cross_block,
            query_mask=qmask,
            key_mask=kmask,
        )
    else:
        z = mab(y, encoded_context, encoded_context, params.cross_block, key_mask=kmask)
    mean_col = matmul(z, params.mean_head.w) + params.mean_head.b
    std_col = softplus(matmul(z, params.std_head.w) + params.std_head.b) + SIGMA_FLOOR
    keep = np.flatnonzero(qmask)
    n = keep.size
    return GaussianPrediction(
        mean=reshape(take_rows(mean_col, keep), (n,)),
        std=reshape(take_rows(std_col, keep), (n,)),
    )


def predict(params: TripletformerParams, context, queries) -> GaussianPrediction:
    """One Gaussian per query given only context observations and queries."""
    config = params.config
    context_matrix = encode_context(context, config.channels)
    query_matrix = encode_queries(queries, config.channels)
    encoded = encoder_forward(params, context_matrix)
    return decoder_forward(params, encoded, None, query_matrix)


def predict_distribution(
    params: TripletformerParams, instance: InterpolationInstance
) -> GaussianPrediction:
    return predict(params, instance.context, instance.queries)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: TripletformerParams, path) -> None:
    """Write config plus named flat parameter arrays as deterministic JSON."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "config": params.config.to_dict(),
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.named_tensors()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))


def load_checkpoint(path) -> TripletformerParams:
    """Rebuild parameters bit-exactly from a checkpoint file."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    config = TripletformerConfig.from_dict(payload["config"])
    params = _build_params(config, _ZeroSource())
    stored = payload["params"]
    expected = dict(params.named_tensors())
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise ValueError(
            f"{path}: parameter names do not match config "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, tensor in expected.items():
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != tensor.shape:
            raise ValueError(
                f"{path}: {name} has shape {shape}, expected {tensor.shape}"
            )
        tensor.data[...] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
    return params
