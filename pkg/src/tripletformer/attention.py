"""Set-attention building blocks: multihead attention, MAB and IMAB.

The blocks follow the residual form without any normalisation layers:

    MAB(q, k, v) = act(H + MLP(H)),   H = act(q + MHA(q, k, v))
    IMAB(q, k, v) = MAB(q, B, B),     B = MAB(induced_points, k, v)

``IMAB`` routes attention through a small learned set of induced points, so
its softmax-score cost is ``(L_q*l + l*L_k) * d`` multiply-adds instead of the
direct ``L_q*L_k*d``; near linear in set size when ``l`` is small.  The exact
counts are tallied in :func:`tripletformer.tensor.op_counters`.

Masking contract: attention can exclude whole key vectors (``key_mask``) or
whole query vectors, never individual query-key pairs.  Key masking zeroes
softmax columns exactly, so masked rows cannot contaminate any output.  Query
masking carries no in-block contract: masked query rows still produce values,
and callers drop them downstream (loss masking / prediction filtering).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Xoshiro256StarStar
from .tensor import (
    Tensor,
    concat_cols,
    div,
    gelu,
    matmul,
    op_counters,
    relu,
    softmax_rows,
    transpose,
)

ACTIVATIONS = {"relu": relu, "gelu": gelu}


def resolve_activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}")


def glorot_matrix(rng: Xoshiro256StarStar, fan_in: int, fan_out: int) -> Tensor:
    """Uniform(-b, b) weight matrix with b = sqrt(6 / (fan_in + fan_out))."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform_array(-bound, bound, (fan_in, fan_out)))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class FeedForwardParams:
    """Two-layer pointwise network: act(x @ w1 + b1) @ w2 + b2."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __post_init__(self):
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("feed-forward weights must be matrices")
        if self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],):
            raise ValueError("feed-forward bias shapes do not match their weights")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError(
                f"feed-forward layer mismatch: {self.w1.shape} then {self.w2.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def named_tensors(self, prefix: str = ""):
        yield f"{prefix}w1", self.w1
        yield f"{prefix}b1", self.b1
        yield f"{prefix}w2", self.w2
        yield f"{prefix}b2", self.b2


@dataclass
class MhaParams:
    """Per-head projections plus a shared output projection.

    ``w_q[i]`` has shape (query_dim, head_dim), ``w_k[i]``/``w_v[i]`` have
    shape (kv_dim, head_dim) and ``w_o`` has shape (model_dim, model_dim)
    with ``model_dim = num_heads * head_dim``.
    """

    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_o: Tensor

    def __post_init__(self):
        n = len(self.w_q)
        if n == 0 or len(self.w_k) != n or len(self.w_v) != n:
            raise ValueError("per-head projection lists must be equal and non-empty")
        head_dim = self.w_q[0].shape[1]
        for w in self.w_q + self.w_k + self.w_v:
            if w.ndim != 2 or w.shape[1] != head_dim:
                raise ValueError("all heads must share one head_dim")
        d = n * head_dim
        if self.w_o.shape != (d, d):
            raise ValueError(
                f"output projection shape {self.w_o.shape} does not match model_dim {d}"
            )

    @property
    def num_heads(self) -> int:
        return len(self.w_q)

    @property
    def head_dim(self) -> int:
        return self.w_q[0].shape[1]

    @property
    def model_dim(self) -> int:
        return self.num_heads * self.head_dim

    @property
    def query_dim(self) -> int:
        return self.w_q[0].shape[0]

    @property
    def kv_dim(self) -> int:
        return self.w_k[0].shape[0]

    def named_tensors(self, prefix: str = ""):
        for i, w in enumerate(self.w_q):
            yield f"{prefix}w_q.{i}", w
        for i, w in enumerate(self.w_k):
            yield f"{prefix}w_k.{i}", w
        for i, w in enumerate(self.w_v):
            yield f"{prefix}w_v.{i}", w
        yield f"{prefix}w_o", self.w_o


@dataclass
class MabParams:
    """Multihead attention block: residual MHA and residual MLP, no norm."""

    mha: MhaParams
    mlp: FeedForwardParams
    activation: str = "relu"

    def __post_init__(self):
        resolve_activation(self.activation)
        d = self.mha.model_dim
        if self.mha.query_dim != d:
            raise ValueError(
                f"query width {self.mha.query_dim} must equal model_dim {d} "
                "(residual addition)"
            )
        if self.mlp.in_dim != d or self.mlp.out_dim != d:
            raise ValueError(
                f"block MLP must map {d} -> {d}, got {self.mlp.in_dim} -> {self.mlp.out_dim}"
            )

    @property
    def model_dim(self) -> int:
        return self.mha.model_dim

    @property
    def kv_dim(self) -> int:
        return self.mha.kv_dim

    def named_tensors(self, prefix: str = ""):
        yield from self.mha.named_tensors(prefix + "mha.")
        yield from self.mlp.named_tensors(prefix + "mlp.")


@dataclass
class ImabParams:
    """Induced multihead attention block; each block owns its induced points."""

    inner: MabParams
    outer: MabParams
    induced_points: Tensor

    def __post_init__(self):
        l, d_h = _require_matrix(self.induced_points, "induced_points")
        if self.inner.model_dim != d_h:
            raise ValueError(
                f"induced point width {d_h} must equal inner model_dim "
                f"{self.inner.model_dim}"
            )
        if self.outer.kv_dim != d_h:
            raise ValueError(
                f"outer block consumes width-{self.outer.kv_dim} keys but the "
                f"induced transform produces width {d_h}"
            )

    @property
    def num_induced(self) -> int:
        return self.induced_points.shape[0]

    @property
    def model_dim(self) -> int:
        return self.outer.model_dim

    @property
    def kv_dim(self) -> int:
        return self.inner.kv_dim

    def named_tensors(self, prefix: str = ""):
        # construction order: inner block, outer block, induced points
        yield from self.inner.named_tensors(prefix + "inner.")
        yield from self.outer.named_tensors(prefix + "outer.")
        yield f"{prefix}induced_points", self.induced_points


def _require_matrix(t: Tensor, name: str) -> tuple[int, int]:
    if t.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {t.shape}")
    return t.shape


# ---------------------------------------------------------------------------
# forward operations


def scaled_dot_attention(
    q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None
) -> Tensor:
    """softmax(q k^T / sqrt(d')) v with exact key masking.

    Adds ``L_q * L_k * d'`` to the softmax-score multiply-add tally.
    """
    l_q, d_q = _require_matrix(q, "q")
    l_k, d_k = _require_matrix(k, "k")
    l_v, d_v = _require_matrix(v, "v")
    if d_q != d_k:
        raise ValueError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if l_k != l_v:
        raise ValueError(f"key/value row mismatch: {k.shape} vs {v.shape}")
    if l_k == 0:
        raise ValueError("empty attention support: no keys")
    scores = div(matmul(q, transpose(k)), math.sqrt(d_q))
    op_counters().score_madds += l_q * l_k * d_q
    weights = softmax_rows(scores, key_mask)
    return matmul(weights, v)


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: MhaParams,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Concatenated per-head scaled-dot attention followed by w_o."""
    if q.ndim != 2 or q.shape[1] != params.query_dim:
        raise ValueError(
            f"query width {q.shape} does not match projection input {params.query_dim}"
        )
    if k.ndim != 2 or k.shape[1] != params.kv_dim:
        raise ValueError(
            f"key width {k.shape} does not match projection input {params.kv_dim}"
        )
    if v.ndim != 2 or v.shape[1] != params.kv_dim:
        raise ValueError(
            f"value width {v.shape} does not match projection input {params.kv_dim}"
        )
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value row mismatch: {k.shape} vs {v.shape}")
    heads = []
    for i in range(params.num_heads):
        q_i = matmul(q, params.w_q[i])
        k_i = matmul(k, params.w_k[i])
        v_i = matmul(v, params.w_v[i])
        heads.append(scaled_dot_attention(q_i, k_i, v_i, key_mask))
    return matmul(concat_cols(heads), params.w_o)


def feed_forward(x: Tensor, params: FeedForwardParams, activation: str) -> Tensor:
    act = resolve_activation(activation)
    hidden = act(matmul(x, params.w1) + params.b1)
    return matmul(hidden, params.w2) + params.b2


def mab(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: MabParams,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """act(H + MLP(H)) with H = act(q + MHA(q, k, v)); shape (L_q, model_dim)."""
    act = resolve_activation(params.activation)
    h = act(q + multi_head_attention(q, k, v, params.mha, key_mask))
    return act(h + feed_forward(h, params.mlp, params.activation))


def imab(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: ImabParams,
    query_mask: np.ndarray | None = None,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """MAB(q, B, B) with B = MAB(induced_points, k, v).

    ``query_mask`` is accepted for interface symmetry but does not alter the
    computation: masked query rows are computed and must be excluded by the
    caller (their values carry no contract).  Induced points are never masked.
    """
    if query_mask is not None:
        qm = np.asarray(query_mask, dtype=bool)
        if qm.shape != (q.shape[0],):
            raise ValueError(
                f"query_mask shape {qm.shape} does not match {q.shape[0]} queries"
            )
    transformed = mab(params.induced_points, k, v, params.inner, key_mask)
    return mab(q, transformed, transformed, params.outer, None)


# ---------------------------------------------------------------------------
# initialisation


def init_feed_forward(
    rng: Xoshiro256StarStar, in_dim: int, hidden_dim: int, out_dim: int
) -> FeedForwardParams:
    return FeedForwardParams(
        w1=glorot_matrix(rng, in_dim, hidden_dim),
        b1=Tensor(np.zeros(hidden_dim)),
        w2=glorot_matrix(rng, hidden_dim, out_dim),
        b2=Tensor(np.zeros(out_dim)),
    )


def init_mha(
    rng: Xoshiro256StarStar,
    model_dim: int,
    num_heads: int,
    query_dim: int | None = None,
    kv_dim: int | None = None,
) -> MhaParams:
    if model_dim % num_heads != 0:
        raise ValueError(f"model_dim {model_dim} not divisible by {num_heads} heads")
    query_dim = model_dim if query_dim is None else query_dim
    kv_dim = model_dim if kv_dim is None else kv_dim
    head_dim = model_dim // num_heads
    return MhaParams(
        w_q=[glorot_matrix(rng, query_dim, head_dim) for _ in range(num_heads)],
        w_k=[glorot_matrix(rng, kv_dim, head_dim) for _ in range(num_heads)],
        w_v=[glorot_matrix(rng, kv_dim, head_dim) for _ in range(num_heads)],
        w_o=glorot_matrix(rng, model_dim, model_dim),
    )


def init_mab(
    rng: Xoshiro256StarStar,
    model_dim: int,
    num_heads: int,
    activation: str = "relu",
    kv_dim: int | None = None,
) -> MabParams:
    """MAB with its internal MLP hidden width fixed to the model dimension."""
    return MabParams(
        mha=init_mha(rng, model_dim, num_heads, query_dim=model_dim, kv_dim=kv_dim),
        mlp=init_feed_forward(rng, model_dim, model_dim, model_dim),
        activation=activation,
    )


def init_imab(
    rng: Xoshiro256StarStar,
    model_dim: int,
    num_heads: int,
    num_induced: int,
    activation: str = "relu",
    kv_dim: int | None = None,
    induced_dim: int | None = None,
) -> ImabParams:
    """IMAB whose induced points are drawn from N(0, 1/sqrt(d_h)).

    The second Gaussian argument is the variance, so the draw scale is
    ``d_h ** -0.25``.
    """
    induced_dim = model_dim if induced_dim is None else induced_dim
    inner = init_mab(rng, induced_dim, num_heads, activation, kv_dim=kv_dim)
    outer = init_mab(rng, model_dim, num_heads, activation, kv_dim=induced_dim)
    points = Tensor(rng.normal_array(0.0, induced_dim**-0.25, (num_induced, induced_dim)))
    return ImabParams(inner=inner, outer=outer, induced_points=points)
