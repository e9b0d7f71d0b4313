#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Masked graph-transformer encoder with exact reverse-mode gradients.

Each layer lets every vertex attend over its order-x neighbourhood only
(adjacency-masked attention), aggregates value vectors with the attention
weights, and runs the usual post-norm residual + feed-forward block.
With regularization on, vertices farther than one hop (Euclidean radius in
hop space) keep their keys but contribute zero value: they absorb
attention mass without passing content.

With position keys on, every key is shifted by a learned per-head vector
for its hop offset (P_vert, P_hor) relative to the query, clipped to the
order window, so a head can prefer the span to its left over the one
above even when both read alike.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Literal

import numpy as np

from spanflow.config import Config
from spanflow.errors import DegenerateAttentionError, MissingCacheError, ValidationError
from spanflow.pagegraph import UNREACHABLE, NeighborhoodRule, PageGraph, with_order

logger = logging.getLogger(__name__)

AttentionMode = Literal["softmax", "literal_eq2"]

LN_EPS = 1e-5
DEGENERATE_DENOMINATOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    """Encoder hyperparameters.

    Attributes:
        d: Feature dimension (equal to the span feature size)
        heads: Attention heads; must divide d
        layers: Number of stacked encoder layers
        order: Neighbourhood order x
        attention_mode: "softmax" or the literal ratio form "literal_eq2"
        regularization: Value-zeroing of vertices beyond hop radius 1;
            always active when order > 1
        rule: Hop-space neighbourhood rule for orders above 1
        position_keys: Add learned hop-offset vectors to the keys
    """

    d: int = Config.EMBED_DIM
    heads: int = Config.HEADS
    layers: int = Config.LAYERS
    order: int = Config.ORDER
    attention_mode: AttentionMode = Config.ATTENTION_MODE  # type: ignore[assignment]
    regularization: bool = True
    rule: NeighborhoodRule = Config.NEIGHBORHOOD_RULE  # type: ignore[assignment]
    position_keys: bool = Config.POSITION_KEYS

    def __post_init__(self) -> None:
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ValidationError(
                f"d={self.d} must be a positive multiple of heads={self.heads}",
            )
        if self.layers < 0:
            raise ValidationError(f"layers must be >= 0, got {self.layers}")
        if self.order < 1:
            raise ValidationError(f"order must be >= 1, got {self.order}")
        if self.attention_mode not in ("softmax", "literal_eq2"):
            raise ValidationError(f"unknown attention mode {self.attention_mode!r}")
        if self.rule not in ("and", "or"):
            raise ValidationError(f"unknown neighbourhood rule {self.rule!r}")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def d_ff(self) -> int:
        return 2 * self.d

    @property
    def offset_count(self) -> int:
        """Rows of the per-head offset table: (2x + 1) squared."""
        return (2 * self.order + 1) ** 2

    @property
    def regularization_active(self) -> bool:
        return self.regularization or self.order > 1

    def to_dict(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EncoderLayer:
    """Parameters of one encoder layer (per-head Q/K/V stacked on axis 0)."""

    wq: np.ndarray  # (H, d, d/H)
    wk: np.ndarray  # (H, d, d/H)
    wv: np.ndarray  # (H, d, d/H)
    wo: np.ndarray  # (d, d)
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w1: np.ndarray  # (d, d_ff)
    b1: np.ndarray
    w2: np.ndarray  # (d_ff, d)
    b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    rel_k: np.ndarray | None = None  # (H, (2x+1)^2, d/H), position keys only


POSITION_KEY_NAME = "rel_k"
PARAM_NAMES: tuple[str, ...] = tuple(
    f.name for f in fields(EncoderLayer) if f.name != POSITION_KEY_NAME
)


@dataclass
class EncoderStack:
    """All encoder layers."""

    layers: list[EncoderLayer] = field(default_factory=list)

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Parameter arrays keyed ``layers.<i>.<name>`` (live references)."""
        named = {}
        for i, layer in enumerate(self.layers):
            for name in PARAM_NAMES:
                named[f"layers.{i}.{name}"] = getattr(layer, name)
            if layer.rel_k is not None:
                named[f"layers.{i}.{POSITION_KEY_NAME}"] = layer.rel_k
        return named

    @classmethod
    def from_named(cls, named: dict[str, np.ndarray], n_layers: int) -> "EncoderStack":
        try:
            layers = [
                EncoderLayer(
                    **{name: named[f"layers.{i}.{name}"] for name in PARAM_NAMES},
                    rel_k=named.get(f"layers.{i}.{POSITION_KEY_NAME}"),
                )
                for i in range(n_layers)
            ]
        except KeyError as exc:
            raise ValidationError(f"missing encoder parameter {exc}") from exc
        return cls(layers=layers)

    def copy(self) -> "EncoderStack":
        return EncoderStack.from_named(
            {k: v.copy() for k, v in self.named_parameters().items()},
            len(self.layers),
        )


def _glorot(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    fan_in: int,
    fan_out: int,
) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int) -> EncoderStack:
    """Seeded Glorot-uniform initialization of every layer.

    Offset key tables start at zero and draw nothing from the generator,
    so every other tensor is the same whatever the order.

    Args:
        config: Model configuration
        seed: Generator seed

    Returns:
        EncoderStack: float64 parameters
    """
    rng = np.random.default_rng(seed)
    d, h, dh, dff = config.d, config.heads, config.head_dim, config.d_ff
    layers = []
    for _ in range(config.layers):
        layers.append(
            EncoderLayer(
                wq=_glorot(rng, (h, d, dh), d, dh),
                wk=_glorot(rng, (h, d, dh), d, dh),
                wv=_glorot(rng, (h, d, dh), d, dh),
                wo=_glorot(rng, (d, d), d, d),
                ln1_g=np.ones(d),
                ln1_b=np.zeros(d),
                w1=_glorot(rng, (d, dff), d, dff),
                b1=np.zeros(dff),
                w2=_glorot(rng, (dff, d), dff, d),
                b2=np.zeros(d),
                ln2_g=np.ones(d),
                ln2_b=np.zeros(d),
                rel_k=(
                    np.zeros((h, config.offset_count, dh))
                    if config.position_keys
                    else None
                ),
            ),
        )
    return EncoderStack(layers=layers)


# ---------------------------------------------------------------------------
# primitives


def _layer_norm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv
    return xhat * gamma + beta, (xhat, inv)


def _layer_norm_backward(
    dy: np.ndarray,
    gamma: np.ndarray,
    cache: tuple[np.ndarray, np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv = cache
    dxhat = dy * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def hop_offsets(p_vert: np.ndarray, p_hor: np.ndarray, order: int) -> np.ndarray:
    """Row index into a (2x+1)^2 offset table for every (query, key) pair.

    Offsets are clipped to [-x, x] on each axis; unreachable pairs map to
    row 0 and are masked out by the adjacency anyway.
    """
    width = 2 * order + 1
    reachable = p_vert != UNREACHABLE
    vert = np.clip(np.where(reachable, p_vert, 0), -order, order) + order
    hor = np.clip(np.where(reachable, p_hor, 0), -order, order) + order
    return np.where(reachable, vert * width + hor, 0).astype(np.intp)


@dataclass
class HeadCache:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    alpha: np.ndarray
    weights: np.ndarray
    denominator: np.ndarray | None
    position: np.ndarray | None = None
    offsets: np.ndarray | None = None


def masked_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    adjacency: np.ndarray,
    keep: np.ndarray,
    mode: AttentionMode = "softmax",
    *,
    position: np.ndarray | None = None,
    offsets: np.ndarray | None = None,
    layer: int | None = None,
    head: int | None = None,
) -> tuple[np.ndarray, HeadCache]:
    """Single-head adjacency-masked attention.

    Args:
        q: (N, e) queries
        k: (N, e) keys
        v: (N, e) values
        adjacency: (N, N) boolean support of the attention rows
        keep: (N, N) boolean; False zeroes the value of j for query i
        mode: "softmax" or "literal_eq2"
        position: Optional (n_offsets, e) key shifts per hop offset
        offsets: (N, N) rows of ``position`` from :func:`hop_offsets`
        layer: Layer index for error reports
        head: Head index for error reports

    Returns:
        tuple[np.ndarray, HeadCache]: (N, e) output and the backward cache

    Raises:
        DegenerateAttentionError: Literal mode row with |denominator| < 1e-12
    """
    scale = 1.0 / math.sqrt(q.shape[1])
    raw = q @ k.T
    if position is not None:
        if offsets is None:
            raise ValidationError("position keys need an offset index")
        raw = raw + np.take_along_axis(q @ position.T, offsets, axis=1)
    denominator = None

    if mode == "softmax":
        scores = np.where(adjacency, raw * scale, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        expo = np.exp(scores)
        alpha = expo / expo.sum(axis=1, keepdims=True)
    else:
        numerator = np.where(adjacency, raw, 0.0)
        denominator = numerator.sum(axis=1)
        bad = np.flatnonzero(np.abs(denominator) < DEGENERATE_DENOMINATOR)
        if bad.size:
            raise DegenerateAttentionError(int(bad[0]), layer=layer, head=head)
        alpha = scale * numerator / denominator[:, None]

    weights = np.where(keep, alpha, 0.0)
    cache = HeadCache(q, k, v, alpha, weights, denominator, position, offsets)
    return weights @ v, cache


def _masked_attention_backward(
    dout: np.ndarray,
    cache: HeadCache,
    adjacency: np.ndarray,
    keep: np.ndarray,
    mode: AttentionMode,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None]:
    scale = 1.0 / math.sqrt(cache.q.shape[1])
    dv = cache.weights.T @ dout
    # zeroed values receive no gradient through alpha either
    dalpha = np.where(keep, dout @ cache.v.T, 0.0)
    row_dot = (dalpha * cache.alpha).sum(axis=1, keepdims=True)

    if mode == "softmax":
        draw = cache.alpha * (dalpha - row_dot) * scale
    else:
        assert cache.denominator is not None
        ratio = (scale * dalpha - row_dot) / cache.denominator[:, None]
        draw = np.where(adjacency, ratio, 0.0)

    dq = draw @ cache.k
    dposition = None
    if cache.position is not None and cache.offsets is not None:
        n = draw.shape[0]
        dshift = np.zeros((n, cache.position.shape[0]))
        rows = np.broadcast_to(np.arange(n)[:, None], draw.shape)
        np.add.at(dshift, (rows, cache.offsets), draw)
        dq += dshift @ cache.position
        dposition = dshift.T @ cache.q
    return dq, draw.T @ cache.q, dv, dposition


# ---------------------------------------------------------------------------
# layers


@dataclass
class LayerCache:
    x: np.ndarray
    heads: list[HeadCache]
    concat: np.ndarray
    y1: np.ndarray
    ln1: tuple[np.ndarray, np.ndarray]
    hidden_pre: np.ndarray
    hidden: np.ndarray
    ln2: tuple[np.ndarray, np.ndarray]


def value_keep_mask(
    p_vert: np.ndarray,
    p_hor: np.ndarray,
    config: ModelConfig,
) -> np.ndarray:
    """Boolean (N, N) mask of value vectors passed to each query."""
    if not config.regularization_active:
        return np.ones(p_vert.shape, dtype=bool)
    reachable = p_vert != UNREACHABLE
    vert = np.where(reachable, p_vert, 0).astype(np.float64)
    hor = np.where(reachable, p_hor, 0).astype(np.float64)
    radius_sq = np.where(reachable, vert**2 + hor**2, np.inf)
    return radius_sq <= 1.0


def _layer_forward(
    x: np.ndarray,
    adjacency: np.ndarray,
    keep: np.ndarray,
    layer: EncoderLayer,
    config: ModelConfig,
    layer_index: int | None = None,
    offsets: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, LayerCache]:
    n = x.shape[0]
    queries = np.einsum("nd,hde->hne", x, layer.wq)
    keys = np.einsum("nd,hde->hne", x, layer.wk)
    values = np.einsum("nd,hde->hne", x, layer.wv)

    outputs = []
    head_caches = []
    for h in range(config.heads):
        out, head_cache = masked_attention(
            queries[h],
            keys[h],
            values[h],
            adjacency,
            keep,
            config.attention_mode,
            position=None if layer.rel_k is None else layer.rel_k[h],
            offsets=offsets,
            layer=layer_index,
            head=h,
        )
        outputs.append(out)
        head_caches.append(head_cache)

    concat = np.stack(outputs, axis=1).reshape(n, config.d)
    y1, ln1 = _layer_norm(x + concat @ layer.wo, layer.ln1_g, layer.ln1_b)
    hidden_pre = y1 @ layer.w1 + layer.b1
    hidden = np.maximum(hidden_pre, 0.0)
    y2, ln2 = _layer_norm(y1 + hidden @ layer.w2 + layer.b2, layer.ln2_g, layer.ln2_b)

    alpha = np.stack([c.alpha for c in head_caches])
    cache = LayerCache(x, head_caches, concat, y1, ln1, hidden_pre, hidden, ln2)
    return y2, alpha, cache


def _layer_backward(
    dy: np.ndarray,
    cache: LayerCache,
    adjacency: np.ndarray,
    keep: np.ndarray,
    layer: EncoderLayer,
    config: ModelConfig,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    grads: dict[str, np.ndarray] = {}
    n = dy.shape[0]

    dr2, dg2, db2 = _layer_norm_backward(dy, layer.ln2_g, cache.ln2)
    grads["ln2_g"], grads["ln2_b"] = dg2, db2
    grads["b2"] = dr2.sum(axis=0)
    grads["w2"] = cache.hidden.T @ dr2
    dhidden_pre = (dr2 @ layer.w2.T) * (cache.hidden_pre > 0)
    grads["b1"] = dhidden_pre.sum(axis=0)
    grads["w1"] = cache.y1.T @ dhidden_pre
    dy1 = dr2 + dhidden_pre @ layer.w1.T

    dr1, dg1, db1 = _layer_norm_backward(dy1, layer.ln1_g, cache.ln1)
    grads["ln1_g"], grads["ln1_b"] = dg1, db1
    grads["wo"] = cache.concat.T @ dr1
    dconcat = (dr1 @ layer.wo.T).reshape(n, config.heads, config.head_dim)

    dx = dr1.copy()
    dwq = np.zeros_like(layer.wq)
    dwk = np.zeros_like(layer.wk)
    dwv = np.zeros_like(layer.wv)
    drel = None if layer.rel_k is None else np.zeros_like(layer.rel_k)
    for h, head_cache in enumerate(cache.heads):
        dq, dk, dv, dposition = _masked_attention_backward(
            dconcat[:, h, :],
            head_cache,
            adjacency,
            keep,
            config.attention_mode,
        )
        dwq[h] = cache.x.T @ dq
        dwk[h] = cache.x.T @ dk
        dwv[h] = cache.x.T @ dv
        if dposition is not None:
            drel[h] = dposition
        dx += dq @ layer.wq[h].T + dk @ layer.wk[h].T + dv @ layer.wv[h].T
    grads["wq"], grads["wk"], grads["wv"] = dwq, dwk, dwv
    if drel is not None:
        grads[POSITION_KEY_NAME] = drel
    return dx, grads


def _prepare_graph(g: PageGraph, config: ModelConfig) -> PageGraph:
    if g.order != config.order or g.rule != config.rule or g.p_vert is None:
        g = with_order(g, config.order, config.rule)
    return g


def _offsets_for(
    p_vert: np.ndarray,
    p_hor: np.ndarray,
    config: ModelConfig,
) -> np.ndarray | None:
    if not config.position_keys:
        return None
    return hop_offsets(p_vert, p_hor, config.order)


def _check_position_keys(params: EncoderStack, config: ModelConfig) -> None:
    expected = (config.heads, config.offset_count, config.head_dim)
    for index, layer in enumerate(params.layers):
        if not config.position_keys:
            if layer.rel_k is not None:
                raise ValidationError(
                    f"layer {index} has offset keys but position_keys is off",
                )
        elif layer.rel_k is None or layer.rel_k.shape != expected:
            shape = None if layer.rel_k is None else layer.rel_k.shape
            raise ValidationError(
                f"layer {index} offset keys have shape {shape}, expected {expected}",
            )


def attention_layer(
    feats: np.ndarray,
    adjacency: np.ndarray,
    p_vert: np.ndarray,
    p_hor: np.ndarray,
    layer: EncoderLayer,
    config: ModelConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """One encoder layer.

    Args:
        feats: (N, d) input vertex vectors
        adjacency: (N, N) order-x adjacency
        p_vert: Vertical hop matrix
        p_hor: Horizontal hop matrix
        layer: Layer parameters
        config: Model configuration

    Returns:
        tuple[np.ndarray, np.ndarray]: (N, d) output and (H, N, N) attention
    """
    keep = value_keep_mask(p_vert, p_hor, config)
    offsets = _offsets_for(p_vert, p_hor, config)
    out, alpha, _ = _layer_forward(
        feats,
        adjacency,
        keep,
        layer,
        config,
        offsets=offsets,
    )
    return out, alpha


@dataclass
class ForwardCache:
    """State retained by :func:`forward` for :func:`backward`."""

    params: EncoderStack
    config: ModelConfig
    adjacency: np.ndarray
    keep: np.ndarray
    layers: list[LayerCache]


@dataclass
class ForwardResult:
    """Embeddings, per-layer attention (H, N, N) and the backward cache."""

    embeddings: np.ndarray
    attention: list[np.ndarray]
    cache: ForwardCache


def forward(
    g: PageGraph,
    feats: np.ndarray,
    params: EncoderStack,
    config: ModelConfig,
) -> ForwardResult:
    """Run the encoder stack over a graph.

    The graph is re-expanded to ``config.order`` if it was built at
    another order.

    Args:
        g: Page graph (possibly a bound pair)
        feats: (N, d) finite vertex features
        params: Encoder parameters shaped for ``config``
        config: Model configuration

    Returns:
        ForwardResult: Embeddings, attention maps and cache

    Raises:
        ValidationError: On shape mismatch or non-finite features
    """
    if feats.shape != (g.size, config.d):
        raise ValidationError(
            f"features of shape {feats.shape} do not match ({g.size}, {config.d})",
        )
    if not np.all(np.isfinite(feats)):
        raise ValidationError("features contain non-finite values")
    if len(params.layers) != config.layers:
        raise ValidationError(
            f"{len(params.layers)} parameter layers, config wants {config.layers}",
        )
    _check_position_keys(params, config)

    g = _prepare_graph(g, config)
    p_vert, p_hor = g.require_hops()
    keep = value_keep_mask(p_vert, p_hor, config)
    offsets = _offsets_for(p_vert, p_hor, config)

    x = np.array(feats, dtype=np.float64)
    attention = []
    caches = []
    for index, layer in enumerate(params.layers):
        x, alpha, cache = _layer_forward(
            x,
            g.adjacency,
            keep,
            layer,
            config,
            index,
            offsets,
        )
        attention.append(alpha)
        caches.append(cache)

    return ForwardResult(
        embeddings=x,
        attention=attention,
        cache=ForwardCache(params, config, g.adjacency, keep, caches),
    )


@dataclass
class Gradients:
    """Gradients keyed like :meth:`EncoderStack.named_parameters`."""

    params: dict[str, np.ndarray]
    features: np.ndarray


def backward(loss_grad: np.ndarray, cache: ForwardCache | None) -> Gradients:
    """Exact reverse-mode gradients of the forward computation.

    Args:
        loss_grad: (N, d) gradient of the loss with respect to embeddings
        cache: Cache from :func:`forward`

    Returns:
        Gradients: Per-parameter gradients and the feature gradient

    Raises:
        MissingCacheError: If no forward cache is supplied
    """
    if cache is None:
        raise MissingCacheError("backward called without a forward cache")

    grads: dict[str, np.ndarray] = {}
    dx = np.array(loss_grad, dtype=np.float64)
    for index in reversed(range(len(cache.layers))):
        layer = cache.params.layers[index]
        dx, layer_grads = _layer_backward(
            dx,
            cache.layers[index],
            cache.adjacency,
            cache.keep,
            layer,
            cache.config,
        )
        for name, value in layer_grads.items():
            grads[f"layers.{index}.{name}"] = value

    return Gradients(params=grads, features=dx)


def rollout(attention: list[np.ndarray]) -> np.ndarray:
    """Attention rollout over the layers.

    Each layer's head-averaged map is augmented with the identity and
    row-normalized; the rollout multiplies the layers in order, each new
    layer on the left.

    Args:
        attention: Per-layer (H, N, N) attention

    Returns:
        np.ndarray: (N, N) row-stochastic attribution matrix

    Raises:
        ValidationError: If no layer is given
    """
    if not attention:
        raise ValidationError("rollout needs at least one attention layer")
    n = attention[0].shape[-1]
    identity = np.eye(n)
    result = identity.copy()
    for alpha in attention:
        averaged = alpha.mean(axis=0) + identity
        averaged = averaged / averaged.sum(axis=1, keepdims=True)
        result = averaged @ result
    return result
