#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Contrastive training on bound page pairs.

Each batch is one pair of pages bound into a single block-diagonal graph.
For every labelled (anchor, positive) pair the hardest negative (closest
non-positive vertex of page 2) is re-mined from the current embeddings,
and the margin loss is averaged over the pairs of the batch.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from spanflow.config import Config
from spanflow.errors import NonFiniteLossError, ValidationError
from spanflow.featurize import (
    Vocab,
    build_vocab,
    featurize_spans,
    init_embedding_table,
    table_gradient,
)
from spanflow.gnn import EncoderStack, ModelConfig, backward, forward, init_params
from spanflow.layout import LayoutConfig, Span, read_tokens, segment_page
from spanflow.pagegraph import PageGraph, bind_pair, build_graph, with_order
from spanflow.storage import read_json
from spanflow.validators import is_valid_label_record

logger = logging.getLogger(__name__)

EMBEDDING_PARAM = "embedding"


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    Attributes:
        margin: Hinge margin m of the contrastive loss
        epochs: Passes over the training batches
        learning_rate: Adaptive-moment step size
        beta1: First-moment decay
        beta2: Second-moment decay
        epsilon: Denominator guard
        folds: Cross-validation folds
        seed: Seed for initialization and batch shuffling
    """

    margin: float = Config.MARGIN
    epochs: int = Config.EPOCHS
    learning_rate: float = Config.LEARNING_RATE
    beta1: float = Config.BETA1
    beta2: float = Config.BETA2
    epsilon: float = Config.EPSILON
    folds: int = Config.FOLDS
    seed: int = Config.SEED

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValidationError(f"margin must be > 0, got {self.margin}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ValidationError(f"folds must be >= 2, got {self.folds}")
        if self.learning_rate < 0:
            raise ValidationError(
                f"learning_rate must be >= 0, got {self.learning_rate}",
            )
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ValidationError(f"{name} must be in [0, 1), got {value}")
        if self.epsilon <= 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class LabeledPair:
    """Labelled vertex pairs between two page graphs (vertex indices)."""

    graph1_id: str
    graph2_id: str
    pairs: tuple[tuple[int, int], ...]
    meta: dict[str, Any] = field(default_factory=dict)


@dataclass
class Batch:
    """One training batch: two pages and their labelled pairs."""

    batch_id: str
    graph1: PageGraph
    graph2: PageGraph
    labels: LabeledPair
    _bound: dict[tuple[int, str], PageGraph] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        n1, n2 = self.graph1.size, self.graph2.size
        anchors = [a for a, _ in self.labels.pairs]
        if len(set(anchors)) != len(anchors):
            raise ValidationError(f"batch {self.batch_id}: anchors must be unique")
        for a, p in self.labels.pairs:
            if not (0 <= a < n1 and 0 <= p < n2):
                raise ValidationError(
                    f"batch {self.batch_id}: pair ({a}, {p}) out of bounds",
                )

    @property
    def n1(self) -> int:
        return self.graph1.size

    def bound(self, config: ModelConfig) -> PageGraph:
        """Both pages bound into one graph at the model's order (cached)."""
        key = (config.order, config.rule)
        if key not in self._bound:
            self._bound[key] = bind_pair(
                with_order(self.graph1, config.order, config.rule),
                with_order(self.graph2, config.order, config.rule),
            )
        return self._bound[key]

    def spans(self) -> list[Span]:
        return list(self.graph1.vertices) + list(self.graph2.vertices)


class AdamOptimizer:
    """Adaptive moment estimation with bias correction."""

    def __init__(
        self,
        learning_rate: float,
        beta1: float,
        beta2: float,
        epsilon: float,
    ) -> None:
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first: dict[str, np.ndarray] = {}
        self.second: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place; names are visited in sorted order."""
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for name in sorted(grads):
            grad = grads[name]
            first = self.first.setdefault(name, np.zeros_like(grad))
            second = self.second.setdefault(name, np.zeros_like(grad))
            first *= self.beta1
            first += (1.0 - self.beta1) * grad
            second *= self.beta2
            second += (1.0 - self.beta2) * grad * grad
            denom = np.sqrt(second / correction2) + self.epsilon
            update = (first / correction1) / denom
            params[name] -= self.learning_rate * update


@dataclass
class TrainState:
    """Parameters, optimizer moments and counters."""

    model_config: ModelConfig
    train_config: TrainConfig
    vocab: Vocab
    params: EncoderStack
    table: np.ndarray
    optimizer: AdamOptimizer
    epoch: int = 0

    def named_parameters(self) -> dict[str, np.ndarray]:
        named = self.params.named_parameters()
        named[EMBEDDING_PARAM] = self.table
        return named


def new_state(
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocab,
) -> TrainState:
    """Freshly initialized training state (seeded)."""
    if vocab.d != model_config.d:
        raise ValidationError(
            f"vocabulary dimension {vocab.d} != model dimension {model_config.d}",
        )
    return TrainState(
        model_config=model_config,
        train_config=train_config,
        vocab=vocab,
        params=init_params(model_config, train_config.seed),
        table=init_embedding_table(vocab, train_config.seed + 1),
        optimizer=AdamOptimizer(
            train_config.learning_rate,
            train_config.beta1,
            train_config.beta2,
            train_config.epsilon,
        ),
    )


def contrastive_loss(
    v_anchor: np.ndarray,
    v_pos: np.ndarray,
    v_neg: np.ndarray,
    m: float,
) -> float:
    """Margin loss ||a - p|| + max(0, m - ||a - n||)."""
    pos = float(np.linalg.norm(v_anchor - v_pos))
    neg = float(np.linalg.norm(v_anchor - v_neg))
    return pos + max(0.0, m - neg)


def contrastive_loss_grad(
    v_anchor: np.ndarray,
    v_pos: np.ndarray,
    v_neg: np.ndarray,
    m: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss value and its (sub)gradients with respect to anchor, pos, neg.

    The subgradient is taken as 0 at zero distances and at the hinge kink.
    """
    d_pos = v_anchor - v_pos
    d_neg = v_anchor - v_neg
    dist_pos = float(np.linalg.norm(d_pos))
    dist_neg = float(np.linalg.norm(d_neg))
    hinge = m - dist_neg

    g_anchor = np.zeros_like(v_anchor)
    g_pos = np.zeros_like(v_pos)
    g_neg = np.zeros_like(v_neg)
    if dist_pos > 0:
        g_anchor += d_pos / dist_pos
        g_pos -= d_pos / dist_pos
    if hinge > 0 and dist_neg > 0:
        g_anchor -= d_neg / dist_neg
        g_neg += d_neg / dist_neg

    return dist_pos + max(0.0, hinge), g_anchor, g_pos, g_neg


def mine_negative(anchor: np.ndarray, candidates: np.ndarray, pos_index: int) -> int:
    """Closest candidate to the anchor other than the positive.

    Args:
        anchor: (d,) anchor embedding
        candidates: (K, d) embeddings of page 2
        pos_index: Index of the positive among the candidates

    Returns:
        int: Index of the hard negative (lowest index on ties)

    Raises:
        ValidationError: With fewer than two candidates
    """
    if candidates.shape[0] < 2:
        raise ValidationError("negative mining needs at least two candidates")
    distances = np.linalg.norm(candidates - anchor, axis=1)
    distances[pos_index] = np.inf
    return int(np.argmin(distances))


def batch_loss(
    batch: Batch,
    state: TrainState,
    *,
    with_grad: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None, np.ndarray]:
    """Mean contrastive loss of a batch and, optionally, parameter gradients.

    Returns:
        tuple: (loss, gradients keyed like TrainState.named_parameters or
        None, (N, d) embeddings of the bound graph)

    Raises:
        NonFiniteLossError: If a pair loss is NaN or infinite
    """
    config = state.model_config
    bound = batch.bound(config)
    feats, ids = featurize_spans(bound.vertices, state.vocab, state.table)
    result = forward(bound, feats, state.params, config)
    embeddings = result.embeddings
    page2 = embeddings[batch.n1 :]

    pairs = batch.labels.pairs
    if not pairs:
        return 0.0, None, embeddings

    margin = state.train_config.margin
    scale = 1.0 / len(pairs)
    total = 0.0
    d_embeddings = np.zeros_like(embeddings)
    for pair_index, (a, p) in enumerate(pairs):
        neg = mine_negative(embeddings[a], page2, p)
        loss, g_a, g_p, g_n = contrastive_loss_grad(
            embeddings[a],
            page2[p],
            page2[neg],
            margin,
        )
        if not np.isfinite(loss):
            raise NonFiniteLossError(batch.batch_id, pair_index)
        total += loss
        d_embeddings[a] += scale * g_a
        d_embeddings[batch.n1 + p] += scale * g_p
        d_embeddings[batch.n1 + neg] += scale * g_n

    mean_loss = total * scale
    if not with_grad:
        return mean_loss, None, embeddings

    grads = backward(d_embeddings, result.cache)
    named = dict(grads.params)
    named[EMBEDDING_PARAM] = table_gradient(ids, grads.features, state.table.shape[0])
    return mean_loss, named, embeddings


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_epoch(batches: list[Batch], state: TrainState) -> tuple[TrainState, float]:
    """One pass over the batches with an optimizer step per batch.

    Batch order is a seeded shuffle that depends only on (seed, epoch).

    Returns:
        tuple[TrainState, float]: Updated state and mean batch loss
    """
    if not batches:
        raise ValidationError("no training batches")

    order = _epoch_order(len(batches), state.train_config.seed, state.epoch)
    losses = []
    params = state.named_parameters()
    for index in order:
        batch = batches[int(index)]
        loss, grads, _ = batch_loss(batch, state)
        if grads is not None:
            state.optimizer.step(params, grads)
        losses.append(loss)
        logger.debug("epoch %d batch %s loss %.6f", state.epoch, batch.batch_id, loss)

    state.epoch += 1
    return state, float(np.mean(losses))


def validate(
    batches: list[Batch],
    state: TrainState,
) -> tuple[float | None, float | None]:
    """Mean loss and top-1 pairing score over validation batches."""
    from spanflow.evaluate import pair_ranks

    if not batches:
        return None, None
    losses = []
    ranks: list[int] = []
    for batch in batches:
        loss, _, embeddings = batch_loss(batch, state, with_grad=False)
        losses.append(loss)
        page1, page2 = embeddings[: batch.n1], embeddings[batch.n1 :]
        ranks.extend(pair_ranks(page1, page2, batch.labels.pairs))
    top1 = float(np.mean(np.array(ranks) < 1)) if ranks else None
    return float(np.mean(losses)), top1


def fit(
    train_batches: list[Batch],
    val_batches: list[Batch],
    state: TrainState,
    *,
    fold: int | None = None,
    on_epoch: Callable[[dict[str, Any]], None] | None = None,
) -> list[dict[str, Any]]:
    """Train for ``train_config.epochs`` epochs with per-epoch validation.

    Returns:
        list[dict]: Log rows {epoch, fold, train_loss, val_loss, val_top1}
    """
    rows = []
    for _ in range(state.train_config.epochs):
        state, train_loss = train_epoch(train_batches, state)
        val_loss, val_top1 = validate(val_batches, state)
        row = {
            "epoch": state.epoch,
            "fold": fold,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_top1": val_top1,
        }
        logger.info(
            "fold %s epoch %d train_loss %.6f val_loss %s val_top1 %s",
            fold,
            state.epoch,
            train_loss,
            val_loss,
            val_top1,
        )
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return rows


def kfold_split(
    batch_ids: list[str],
    k: int,
    seed: int,
) -> list[tuple[list[str], list[str]]]:
    """Seeded shuffle then contiguous k-way split.

    Returns:
        list[tuple[list[str], list[str]]]: (train, validation) id lists per fold

    Raises:
        ValidationError: If k < 2 or k exceeds the batch count
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if k > len(batch_ids):
        raise ValidationError(f"k={k} exceeds the {len(batch_ids)} available batches")

    permutation = np.random.default_rng(seed).permutation(len(batch_ids))
    shuffled = [batch_ids[i] for i in permutation]
    chunks = np.array_split(np.arange(len(shuffled)), k)
    folds = []
    for chunk in chunks:
        held = set(chunk.tolist())
        val = [shuffled[i] for i in chunk]
        train = [shuffled[i] for i in range(len(shuffled)) if i not in held]
        folds.append((train, val))
    return folds


def corpus_vocab(
    batches: list[Batch],
    model_config: ModelConfig,
    min_count: int = Config.MIN_COUNT,
    buckets: int = Config.HASH_BUCKETS,
) -> Vocab:
    """Vocabulary over every span of the given batches."""
    spans = [span for batch in batches for span in batch.spans()]
    return build_vocab(spans, min_count=min_count, buckets=buckets, d=model_config.d)


def _index_by_span_id(graph: PageGraph) -> dict[int, int]:
    return {span.span_id: i for i, span in enumerate(graph.vertices)}


def load_label_file(path: str | Path) -> dict[str, Any]:
    """Read and validate a label JSON file."""
    record = read_json(path)
    if not is_valid_label_record(record):
        raise ValidationError(f"{path}: invalid label record")
    return record


def load_batch(
    tokens1: str | Path,
    tokens2: str | Path,
    labels_path: str | Path,
    layout_config: LayoutConfig | None = None,
) -> Batch:
    """Segment both token files, build order-1 graphs and map labels.

    Label pairs refer to span_ids; they are mapped to vertex indices here.
    """
    record = load_label_file(labels_path)
    graph1 = build_graph(segment_page(read_tokens(tokens1), layout_config))
    graph2 = build_graph(segment_page(read_tokens(tokens2), layout_config))
    index1 = _index_by_span_id(graph1)
    index2 = _index_by_span_id(graph2)
    try:
        pairs = tuple((index1[a], index2[p]) for a, p in record["pairs"])
    except KeyError as exc:
        raise ValidationError(
            f"{labels_path}: label refers to unknown span {exc}",
        ) from exc

    labels = LabeledPair(
        graph1_id=record["graph1"],
        graph2_id=record["graph2"],
        pairs=pairs,
        meta=dict(record.get("meta", {})),
    )
    return Batch(
        batch_id=Path(labels_path).stem,
        graph1=graph1,
        graph2=graph2,
        labels=labels,
    )


def load_batches(
    manifest_path: str | Path,
    layout_config: LayoutConfig | None = None,
) -> list[Batch]:
    """Load every pair listed in a corpus manifest.

    Paths in the manifest are relative to the manifest's directory.
    """
    manifest = read_json(manifest_path)
    root = Path(manifest_path).parent
    try:
        entries = manifest["pairs"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{manifest_path}: manifest has no pairs") from exc

    batches = [
        load_batch(
            root / e["tokens1"],
            root / e["tokens2"],
            root / e["labels"],
            layout_config,
        )
        for e in entries
    ]
    logger.info("loaded %d batches from %s", len(batches), manifest_path)
    return batches


FoldSplit = tuple[list[str], list[str]]
FoldRunner = Callable[[list[FoldSplit]], list[dict[str, Any]]]


def run_fold(
    batches: list[Batch],
    split: FoldSplit,
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocab,
    fold: int,
) -> dict[str, Any]:
    """Train a fresh model on one fold and report its validation metrics.

    Returns:
        dict: {fold, rows, val_loss, val_top1}
    """
    by_id = {batch.batch_id: batch for batch in batches}
    train_ids, val_ids = split
    try:
        train_set = [by_id[i] for i in train_ids]
        val_set = [by_id[i] for i in val_ids]
    except KeyError as exc:
        raise ValidationError(f"fold {fold} refers to unknown batch {exc}") from exc

    state = new_state(model_config, train_config, vocab)
    rows = fit(train_set, val_set, state, fold=fold)
    last = rows[-1]
    return {
        "fold": fold,
        "rows": rows,
        "val_loss": last["val_loss"],
        "val_top1": last["val_top1"],
    }


@dataclass
class CrossValidation:
    """Per-fold results (in fold order) and their means."""

    folds: list[dict[str, Any]]

    @property
    def rows(self) -> list[dict[str, Any]]:
        return [row for result in self.folds for row in result["rows"]]

    @property
    def mean_val_loss(self) -> float:
        return float(np.mean([f["val_loss"] for f in self.folds]))

    @property
    def mean_val_top1(self) -> float:
        return float(np.mean([f["val_top1"] for f in self.folds]))


def cross_validate(
    batches: list[Batch],
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab: Vocab,
    runner: FoldRunner | None = None,
) -> CrossValidation:
    """k-fold cross-validation over the batches.

    Args:
        batches: All training batches
        model_config: Encoder configuration
        train_config: Optimization settings (``folds`` is k)
        vocab: Shared vocabulary
        runner: Executes the fold splits and returns their results in
            order; folds run in-process when omitted

    Returns:
        CrossValidation: Fold results reduced in fold order
    """
    batch_ids = [b.batch_id for b in batches]
    splits = kfold_split(batch_ids, train_config.folds, train_config.seed)
    if runner is None:
        results = [
            run_fold(batches, split, model_config, train_config, vocab, fold)
            for fold, split in enumerate(splits)
        ]
    else:
        results = runner(splits)
    results = sorted(results, key=lambda r: r["fold"])
    summary = CrossValidation(folds=results)
    logger.info(
        "cross-validation over %d folds: val_loss %.6f val_top1 %.4f",
        len(results),
        summary.mean_val_loss,
        summary.mean_val_top1,
    )
    return summary
