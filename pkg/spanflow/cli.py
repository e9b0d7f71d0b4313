#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Command-line entry point.

Subcommands: segment, graph, synth, train, eval, rollout. Options resolve
as flags > ``--config`` JSON file > ``SPANFLOW_*`` environment > built-in
defaults. Logs go to stderr; stdout carries one summary JSON line.
"""

import argparse
import json
import logging
import sys
from collections.abc import Callable
from dataclasses import MISSING, asdict, dataclass, fields
from pathlib import Path
from typing import Any, NoReturn

from spanflow import tasks
from spanflow.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from spanflow.config import Config
from spanflow.errors import SpanflowError, ValidationError
from spanflow.evaluate import (
    embeddings_frame,
    emit_report,
    evaluate_corpus,
    query_overlays,
)
from spanflow.featurize import featurize_spans
from spanflow.gnn import ModelConfig, forward, rollout
from spanflow.layout import LayoutConfig, read_tokens, segment_document, write_spans
from spanflow.overlay import render_graph_svg, render_rollout_svg
from spanflow.pagegraph import build_graph, export_graph
from spanflow.storage import (
    atomic_directory,
    atomic_write_text,
    read_json,
    write_json,
    write_jsonl,
)
from spanflow.synthdoc import CorpusSpec, generate_corpus, split_manifest
from spanflow.train import (
    TrainConfig,
    corpus_vocab,
    cross_validate,
    fit,
    load_batches,
    new_state,
)
from spanflow.validators import (
    ATTENTION_MODES,
    NEIGHBORHOOD_RULES,
    is_valid_attention_mode,
    is_valid_k_list,
    is_valid_neighborhood_rule,
)

logger = logging.getLogger(__name__)

COMMANDS = ("segment", "graph", "synth", "train", "eval", "rollout")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved options of one run."""

    command: str
    input: str | None = None
    output: str | None = None
    checkpoint: tuple[str, ...] = ()
    query: tuple[int, ...] = ()
    # layout
    gap_factor: float = Config.GAP_FACTOR
    line_tol: float | None = Config.LINE_TOL
    # model
    embed_dim: int = Config.EMBED_DIM
    heads: int = Config.HEADS
    layers: int = Config.LAYERS
    order: int = Config.ORDER
    attention_mode: str = Config.ATTENTION_MODE
    rule: str = Config.NEIGHBORHOOD_RULE
    regularization: bool = True
    position_keys: bool = Config.POSITION_KEYS
    # featurizer
    min_count: int = Config.MIN_COUNT
    hash_buckets: int = Config.HASH_BUCKETS
    # training
    margin: float = Config.MARGIN
    learning_rate: float = Config.LEARNING_RATE
    beta1: float = Config.BETA1
    beta2: float = Config.BETA2
    epsilon: float = Config.EPSILON
    epochs: int = Config.EPOCHS
    folds: int = Config.FOLDS
    seed: int = Config.SEED
    cross_validation: bool = True
    # evaluation
    eval_k: str = Config.EVAL_K
    overlay_batches: int = 1
    # synthesis
    pages: int = 40
    holdout: int = 0
    noise: float = 0.0
    full_scale: bool = False
    svg: bool = False
    log_level: str = Config.LOG_LEVEL

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if not is_valid_attention_mode(self.attention_mode):
            raise ValidationError(f"unknown attention mode {self.attention_mode!r}")
        if not is_valid_neighborhood_rule(self.rule):
            raise ValidationError(f"unknown neighbourhood rule {self.rule!r}")
        if not is_valid_k_list(self.eval_k):
            raise ValidationError(f"invalid k list {self.eval_k!r}")
        if self.min_count < 1 or self.hash_buckets < 1:
            raise ValidationError("min_count and hash_buckets must be >= 1")
        if self.holdout < 0 or self.overlay_batches < 0:
            raise ValidationError("holdout and overlay_batches must be >= 0")
        if self.log_level.upper() not in logging.getLevelNamesMapping():
            raise ValidationError(f"unknown log level {self.log_level!r}")
        # Building the module configs runs their own range checks
        self.layout_config()
        self.model_config()
        self.train_config()

    def layout_config(self) -> LayoutConfig:
        return LayoutConfig(gap_factor=self.gap_factor, line_tol=self.line_tol)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.embed_dim,
            heads=self.heads,
            layers=self.layers,
            order=self.order,
            attention_mode=self.attention_mode,  # type: ignore[arg-type]
            regularization=self.regularization,
            rule=self.rule,  # type: ignore[arg-type]
            position_keys=self.position_keys,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            margin=self.margin,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            folds=self.folds,
            seed=self.seed,
        )

    def path(self, name: str) -> Path:
        """Path option that the current command cannot run without."""
        value = getattr(self, name)
        if not value:
            raise ValidationError(f"{self.command} needs --{name}")
        return Path(value)


def _defaults() -> dict[str, Any]:
    values = {}
    for f in fields(RunConfig):
        if f.default is not MISSING:
            values[f.name] = f.default
        elif f.default_factory is not MISSING:
            values[f.name] = f.default_factory()
    return values


DEFAULTS = _defaults()


class UsageError(SpanflowError):
    """Command-line usage error."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _help(text: str, name: str) -> str:
    return f"{text} (default: {DEFAULTS.get(name)})"


def _flag(
    parser: argparse.ArgumentParser,
    name: str,
    text: str,
    value_type: Callable[[str], Any] | None = None,
    **kwargs: Any,
) -> None:
    option = "--" + name.replace("_", "-")
    if value_type is not None:
        kwargs["type"] = value_type
    parser.add_argument(
        option,
        dest=name,
        default=argparse.SUPPRESS,
        help=_help(text, name),
        **kwargs,
    )


def _switch(parser: argparse.ArgumentParser, name: str, text: str) -> None:
    option = "--" + name.replace("_", "-")
    parser.add_argument(
        option,
        dest=name,
        default=argparse.SUPPRESS,
        action=argparse.BooleanOptionalAction,
        help=_help(text, name),
    )


def _add_layout_flags(parser: argparse.ArgumentParser) -> None:
    _flag(
        parser,
        "gap_factor",
        "cut lines where a gap exceeds this multiple of the median gap",
        float,
    )
    _flag(
        parser,
        "line_tol",
        "line-grouping tolerance in page units; unset derives it",
        float,
    )


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    _flag(parser, "embed_dim", "feature and embedding dimension d", int)
    _flag(parser, "heads", "attention heads", int)
    _flag(parser, "layers", "encoder layers", int)
    _flag(parser, "order", "neighbourhood order x", int)
    _flag(
        parser,
        "attention_mode",
        "attention normalization",
        choices=ATTENTION_MODES,
    )
    _flag(parser, "rule", "hop-space neighbourhood rule", choices=NEIGHBORHOOD_RULES)
    _switch(
        parser,
        "regularization",
        "zero values beyond hop radius 1 (always on above order 1)",
    )
    _switch(
        parser,
        "position_keys",
        "shift attention keys by learned hop-offset vectors",
    )


def build_parser() -> argparse.ArgumentParser:
    """Parser with one sub-parser per command; every option shows its default."""
    parser = _Parser(
        prog="spanflow",
        description="Span graphs, encoder training and evaluation",
    )
    parser.add_argument(
        "--config",
        default=None,
        help="JSON file of option values (default: none)",
    )
    _flag(parser, "log_level", "logging level")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    segment = sub.add_parser("segment", help="segment token JSONL into spans")
    _flag(segment, "input", "token JSONL file")
    _flag(segment, "output", "span JSONL file to write")
    _add_layout_flags(segment)

    graph = sub.add_parser("graph", help="build page graphs from token JSONL")
    _flag(graph, "input", "token JSONL file")
    _flag(graph, "output", "graph JSON file to write")
    _add_layout_flags(graph)
    _flag(graph, "order", "neighbourhood order x", int)
    _flag(graph, "rule", "hop-space neighbourhood rule", choices=NEIGHBORHOOD_RULES)
    _switch(graph, "svg", "also write one debug SVG per page next to the output")

    synth = sub.add_parser("synth", help="generate a synthetic paired corpus")
    _flag(synth, "output", "corpus directory to create")
    _flag(synth, "seed", "generator seed", int)
    _flag(synth, "pages", "number of page pairs", int)
    _flag(synth, "noise", "per-row probability of a distractor line", float)
    _flag(
        synth,
        "holdout",
        "also write train/test manifests holding out the last N pairs",
        int,
    )
    _switch(synth, "full_scale", "70 table pairs, about 7000 labelled values")
    _add_layout_flags(synth)

    train = sub.add_parser("train", help="train an encoder on a corpus manifest")
    _flag(train, "input", "corpus manifest")
    _flag(train, "output", "checkpoint file to write")
    _add_layout_flags(train)
    _add_model_flags(train)
    _flag(train, "min_count", "minimum token count to enter the vocabulary", int)
    _flag(train, "hash_buckets", "hash buckets for unknown tokens", int)
    _flag(train, "margin", "contrastive margin m", float)
    _flag(train, "learning_rate", "optimizer step size", float)
    _flag(train, "beta1", "first-moment decay", float)
    _flag(train, "beta2", "second-moment decay", float)
    _flag(train, "epsilon", "optimizer denominator guard", float)
    _flag(train, "epochs", "training epochs", int)
    _flag(train, "folds", "cross-validation folds", int)
    _flag(train, "seed", "initialization and shuffling seed", int)
    _switch(
        train,
        "cross_validation",
        "run k-fold cross-validation before the final fit",
    )

    evaluate = sub.add_parser("eval", help="score a checkpoint on a corpus manifest")
    _flag(evaluate, "input", "corpus manifest")
    _flag(evaluate, "checkpoint", "checkpoint file", action="append")
    _flag(evaluate, "output", "report directory to create")
    _flag(evaluate, "eval_k", "comma-separated top-k cut-offs")
    _flag(
        evaluate,
        "overlay_batches",
        "batches whose anchors get rollout overlays",
        int,
    )
    _add_layout_flags(evaluate)

    roll = sub.add_parser("rollout", help="render attention rollout overlays")
    _flag(roll, "input", "token JSONL file")
    _flag(
        roll,
        "checkpoint",
        "checkpoint file; repeat to compare models",
        action="append",
    )
    _flag(roll, "output", "overlay directory to create")
    _flag(
        roll,
        "query",
        "query span_id; repeatable (default: every span)",
        int,
        action="append",
    )
    _add_layout_flags(roll)

    return parser


def resolve_config(argv: list[str]) -> RunConfig:
    """Parse argv and merge flags over the config file over the defaults.

    Raises:
        UsageError: On unknown flags or malformed values
        ValidationError: On invalid option values or config files
    """
    parsed = vars(build_parser().parse_args(argv))
    config_path = parsed.pop("config", None)

    values = dict(DEFAULTS)
    if config_path:
        file_values = read_json(config_path)
        if not isinstance(file_values, dict):
            raise ValidationError(f"{config_path}: config file must hold a JSON object")
        unknown = set(file_values) - set(values) - {"command"}
        if unknown:
            raise ValidationError(f"{config_path}: unknown keys {sorted(unknown)}")
        values.update(file_values)
    values.update(parsed)

    for key in ("checkpoint", "query"):
        value = values.get(key) or ()
        values[key] = tuple(value) if isinstance(value, list | tuple) else (value,)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ValidationError(f"invalid option values: {exc}") from exc


def configure_logging(level: str) -> None:
    """Send log records to stderr in a single plain format."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


# ---------------------------------------------------------------------------
# commands


def _segment(cfg: RunConfig) -> dict[str, Any]:
    pages = segment_document(read_tokens(cfg.path("input")), cfg.layout_config())
    spans = [span for page in pages.values() for span in page]
    output = write_spans(cfg.path("output"), spans)
    return {"output": str(output), "pages": len(pages), "spans": len(spans)}


def _graph(cfg: RunConfig) -> dict[str, Any]:
    output = cfg.path("output")
    pages = segment_document(read_tokens(cfg.path("input")), cfg.layout_config())
    model_config = cfg.model_config()
    graphs = {
        page_id: build_graph(spans, model_config.order, model_config.rule)
        for page_id, spans in pages.items()
    }
    exported = {page_id: export_graph(g) for page_id, g in graphs.items()}
    write_json(output, {"pages": exported})
    written = [str(output)]
    if cfg.svg:
        for page_id, g in graphs.items():
            svg_path = output.with_name(f"{output.stem}.{page_id}.svg")
            written.append(str(atomic_write_text(svg_path, render_graph_svg(g))))
    vertices = sum(g.size for g in graphs.values())
    return {"output": written, "pages": len(graphs), "vertices": vertices}


def _synth(cfg: RunConfig) -> dict[str, Any]:
    if cfg.full_scale:
        spec = CorpusSpec.full_scale(seed=cfg.seed)
    else:
        spec = CorpusSpec(seed=cfg.seed, pages=cfg.pages, noise=cfg.noise)
    manifest = generate_corpus(spec, cfg.path("output"), cfg.layout_config())
    summary: dict[str, Any] = {"manifest": str(manifest), "pairs": spec.pages}
    if cfg.holdout:
        train_path, test_path = split_manifest(manifest, cfg.holdout)
        summary["train_manifest"] = str(train_path)
        summary["test_manifest"] = str(test_path)
    return summary


def _train(cfg: RunConfig) -> dict[str, Any]:
    manifest = cfg.path("input")
    checkpoint_path = cfg.path("output")
    model_config = cfg.model_config()
    train_config = cfg.train_config()
    batches = load_batches(manifest, cfg.layout_config())
    vocab = corpus_vocab(batches, model_config, cfg.min_count, cfg.hash_buckets)

    rows: list[dict[str, Any]] = []
    summary: dict[str, Any] = {}
    if cfg.cross_validation:
        runner = None
        if Config.REDIS_URL:
            runner = tasks.queue_fold_runner(
                str(manifest.resolve()),
                cfg.layout_config(),
                model_config,
                train_config,
                vocab,
            )
        cv = cross_validate(batches, model_config, train_config, vocab, runner)
        rows.extend(cv.rows)
        summary["cv_val_loss"] = cv.mean_val_loss
        summary["cv_val_top1"] = cv.mean_val_top1

    state = new_state(model_config, train_config, vocab)
    final_rows = fit(batches, [], state)
    rows.extend(final_rows)

    log_path = checkpoint_path.with_name(f"{checkpoint_path.stem}.log.jsonl")
    checkpoint = Checkpoint(
        model_config=model_config,
        vocab=vocab,
        params=state.params,
        table=state.table,
        train_config=train_config.to_dict(),
    )
    # log first: a checkpoint is never published without its trace
    write_jsonl(log_path, rows)
    save_checkpoint(checkpoint_path, checkpoint)
    summary.update(
        {
            "checkpoint": str(checkpoint_path),
            "log": str(log_path),
            "batches": len(batches),
            "final_train_loss": final_rows[-1]["train_loss"],
        },
    )
    return summary


def _eval(cfg: RunConfig) -> dict[str, Any]:
    manifest = cfg.path("input")
    output = cfg.path("output")
    if len(cfg.checkpoint) != 1:
        raise ValidationError("eval takes exactly one --checkpoint")
    checkpoint = load_checkpoint(cfg.checkpoint[0])
    batches = load_batches(manifest, cfg.layout_config())
    report, embedded = evaluate_corpus(batches, checkpoint, cfg.eval_k)

    overlays = [
        overlay
        for item in embedded[: cfg.overlay_batches]
        for overlay in query_overlays(item)
    ]
    with atomic_directory(output) as staging:
        emit_report(staging, report, embeddings_frame(embedded), overlays)
    return {
        "output": str(output),
        "report": str(output / "report.json"),
        "top_k_accuracy": report.to_dict()["top_k_accuracy"],
    }


def _rollout(cfg: RunConfig) -> dict[str, Any]:
    output = cfg.path("output")
    if not cfg.checkpoint:
        raise ValidationError("rollout needs --checkpoint")
    pages = segment_document(read_tokens(cfg.path("input")), cfg.layout_config())
    count = 0
    with atomic_directory(output) as staging:
        for path in cfg.checkpoint:
            checkpoint = load_checkpoint(path)
            config = checkpoint.model_config
            for page_id, spans in pages.items():
                graph = build_graph(spans, config.order, config.rule)
                feats, _ = featurize_spans(
                    graph.vertices,
                    checkpoint.vocab,
                    checkpoint.table,
                )
                result = forward(graph, feats, checkpoint.params, config)
                attribution = rollout(result.attention)
                index = {s.span_id: i for i, s in enumerate(graph.vertices)}
                for span_id in cfg.query or tuple(index):
                    if span_id not in index:
                        raise ValidationError(f"page {page_id} has no span {span_id}")
                    q = index[span_id]
                    svg = render_rollout_svg(list(graph.vertices), attribution[q], q)
                    name = f"{page_id}.{Path(path).stem}.q{span_id}.svg"
                    atomic_write_text(staging / name, svg)
                    count += 1
    return {
        "output": str(output),
        "overlays": count,
        "checkpoints": len(cfg.checkpoint),
    }


_HANDLERS: dict[str, Callable[[RunConfig], dict[str, Any]]] = {
    "segment": _segment,
    "graph": _graph,
    "synth": _synth,
    "train": _train,
    "eval": _eval,
    "rollout": _rollout,
}


def _emit(summary: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    sys.stdout.flush()


def run(argv: list[str] | None = None) -> int:
    """Run one command.

    Returns:
        int: 0 on success, 1 on validation or usage errors, 2 on runtime errors
    """
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = resolve_config(argv)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except (UsageError, ValidationError) as exc:
        configure_logging(Config.LOG_LEVEL)
        logger.error("%s", exc)
        _emit({"status": "error", "error": str(exc)})
        return EXIT_VALIDATION
    except (SpanflowError, OSError) as exc:
        configure_logging(Config.LOG_LEVEL)
        logger.error("%s", exc)
        _emit({"status": "error", "error": str(exc)})
        return EXIT_RUNTIME

    configure_logging(cfg.log_level)
    logger.info("run config: %s", json.dumps(asdict(cfg), sort_keys=True))
    try:
        summary = _HANDLERS[cfg.command](cfg)
    except ValidationError as exc:
        logger.error("%s", exc)
        _emit({"command": cfg.command, "status": "error", "error": str(exc)})
        return EXIT_VALIDATION
    except (SpanflowError, OSError) as exc:
        logger.error("%s", exc)
        _emit({"command": cfg.command, "status": "error", "error": str(exc)})
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception("unexpected failure")
        _emit({"command": cfg.command, "status": "error", "error": str(exc)})
        return EXIT_RUNTIME

    _emit({"command": cfg.command, "status": "ok", **summary})
    return EXIT_OK


def main() -> None:
    """Console-script entry point."""
    sys.exit(run())
