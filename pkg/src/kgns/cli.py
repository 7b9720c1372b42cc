"""Command-line entry point: ``kgns <command> [options]``.

Every experiment command writes metrics as TSV rows of
(task, engine, init, fold, metric, value), preceded by ``#`` lines holding
the fully resolved configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import embeddings as emb
from .grounding import ObservationError, group_frames, load_observations, one_hot_from_gold
from .ingestion import IngestError, load_manifest, load_tables, refine
from .isr import INITS, FactorGraphModel, IsrError, IsrMlp, KnnIndex, fgm_fit, isr_evaluate, knn_fit, mlp_isr_train
from .kg import (
    REL_TYPES,
    EntityId,
    Fact,
    Folds,
    GraphError,
    KnowledgeGraph,
    RelationId,
    assign_folds,
    degree_stats,
    load_facts,
    load_fold_map,
    save_facts,
    save_fold_map,
    subgraph_for_embedding,
)
from .lda import N_TOPICS, generate_topics
from .phonology import FeatureSchema, sign_phonology
from .pipeline import (
    STEPS,
    WIDTHS,
    PipelineError,
    WindowSpec,
    format_report,
    lemmatize,
    load_captions,
    load_word_vectors,
    run_pipeline,
    write_report,
)
from .sfr import DIRECTIONS, KINDS, SfrError, sfr_evaluate, sfr_test_set, sfr_train

log = logging.getLogger("kgns")

METRIC_COLUMNS = ("task", "engine", "init", "fold", "metric", "value")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def default_seed() -> int:
    raw = os.environ.get("KGNS_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"KGNS_SEED must be an integer, got {raw!r}")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


# output destinations do not change results, so they stay out of the header
_NOT_CONFIG = ("func", "config", "metrics", "out", "report", "model_dir")


def resolved_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}


def write_metrics(path: str | None, rows: Sequence[tuple], args: argparse.Namespace) -> None:
    lines = [f"# {k}={_fmt(v)}" for k, v in resolved_config(args).items()]
    lines.append("\t".join(METRIC_COLUMNS))
    lines += ["\t".join(_fmt(x) for x in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (StageError, PipelineError):
        raise
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
        raise StageError(stage, str(exc)) from exc


def _load_graph(path: str, folds: str | None = None, seed: int = 0) -> KnowledgeGraph:
    graph = _stage("load", load_facts, path)
    if folds:
        fmap = _stage("load", load_fold_map, folds)
        graph.folds = _folds_from_map(fmap)
    else:
        graph.folds = _stage("folds", assign_folds, graph, seed)
    return graph


def _folds_from_map(fmap: dict[EntityId, int]) -> Folds:
    return Folds({e: f for e, f in fmap.items() if e.namespace == "asl"},
                 {e: f for e, f in fmap.items() if e.namespace == "video"})


# -- ingest / stats / folds ----------------------------------------------------

def cmd_ingest(args) -> None:
    diagnostics: list[str] = []
    source = Path(args.source)
    if source.suffix == ".json":
        manifest = _stage("ingest", load_manifest, source)
        graph = _stage("ingest", load_tables, manifest, diagnostics)
        renames = manifest.value_renames
    else:
        graph = _stage("ingest", load_facts, source)
        renames = {}
    before = len(graph), len(graph.entities)
    graph, report = _stage("refine", refine, graph, renames)
    _stage("write", save_facts, graph, args.out)
    lines = [f"facts_in\t{before[0]}", f"entities_in\t{before[1]}",
             f"facts_out\t{len(graph)}", f"entities_out\t{len(graph.entities)}"]
    lines += [f"diagnostic\t{d}" for d in diagnostics]
    lines += [f"change\t{line}" for line in report.lines]
    lines += [f"conflict\t{c}" for c in report.conflicts]
    text = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_stats(args) -> None:
    graph = _stage("load", load_facts, args.graph)
    rows = [("facts", len(graph)), ("entities", len(graph.entities)), ("relations", len(graph.relations))]
    for t in REL_TYPES:
        rows.append((f"facts_{t}", len(graph.facts_of_type(t))))
    for lang in ("asl", "en"):
        if graph.entities_in(lang):
            s = degree_stats(graph, lang)
            rows += [(f"{lang}_avg_in", s.avg_in), (f"{lang}_sd_in", s.sd_in),
                     (f"{lang}_avg_out", s.avg_out), (f"{lang}_sd_out", s.sd_out)]
    sys.stdout.write("".join(f"{k}\t{_fmt(v)}\n" for k, v in rows))


def cmd_folds(args) -> None:
    graph = _stage("load", load_facts, args.graph)
    folds = _stage("folds", assign_folds, graph, args.seed)
    combined = dict(folds.sign_folds)
    combined.update(folds.instance_folds)
    _stage("write", save_fold_map, combined, args.out)
    sizes = np.bincount(list(folds.sign_folds.values()), minlength=10) if folds.sign_folds else []
    sys.stdout.write(f"sign_fold_sizes\t{' '.join(str(int(x)) for x in sizes)}\n")


# -- embeddings ------------------------------------------------------------

def _train_config(args) -> emb.TrainConfig:
    return emb.TrainConfig(epochs=args.epochs, dim=args.dim, margin=args.margin, learning_rate=args.lr,
                           negatives_per_positive=args.negatives, seed=args.seed, scorer=args.scorer,
                           batch_size=args.batch_size)


def cmd_train_embeddings(args) -> None:
    graph = _stage("load", load_facts, args.graph)
    config = _stage("config", _train_config, args)
    space = _stage("train", emb.train, graph, config)
    _stage("write", emb.save_space, space, args.out)
    # fact-verification AUC of training facts against one corrupted negative each
    rng = np.random.default_rng(args.seed)
    facts = sorted(subgraph_for_embedding(graph), key=str)
    pos = [emb.score(space, f) for f in facts]
    neg = [emb.score(space, _stage("negatives", emb.sample_negative, graph, f, rng)) for f in facts]
    rows = [("embeddings", args.scorer, "-", "all", "final_loss", space.loss_history[-1]),
            ("embeddings", args.scorer, "-", "all", "train_auc", emb.auc(pos, neg))]
    write_metrics(args.metrics, rows, args)


def _parse_fact(text: str, space: emb.EmbeddingSpace) -> Fact:
    parts = text.split()
    if len(parts) != 3:
        raise ValueError(f"expected 'head relation tail', got {text!r}")
    return Fact(EntityId.parse(parts[0]), RelationId(parts[1], "meta"), EntityId.parse(parts[2]))


def cmd_verify(args) -> None:
    space = _stage("load", emb.load_space, args.space)
    facts = []
    if args.facts:
        facts += list(_stage("load", load_facts, args.facts).facts)
    facts += [_stage("parse", _parse_fact, t, space) for t in args.fact or []]
    if not facts:
        raise StageError("parse", "give --fact or --facts")
    out = ["head\trelation\ttail\tscore\tprobability"]
    for f in facts:
        s = _stage("score", emb.score, space, f)
        out.append(f"{f.head}\t{f.relation.name}\t{f.tail}\t{s:.9g}\t{float(emb.logistic(s)):.9g}")
    sys.stdout.write("\n".join(out) + "\n")


# -- isr -------------------------------------------------------------------

def _annotated_signs(graph: KnowledgeGraph, schema: FeatureSchema) -> list[EntityId]:
    return [s for s in graph.entities_in("asl")
            if any(v is not None for v in sign_phonology(graph, s, schema).values())]


def _load_space_for(args):
    if args.init == "random":
        return None
    if not args.space:
        raise StageError("config", f"--init {args.init} needs --space")
    return _stage("load", emb.load_space, args.space)


def _read_labels(path: str) -> dict[str, EntityId]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                wid, sign = line.rstrip("\n").split("\t")
                out[wid] = EntityId.parse(sign)
    return out


def cmd_isr(args) -> None:
    graph = _load_graph(args.graph, args.fold_map, args.seed)
    schema = FeatureSchema.from_graph(graph)
    signs = _annotated_signs(graph, schema)
    space = _load_space_for(args)

    if args.gold:
        obs = [one_hot_from_gold(graph, s, schema, window_id=s.label) for s in signs]
        labels = list(signs)
        fold_of = ["all"] * len(obs)
    else:
        if not args.observations:
            raise StageError("config", "give --observations or --gold")
        obs = list(_stage("load", load_observations, args.observations, graph))
        given = _read_labels(args.labels) if args.labels else {}
        labels, fold_of = [], []
        for o in obs:
            video = EntityId("video", o.window_id)
            sign = given.get(o.window_id) or _stage("labels", graph.video_sign, video)
            labels.append(sign)
            if video not in graph.folds.instance_folds:
                raise StageError("folds", f"window {o.window_id} has no instance fold")
            fold_of.append(graph.folds.instance_folds[video])

    folds = sorted(set(fold_of), key=str) if args.fold is None else [args.fold]
    rows = []
    accs = []
    for fold in folds:
        test = [i for i, f in enumerate(fold_of) if f == fold or fold == "all"]
        train = [i for i, f in enumerate(fold_of) if f != fold or fold == "all"]
        if not test:
            raise StageError("folds", f"fold {fold} has no observations")
        if args.engine == "fgm":
            model = _stage("fgm", fgm_fit, graph, signs, args.smoothing, schema)
        elif args.engine == "knn":
            model = _stage("knn", knn_fit, graph, signs, args.k, schema)
        else:
            model = _stage("mlp", mlp_isr_train, graph, [obs[i] for i in train], [labels[i] for i in train],
                           init=args.init, space=space, epochs=args.epochs, seed=args.seed, schema=schema,
                           signs=signs)
        acc = _stage(args.engine, isr_evaluate, model, [obs[i] for i in test], [labels[i] for i in test])
        accs.append(acc)
        rows.append(("isr", args.engine, args.init, fold, "accuracy", acc))
        if args.model_dir:
            Path(args.model_dir).mkdir(parents=True, exist_ok=True)
            model.save(Path(args.model_dir) / f"isr_{args.engine}_fold{fold}.tsv")
    if len(folds) > 1:
        rows.append(("isr", args.engine, args.init, "mean", "accuracy", float(np.mean(accs))))
    write_metrics(args.metrics, rows, args)


# -- sfr -------------------------------------------------------------------

def cmd_sfr(args) -> None:
    graph = _load_graph(args.graph, args.fold_map, args.seed)
    folds = args.folds if args.folds else sorted(set(graph.folds.sign_folds.values()))
    rows = []
    f1s, exacts = [], []
    for fold in folds:
        test = graph.folds.signs_in(fold)
        space = None
        if args.init != "random":
            if args.space:
                space = _stage("load", emb.load_space, args.space)
            else:
                # embeddings may only see the training signs
                scorer = {"transe_nodes": "TransE", "distmult_nodes": "DistMult"}[args.init]
                config = emb.TrainConfig(epochs=args.embed_epochs, dim=32, seed=args.seed, scorer=scorer)
                space = _stage("embeddings", emb.train, graph.without_signs(test), config)
        model = _stage("sfr", sfr_train, graph, args.direction, kind=args.kind, init=args.init, space=space,
                       epochs=args.epochs, seed=args.seed, held_out=test)
        inputs, gold = sfr_test_set(graph, model, test)
        if not inputs:
            log.warning("fold %s has no annotated held-out signs; skipped", fold)
            continue
        f1, exact = _stage("evaluate", sfr_evaluate, model, inputs, gold)
        f1s.append(f1)
        exacts.append(exact)
        rows.append(("sfr_" + args.direction, args.kind, args.init, fold, "f1", f1))
        rows.append(("sfr_" + args.direction, args.kind, args.init, fold, "accuracy", exact))
        if args.model_dir:
            Path(args.model_dir).mkdir(parents=True, exist_ok=True)
            model.save(Path(args.model_dir) / f"sfr_{args.direction}_fold{fold}.tsv")
    if not f1s:
        raise StageError("evaluate", "no fold had an evaluable test set")
    if len(f1s) > 1:
        rows.append(("sfr_" + args.direction, args.kind, args.init, "mean", "f1", float(np.mean(f1s))))
        rows.append(("sfr_" + args.direction, args.kind, args.init, "mean", "accuracy", float(np.mean(exacts))))
    write_metrics(args.metrics, rows, args)


# -- topic / pipeline ------------------------------------------------------

def _topic_inputs(args):
    graph = _stage("load", load_facts, args.graph)
    word_vectors = _stage("load", load_word_vectors, args.word_vectors)
    frames = _stage("load", load_observations, args.frames, graph)
    videos = _stage("windows", group_frames, frames)
    captions = _stage("load", load_captions, args.captions, lemmatize if args.lemmatize else None)
    captions = {v: captions[v] for v in videos if v in captions}
    missing = sorted(set(videos) - set(captions))
    if missing:
        raise StageError("topics", f"no caption for video {missing[0]}")
    topics = _stage("topics", generate_topics, captions, args.n_topics, args.seed, args.sweeps)
    schema = FeatureSchema.from_graph(graph)
    signs = _annotated_signs(graph, schema)
    if args.isr == "fgm":
        isr = _stage("isr", fgm_fit, graph, signs, None, schema)
    elif args.isr == "knn":
        isr = _stage("isr", knn_fit, graph, signs, args.k, schema)
    else:
        isr = _stage("isr", _load_isr_model, args.isr_model)
    return graph, word_vectors, videos, topics, isr


def _load_isr_model(path: str | None):
    if not path:
        raise ValueError("--isr model needs --isr-model")
    for loader in (IsrMlp.load, FactorGraphModel.load, KnnIndex.load):
        try:
            return loader(path)
        except Exception:
            continue
    raise ValueError(f"cannot read an ISR model from {path}")


def cmd_topic(args) -> None:
    graph, wv, videos, topics, isr = _topic_inputs(args)
    rows = []
    baselines_done = False
    for width in args.widths:
        for step in args.steps:
            spec = WindowSpec(width, step)
            out = run_pipeline(videos, isr, graph, wv, topics.labels, spec, args.kind, args.seed, args.k)
            cell = f"W{width}_S{step}"
            rows.append(("topic", args.kind, args.isr, cell, "accuracy", out["accuracy"]))
            if not baselines_done:
                rows.append(("topic", "random", "-", "test", "accuracy", out["random"]))
                rows.append(("topic", "majority", "-", "test", "accuracy", out["majority"]))
                baselines_done = True
    write_metrics(args.metrics, rows, args)


def cmd_pipeline(args) -> None:
    graph, wv, videos, topics, isr = _topic_inputs(args)
    out = run_pipeline(videos, isr, graph, wv, topics.labels, WindowSpec(args.width, args.step), args.kind,
                       args.seed, args.k)
    if args.report:
        write_report(out["results"], args.report)
    sys.stdout.write(format_report(out["results"]))
    rows = [("pipeline", args.kind, args.isr, f"W{args.width}_S{args.step}", "accuracy", out["accuracy"]),
            ("pipeline", "random", "-", "test", "accuracy", out["random"]),
            ("pipeline", "majority", "-", "test", "accuracy", out["majority"])]
    if args.metrics:
        write_metrics(args.metrics, rows, args)


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    p = argparse.ArgumentParser(prog="kgns", description="Sign-lexicon knowledge graph experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="JSON file of option defaults for this command")
        sp.set_defaults(func=func)
        return sp

    sp = command("ingest", cmd_ingest, "Build a refined fact file from a table manifest (or refine a fact file).")
    sp.add_argument("source", help="manifest .json, or an existing fact .tsv")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--report")

    sp = command("stats", cmd_stats, "Fact counts per relation type and degree statistics.")
    sp.add_argument("graph")

    sp = command("folds", cmd_folds, "Assign sign and instance folds.")
    sp.add_argument("graph")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--seed", type=int, default=seed)

    sp = command("train-embeddings", cmd_train_embeddings, "Train TransE or DistMult fact-verification embeddings.")
    sp.add_argument("graph")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--scorer", choices=emb.SCORERS, default="TransE")
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--margin", type=float, default=1.0)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--negatives", type=int, default=1)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--metrics")

    sp = command("verify", cmd_verify, "Score facts with a trained embedding space.")
    sp.add_argument("space")
    sp.add_argument("--fact", action="append", help="'head relation tail', e.g. 'asl:read handshape phoneme:V'")
    sp.add_argument("--facts", help="fact TSV file")

    sp = command("isr", cmd_isr, "Isolated sign recognition with cross-validation over instance folds.")
    sp.add_argument("graph")
    sp.add_argument("--engine", choices=("fgm", "knn", "mlp"), default="fgm")
    sp.add_argument("--init", choices=INITS, default="random")
    sp.add_argument("--space", help="embedding file for --init transe_nodes/distmult_nodes")
    sp.add_argument("--observations", help="observation file; window ids name video entities")
    sp.add_argument("--labels", help="optional window<TAB>sign file overriding graph video links")
    sp.add_argument("--gold", action="store_true", help="one-hot gold observation per sign (oracle)")
    sp.add_argument("--fold", type=int)
    sp.add_argument("--fold-map")
    sp.add_argument("--smoothing", type=float)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--metrics")
    sp.add_argument("--model-dir")

    sp = command("sfr", cmd_sfr, "Semantic feature recognition over held-out sign folds.")
    sp.add_argument("graph")
    sp.add_argument("--direction", choices=DIRECTIONS, default="phi_to_sigma")
    sp.add_argument("--kind", choices=KINDS, default="mlp")
    sp.add_argument("--init", choices=INITS, default="random")
    sp.add_argument("--space", help="embedding file trained without the held-out signs")
    sp.add_argument("--embed-epochs", type=int, default=100)
    sp.add_argument("--folds", type=int, nargs="*")
    sp.add_argument("--fold-map")
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--metrics")
    sp.add_argument("--model-dir")

    for name, func, help_ in (
        ("topic", cmd_topic, "Topic classification over a window width x step grid."),
        ("pipeline", cmd_pipeline, "Run windows -> gloss -> embed -> classify with a per-stage trace."),
    ):
        sp = command(name, func, help_)
        sp.add_argument("--graph", required=True)
        sp.add_argument("--frames", required=True, help="frame-level observations, ids <video>@<frame>")
        sp.add_argument("--captions", required=True)
        sp.add_argument("--word-vectors", required=True)
        sp.add_argument("--isr", choices=("fgm", "knn", "model"), default="fgm")
        sp.add_argument("--isr-model")
        sp.add_argument("--kind", choices=("mlp_t", "knn_t"), default="mlp_t")
        sp.add_argument("--k", type=int, default=5)
        sp.add_argument("--n-topics", type=int, default=N_TOPICS)
        sp.add_argument("--sweeps", type=int, default=500)
        sp.add_argument("--lemmatize", action="store_true")
        sp.add_argument("--seed", type=int, default=seed)
        sp.add_argument("--metrics")
        if name == "topic":
            sp.add_argument("--widths", type=int, nargs="+", default=list(WIDTHS))
            sp.add_argument("--steps", type=int, nargs="+", default=list(STEPS))
        else:
            sp.add_argument("--width", type=int, default=60)
            sp.add_argument("--step", type=int, default=30)
            sp.add_argument("--report", help="TSV of (video, stage, key, value)")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            defaults = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        defaults = {k.replace("-", "_"): v for k, v in defaults.items()}
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = _apply_config(parser, sys.argv[1:] if argv is None else list(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except (StageError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (GraphError, IngestError, IsrError, SfrError, ObservationError, emb.EmbeddingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
