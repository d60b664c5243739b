"""Command-line pipeline: synthesize a benchmark, train both stages,
evaluate retrieval, and inspect a trained model.

Every command is deterministic given (config, seed); rerunning writes
byte-identical files. Failures exit nonzero after printing one line to
stderr of the form ``error:<category>: <message>`` with category one of
``usage``, ``config``, ``data``, ``io``, or ``numeric``.
"""

from __future__ import annotations

import argparse
import os
import sys

from .analogy import (
    Gamma,
    gamma_init,
    select_sources,
    source_pool,
    train_stage2,
    transfer_embedding,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, write_config
from .data import (
    DataError,
    Triplet,
    _fmt_reals,
    load_dataset,
    load_queries,
    load_word_table,
    synth_generate,
    token_from_file,
    token_to_file,
    write_dataset,
    write_queries,
    write_word_table,
)
from .model import build_model, embed_language_batch, train_stage1
from .numkit import NonFiniteGradient, ShapeError, rng_stream
from .retrieval import (
    MatchPolicy,
    average_precision,
    ground_truth_for,
    rank_candidates,
    write_results,
)


def _load_run_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _outdir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _emit_effective(cfg: RunConfig, out: str):
    write_config(cfg, os.path.join(out, "effective.cfg"))


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    out = _outdir(args)
    train, test, table, heldout = synth_generate(cfg.synth_config(), cfg.seed)
    cfg.train_data = os.path.join(out, "train.ds")
    cfg.test_data = os.path.join(out, "test.ds")
    cfg.word_table = os.path.join(out, "words.tbl")
    cfg.queries = os.path.join(out, "heldout.txt")
    if not cfg.checkpoint:
        cfg.checkpoint = os.path.join(out, "model.ckpt")
    write_dataset(train, cfg.train_data)
    write_dataset(test, cfg.test_data, write_vocabularies=False)
    write_word_table(table, cfg.word_table)
    write_queries(heldout, train, cfg.queries)
    _emit_effective(cfg, out)
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _outdir(args)
    if not cfg.train_data or not cfg.word_table:
        raise ConfigError("train_data and word_table paths must be set")
    dataset = load_dataset(cfg.train_data)
    table = load_word_table(
        cfg.word_table, (dataset.subjects, dataset.predicates, dataset.objects)
    )
    model = build_model(cfg, dataset, table, cfg.seed)
    trace1 = train_stage1(model, dataset, cfg.seed)
    if cfg.gamma == "absent":
        gamma, trace2, skipped = Gamma("absent"), [], 0
    else:
        gamma = gamma_init(
            cfg.gamma, cfg.embed_dim, cfg.gamma_hidden_dim(), rng_stream(cfg.seed, "gamma")
        )
        trace2, skipped = train_stage2(model, gamma, dataset, cfg.seed)
    ckpt = cfg.checkpoint or os.path.join(out, "model.ckpt")
    cfg.checkpoint = ckpt
    save_checkpoint(ckpt, model, gamma, cfg.seed)
    with open(os.path.join(out, "loss_trace.txt"), "w") as fh:
        for i, loss in enumerate(trace1, 1):
            fh.write(f"stage1 {i} {_fmt_reals([loss])}\n")
        for i, loss in enumerate(trace2, 1):
            fh.write(f"stage2 {i} {_fmt_reals([loss])}\n")
        fh.write(f"skipped_targets {skipped}\n")
    _emit_effective(cfg, out)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    out = _outdir(args)
    if args.mode:
        cfg.eval_mode = args.mode
    if not cfg.checkpoint or not cfg.test_data or not cfg.queries:
        raise ConfigError("checkpoint, test_data and queries paths must be set")
    model, gamma, _ = load_checkpoint(cfg.checkpoint)
    dataset = load_dataset(cfg.test_data)
    queries = load_queries(cfg.queries, dataset)
    if not queries:
        raise DataError(f"{cfg.queries}: empty query list")
    policy = MatchPolicy(cfg.iou_threshold)
    if cfg.eval_mode == "transfer":
        pool = source_pool(model)
        if not pool:
            raise DataError("no transfer sources: every observed triplet is rare")
    results, top_lines = [], []
    for query in queries:
        if cfg.eval_mode == "transfer":
            override = transfer_embedding(model, gamma, query, pool)
        else:
            override = None
        detections = rank_candidates(model, query, dataset.pairs, vp_override=override)
        results.append(
            average_precision(query, detections, ground_truth_for(dataset, query), policy)
        )
        if args.top:
            toks = [
                token_to_file(v[i])
                for v, i in zip((dataset.subjects, dataset.predicates, dataset.objects), query)
            ]
            for rank, d in enumerate(detections[: args.top], 1):
                top_lines.append(
                    f"query {' '.join(toks)} rank {rank} pair {d.pair_id}"
                    f" image {d.image_id} score {_fmt_reals([d.score])}\n"
                )
    write_results(
        os.path.join(out, "results.txt"),
        results,
        dataset.subjects,
        dataset.predicates,
        dataset.objects,
    )
    if args.top:
        with open(os.path.join(out, "top_detections.txt"), "w") as fh:
            fh.writelines(top_lines)
    _emit_effective(cfg, out)
    return 0


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------


def _resolve_triplet(model, tokens: list[str]) -> Triplet:
    if len(tokens) != 3:
        raise DataError(f"expected subject predicate object, got {len(tokens)} tokens")
    vocabs = (model.subjects, model.predicates, model.objects)
    return Triplet(*(v.lookup(token_from_file(tok)) for v, tok in zip(vocabs, tokens)))


def cmd_inspect(args) -> int:
    path = args.checkpoint
    if not path and args.config:
        path = load_config(args.config).checkpoint
    if not path:
        raise ConfigError("--checkpoint (or a config with one) is required")
    model, gamma, _ = load_checkpoint(path)
    out = sys.stdout
    if args.what == "embeddings":
        for kind in model.active_kinds:
            labeled = _embedding_rows(model, kind)
            rows = embed_language_batch(model, kind, [t for _, t in labeled])
            for (label, _), row in zip(labeled, rows):
                out.write(f"{kind} {label} {_fmt_reals(row)}\n")
        return 0
    # sources
    u = _resolve_triplet(model, args.args)
    pool = source_pool(model)
    for t, g in select_sources(model, u, pool):
        out.write(f"source {_triplet_label(model, t)} g {_fmt_reals([g])}\n")
    return 0


def _triplet_label(model, t: Triplet) -> str:
    return (
        f"{token_to_file(model.subjects[t.s])}"
        f" {token_to_file(model.predicates[t.p])}"
        f" {token_to_file(model.objects[t.o])}"
    )


def _embedding_rows(model, kind: str):
    """(label, triplet) pairs spanning what the branch can express."""
    if kind == "s":
        return [(token_to_file(tok), Triplet(i, 0, 0)) for i, tok in enumerate(model.subjects.tokens)]
    if kind == "p":
        return [(token_to_file(tok), Triplet(0, i, 0)) for i, tok in enumerate(model.predicates.tokens)]
    if kind == "o":
        return [(token_to_file(tok), Triplet(0, 0, i)) for i, tok in enumerate(model.objects.tokens)]
    if kind == "vp":
        return [(_triplet_label(model, t), t) for t in model.observed]
    if kind == "sp":
        keys = sorted({(t.s, t.p) for t in model.observed})
        return [
            (f"{token_to_file(model.subjects[s])} {token_to_file(model.predicates[p])}", Triplet(s, p, 0))
            for s, p in keys
        ]
    keys = sorted({(t.p, t.o) for t in model.observed})
    return [
        (f"{token_to_file(model.predicates[p])} {token_to_file(model.objects[o])}", Triplet(0, p, o))
        for p, o in keys
    ]


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="relembed", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", help="output directory (default: current)")

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run both training stages, save a checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank, match and score retrieval queries")
    common(p)
    p.add_argument("--mode", choices=("direct", "transfer"), help="override eval_mode")
    p.add_argument("--top", type=int, default=0, help="also dump the top N detections per query")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump embeddings or transfer sources as text")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint to read (default: config's path)")
    p.add_argument("what", choices=("embeddings", "sources"))
    p.add_argument("args", nargs="*", help="for sources: subject predicate object")
    p.set_defaults(func=cmd_inspect)
    return top


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error:config: {e}", file=sys.stderr)
    except DataError as e:
        print(f"error:data: {e}", file=sys.stderr)
    except (ShapeError, NonFiniteGradient, FloatingPointError) as e:
        print(f"error:numeric: {e}", file=sys.stderr)
    except OSError as e:
        print(f"error:io: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
