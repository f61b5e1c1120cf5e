"""Command-line surface: prep, collab, eval, predict, score, convert."""

from __future__ import annotations

import argparse
import os
import sys

from . import checkpoint as ckpt
from . import collab
from .corpus import (
    CorpusFormatError,
    TagSchemeError,
    bio_to_bioes,
    bioes_to_bio,
    bioes_to_spans,
    load_dataset,
    parse_conll,
    write_conll,
)
from .evaluation import repair_bioes, score_with_taxonomy
from .training import ConfigError, config_fingerprint, parse_config


class CliError(Exception):
    """User-facing failure; message printed, exit code 1."""


def _read_config(args) -> tuple[object, str]:
    with open(args.config, encoding="utf-8") as fh:
        text = fh.read()
    cfg = parse_config(text)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        text += f"\nseed = {args.seed}\n"
    if not cfg.datasets:
        raise CliError("config lists no datasets")
    return cfg, config_fingerprint(text)


def _load_bundles(cfg):
    return [load_dataset(spec, cfg.max_sentence_len) for spec in cfg.datasets]


def _write_metrics(out_dir: str, records) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "metrics.log")
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.line() + "\n")
    return path


def _restore_state(cfg, bundles, path: str, fingerprint: str) -> collab.TeamState:
    tensors, stored = ckpt.load_checkpoint(path)
    if stored and stored != fingerprint:
        raise CliError(
            f"checkpoint {path} was written under a different configuration "
            f"(fingerprint {stored}, current {fingerprint})"
        )
    state = collab.TeamState(cfg, bundles)
    ckpt.restore_team(state, tensors)
    return state


def _dataset_index(state: collab.TeamState, name: str) -> int:
    try:
        return state.dataset_ids.index(name)
    except ValueError:
        raise CliError(f"unknown dataset {name!r}; configured: {state.dataset_ids}") from None


def cmd_prep(args) -> int:
    cfg, fingerprint = _read_config(args)
    bundles = _load_bundles(cfg)
    state, _history = collab.run_preparation_phase(bundles, cfg)
    records = collab.dev_records(state, use_collab=False)
    metrics_path = _write_metrics(args.out, records)
    ckpt_path = os.path.join(args.out, "prep.ckpt")
    ckpt.save_checkpoint(ckpt_path, ckpt.team_tensors(state), fingerprint)
    for record in records:
        print(record.line())
    print(f"wrote {metrics_path} and {ckpt_path}")
    return 0


def cmd_collab(args) -> int:
    cfg, fingerprint = _read_config(args)
    bundles = _load_bundles(cfg)
    state = _restore_state(cfg, bundles, args.checkpoint, fingerprint)
    os.makedirs(args.out, exist_ok=True)
    best_path = os.path.join(args.out, "best.ckpt")
    last_path = os.path.join(args.out, "last.ckpt")

    def on_phase(current: collab.TeamState, _phase_records) -> None:
        if current.team_stale == 0:
            ckpt.save_checkpoint(best_path, ckpt.team_tensors(current), fingerprint)

    state, records = collab.train_team(bundles, cfg, state=state, on_phase=on_phase)
    metrics_path = _write_metrics(args.out, records)
    ckpt.save_checkpoint(last_path, ckpt.team_tensors(state), fingerprint)
    for record in records:
        print(record.line())
    print(f"wrote {metrics_path}, {best_path} and {last_path}")
    return 0


def cmd_eval(args) -> int:
    cfg, fingerprint = _read_config(args)
    bundles = _load_bundles(cfg)
    state = _restore_state(cfg, bundles, args.checkpoint, fingerprint)
    d = _dataset_index(state, args.dataset)
    sentences = getattr(bundles[d], args.split)
    if not sentences:
        raise CliError(f"dataset {args.dataset!r} has no {args.split} split")
    use_collab = state.phase >= 1
    repaired, loss = state.evaluate(d, sentences, use_collab=use_collab, repair=True)
    raw, _ = state.evaluate(d, sentences, use_collab=use_collab, repair=False)
    print(f"# {args.dataset} {args.split} (phase {state.phase}, "
          f"{'collaborative' if use_collab else 'solo'} inference)")
    print("## with repair")
    for line in repaired.lines():
        print(line)
    print("## without repair")
    for line in raw.lines():
        print(line)
    print(f"mean_loss={loss:.6f}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            repaired.write(fh)
    return 0


def _read_token_file(path: str) -> list[list[list[str]]]:
    """Loose CoNLL reader for prediction inputs: keeps every column."""
    sentences: list[list[list[str]]] = []
    current: list[list[str]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line.strip():
                if current:
                    sentences.append(current)
                    current = []
                continue
            current.append(line.split("\t"))
    if current:
        sentences.append(current)
    return sentences


def cmd_predict(args) -> int:
    cfg, fingerprint = _read_config(args)
    bundles = _load_bundles(cfg)
    state = _restore_state(cfg, bundles, args.checkpoint, fingerprint)
    d = _dataset_index(state, args.dataset)
    suffix = bundles[d].suffix
    use_collab = state.phase >= 1
    sentences = _read_token_file(args.input)
    if not sentences:
        raise CliError(f"{args.input}: no sentences found")
    with open(args.output, "w", encoding="utf-8") as fh:
        for i, rows in enumerate(sentences):
            tokens = [row[0] for row in rows]
            signal = state.aggregated_signal_values(d, tokens) if use_collab else None
            tags = state.models[d].decode(tokens, signal)
            if args.repair:
                tags = repair_bioes(tags)
            if i:
                fh.write("\n")
            for row, tag in zip(rows, tags):
                full = f"{tag}-{suffix}" if suffix and tag != "O" else tag
                fh.write("\t".join(row + [full]) + "\n")
    print(f"wrote {args.output}")
    return 0


def cmd_score(args) -> int:
    with open(args.pred, encoding="utf-8") as fh:
        pred, _ = parse_conll(fh)
    with open(args.gold, encoding="utf-8") as fh:
        gold, _ = parse_conll(fh)
    if len(pred) != len(gold):
        raise CliError(f"{len(pred)} predicted sentences vs {len(gold)} gold sentences")
    for i, (p, g) in enumerate(zip(pred, gold)):
        if p.tokens != g.tokens:
            raise CliError(f"sentence {i + 1}: token mismatch between files")
    other = None
    if args.other:
        with open(args.other, encoding="utf-8") as fh:
            other_sents, _ = parse_conll(fh)
        if len(other_sents) != len(gold):
            raise CliError("other-type file has a different sentence count")
        other = [bioes_to_spans(repair_bioes(s.tags)) for s in other_sents]
    pred_spans = [bioes_to_spans(repair_bioes(s.tags)) for s in pred]
    gold_spans = [bioes_to_spans(s.tags) for s in gold]
    report = score_with_taxonomy(pred_spans, gold_spans, other)
    print(f"C={report.correct} M={report.predicted} N={report.gold}")
    print(f"P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f}")
    t = report.taxonomy
    print(f"fp_bio_entity={t['bio_entity']} fp_span={t['span']} fp_other={t['other']} "
          f"false_negatives={t['false_negatives']}")
    return 0


def cmd_convert(args) -> int:
    if args.src == args.dst:
        raise CliError("--from and --to must differ")
    with open(args.input, encoding="utf-8") as fh:
        sentences, suffix = parse_conll(fh)
    for sentence in sentences:
        if args.src == "bio":
            sentence.tags = bio_to_bioes(sentence.tags, lenient=args.lenient)
        else:
            sentence.tags = bioes_to_bio(sentence.tags)
    with open(args.output, "w", encoding="utf-8") as fh:
        write_conll(sentences, fh, suffix)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagteam", description="Collaborating BiLSTM-CRF sequence taggers"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, checkpoint=False):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint to load")

    p = sub.add_parser("prep", help="train every model solo with early stopping")
    with_config(p)
    p.add_argument("--out", default="run", help="output directory")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("collab", help="run collaborative phases from a checkpoint")
    with_config(p, checkpoint=True)
    p.add_argument("--out", default="run", help="output directory")
    p.set_defaults(func=cmd_collab)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    with_config(p, checkpoint=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("dev", "test"), default="test")
    p.add_argument("--report", default="", help="write metric=value lines here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="tag a token file")
    with_config(p, checkpoint=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--no-repair", dest="repair", action="store_false")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="compare a prediction file against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--other", default="", help="other-entity-type file for the taxonomy")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("convert", help="convert between tag schemes")
    p.add_argument("--from", dest="src", choices=("bio", "bioes"), required=True)
    p.add_argument("--to", dest="dst", choices=("bio", "bioes"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lenient", action="store_true", help="promote dangling I to B")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 1
    except (CliError, ConfigError, CorpusFormatError, TagSchemeError,
            ckpt.CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
