"""Command-line front end: ``seda <subcommand> ...``.

Every subcommand that writes files also writes ``<first output>.manifest.json``
recording the command, inputs, outputs, config digests, seed and duration.
Relative input paths that do not exist are retried under ``$SEDA_DATA_DIR``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from importlib import metadata
from itertools import product
from pathlib import Path
from typing import Sequence

from . import augment as A
from .corpus import (
    MASK_MODES,
    CorpusError,
    Entity,
    Sample,
    corpus_stats,
    load_standoff_dir,
    mask_context,
    read_documents,
    read_jsonl,
    read_samples,
    split_newline,
    whole_document_sample,
    write_jsonl,
)
from .metrics import exact_prf, subset_filter, unified_filter

log = logging.getLogger("seda")

DATA_DIR_ENV = "SEDA_DATA_DIR"
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    """Bad invocation: missing input, malformed config (exit 2)."""


# ------------------------------------------------------------------ helpers
def stage_seed(seed: int, stage: str) -> int:
    """Named sub-seed so each stage draws from its own stream."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _input(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if p.exists():
        return p
    root = os.environ.get(DATA_DIR_ENV)
    if root and not p.is_absolute() and (Path(root) / p).exists():
        return Path(root) / p
    raise UsageError(f"input not found: {path}")


def _digest(path: Path | None) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _model_config(path: Path | None, seed: int):
    from .tagger.model import ModelConfig

    try:
        cfg = ModelConfig.from_file(path) if path else ModelConfig()
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed model config {path}: {exc}") from exc
    return replace(cfg, seed=stage_seed(seed, "train"))


def _seda_config(path: Path | None, mode: str | None = None):
    try:
        cfg = A.SedaConfig.from_file(path) if path else A.SedaConfig()
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed SEDA config {path}: {exc}") from exc
    if mode == "once":
        cfg = replace(cfg, max_iterations=1)
    elif mode == "mul" and cfg.max_iterations == 1:
        cfg = replace(cfg, max_iterations=3)
    return cfg


def read_predictions(path: Path) -> dict[str, list[Entity]]:
    """Per-document entity sets from any records carrying ``id`` and ``entities``."""
    out: dict[str, list[Entity]] = {}
    for rec in read_jsonl(path):
        out.setdefault(rec["id"], []).extend(Entity.from_record(e) for e in rec.get("entities", ()))
    return out


def write_predictions(path: Path, predictions: dict[str, list[Entity]]) -> None:
    write_jsonl(path, ({"id": k, "entities": [e.to_record() for e in sorted(set(v))]} for k, v in sorted(predictions.items())))


def _load_model(path: Path):
    from .tagger.model import GridModel

    try:
        return GridModel.load(path)
    except (ValueError, KeyError, OSError) as exc:
        raise UsageError(f"unreadable checkpoint {path}: {exc}") from exc


# --------------------------------------------------------------- subcommands
def cmd_synth(args, run):
    from .synthetic import generate_corpus, split_corpus

    docs = generate_corpus(args.n_docs, seed=stage_seed(args.seed, "synth"), disc_rate=args.disc_rate, cross_share=args.cross_share)
    out = Path(args.out)
    if args.split:
        out.mkdir(parents=True, exist_ok=True)
        for name, part in split_corpus(docs).items():
            write_jsonl(out / f"{name}.jsonl", (d.to_record() for d in part))
            run.outputs.append(out / f"{name}.jsonl")
    else:
        write_jsonl(out, (d.to_record() for d in docs))
        run.outputs.append(out)
    print(json.dumps(corpus_stats(docs), sort_keys=True))


def cmd_ingest(args, run):
    root = _input(args.corpus)
    directory = root / args.split if args.split else root
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    docs = load_standoff_dir(directory)
    run.inputs.append(directory)
    write_jsonl(args.out, (d.to_record() for d in docs))
    run.outputs.append(Path(args.out))
    print(json.dumps(corpus_stats(docs), sort_keys=True))


def cmd_segment(args, run):
    src = _input(args.inp)
    run.inputs.append(src)
    docs = read_documents(src)
    if args.mode == "newline":
        samples = [s for d in docs for s in split_newline(d)]
    else:
        samples = [whole_document_sample(d) for d in docs]
    write_jsonl(args.out, (s.to_record() for s in samples))
    run.outputs.append(Path(args.out))


def cmd_mask(args, run):
    src = _input(args.inp)
    run.inputs.append(src)
    docs = [mask_context(d, args.mode) for d in read_documents(src)]
    write_jsonl(args.out, (d.to_record() for d in docs))
    run.outputs.append(Path(args.out))


def _samples_or_newline(path: Path) -> list[Sample]:
    """Samples file, or a documents file which is split on newlines."""
    records = list(read_jsonl(path))
    if records and "doc_id" not in records[0]:
        return [s for d in read_documents(path) for s in split_newline(d)]
    return read_samples(path)


def cmd_train(args, run):
    from .tagger.train import train

    cfg_path = _input(args.config)
    data = _input(args.data)
    run.inputs.append(data)
    run.configs.append(cfg_path)
    cfg = _model_config(cfg_path, args.seed)
    samples = _samples_or_newline(data)
    dev_docs = dev_samples = None
    if args.dev:
        dev = _input(args.dev)
        run.inputs.append(dev)
        dev_docs = read_documents(dev)
        dev_samples = [s for d in dev_docs for s in split_newline(d)]
    result = train(samples, cfg, dev_docs=dev_docs, dev_samples=dev_samples)
    model = result.model
    if dev_docs is not None:
        best = A.select_boundaries(result.checkpoints, {d.id: list(d.gold) for d in dev_docs}, args.select_by)
        model = result.model_at(best)
        print(f"selected epoch {best.epoch} (dev EBF {best.dev_ebf:.4f}, dev F1 {best.dev_f1:.4f})")
    model.save(args.out)
    run.outputs.append(Path(args.out))


def cmd_predict(args, run):
    from .tagger.train import predict_samples

    ckpt = _input(args.ckpt)
    src = _input(args.inp)
    run.inputs += [ckpt, src]
    model = _load_model(ckpt)
    samples = _samples_or_newline(src)
    records = []
    for s in samples:
        grid = model.predict_grid(s.tokens)
        records.append(grid.to_record(model.scheme, s.id))
    write_jsonl(args.out, records)
    run.outputs.append(Path(args.out))
    if args.pred_out:
        write_predictions(Path(args.pred_out), predict_samples(model, samples))
        run.outputs.append(Path(args.pred_out))


def cmd_augment(args, run):
    ckpt = _input(args.ckpt)
    src = _input(args.inp)
    cfg_path = _input(args.config)
    run.inputs += [ckpt, src]
    run.configs.append(cfg_path)
    cfg = _seda_config(cfg_path, args.mode)
    model = _load_model(ckpt)
    docs = read_documents(src)
    anchors = read_predictions(_input(args.anchors)) if args.anchors else None
    dev_docs = read_documents(_input(args.dev)) if args.dev else None
    if args.mode == "once":
        result = A.run_once(docs, model, cfg, anchors)
    else:
        result = A.run_mul(docs, model, cfg, anchors, dev_docs=dev_docs)
    write_jsonl(args.out, (s.to_record() for s in result.samples))
    run.outputs.append(Path(args.out))
    if args.pred_out:
        write_predictions(Path(args.pred_out), result.predictions)
        run.outputs.append(Path(args.pred_out))
    print(json.dumps(result.report, sort_keys=True))


def cmd_evaluate(args, run):
    pred_path, gold_path = _input(args.pred), _input(args.gold)
    run.inputs += [pred_path, gold_path]
    gold_docs = read_documents(gold_path)
    docs = {d.id: d for d in gold_docs}
    gold = {d.id: list(d.gold) for d in gold_docs}
    pred = {k: read_predictions(pred_path).get(k, []) for k in gold}
    if args.unified:
        gold = unified_filter(gold, docs)
        pred = unified_filter(pred, docs)
    if args.subset != "all":
        gold = {k: subset_filter(v, args.subset, docs[k]) for k, v in gold.items()}
        pred = {k: subset_filter(v, args.subset, docs[k]) for k, v in pred.items()}
    report = exact_prf(pred, gold, docs=docs, ebf_variant=args.ebf_variant)
    record = {"subset": args.subset, "unified": args.unified, "ebf_variant": args.ebf_variant, **report.to_dict()}
    if args.out:
        Path(args.out).write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")
        run.outputs.append(Path(args.out))
    print(report.table())


def cmd_report(args, run):
    gold_path = _input(args.gold)
    run.inputs.append(gold_path)
    docs = read_documents(gold_path)
    methods = {}
    for spec in args.method:
        name, _, rest = spec.partition("=")
        samples_path, _, pred_path = rest.partition(":")
        if not name or not samples_path or not pred_path:
            raise UsageError(f"--method expects NAME=SAMPLES:PREDICTIONS, got {spec!r}")
        sp, pp = _input(samples_path), _input(pred_path)
        run.inputs += [sp, pp]
        methods[name] = (read_samples(sp), read_predictions(pp))
    table = A.cross_sentence_report(methods, docs)
    if args.out:
        write_jsonl(args.out, ({"method": k, **v} for k, v in table.items()))
        run.outputs.append(Path(args.out))
    print(f"{'method':<16}{'coverage':>10}{'accuracy':>10}")
    for name, row in table.items():
        if row["na"]:
            print(f"{name:<16}{'N/A':>10}{'N/A':>10}")
        else:
            print(f"{name:<16}{row['coverage']:>10.3f}{row['accuracy']:>10.3f}")


ABLATE_SIDES = {"forward": (1, 0), "backward": (0, 1), "both": (1, 1)}
ABLATE_TARGETS = {"ES": (True, False), "NES": (False, True), "BOTH": (True, True)}


def ablation_settings(sizes: Sequence[int] = (2, 3, 4)):
    for side, target, size in product(ABLATE_SIDES, ABLATE_TARGETS, sizes):
        fwd, bwd = ABLATE_SIDES[side]
        es, nes = ABLATE_TARGETS[target]
        yield {
            "setting": f"{side}={size} ({target})",
            "es_enabled": es,
            "nes_enabled": nes,
            "look_forward": fwd * size,
            "look_backward": bwd * size,
        }


def cmd_ablate(args, run):
    from .tagger.train import complete, predict_samples

    ckpt, src = _input(args.ckpt), _input(args.inp)
    cfg_path = _input(args.config)
    run.inputs += [ckpt, src]
    run.configs.append(cfg_path)
    base_cfg = _seda_config(cfg_path, "once")
    model = _load_model(ckpt)
    docs = read_documents(src)
    gold = {d.id: list(d.gold) for d in docs}
    anchors = complete(predict_samples(model, A.newline_samples(docs)), docs)
    rows = []
    for setting in ablation_settings(args.sizes):
        name = setting.pop("setting")
        cfg = replace(base_cfg, **setting)
        result = A.run_once(docs, model, cfg, anchors)
        rep = exact_prf(result.predictions, gold, docs=docs)
        rows.append({"setting": name, **setting, "f1": rep.f1, "ebf": rep.ebf,
                     "discontinuous_f1": rep.subsets["discontinuous"].f1})
        print(f"{name:<22} F1 {rep.f1:.4f}  EBF {rep.ebf:.4f}")
    write_jsonl(args.out, rows)
    run.outputs.append(Path(args.out))


def cmd_gradcheck(args, run):
    from .tagger.train import gradcheck, gradcheck_probe

    cfg_path = _input(args.config)
    run.configs.append(cfg_path)
    cfg = _model_config(cfg_path, args.seed)
    model, words, gold = gradcheck_probe(replace(cfg, dropout=0.0), n_tokens=args.tokens)
    result = gradcheck(model, words, gold, max_entries=args.max_entries, seed=stage_seed(args.seed, "gradcheck"))
    for name in sorted(result.errors):
        log.info("%-14s %.3e (%d entries)", name, result.errors[name], result.checked[name])
    print(f"max relative error {result.max_error:.3e}")
    return 0 if result.max_error <= GRADCHECK_TOLERANCE else 1


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seda", description="Grid-tagging NER with entity-centric augmentation.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-docs", type=int, default=200)
    s.add_argument("--disc-rate", type=float, default=0.10)
    s.add_argument("--cross-share", type=float, default=0.5)
    s.add_argument("--split", action="store_true", help="write train/dev/test files into --out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="read a standoff corpus into document records")
    s.add_argument("--corpus", required=True)
    s.add_argument("--split", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("segment", help="split documents into samples")
    s.add_argument("--mode", choices=("newline", "document"), default="newline")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("mask", help="mask context outside the entity region")
    s.add_argument("--mode", choices=MASK_MODES, default="both_sides")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("train", help="train the grid tagger")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--dev")
    s.add_argument("--select-by", choices=("ebf", "f1"), default="ebf")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict tag grids for samples")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pred-out", help="also write per-document entity predictions")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("augment", help="run the augmentation pipeline")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--config")
    s.add_argument("--mode", choices=("once", "mul"), default="once")
    s.add_argument("--anchors", help="predictions to anchor on instead of the model's own")
    s.add_argument("--dev", help="dev documents for the iteration stopping rule")
    s.add_argument("--out", required=True)
    s.add_argument("--pred-out")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("evaluate", help="score predictions against gold documents")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--subset", choices=("all", "discontinuous", "cross_sentence"), default="all")
    s.add_argument("--unified", action="store_true")
    s.add_argument("--ebf-variant", choices=("matched", "literal"), default="matched")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="cross-sentence coverage and accuracy per method")
    s.add_argument("--cross-sentence", action="store_true", default=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--method", action="append", required=True, metavar="NAME=SAMPLES:PREDICTIONS")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("ablate", help="sweep supplemental-interval settings")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--config")
    s.add_argument("--sizes", type=int, nargs="+", default=[2, 3, 4])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check")
    s.add_argument("--config")
    s.add_argument("--tokens", type=int, default=6)
    s.add_argument("--max-entries", type=int, default=None)
    s.set_defaults(func=cmd_gradcheck)
    return p


class _Run:
    def __init__(self, argv: Sequence[str], args):
        self.argv = list(argv)
        self.args = args
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.configs: list[Path | None] = []
        self.start = time.perf_counter()

    def write_manifest(self) -> Path | None:
        if not self.outputs:
            return None
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "seed": self.args.seed,
            "version": _version(),
            "inputs": [str(p) for p in self.inputs],
            "outputs": [str(p) for p in self.outputs],
            "config_digests": {str(p): _digest(p) for p in self.configs if p is not None},
            "duration_s": round(time.perf_counter() - self.start, 3),
        }
        path = Path(f"{self.outputs[0]}.manifest.json")
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _fail(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    run = _Run(argv, args)
    try:
        code = args.func(args, run) or 0
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except (CorpusError, ValueError, KeyError, OSError, RuntimeError) as exc:
        return _fail("runtime", exc, 1)
    run.write_manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
