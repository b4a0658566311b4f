"""Command-line surface: corpus generation, training, inference, validation,
and the parameter-count report.

All artifacts live under one run directory (--out): corpus files in a
corpus/ subdirectory, one checkpoint and metrics log per training phase,
inference results, and the validation report. Every output file embeds the
code version and the full configuration echo, and every command is
deterministic given (seed, config, corpus).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .algebra import check_information_conservation, check_intention_variation
from .artefacts import ArtefactError
from .config import ConfigError, load_config, make_config
from .corpus import (CorpusError, load_phase2, load_stage1, load_stage2,
                     write_corpus)
from .encoder_decoder import full_scale_report
from .intention import intention_set_to_json
from .losses import intention_loss_tables
from .model import build_model, generate_for_sample, intra_signals
from .numerics import NumericsError
from .signals import SignalTriple
from .training import (NumericFailure, TrainingError, load_checkpoint,
                       plan_from_config, save_checkpoint, train_phase1_stage1,
                       train_phase1_stage2, train_phase2, _phase2_items)
from . import numerics as nm

PHASE_STAGE = {"1.1": "phase1_stage1", "1.2": "phase1_stage2", "2": "phase2"}
PHASE_REQUIRES = {"1.1": None, "1.2": "1.1", "2": "1.2"}


def _checkpoint_path(out_dir: str, phase: str) -> str:
    return os.path.join(out_dir, f"checkpoint-{phase}.json")


def _write_json(path: str, blob: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, separators=(",", ":"))
        fh.write("\n")


def _file_header(cfg: dict, **extra) -> dict:
    head = {"type": "header", "version": __version__, "config": cfg}
    head.update(extra)
    return head


def cmd_gen_corpus(cfg: dict, out_dir: str) -> int:
    model_family = build_model(cfg).family
    corpus_dir = os.path.join(out_dir, cfg["paths"]["corpus_dir"])
    written = write_corpus(corpus_dir, cfg, model_family)
    for path in written:
        print(path)
    return 0


def _load_corpus(cfg: dict, out_dir: str, kind: str, family):
    path = os.path.join(out_dir, cfg["paths"]["corpus_dir"], f"{kind}.jsonl")
    if not os.path.exists(path):
        raise CorpusError(f"corpus file not found: {path} (run gen-corpus first)")
    loader = {"stage1": load_stage1, "stage2": load_stage2, "phase2": load_phase2}[kind]
    return loader(path, family)


def cmd_train(cfg: dict, out_dir: str, phase: str) -> int:
    if phase not in PHASE_STAGE:
        raise ConfigError(f"unknown phase {phase!r}; expected 1.1, 1.2, or 2")
    required = PHASE_REQUIRES[phase]
    if required is None:
        model = build_model(cfg)
        prior_stage = "initialized"
    else:
        model, prior_stage, _ = load_checkpoint(_checkpoint_path(out_dir, required))
    plan = plan_from_config(cfg, phase)

    if phase == "1.1":
        records = _load_corpus(cfg, out_dir, "stage1", model.family)
        history = train_phase1_stage1(model, records, plan)
    elif phase == "1.2":
        records = _load_corpus(cfg, out_dir, "stage2", model.family)
        history = train_phase1_stage2(model, records, plan, stage=prior_stage)
    else:
        records = _load_corpus(cfg, out_dir, "phase2", model.family)
        history = train_phase2(model, records, plan, stage=prior_stage)

    save_checkpoint(model, _checkpoint_path(out_dir, phase), PHASE_STAGE[phase], history)
    metrics_path = os.path.join(out_dir, f"metrics-{phase}.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_file_header(cfg, phase=phase), separators=(",", ":")) + "\n")
        for entry in history:
            fh.write(json.dumps(entry, separators=(",", ":")) + "\n")
    print(f"trained phase {phase}: {len(history)} logged epochs -> "
          f"{_checkpoint_path(out_dir, phase)}")
    return 0


def cmd_infer(cfg: dict, out_dir: str) -> int:
    model, stage, _ = load_checkpoint(_checkpoint_path(out_dir, "2"))
    samples = _load_corpus(cfg, out_dir, "phase2", model.family)
    items = _phase2_items(model, samples)
    out_path = os.path.join(out_dir, "intentions.jsonl")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_file_header(cfg, stage=stage), separators=(",", ":")) + "\n")
        for sample, intra_values in items:
            result = generate_for_sample(model, intra_values)
            record = {"id": sample.id}
            record.update(intention_set_to_json(result))
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    print(out_path)
    return 0


def _mean_intra_triple(model, intra_triples: dict) -> SignalTriple:
    stack = {k: np.mean([nm.as_value(getattr(t, k)) for t in intra_triples.values()],
                        axis=0)
             for k in ("i", "p", "o")}
    return SignalTriple(nm.constant(stack["i"]), nm.constant(stack["p"]),
                        nm.constant(stack["o"]), "intra")


def cmd_validate(cfg: dict, out_dir: str) -> int:
    model, stage, _ = load_checkpoint(_checkpoint_path(out_dir, "2"))
    samples = _load_corpus(cfg, out_dir, "phase2", model.family)
    reports = []
    for sample in samples:
        intra_values, intra_triples = {}, {}
        for modality, artefacts in sample.sets.items():
            if not artefacts:
                continue
            from .model import encode_artefact_value

            encoded = [encode_artefact_value(model, a) for a in artefacts]
            h, triple = intra_signals(model, modality, encoded)
            intra_values[modality] = h.value.copy()
            intra_triples[modality] = triple
        result = generate_for_sample(model, intra_values)
        losses = intention_loss_tables(sample.intentions, result,
                                       model.intention_classifiers, model.family,
                                       model.weights)
        reference = _mean_intra_triple(model, intra_triples)
        reports.append({
            "id": sample.id,
            "losses": losses,
            "stop_reason": result.set.stop_reason,
            "generated": len(result.set.intentions),
            "truth": len(sample.intentions),
            "information_conservation": check_information_conservation(
                reference, result.set),
            "intention_variation": check_intention_variation(result.set),
        })
    summary = {
        "samples": len(reports),
        "mean_coverage": float(np.mean([r["losses"]["coverage"] for r in reports]))
        if reports else None,
        "mean_total_loss": float(np.mean([r["losses"]["total"] for r in reports]))
        if reports else None,
        "all_lengths_match": all(r["generated"] == r["truth"] for r in reports),
    }
    blob = _file_header(cfg, stage=stage)
    blob.update({"type": "validation", "summary": summary, "reports": reports})
    out_path = os.path.join(out_dir, "validation.json")
    _write_json(out_path, blob)
    print(json.dumps(summary))
    return 0


def cmd_param_count(out_path: str | None = None) -> int:
    report = full_scale_report()
    rows = [
        ("text encoder", report["text_encoder"]),
        ("image encoder", report["image_encoder"]),
        ("document encoder", report["document_encoder"]),
        ("fusion encoder", report["fusion_encoder"]),
        ("intention decoder", report["intention_decoder"]),
        ("projection heads", report["projection_heads"]),
        ("classifier mlps", report["classifier_mlps"]),
        ("total", report["total"]),
    ]
    width = max(len(name) for name, _ in rows)
    for name, count in rows:
        print(f"{name:<{width}}  {count:>18,}")
    if out_path:
        _write_json(out_path, {"type": "param-count", "version": __version__,
                               "counts": report})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wfintent",
        description="Artefact encoding, signal extraction, and intention generation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults apply)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default="out", help="run directory (default: out)")

    common(sub.add_parser("gen-corpus", help="write a synthetic corpus"))
    train = sub.add_parser("train", help="run one training phase")
    train.add_argument("--phase", required=True, choices=sorted(PHASE_STAGE),
                       help="1.1 per-artefact, 1.2 intra-modality, 2 generation")
    common(train)
    common(sub.add_parser("infer", help="generate intention sets for the corpus"))
    common(sub.add_parser("validate", help="loss metrics and algebra validators"))
    pc = sub.add_parser("param-count", help="production-scale sizing table")
    pc.add_argument("--out", help="also write the table as JSON to this file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "param-count":
            return cmd_param_count(args.out)
        cfg = load_config(args.config) if args.config else make_config({})
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.command == "gen-corpus":
            return cmd_gen_corpus(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out, args.phase)
        if args.command == "infer":
            return cmd_infer(cfg, args.out)
        if args.command == "validate":
            return cmd_validate(cfg, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, ArtefactError, TrainingError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericFailure, NumericsError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
