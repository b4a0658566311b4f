"""Three-stage training regimen, checkpointing, and freeze discipline.

Stage 1 of phase 1 trains each modality's artefact pipeline independently
(encoder, unifier, signal heads, count classifiers) on per-artefact count
tables. Stage 2 freezes all of stage 1, seeds the intra encoders as copies
of the trained artefact encoders, and trains the intra stage on set-level
tables. Phase 2 freezes all of phase 1 and trains the fusion encoder,
segment vectors, decoder, candidate projection, signal heads, stopping
head, and count classifiers on generation samples.

Optimization is plain per-sample gradient descent with a fixed step.
Whatever a stage froze is verified bit-unchanged when it finishes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import numerics as nm
from .corpus import Phase2Record, Stage1Record, Stage2Record
from .intention import GenerationResult
from .losses import (bound, contrastive_loss, count_classify, head_loss,
                     intention_loss_tables, signal_cross_entropy)
from .model import (MODALITIES, ModelParams, artefact_signals, build_model,
                    copy_stage1_encoders_to_intra, encode_artefact_value,
                    generate_for_sample, intra_signals, modality_of)
from .numerics import GradientTape, backward

CHECKPOINT_FORMAT = 1
STAGES = ("initialized", "phase1_stage1", "phase1_stage2", "phase2")


class TrainingError(ValueError):
    """Training precondition violation."""


class FreezeViolation(RuntimeError):
    """A frozen parameter group changed during training."""


class NumericFailure(RuntimeError):
    """Non-finite parameter values after an update."""


@dataclass(frozen=True)
class TrainPlan:
    phase: str
    epochs: int
    step_size: float
    early_stop: bool = True
    eval_every: int = 10

    def __post_init__(self):
        if self.phase not in ("1.1", "1.2", "2"):
            raise TrainingError(f"unknown phase {self.phase!r}")
        if self.epochs < 0 or self.step_size <= 0:
            raise TrainingError("bad epoch count or step size")


def plan_from_config(cfg: dict, phase: str) -> TrainPlan:
    key = {"1.1": "phase1_stage1", "1.2": "phase1_stage2", "2": "phase2"}[phase]
    section = cfg["train"][key]
    return TrainPlan(phase, section["epochs"], section["step_size"],
                     section["early_stop"])


def sgd_update(grads: dict, step_size: float) -> None:
    for param, grad in grads.items():
        param.value = param.value - step_size * grad


def _check_finite(model: ModelParams) -> None:
    if not model.all_finite():
        raise NumericFailure("non-finite parameter values after update")


def bound_infimum(model: ModelParams) -> float:
    w = model.weights
    return 1.0 / (1.0 + math.exp(w.steepness * w.midpoint))


def _frozen_snapshot(model: ModelParams, trainable: set[str]) -> dict[str, str]:
    return {g: h for g, h in model.group_hashes().items() if g not in trainable}


def _verify_frozen(model: ModelParams, snapshot: dict[str, str]) -> None:
    after = model.group_hashes()
    changed = [g for g, h in snapshot.items() if after[g] != h]
    if changed:
        raise FreezeViolation(f"frozen groups changed during training: {changed}")


# --- phase 1 stage 1 ----------------------------------------------------------


def _bounded(model: ModelParams, inner) -> float:
    return bound(nm.constant(inner.value), model.weights.steepness,
                 model.weights.midpoint).item()


def _stage1_inner(model: ModelParams, record: Stage1Record):
    """Trainable cross-entropy sum; the bounded value is derived for reports."""
    modality = modality_of(record.artefact)
    _, triple = artefact_signals(model, record.artefact)
    return signal_cross_entropy(triple, record.counts,
                                model.artefact_classifiers[modality], model.family)


def _classification_accuracy(model: ModelParams, items) -> float:
    """Fraction of (sample, head, element) count classes predicted correctly.

    ``items`` yields (signal_triple, truth_table, classifiers).
    """
    correct = total = 0
    for triple, truth, clfs in items:
        for head, vec in zip(("input", "process", "output"),
                             (triple.i, triple.p, triple.o)):
            logits = count_classify(nm.constant(vec.value), clfs.head(head),
                                    model.family, head)
            pred = np.argmax(logits.value, axis=1)
            for got, want in zip(pred, truth.counts(head)):
                total += 1
                correct += int(got == want)
    return correct / total if total else 1.0


def stage1_accuracy(model: ModelParams, records: list[Stage1Record]) -> float:
    items = []
    for r in records:
        modality = modality_of(r.artefact)
        _, triple = artefact_signals(model, r.artefact)
        items.append((triple, r.counts, model.artefact_classifiers[modality]))
    return _classification_accuracy(model, items)


def train_phase1_stage1(model: ModelParams, records: list[Stage1Record],
                        plan: TrainPlan) -> list[dict]:
    if plan.phase != "1.1":
        raise TrainingError("plan is not for phase 1 stage 1")
    history: list[dict] = []
    target = 1.04 * bound_infimum(model)
    for modality in MODALITIES:
        recs = [r for r in records if modality_of(r.artefact) == modality]
        if not recs:
            continue
        model.set_trainable([f"artefact.{modality}"])
        model.embedders.clear_spatial_cache()
        snapshot = _frozen_snapshot(model, {f"artefact.{modality}"})
        for epoch in range(plan.epochs):
            losses = []
            for r in recs:
                with GradientTape() as tape:
                    inner = _stage1_inner(model, r)
                sgd_update(backward(tape, inner), plan.step_size)
                losses.append(_bounded(model, inner))
            _check_finite(model)
            mean_loss = float(np.mean(losses))
            entry = {"phase": "1.1", "modality": modality, "epoch": epoch,
                     "loss": mean_loss}
            should_eval = (plan.early_stop
                           and (epoch % plan.eval_every == plan.eval_every - 1
                                or epoch == plan.epochs - 1))
            if should_eval:
                entry["accuracy"] = stage1_accuracy(model, recs)
            history.append(entry)
            if should_eval and entry["accuracy"] == 1.0 and mean_loss <= target:
                break
        _verify_frozen(model, snapshot)
    return history


# --- phase 1 stage 2 ----------------------------------------------------------


def _stage2_items(model: ModelParams, records: list[Stage2Record]):
    """Precompute the frozen artefact encodings once per record."""
    return [
        (r, [encode_artefact_value(model, a) for a in r.artefacts])
        for r in records
    ]


def stage2_accuracy(model: ModelParams, items) -> float:
    collected = []
    for r, encoded in items:
        _, triple = intra_signals(model, r.modality, encoded)
        collected.append((triple, r.counts, model.intra_classifiers[r.modality]))
    return _classification_accuracy(model, collected)


def train_phase1_stage2(model: ModelParams, records: list[Stage2Record],
                        plan: TrainPlan, stage: str = "phase1_stage1") -> list[dict]:
    if plan.phase != "1.2":
        raise TrainingError("plan is not for phase 1 stage 2")
    if STAGES.index(stage) < STAGES.index("phase1_stage1"):
        raise TrainingError("phase 1 stage 2 needs a stage-1 checkpoint")
    copy_stage1_encoders_to_intra(model)
    model.embedders.clear_spatial_cache()
    items_all = _stage2_items(model, records)
    history: list[dict] = []
    target = 1.04 * bound_infimum(model)
    for modality in MODALITIES:
        items = [(r, enc) for r, enc in items_all if r.modality == modality]
        if not items:
            continue
        model.set_trainable([f"intra.{modality}"])
        snapshot = _frozen_snapshot(model, {f"intra.{modality}"})
        for epoch in range(plan.epochs):
            losses = []
            for r, encoded in items:
                with GradientTape() as tape:
                    _, triple = intra_signals(model, r.modality, encoded)
                    inner = signal_cross_entropy(triple, r.counts,
                                                 model.intra_classifiers[r.modality],
                                                 model.family)
                sgd_update(backward(tape, inner), plan.step_size)
                losses.append(_bounded(model, inner))
            _check_finite(model)
            mean_loss = float(np.mean(losses))
            entry = {"phase": "1.2", "modality": modality, "epoch": epoch,
                     "loss": mean_loss}
            should_eval = (plan.early_stop
                           and (epoch % plan.eval_every == plan.eval_every - 1
                                or epoch == plan.epochs - 1))
            if should_eval:
                entry["accuracy"] = stage2_accuracy(model, items)
            history.append(entry)
            if should_eval and entry["accuracy"] == 1.0 and mean_loss <= target:
                break
        _verify_frozen(model, snapshot)
    return history


# --- phase 2 -------------------------------------------------------------------


def _phase2_items(model: ModelParams, samples: list[Phase2Record]):
    """Precompute the frozen per-modality intra encodings once per sample."""
    items = []
    for s in samples:
        intra_values = {}
        for modality, artefacts in s.sets.items():
            if not artefacts:
                continue
            encoded = [encode_artefact_value(model, a) for a in artefacts]
            h, _ = intra_signals(model, modality, encoded)
            intra_values[modality] = h.value.copy()
        items.append((s, intra_values))
    return items


def _phase2_losses(model: ModelParams, sample: Phase2Record,
                   result: GenerationResult):
    """Differentiable phase-2 objective: head + contrastive + matched signal."""
    truth_len = len(sample.intentions)
    pred_len = len(result.set.intentions)
    consulted = max(truth_len, pred_len, len(result.accept_probs))
    head = head_loss(result.accept_probs, truth_len, pred_len, steps=consulted)
    contrastive = contrastive_loss(result.triples)
    loss = nm.add(head, contrastive)
    matched = min(truth_len, pred_len)
    if model.weights.aux_signal_weight > 0 and matched > 0:
        aux = None
        for t in range(matched):
            term = signal_cross_entropy(result.triples[t], sample.intentions[t],
                                        model.intention_classifiers, model.family)
            aux = term if aux is None else nm.add(aux, term)
        aux = nm.mul(aux, model.weights.aux_signal_weight / matched)
        loss = nm.add(loss, aux)
    return loss


def phase2_metrics(model: ModelParams, items) -> dict:
    reports = []
    stopped_right = True
    for sample, intra_values in items:
        result = generate_for_sample(model, intra_values)
        report = intention_loss_tables(sample.intentions, result,
                                       model.intention_classifiers,
                                       model.family, model.weights)
        reports.append(report)
        if len(result.set.intentions) != len(sample.intentions):
            stopped_right = False
    keys = ("total", "head", "contrastive", "sequence", "coverage")
    out = {k: float(np.mean([r[k] for r in reports])) for k in keys}
    out["length_match"] = stopped_right
    return out


def train_phase2(model: ModelParams, samples: list[Phase2Record], plan: TrainPlan,
                 stage: str = "phase1_stage2") -> list[dict]:
    if plan.phase != "2":
        raise TrainingError("plan is not for phase 2")
    if STAGES.index(stage) < STAGES.index("phase1_stage2"):
        raise TrainingError("phase 2 needs a phase-1 checkpoint")
    model.set_trainable(["fusion", "decoder"])
    model.embedders.clear_spatial_cache()
    items = _phase2_items(model, samples)
    snapshot = _frozen_snapshot(model, {"fusion", "decoder"})
    history: list[dict] = []
    for epoch in range(plan.epochs):
        losses = []
        for sample, intra_values in items:
            with GradientTape() as tape:
                result = generate_for_sample(model, intra_values)
                loss = _phase2_losses(model, sample, result)
            sgd_update(backward(tape, loss), plan.step_size)
            losses.append(loss.item())
        _check_finite(model)
        entry = {"phase": "2", "epoch": epoch, "loss": float(np.mean(losses))}
        should_eval = (plan.early_stop
                       and (epoch % plan.eval_every == plan.eval_every - 1
                            or epoch == plan.epochs - 1))
        if should_eval:
            entry.update(phase2_metrics(model, items))
        history.append(entry)
        if (should_eval and entry["coverage"] == 1.0 and entry["length_match"]
                and entry["head"] < 0.05):
            break
    _verify_frozen(model, snapshot)
    return history


# --- checkpointing -------------------------------------------------------------


def save_checkpoint(model: ModelParams, path, stage: str,
                    history: list[dict] | None = None) -> None:
    if stage not in STAGES:
        raise TrainingError(f"unknown stage {stage!r}")
    blob = {
        "version": __version__,
        "format": CHECKPOINT_FORMAT,
        "stage": stage,
        "seed": model.seed,
        "config": model.config,
        "params": {name: p.value.tolist() for name, p in model.bank.items()},
        "history": history or [],
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, separators=(",", ":"))


def load_checkpoint(path) -> tuple[ModelParams, str, list[dict]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
    except FileNotFoundError:
        raise TrainingError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise TrainingError(f"corrupt checkpoint: {exc}") from None
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise TrainingError(f"unsupported checkpoint format {blob.get('format')!r}")
    model = build_model(blob["config"], seed=blob["seed"])
    params = blob["params"]
    if set(params) != set(model.bank):
        raise TrainingError("checkpoint parameters do not match the model layout")
    for name, values in params.items():
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != model.bank[name].shape:
            raise TrainingError(f"checkpoint shape mismatch for {name}")
        model.bank[name].value = arr
    return model, blob["stage"], blob.get("history", [])
