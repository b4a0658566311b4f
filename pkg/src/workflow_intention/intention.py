"""Autoregressive intention generation with learned and rule-based stopping.

The decoder starts from a learned begin-of-sequence column and, per step,
re-encodes the prefix against the fused artefact context. The last output
column drives three gates, in order: a hard step limit (checked before
decoding), a learned 2-class stopping head (forced to accept at step 1),
and a redundancy rule that rejects a candidate whose mean component-wise
cosine similarity to any earlier intention reaches the threshold. A
head-stop or redundancy-stop discards the current candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .encoder_decoder import DecoderParams, decode_step
from .numerics import LinearParams, MlpSpec, Param, ShapeError, Tensor
from .signals import FusionContext, ProjectionHeadSet, SignalTriple


class IntentionError(ValueError):
    """Generation contract violation."""


HEAD_THRESHOLD = 0.5  # accept iff P(accept) strictly exceeds this


@dataclass(frozen=True)
class StoppingConfig:
    similarity_threshold: float = 0.9
    max_steps: int = 5

    def __post_init__(self):
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise IntentionError("similarity threshold must lie in [0, 1]")
        if self.max_steps < 1:
            raise IntentionError("max_steps must be at least 1")


@dataclass(frozen=True)
class Intention:
    """An ordered (input, process, output) triple produced at one step."""

    i: np.ndarray
    p: np.ndarray
    o: np.ndarray
    step: int

    def __post_init__(self):
        if self.step < 1:
            raise IntentionError("step indices start at 1")
        for v in (self.i, self.p, self.o):
            if v.shape != self.i.shape or v.shape[1] != 1:
                raise ShapeError("intention components must be equal-size column vectors")
            if not np.all(np.isfinite(v)):
                raise IntentionError("intention components must be finite")

    @property
    def dim(self) -> int:
        return self.i.shape[0]


@dataclass
class IntentionSet:
    intentions: list[Intention]
    stop_reason: str

    def __post_init__(self):
        if self.stop_reason not in ("head", "redundancy", "hard_limit"):
            raise IntentionError(f"unknown stop reason {self.stop_reason!r}")
        for t, gamma in enumerate(self.intentions, start=1):
            if gamma.step != t:
                raise IntentionError("intention steps must be consecutive from 1")

    def __len__(self) -> int:
        return len(self.intentions)


@dataclass(frozen=True)
class IntentionDecoderParams:
    """Everything the generation loop owns: decoder stack, BOS column,
    candidate projection, signal heads, and the stopping-head MLP."""

    decoder: DecoderParams
    bos: Param
    candidate_proj: LinearParams
    heads: ProjectionHeadSet
    stop_head: MlpSpec

    def __post_init__(self):
        if self.stop_head.d_out != 2:
            raise ShapeError("stopping head must emit two class logits")


@dataclass
class GenerationResult:
    """An intention set plus the trace needed for training and replay."""

    set: IntentionSet
    gate_log: list[dict]
    accept_probs: list[Tensor]
    triples: list[SignalTriple]
    decoded: np.ndarray


def stopping_head(s_last: Tensor, stop_head: MlpSpec, step: int) -> tuple[bool, Tensor]:
    """Accept/stop gate on the last decoded column.

    Step 1 is a forced accept with probability reported as 1; later steps
    take the accept-class softmax probability and accept strictly above 0.5.
    """
    if step <= 1:
        return True, nm.constant(1.0)
    logits = nm.mlp(s_last, stop_head)
    probs = nm.softmax(logits, axis="cols")
    prob = nm.slice_rows(probs, 1, 2)
    return prob.item() > HEAD_THRESHOLD, prob


def _component_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a.ravel() @ b.ravel() / (na * nb))


def mean_similarity(a, b) -> float:
    """Mean of the three component cosine similarities between two intentions."""
    return (
        _component_similarity(nm.as_value(a.i), nm.as_value(b.i))
        + _component_similarity(nm.as_value(a.p), nm.as_value(b.p))
        + _component_similarity(nm.as_value(a.o), nm.as_value(b.o))
    ) / 3.0


def redundancy_check(candidate: Intention, history: list[Intention],
                     similarity_threshold: float) -> tuple[bool, float | None]:
    """Continue only while the candidate is dissimilar from every prior intention.

    Returns (continue, worst similarity seen). An empty history always
    continues; zero-norm components contribute 0 to their cosine term.
    """
    if not history:
        return True, None
    worst = max(mean_similarity(prior, candidate) for prior in history)
    return worst < similarity_threshold, worst


def project_intention(s_last: Tensor, proj: LinearParams,
                      heads: ProjectionHeadSet) -> tuple[Tensor, SignalTriple]:
    """Project the decoded column to the candidate, then to its signal triple.

    The candidate (not the triple) is what gets appended to the decoded
    sequence.
    """
    candidate = nm.linear(s_last, proj)
    triple = SignalTriple(
        nm.linear(candidate, heads.input),
        nm.linear(candidate, heads.process),
        nm.linear(candidate, heads.output),
        "intention",
    )
    return candidate, triple


def generate(context: FusionContext, params: IntentionDecoderParams,
             cfg: StoppingConfig, decode_fn=None) -> GenerationResult:
    """Run the generation loop until the first stopping mechanism fires.

    ``decode_fn(s, context_matrix)`` defaults to the decoder stack; tests
    inject stubs here to pin gate behavior.
    """
    if context.length < 1:
        raise IntentionError("empty fusion context")
    if decode_fn is None:
        decode_fn = lambda s, ctx: decode_step(s, ctx, params.decoder)

    prefix = nm.lift(params.bos)
    intentions: list[Intention] = []
    triples: list[SignalTriple] = []
    probs: list[Tensor] = []
    gate_log: list[dict] = []
    stop_reason = None
    step = 1
    while True:
        if step > cfg.max_steps:
            stop_reason = "hard_limit"
            gate_log.append({"step": step, "gate": "hard_limit"})
            break
        out = decode_fn(prefix, context.matrix)
        s_last = nm.slice_cols(out, step - 1, step)
        accept, prob = stopping_head(s_last, params.stop_head, step)
        probs.append(prob)
        entry = {"step": step, "head_prob": prob.item(), "head_accept": accept}
        if not accept:
            entry["gate"] = "head"
            gate_log.append(entry)
            stop_reason = "head"
            break
        candidate, triple = project_intention(s_last, params.candidate_proj, params.heads)
        iv, pv, ov = triple.values()
        proposal = Intention(iv, pv, ov, step)
        keep, similarity = redundancy_check(proposal, intentions, cfg.similarity_threshold)
        entry["similarity"] = similarity
        entry["redundancy_continue"] = keep
        gate_log.append(entry)
        if not keep:
            stop_reason = "redundancy"
            break
        intentions.append(proposal)
        triples.append(triple)
        prefix = nm.concat_cols([prefix, candidate])
        step += 1

    return GenerationResult(
        set=IntentionSet(intentions, stop_reason),
        gate_log=gate_log,
        accept_probs=probs,
        triples=triples,
        decoded=prefix.value.copy(),
    )


def intention_set_to_json(result: GenerationResult) -> dict:
    return {
        "intentions": [
            {"step": g.step, "i": g.i.ravel().tolist(), "p": g.p.ravel().tolist(),
             "o": g.o.ravel().tolist()}
            for g in result.set.intentions
        ],
        "stop_reason": result.set.stop_reason,
        "gate_log": result.gate_log,
    }
