"""Count-classification heads and every training loss.

Ground truth for signal extraction is a per-element count class over each
generative family: 0 means absent, 1..M an exact count, M+1 a plural
mention with unknown count. The signal loss is the sum of the three heads'
mean categorical cross-entropies squashed into (0, 1) by a sigmoid bound.
Generation quality combines a coverage-based sequence loss, a pairwise
contrastive term, and a stopping-head binary cross-entropy.

Coverage and the length terms are piecewise constant in the parameters, so
training gradients flow only through the head loss, the contrastive loss,
and an auxiliary matched-pair signal loss against the ground-truth count
tables; the sequence loss is still computed and reported as a metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import MlpSpec, Tensor

LOG_EPS = 1e-12


class LossError(ValueError):
    """Loss evaluation contract violation."""


HEAD_KEYS = ("input", "process", "output")


@dataclass(frozen=True)
class GenerativeFamilySpec:
    """Named elements spanning each signal space, plus the max exact count M."""

    input_elements: tuple[str, ...]
    process_elements: tuple[str, ...]
    output_elements: tuple[str, ...]
    max_exact: int

    def __post_init__(self):
        if self.max_exact < 0:
            raise LossError("max exact count must be non-negative")
        for key in HEAD_KEYS:
            elements = self.elements(key)
            if not elements:
                raise LossError(f"{key} family is empty")
            if len(set(elements)) != len(elements):
                raise LossError(f"duplicate element names in {key} family")

    def elements(self, head: str) -> tuple[str, ...]:
        try:
            return getattr(self, head + "_elements")
        except AttributeError:
            raise LossError(f"unknown head {head!r}") from None

    @property
    def n_classes(self) -> int:
        return self.max_exact + 2


@dataclass(frozen=True)
class CountTableTriple:
    """Ground-truth count classes per family element, one row per element."""

    input: tuple[int, ...]
    process: tuple[int, ...]
    output: tuple[int, ...]

    def counts(self, head: str) -> tuple[int, ...]:
        try:
            return getattr(self, head)
        except AttributeError:
            raise LossError(f"unknown head {head!r}") from None

    def validate(self, family: GenerativeFamilySpec) -> "CountTableTriple":
        for key in HEAD_KEYS:
            row = self.counts(key)
            if len(row) != len(family.elements(key)):
                raise LossError(f"{key} table has {len(row)} rows, family needs "
                                f"{len(family.elements(key))}")
            for c in row:
                if not 0 <= c <= family.max_exact + 1:
                    raise LossError(f"count class {c} outside [0, {family.max_exact + 1}]")
        return self


@dataclass(frozen=True)
class LossWeights:
    steepness: float = 1.0        # bound slope, > 0
    midpoint: float = 0.5         # bound center, in [0, 1]
    alpha_coverage: float = 0.6
    alpha_overlength: float = 0.2
    alpha_underlength: float = 0.2
    match_threshold: float = 0.6
    aux_signal_weight: float = 1.0

    def __post_init__(self):
        if not self.steepness > 0:
            raise LossError("bound steepness must be positive")
        if not 0.0 <= self.midpoint <= 1.0:
            raise LossError("bound midpoint must lie in [0, 1]")
        total = self.alpha_coverage + self.alpha_overlength + self.alpha_underlength
        if abs(total - 1.0) > 1e-12:
            raise LossError(f"sequence weights sum to {total}, expected 1")
        if self.aux_signal_weight < 0:
            raise LossError("auxiliary signal weight must be non-negative")


@dataclass(frozen=True)
class CountClassifiers:
    """The three per-head count-classification MLPs for one pipeline stage."""

    input: MlpSpec
    process: MlpSpec
    output: MlpSpec

    def head(self, key: str) -> MlpSpec:
        try:
            return getattr(self, key)
        except AttributeError:
            raise LossError(f"unknown head {key!r}") from None


def bound(loss, steepness: float, midpoint: float) -> Tensor:
    """Sigmoid squash of a non-negative loss into (0, 1)."""
    return nm.sigmoid(nm.mul(nm.sub(nm.lift(loss), midpoint), steepness))


def count_classify(x, clf: MlpSpec, family: GenerativeFamilySpec, head: str) -> Tensor:
    """Per-element count-class logits, one row per family element."""
    n_elements = len(family.elements(head))
    n_classes = family.n_classes
    out = nm.mlp(nm.lift(x), clf)
    if out.shape != (n_elements * n_classes, 1):
        raise LossError(
            f"classifier for {head!r} emits {out.shape}, expected "
            f"({n_elements * n_classes}, 1)")
    return nm.reshape(out, n_elements, n_classes)


def _one_hot(classes: tuple[int, ...], n_classes: int) -> np.ndarray:
    mask = np.zeros((len(classes), n_classes))
    mask[np.arange(len(classes)), list(classes)] = 1.0
    return mask


def cross_entropy_rows(logits: Tensor, classes: tuple[int, ...]) -> Tensor:
    """Mean over rows of -log softmax probability at each row's true class."""
    n_rows, n_classes = logits.shape
    if len(classes) != n_rows:
        raise LossError("one class per logit row required")
    for c in classes:
        if not 0 <= c < n_classes:
            raise LossError(f"class {c} outside [0, {n_classes - 1}]")
    probs = nm.softmax(logits, axis="rows")
    picked = nm.mul(nm.log(nm.clamp(probs, LOG_EPS, 1.0)), nm.constant(_one_hot(classes, n_classes)))
    return nm.mul(nm.sum_all(picked), -1.0 / n_rows)


def signal_cross_entropy(triple, truth: CountTableTriple, clfs: CountClassifiers,
                         family: GenerativeFamilySpec) -> Tensor:
    """Sum over the three heads of the mean per-element cross-entropy.

    This is the inner value the bounded signal loss squashes. Training
    differentiates it directly: the bound is strictly monotone in it, so
    both have the same minimizers, but the sigmoid's tails would zero out
    the gradient of any badly-fit sample.
    """
    truth.validate(family)
    total = None
    for key, vec in zip(HEAD_KEYS, (triple.i, triple.p, triple.o)):
        logits = count_classify(vec, clfs.head(key), family, key)
        ce = cross_entropy_rows(logits, truth.counts(key))
        total = ce if total is None else nm.add(total, ce)
    return total


def signal_loss(triple, truth: CountTableTriple, clfs: CountClassifiers,
                family: GenerativeFamilySpec, weights: LossWeights) -> Tensor:
    """Bounded sum of the three heads' mean cross-entropies; lies in (0, 1)."""
    return bound(signal_cross_entropy(triple, truth, clfs, family),
                 weights.steepness, weights.midpoint)


def argmax_count_table(triple, clfs: CountClassifiers,
                       family: GenerativeFamilySpec) -> CountTableTriple:
    """Hard labels: per-element argmax of the classifier outputs."""
    rows = {}
    for key, vec in zip(HEAD_KEYS, (triple.i, triple.p, triple.o)):
        logits = count_classify(nm.constant(nm.as_value(vec)), clfs.head(key), family, key)
        rows[key] = tuple(int(c) for c in np.argmax(logits.value, axis=1))
    return CountTableTriple(rows["input"], rows["process"], rows["output"])


def intention_distance(a, b, clfs: CountClassifiers, family: GenerativeFamilySpec,
                       weights: LossWeights) -> Tensor:
    """Bounded cross-entropy of a's classification against b's argmax labels.

    Asymmetric by construction: b only contributes hard labels.
    """
    return signal_loss(a, argmax_count_table(b, clfs, family), clfs, family, weights)


def coverage(truth, pred, tau: float, clfs: CountClassifiers,
             family: GenerativeFamilySpec, weights: LossWeights) -> float:
    """Fraction of truth intentions within distance tau of some prediction."""
    truth, pred = list(truth), list(pred)
    if not truth:
        raise LossError("coverage needs a non-empty truth set")
    if not pred:
        raise LossError("coverage needs at least one prediction")
    covered = 0
    for t in truth:
        best = min(intention_distance(t, g, clfs, family, weights).item() for g in pred)
        if best < tau:
            covered += 1
    return covered / len(truth)


def coverage_to_tables(truth_tables, pred, tau: float, clfs: CountClassifiers,
                       family: GenerativeFamilySpec, weights: LossWeights) -> float:
    """Coverage variant for table ground truth: each truth table is covered
    when some prediction classifies close enough to it."""
    truth_tables, pred = list(truth_tables), list(pred)
    if not truth_tables:
        raise LossError("coverage needs a non-empty truth set")
    if not pred:
        raise LossError("coverage needs at least one prediction")
    covered = 0
    for table in truth_tables:
        best = min(signal_loss(g, table, clfs, family, weights).item() for g in pred)
        if best < tau:
            covered += 1
    return covered / len(truth_tables)


def sequence_loss_terms(coverage_value: float, truth_len: int, pred_len: int,
                        weights: LossWeights) -> float:
    """1 - [a_c * coverage + a_o / (1 + overlength) + a_u / (1 + underlength)]."""
    over = max(0, pred_len - truth_len)
    under = max(0, truth_len - pred_len)
    return 1.0 - (weights.alpha_coverage * coverage_value
                  + weights.alpha_overlength / (1.0 + over)
                  + weights.alpha_underlength / (1.0 + under))


def sequence_loss(truth, pred, clfs: CountClassifiers, family: GenerativeFamilySpec,
                  weights: LossWeights) -> float:
    cov = coverage(truth, pred, weights.match_threshold, clfs, family, weights)
    return sequence_loss_terms(cov, len(list(truth)), len(list(pred)), weights)


def contrastive_loss(triples) -> Tensor:
    """Mean over unordered pairs of exp(-sum of squared component distances);
    zero for a single intention. Encourages diverse generations."""
    triples = list(triples)
    n = len(triples)
    if n <= 1:
        return nm.constant(0.0)
    terms = []
    for m in range(n):
        for k in range(m + 1, n):
            sq = None
            for a, b in ((triples[m].i, triples[k].i),
                         (triples[m].p, triples[k].p),
                         (triples[m].o, triples[k].o)):
                delta = nm.sub(nm.lift(a), nm.lift(b))
                term = nm.sum_all(nm.mul(delta, delta))
                sq = term if sq is None else nm.add(sq, term)
            terms.append(nm.exp(nm.mul(sq, -1.0)))
    total = terms[0]
    for t in terms[1:]:
        total = nm.add(total, t)
    return nm.mul(total, 2.0 / (n * (n - 1)))


def head_loss(accept_probs, truth_len: int, pred_len: int,
              steps: int | None = None) -> Tensor:
    """Mean stopping-head binary cross-entropy over steps 1..max(lengths).

    The accept target is 1 while a truth intention remains, 0 after.
    Recorded probabilities are used as far as they go; missing steps pad
    with probability 0. Probabilities are clamped to keep logs finite.
    Training may widen ``steps`` to every consulted step so that a
    rule-based stop at the right length still teaches the head to refuse
    the step after the last truth intention.
    """
    if steps is None:
        steps = max(truth_len, pred_len)
    if steps < 1:
        raise LossError("head loss needs at least one step")
    total = None
    for t in range(1, steps + 1):
        p = accept_probs[t - 1] if t - 1 < len(accept_probs) else nm.constant(0.0)
        p = nm.clamp(nm.lift(p), LOG_EPS, 1.0 - LOG_EPS)
        if t <= truth_len:
            term = nm.mul(nm.log(p), -1.0)
        else:
            term = nm.mul(nm.log(nm.sub(1.0, p)), -1.0)
        total = term if total is None else nm.add(total, term)
    return nm.mul(total, 1.0 / steps)


def intention_loss_tables(truth_tables, result, clfs: CountClassifiers,
                          family: GenerativeFamilySpec, weights: LossWeights) -> dict:
    """Total generation loss and its breakdown, with table ground truth.

    ``result`` is a GenerationResult; the sequence term uses the table
    variant of coverage. Values are floats (metrics, not the training
    graph).
    """
    truth_tables = list(truth_tables)
    pred = result.set.intentions
    cov = coverage_to_tables(truth_tables, result.triples, weights.match_threshold,
                             clfs, family, weights)
    seq = sequence_loss_terms(cov, len(truth_tables), len(pred), weights)
    contrastive = contrastive_loss(result.triples).item()
    head = head_loss(result.accept_probs, len(truth_tables), len(pred)).item()
    return {
        "total": head + contrastive + seq,
        "head": head,
        "contrastive": contrastive,
        "sequence": seq,
        "coverage": cov,
    }


def intention_loss(truth, result, clfs: CountClassifiers,
                   family: GenerativeFamilySpec, weights: LossWeights) -> dict:
    """As intention_loss_tables, but with intention-vector ground truth."""
    truth = list(truth)
    pred = result.set.intentions
    cov = coverage(truth, result.triples, weights.match_threshold, clfs, family, weights)
    seq = sequence_loss_terms(cov, len(truth), len(pred), weights)
    contrastive = contrastive_loss(result.triples).item()
    head = head_loss(result.accept_probs, len(truth), len(pred)).item()
    return {
        "total": head + contrastive + seq,
        "head": head,
        "contrastive": contrastive,
        "sequence": seq,
        "coverage": cov,
    }
