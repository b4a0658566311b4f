"""Representative vectors, signal projection heads, and fusion.

A representative vector summarizes an encoded sequence: the leading CLS
column for text, an element-wise max over columns for images, and the mean
of per-element representatives for documents. Three independent affine
heads turn a representative into the (input, process, output) signal
triple. Same-modality artefact encodings are concatenated and re-encoded
by an intra-modality stage; the fusion stage concatenates all intra
outputs (tagged with a learned per-modality segment vector) and encodes
them once more. The fusion stage deliberately has no signal heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .artefacts import ElementSpan
from .encoder_decoder import EncoderParams, encode
from .numerics import LinearParams, Param, ShapeError, Tensor


class SignalError(ValueError):
    """Signal extraction contract violation."""


@dataclass(frozen=True)
class ProjectionHeadSet:
    """Input/process/output affine heads, each square in the unified dimension."""

    input: LinearParams
    process: LinearParams
    output: LinearParams

    def __post_init__(self):
        shapes = {self.input.w.shape, self.process.w.shape, self.output.w.shape}
        if len(shapes) != 1:
            raise ShapeError(f"signal heads disagree on shape: {shapes}")
        if self.input.d_out != self.input.d_in:
            raise ShapeError("signal heads must be square")


@dataclass
class SignalTriple:
    """The three workflow-signal vectors extracted at one pipeline stage."""

    i: Tensor
    p: Tensor
    o: Tensor
    stage: str

    def __post_init__(self):
        shapes = {self.i.shape, self.p.shape, self.o.shape}
        if len(shapes) != 1 or self.i.shape[1] != 1:
            raise ShapeError("signal triple needs three equal-dimension column vectors")

    @property
    def dim(self) -> int:
        return self.i.shape[0]

    def values(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.i.value.copy(), self.p.value.copy(), self.o.value.copy()


def rep_vector(h: Tensor, modality: str, has_cls: bool = False,
               elements: tuple[ElementSpan, ...] = ()) -> Tensor:
    """Single representative column for an encoded (d, L) sequence."""
    h = nm.lift(h)
    if h.shape[1] < 1:
        raise ShapeError("empty sequence")
    if modality == "text":
        if not has_cls:
            raise SignalError("text representative needs a leading CLS column")
        return nm.slice_cols(h, 0, 1)
    if modality == "image":
        return nm.max_cols(h)
    if modality == "document":
        if not elements:
            raise SignalError("document representative needs element spans")
        reps = []
        for span in elements:
            if span.kind == "text":
                reps.append(nm.slice_cols(h, span.rep_columns[0], span.rep_columns[0] + 1))
            else:
                cols = nm.concat_cols([nm.slice_cols(h, c, c + 1) for c in span.rep_columns])
                reps.append(nm.max_cols(cols))
        return nm.mean_cols(nm.concat_cols(reps))
    raise SignalError(f"unknown modality {modality!r}")


def project_signals(rep: Tensor, heads: ProjectionHeadSet, stage: str) -> SignalTriple:
    """Three independent affine maps; no coupling between heads."""
    rep = nm.lift(rep)
    if rep.shape != (heads.input.d_in, 1):
        raise ShapeError(f"representative shape {rep.shape} does not fit heads")
    return SignalTriple(
        nm.linear(rep, heads.input),
        nm.linear(rep, heads.process),
        nm.linear(rep, heads.output),
        stage,
    )


def intra_concat(encoded: list[Tensor]) -> Tensor:
    """Column-wise concatenation of same-modality artefact encodings, input order."""
    if not encoded:
        raise ShapeError("no artefact encodings to concatenate")
    return nm.concat_cols(encoded)


@dataclass(frozen=True)
class IntraStageParams:
    """Per-modality intra encoder, unified projection, and signal heads."""

    encoder: EncoderParams
    unify: LinearParams
    heads: ProjectionHeadSet


def intra_encode_and_signal(e: Tensor, intra: IntraStageParams) -> tuple[Tensor, SignalTriple]:
    """Encode the concatenated set, project to the unified space, extract signals.

    The set representative is the element-wise max over the unified columns
    for every modality at this stage.
    """
    h = nm.linear(encode(e, intra.encoder), intra.unify)
    rep = nm.max_cols(h)
    return h, project_signals(rep, intra.heads, "intra")


@dataclass(frozen=True)
class FusionParams:
    encoder: EncoderParams
    segment_vectors: dict[str, Param]


@dataclass
class FusionContext:
    """Fused artefact context: matrix (d, L) plus a per-column modality tag."""

    matrix: Tensor
    segments: tuple[str, ...]

    def __post_init__(self):
        if self.matrix.shape[1] != len(self.segments):
            raise ShapeError("segment tags must cover every fused column")

    @property
    def length(self) -> int:
        return self.matrix.shape[1]


def fuse(blocks: list[tuple[str, Tensor]], fusion: FusionParams) -> FusionContext:
    """Concatenate intra outputs across modalities and encode them together.

    Each block gets its modality's learned segment vector added to every
    column before the joint encoder pass; no signal heads run here.
    """
    if not blocks:
        raise ShapeError("nothing to fuse")
    tagged = []
    segments: list[str] = []
    for modality, h in blocks:
        seg = fusion.segment_vectors.get(modality)
        if seg is None:
            raise SignalError(f"no segment vector registered for {modality!r}")
        tagged.append(nm.add(h, nm.lift(seg)))
        segments.extend([modality] * h.shape[1])
    fused = encode(nm.concat_cols(tagged), fusion.encoder)
    return FusionContext(fused, tuple(segments))
