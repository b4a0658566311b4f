"""Modality-specific ingestion: text, image, and document artefacts.

Text goes through a word-level tokenizer with a build-time frozen
vocabulary (hash buckets catch out-of-vocabulary words), an embedding
table, and additive sinusoidal positions. Images become a non-overlapping
row-major patch grid, flattened and linearly projected. Document pages
interleave every content column (projected patch or token embedding) with
a spatial embedding of its bounding box, image block first, so a page with
L_F patches and L_T tokens yields 2*(L_F + L_T) columns.

Spatial embeddings are the mean of the text-encoder outputs over the
rendered box string. They are cached per box string; the cache must be
cleared whenever the text encoder changes (the training regimen only
embeds documents while the text encoder is frozen, so cached values are
exact constants there).
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .encoder_decoder import EncoderParams, encode
from .numerics import LinearParams, Param, ShapeError, Tensor


class ArtefactError(ValueError):
    """Malformed artefact content."""


# --- vocabulary -------------------------------------------------------------

_GLUE_WORDS = [
    "a", "an", "and", "archive", "batch", "by", "collect", "compile", "each",
    "file", "finally", "for", "from", "generate", "include", "into", "issue",
    "of", "our", "prepare", "process", "produce", "receive", "route", "team",
    "the", "then", "to", "total", "transform", "update", "using", "we", "with",
]

_COUNT_WORDS = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "several", "many", "some", "multiple",
]

_DOMAIN_WORDS = [
    "invoice", "receipt", "order", "claim", "form", "statement", "scan",
    "contract", "ticket", "review", "validation", "extraction", "approval",
    "reconciliation", "audit", "transcription", "classification", "routing",
    "report", "summary", "ledger", "export", "record", "payment", "notice",
]

_PUNCT = [".", ",", ";", ":", "(", ")", "<box>", "</box>"]

_NUMERALS = [str(i) for i in range(32)]


def pluralize(word: str) -> str:
    if word.endswith("y") and word[-2:-1] not in "aeiou":
        return word[:-1] + "ies"
    if word.endswith(("s", "x", "z", "ch", "sh")):
        return word + "es"
    return word + "s"


VOCABULARY: tuple[str, ...] = tuple(dict.fromkeys(
    _GLUE_WORDS + _COUNT_WORDS + _DOMAIN_WORDS
    + [pluralize(w) for w in _DOMAIN_WORDS] + _PUNCT + _NUMERALS
))

CLS_ID = 0
OOV_BUCKETS = 64
VOCAB_SIZE = 1 + len(VOCABULARY) + OOV_BUCKETS

_WORD_TO_ID = {w: i + 1 for i, w in enumerate(VOCABULARY)}
_TOKEN_RE = re.compile(r"</?box>|\w+|[^\w\s]")


def _oov_id(token: str) -> int:
    return 1 + len(VOCABULARY) + (zlib.crc32(token.encode("utf-8")) % OOV_BUCKETS)


# --- artefact types ----------------------------------------------------------


@dataclass(frozen=True)
class TextArtefact:
    content: str

    def __post_init__(self):
        if not self.content.strip():
            raise ArtefactError("text artefact is empty")


@dataclass(frozen=True)
class ImageArtefact:
    """Raw pixels as a (channels, height, width) grid of values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ArtefactError(f"image data must be 3-D, got ndim={arr.ndim}")
        if arr.size == 0:
            raise ArtefactError("empty image")
        if not np.all(np.isfinite(arr)):
            raise ArtefactError("image values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ArtefactError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box on a page, x along the height axis, y along the width axis."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ArtefactError(f"unordered box coordinates {self}")

    def render(self) -> str:
        return f"<box>({self.x_min}, {self.y_min}), ({self.x_max}, {self.y_max})</box>"


@dataclass(frozen=True)
class TextElement:
    text: str
    box: BoundingBox


@dataclass(frozen=True)
class ImageElement:
    image: ImageArtefact
    box: BoundingBox


@dataclass(frozen=True)
class DocumentPage:
    height: int
    width: int
    text_elements: tuple[TextElement, ...]
    image_elements: tuple[ImageElement, ...]

    def __post_init__(self):
        for el in list(self.text_elements) + list(self.image_elements):
            b = el.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.height or b.y_max > self.width:
                raise ArtefactError(f"box {b} outside page ({self.height}, {self.width})")

    def page_box(self) -> BoundingBox:
        return BoundingBox(0, 0, self.height, self.width)


@dataclass(frozen=True)
class DocumentArtefact:
    pages: tuple[DocumentPage, ...]

    def __post_init__(self):
        if not self.pages:
            raise ArtefactError("document has no pages")


@dataclass(frozen=True)
class ElementSpan:
    """Where one page element landed in the composed sequence.

    ``rep_columns`` are the content columns that summarize the element: the
    single CLS column for a text element, all patch columns for an image
    element.
    """

    kind: str
    rep_columns: tuple[int, ...]


@dataclass
class EmbeddingSequence:
    matrix: Tensor
    modality: str
    has_cls: bool
    elements: tuple[ElementSpan, ...] = ()

    def __post_init__(self):
        if self.matrix.shape[1] < 1:
            raise ShapeError("embedding sequence needs at least one column")

    @property
    def length(self) -> int:
        return self.matrix.shape[1]


# --- tokenization and embedding ----------------------------------------------


def tokenize_text(artefact: TextArtefact) -> list[int]:
    """Deterministic word-level ids, CLS first; unknown words hash to buckets."""
    words = _TOKEN_RE.findall(artefact.content.lower())
    if not words:
        raise ArtefactError("no tokens after normalization")
    return [CLS_ID] + [_WORD_TO_ID.get(w, _oov_id(w)) for w in words]


def sinusoid_positions(dim: int, length: int) -> np.ndarray:
    """Classic alternating sin/cos position code, one column per position."""
    pos = np.arange(length, dtype=np.float64)[None, :]
    idx = np.arange(dim, dtype=np.float64)[:, None]
    angles = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    out = np.where(idx.astype(int) % 2 == 0, np.sin(angles), np.cos(angles))
    return out


@dataclass
class ArtefactEmbedders:
    """Token/patch encoders shared by every ingestion path.

    ``text_table`` holds one column per token id. ``patch_proj`` maps a
    flattened patch to the image embedding space; ``doc_patch_proj`` carries
    patch embeddings into the text space for document pages.
    """

    text_table: Param
    patch_proj: LinearParams
    doc_patch_proj: LinearParams
    patch_size: int
    _spatial_cache: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def d_text(self) -> int:
        return self.text_table.shape[0]

    @property
    def d_image(self) -> int:
        return self.patch_proj.d_out

    def clear_spatial_cache(self) -> None:
        self._spatial_cache.clear()

    def spatial_embedding(self, box: BoundingBox, text_encoder: EncoderParams) -> np.ndarray:
        """Mean text-encoder output over the rendered box string; cached."""
        key = box.render()
        hit = self._spatial_cache.get(key)
        if hit is None:
            seq = embed_text(tokenize_text(TextArtefact(key)), self)
            encoded = encode(seq.matrix.value, text_encoder)
            hit = encoded.value.mean(axis=1, keepdims=True)
            self._spatial_cache[key] = hit
        return hit


def embed_text(tokens: list[int], emb: ArtefactEmbedders,
               position_offset: int = 0) -> EmbeddingSequence:
    """Table lookup plus sinusoidal positions, one column per token."""
    if not tokens:
        raise ArtefactError("empty token sequence")
    table = emb.text_table
    for t in tokens:
        if not 0 <= t < table.shape[1]:
            raise ArtefactError(f"unknown token id {t}")
    cols = table.value[:, tokens]
    pos = sinusoid_positions(emb.d_text, position_offset + len(tokens))
    value = nm.add(nm.constant(cols), nm.constant(pos[:, position_offset:]))
    return EmbeddingSequence(value, "text", has_cls=tokens[0] == CLS_ID)


def patch_image(artefact: ImageArtefact, patch: int) -> list[np.ndarray]:
    """Row-major non-overlapping patches, each flattened channel-major."""
    c, h, w = artefact.data.shape
    if h % patch != 0 or w % patch != 0:
        raise ArtefactError(f"image ({h}x{w}) not divisible by patch size {patch}")
    out = []
    for r in range(h // patch):
        for q in range(w // patch):
            block = artefact.data[:, r * patch:(r + 1) * patch, q * patch:(q + 1) * patch]
            out.append(block.reshape(c * patch * patch, 1))
    return out


def embed_patches(patches: list[np.ndarray], emb: ArtefactEmbedders,
                  position_offset: int = 0) -> EmbeddingSequence:
    """Linear projection of flattened patches plus sinusoidal positions."""
    if not patches:
        raise ArtefactError("empty patch sequence")
    flat = nm.constant(np.concatenate(patches, axis=1))
    projected = nm.linear(flat, emb.patch_proj)
    pos = sinusoid_positions(emb.d_image, position_offset + len(patches))
    value = nm.add(projected, nm.constant(pos[:, position_offset:]))
    return EmbeddingSequence(value, "image", has_cls=False)


def _patch_boxes(el: ImageElement, patch: int) -> list[BoundingBox]:
    """Per-patch sub-boxes of the element box, scaled from pixel grid to box."""
    img, box = el.image, el.box
    rows, cols = img.height // patch, img.width // patch
    sx = (box.x_max - box.x_min) / img.height
    sy = (box.y_max - box.y_min) / img.width
    out = []
    for r in range(rows):
        for q in range(cols):
            out.append(BoundingBox(
                box.x_min + round(r * patch * sx),
                box.y_min + round(q * patch * sy),
                box.x_min + round((r + 1) * patch * sx),
                box.y_min + round((q + 1) * patch * sy),
            ))
    return out


def compose_document_page(page: DocumentPage, emb: ArtefactEmbedders,
                          text_encoder: EncoderParams) -> EmbeddingSequence:
    """Interleave content and spatial columns: image block, then text block.

    Every patch or token column is immediately followed by the spatial
    embedding of its box, so the page yields 2*(L_F + L_T) columns. Each
    text element carries its own leading CLS whose box spans the full page.
    """
    columns: list = []
    spans: list[ElementSpan] = []

    patch_pos = 0
    for el in page.image_elements:
        patches = patch_image(el.image, emb.patch_size)
        seq = embed_patches(patches, emb, position_offset=patch_pos)
        patch_pos += len(patches)
        projected = nm.linear(seq.matrix, emb.doc_patch_proj)
        boxes = _patch_boxes(el, emb.patch_size)
        rep = []
        for j, b in enumerate(boxes):
            rep.append(len(columns))
            columns.append(nm.slice_cols(projected, j, j + 1))
            columns.append(nm.constant(emb.spatial_embedding(b, text_encoder)))
        spans.append(ElementSpan("image", tuple(rep)))

    token_pos = 0
    page_box = page.page_box()
    for el in page.text_elements:
        tokens = tokenize_text(TextArtefact(el.text))
        seq = embed_text(tokens, emb, position_offset=token_pos)
        token_pos += len(tokens)
        spans.append(ElementSpan("text", (len(columns),)))
        for j, tok in enumerate(tokens):
            box = page_box if tok == CLS_ID and j == 0 else el.box
            columns.append(nm.slice_cols(seq.matrix, j, j + 1))
            columns.append(nm.constant(emb.spatial_embedding(box, text_encoder)))

    if not columns:
        raise ArtefactError("document page has no elements")
    return EmbeddingSequence(nm.concat_cols(columns), "document",
                             has_cls=False, elements=tuple(spans))


def compose_document(doc: DocumentArtefact, emb: ArtefactEmbedders,
                     text_encoder: EncoderParams) -> EmbeddingSequence:
    """Concatenate composed pages; element spans get page-offset column indices."""
    pages = [compose_document_page(p, emb, text_encoder) for p in doc.pages]
    spans: list[ElementSpan] = []
    offset = 0
    for p in pages:
        for span in p.elements:
            spans.append(ElementSpan(span.kind, tuple(c + offset for c in span.rep_columns)))
        offset += p.length
    return EmbeddingSequence(nm.concat_cols([p.matrix for p in pages]), "document",
                             has_cls=False, elements=tuple(spans))


def unify(seq: EmbeddingSequence, unifiers: dict[str, LinearParams]) -> Tensor:
    """Project an encoded sequence into the shared d-space."""
    lin = unifiers.get(seq.modality)
    if lin is None:
        raise ArtefactError(f"no unified projection registered for {seq.modality!r}")
    return nm.linear(seq.matrix, lin)


# --- corpus (de)serialization -------------------------------------------------


def artefact_to_json(artefact) -> dict:
    if isinstance(artefact, TextArtefact):
        return {"modality": "text", "text": artefact.content}
    if isinstance(artefact, ImageArtefact):
        return {"modality": "image", "channels": artefact.channels,
                "height": artefact.height, "width": artefact.width,
                "data": artefact.data.tolist()}
    if isinstance(artefact, DocumentArtefact):
        return {"modality": "document", "pages": [
            {
                "height": p.height, "width": p.width,
                "text_elements": [
                    {"text": el.text, "box": [el.box.x_min, el.box.y_min,
                                              el.box.x_max, el.box.y_max]}
                    for el in p.text_elements
                ],
                "image_elements": [
                    {"channels": el.image.channels, "height": el.image.height,
                     "width": el.image.width, "data": el.image.data.tolist(),
                     "box": [el.box.x_min, el.box.y_min, el.box.x_max, el.box.y_max]}
                    for el in p.image_elements
                ],
            }
            for p in artefact.pages
        ]}
    raise ArtefactError(f"not an artefact: {type(artefact).__name__}")


def artefact_from_json(obj: dict):
    modality = obj.get("modality")
    if modality == "text":
        return TextArtefact(obj["text"])
    if modality == "image":
        return ImageArtefact(np.asarray(obj["data"], dtype=np.float64))
    if modality == "document":
        pages = []
        for p in obj["pages"]:
            pages.append(DocumentPage(
                p["height"], p["width"],
                tuple(TextElement(el["text"], BoundingBox(*el["box"]))
                      for el in p["text_elements"]),
                tuple(ImageElement(ImageArtefact(np.asarray(el["data"], dtype=np.float64)),
                                   BoundingBox(*el["box"]))
                      for el in p["image_elements"]),
            ))
        return DocumentArtefact(tuple(pages))
    raise ArtefactError(f"unknown modality {modality!r}")


def read_jsonl(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
