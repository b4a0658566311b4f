"""Synthetic corpus generation with by-construction ground truth.

Every artefact is rendered from a count table the generator sampled first,
so the stored tables are records of what was rendered, never re-parsed.
Text mentions elements as "<count-word> <element>" phrases ("two invoices",
"several reports"); images place one constant-valued patch per counted
element occurrence, with the element, head, and count class encoded in the
three channels; documents render the text sentences as boxed page elements
plus a fixed decorative image element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import __version__
from .artefacts import (BoundingBox, DocumentArtefact, DocumentPage, ImageArtefact,
                        ImageElement, TextArtefact, TextElement, artefact_from_json,
                        artefact_to_json, pluralize, read_jsonl, write_jsonl)
from .losses import HEAD_KEYS, CountTableTriple, GenerativeFamilySpec


class CorpusError(ValueError):
    """Malformed or inconsistent corpus data."""


_COUNT_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six",
                7: "seven", 8: "eight", 9: "nine"}
_UNKNOWN_WORD = "several"

_HEAD_TEMPLATES = {
    "input": "we receive {} .",
    "process": "the process includes {} .",
    "output": "we produce {} .",
}


def _mention(name: str, count_class: int, max_exact: int) -> str:
    if count_class == max_exact + 1:
        return f"{_UNKNOWN_WORD} {pluralize(name)}"
    if count_class == 1:
        return f"one {name}"
    return f"{_COUNT_WORDS[count_class]} {pluralize(name)}"


def sample_count_table(rng: np.random.Generator, family: GenerativeFamilySpec,
                       absent_p: float = 0.45, unknown_p: float = 0.1,
                       budget: int | None = None) -> CountTableTriple:
    """Random per-element count classes; a budget caps total rendered items."""
    rows = {}
    used = 0
    for head in HEAD_KEYS:
        row = []
        for _ in family.elements(head):
            u = rng.uniform()
            if u < absent_p:
                c = 0
            elif u < absent_p + unknown_p:
                c = family.max_exact + 1
            else:
                c = int(rng.integers(1, family.max_exact + 1))
            cost = c if 1 <= c <= family.max_exact else (
                family.max_exact + 1 if c == family.max_exact + 1 else 0)
            if budget is not None and used + cost > budget:
                c = 0
            else:
                used += cost
            row.append(c)
        rows[head] = tuple(row)
    table = CountTableTriple(rows["input"], rows["process"], rows["output"])
    if all(c == 0 for head in HEAD_KEYS for c in table.counts(head)):
        # guarantee at least one mention so the artefact is non-empty
        first = list(table.input)
        first[0] = 1
        table = CountTableTriple(tuple(first), table.process, table.output)
    return table


def render_text(table: CountTableTriple, family: GenerativeFamilySpec) -> TextArtefact:
    sentences = []
    for head in HEAD_KEYS:
        mentions = [
            _mention(name, c, family.max_exact)
            for name, c in zip(family.elements(head), table.counts(head)) if c > 0
        ]
        if mentions:
            sentences.append(_HEAD_TEMPLATES[head].format(" and ".join(mentions)))
    return TextArtefact(" ".join(sentences))


def render_image(table: CountTableTriple, family: GenerativeFamilySpec,
                 height: int, width: int, patch: int) -> ImageArtefact:
    """One constant patch per counted occurrence; channels encode identity.

    Channel 0 carries the element index, channel 1 the head, channel 2 the
    count class, each scaled into (0, 1]. An unknown-plural mention renders
    max_exact + 1 patches.
    """
    data = np.zeros((3, height, width))
    cols = width // patch
    cursor = 0
    capacity = (height // patch) * cols
    for head_idx, head in enumerate(HEAD_KEYS):
        elements = family.elements(head)
        for elem_idx, c in enumerate(table.counts(head)):
            if c == 0:
                continue
            n = c if c <= family.max_exact else family.max_exact + 1
            shade = (
                (elem_idx + 1) / (len(elements) + 1),
                (head_idx + 1) / (len(HEAD_KEYS) + 1),
                c / (family.max_exact + 1),
            )
            for _ in range(n):
                if cursor >= capacity:
                    raise CorpusError("image patch budget exceeded")
                r, q = divmod(cursor, cols)
                for ch in range(3):
                    data[ch, r * patch:(r + 1) * patch, q * patch:(q + 1) * patch] = shade[ch]
                cursor += 1
    return ImageArtefact(data)


def render_document(table: CountTableTriple, family: GenerativeFamilySpec,
                    page_height: int, page_width: int, patch: int) -> DocumentArtefact:
    """Head sentences as stacked boxed text elements, plus a decorative image."""
    elements = []
    band = 0
    band_height = max(1, page_height // 4)
    for head in HEAD_KEYS:
        mentions = [
            _mention(name, c, family.max_exact)
            for name, c in zip(family.elements(head), table.counts(head)) if c > 0
        ]
        if not mentions:
            continue
        text = _HEAD_TEMPLATES[head].format(" and ".join(mentions))
        elements.append(TextElement(text, BoundingBox(
            band * band_height, 0, (band + 1) * band_height, page_width)))
        band += 1
    decorative = ImageArtefact(np.full((3, patch, patch), 0.25))
    image_el = ImageElement(decorative, BoundingBox(
        band * band_height, 0, band * band_height + patch, patch))
    return DocumentArtefact((DocumentPage(page_height, page_width,
                                          tuple(elements), (image_el,)),))


def aggregate_tables(tables: list[CountTableTriple],
                     family: GenerativeFamilySpec) -> CountTableTriple:
    """Set-level ground truth: exact counts add; any unknown, or a sum past
    the exact range, becomes the unknown-plural class."""
    rows = {}
    for head in HEAD_KEYS:
        combined = []
        for idx in range(len(family.elements(head))):
            classes = [t.counts(head)[idx] for t in tables]
            if all(c == 0 for c in classes):
                combined.append(0)
            elif any(c == family.max_exact + 1 for c in classes):
                combined.append(family.max_exact + 1)
            else:
                total = sum(classes)
                combined.append(total if total <= family.max_exact
                                else family.max_exact + 1)
        rows[head] = tuple(combined)
    return CountTableTriple(rows["input"], rows["process"], rows["output"])


# --- corpus records -----------------------------------------------------------


@dataclass(frozen=True)
class Stage1Record:
    id: str
    artefact: object
    counts: CountTableTriple


@dataclass(frozen=True)
class Stage2Record:
    id: str
    modality: str
    artefacts: tuple
    counts: CountTableTriple


@dataclass(frozen=True)
class Phase2Record:
    id: str
    sets: dict
    intentions: tuple[CountTableTriple, ...]


def _table_to_json(t: CountTableTriple) -> dict:
    return {"input": list(t.input), "process": list(t.process), "output": list(t.output)}


def _table_from_json(obj: dict) -> CountTableTriple:
    try:
        return CountTableTriple(tuple(obj["input"]), tuple(obj["process"]),
                                tuple(obj["output"]))
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"bad count table: {exc}") from None


def _header(kind: str, seed: int, family: GenerativeFamilySpec, corpus_cfg: dict) -> dict:
    return {
        "type": "header",
        "kind": kind,
        "version": __version__,
        "seed": seed,
        "family": {
            "input": list(family.input_elements),
            "process": list(family.process_elements),
            "output": list(family.output_elements),
            "max_exact": family.max_exact,
        },
        "config": corpus_cfg,
    }


def _render_for_modality(modality: str, table, family, corpus_cfg):
    if modality == "text":
        return render_text(table, family)
    if modality == "image":
        return render_image(table, family, corpus_cfg["image_height"],
                            corpus_cfg["image_width"], corpus_cfg["patch_size"])
    if modality == "document":
        return render_document(table, family, corpus_cfg["page_height"],
                               corpus_cfg["page_width"], corpus_cfg["patch_size"])
    raise CorpusError(f"unknown modality {modality!r}")


def _image_budget(corpus_cfg) -> int:
    patches = (corpus_cfg["image_height"] // corpus_cfg["patch_size"]) * (
        corpus_cfg["image_width"] // corpus_cfg["patch_size"])
    return patches


def _sample_table(rng, family, modality, corpus_cfg) -> CountTableTriple:
    if modality == "image":
        return sample_count_table(rng, family, absent_p=0.7, unknown_p=0.05,
                                  budget=_image_budget(corpus_cfg))
    return sample_count_table(rng, family)


def generate_corpus(config: dict, family: GenerativeFamilySpec) -> dict:
    """All corpus sections as JSON-ready record lists, headers included."""
    corpus_cfg = dict(config["corpus"])
    corpus_cfg["patch_size"] = config["dims"]["patch_size"]
    seed = config["seed"]
    sections = {}

    stage1 = [_header("stage1", seed, family, corpus_cfg)]
    stream = 0
    for modality in ("text", "image", "document"):
        for k in range(corpus_cfg["stage1"][modality]):
            rng = np.random.default_rng([seed, 1, stream])
            stream += 1
            table = _sample_table(rng, family, modality, corpus_cfg)
            artefact = _render_for_modality(modality, table, family, corpus_cfg)
            stage1.append({
                "id": f"s1-{modality}-{k}", "modality": modality,
                "artefact": artefact_to_json(artefact),
                "counts": _table_to_json(table),
            })
    sections["stage1"] = stage1

    stage2 = [_header("stage2", seed, family, corpus_cfg)]
    stream = 0
    for modality in ("text", "image", "document"):
        for k in range(corpus_cfg["stage2_sets"][modality]):
            rng = np.random.default_rng([seed, 2, stream])
            stream += 1
            size = int(rng.integers(corpus_cfg["set_size_min"],
                                    corpus_cfg["set_size_max"] + 1))
            tables = [_sample_table(rng, family, modality, corpus_cfg)
                      for _ in range(size)]
            artefacts = [_render_for_modality(modality, t, family, corpus_cfg)
                         for t in tables]
            stage2.append({
                "id": f"s2-{modality}-{k}", "modality": modality,
                "artefacts": [artefact_to_json(a) for a in artefacts],
                "counts": _table_to_json(aggregate_tables(tables, family)),
            })
    sections["stage2"] = stage2

    phase2 = [_header("phase2", seed, family, corpus_cfg)]
    for k in range(corpus_cfg["phase2_samples"]):
        rng = np.random.default_rng([seed, 3, k])
        n_intentions = int(rng.integers(corpus_cfg["intentions_min"],
                                        corpus_cfg["intentions_max"] + 1))
        tables = [
            sample_count_table(rng, family, absent_p=0.7, unknown_p=0.05,
                               budget=_image_budget(corpus_cfg))
            for _ in range(n_intentions)
        ]
        sets = {m: [artefact_to_json(_render_for_modality(m, t, family, corpus_cfg))
                    for t in tables]
                for m in ("text", "image", "document")}
        phase2.append({
            "id": f"p2-{k}", "sets": sets,
            "intentions": [_table_to_json(t) for t in tables],
        })
    sections["phase2"] = phase2
    return sections


def write_corpus(out_dir, config: dict, family: GenerativeFamilySpec) -> list[str]:
    import os

    os.makedirs(out_dir, exist_ok=True)
    sections = generate_corpus(config, family)
    written = []
    for kind, records in sections.items():
        path = os.path.join(out_dir, f"{kind}.jsonl")
        write_jsonl(path, records)
        written.append(path)
    return written


def _check_header(records: list[dict], kind: str, family: GenerativeFamilySpec) -> None:
    if not records or records[0].get("type") != "header":
        raise CorpusError(f"{kind} corpus is missing its header line")
    head = records[0]
    if head.get("kind") != kind:
        raise CorpusError(f"expected a {kind} corpus, found {head.get('kind')!r}")
    fam = head.get("family", {})
    if (tuple(fam.get("input", ())) != family.input_elements
            or tuple(fam.get("process", ())) != family.process_elements
            or tuple(fam.get("output", ())) != family.output_elements
            or fam.get("max_exact") != family.max_exact):
        raise CorpusError(f"{kind} corpus was generated for a different family")


def load_stage1(path, family: GenerativeFamilySpec) -> list[Stage1Record]:
    records = read_jsonl(path)
    _check_header(records, "stage1", family)
    out = []
    for rec in records[1:]:
        try:
            out.append(Stage1Record(
                rec["id"], artefact_from_json(rec["artefact"]),
                _table_from_json(rec["counts"]).validate(family)))
        except (KeyError, ValueError) as exc:
            raise CorpusError(f"bad stage1 record {rec.get('id')!r}: {exc}") from None
    return out


def load_stage2(path, family: GenerativeFamilySpec) -> list[Stage2Record]:
    records = read_jsonl(path)
    _check_header(records, "stage2", family)
    out = []
    for rec in records[1:]:
        try:
            out.append(Stage2Record(
                rec["id"], rec["modality"],
                tuple(artefact_from_json(a) for a in rec["artefacts"]),
                _table_from_json(rec["counts"]).validate(family)))
        except (KeyError, ValueError) as exc:
            raise CorpusError(f"bad stage2 record {rec.get('id')!r}: {exc}") from None
    return out


def load_phase2(path, family: GenerativeFamilySpec) -> list[Phase2Record]:
    records = read_jsonl(path)
    _check_header(records, "phase2", family)
    out = []
    for rec in records[1:]:
        try:
            sets = {m: [artefact_from_json(a) for a in arts]
                    for m, arts in rec["sets"].items()}
            out.append(Phase2Record(
                rec["id"], sets,
                tuple(_table_from_json(t).validate(family) for t in rec["intentions"])))
        except (KeyError, ValueError) as exc:
            raise CorpusError(f"bad phase2 record {rec.get('id')!r}: {exc}") from None
    return out
