"""The complete learnable state and the end-to-end forward paths.

Parameters live in a flat name->Param bank and are additionally organized
into named groups that the training regimen freezes and thaws as units:

  embedders          token table (never trained; shipped state)
  artefact.<m>       per-modality encoder, unifier, signal heads, count
                     classifiers (plus the patch projection for images and
                     the patch-to-text map for documents)
  intra.<m>          per-modality intra-stage encoder, unifier, heads,
                     classifiers
  fusion             fusion encoder and per-modality segment vectors
  decoder            intention decoder, begin token, candidate projection,
                     signal heads, stopping head, count classifiers

Construction order is fixed so a seed fully determines every initial value.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .artefacts import (VOCAB_SIZE, ArtefactEmbedders, DocumentArtefact,
                        EmbeddingSequence, ImageArtefact, TextArtefact,
                        compose_document, embed_patches, embed_text, patch_image,
                        tokenize_text)
from .config import make_config
from .encoder_decoder import (EncoderParams, StackConfig, encode, make_decoder,
                              make_encoder, make_linear, make_param)
from .intention import GenerationResult, IntentionDecoderParams, StoppingConfig, generate
from .losses import CountClassifiers, GenerativeFamilySpec, LossWeights
from .numerics import LinearParams, MlpSpec, Param, Tensor
from .signals import (FusionParams, IntraStageParams, ProjectionHeadSet, SignalTriple,
                      intra_concat, intra_encode_and_signal, fuse, project_signals,
                      rep_vector)

MODALITIES = ("text", "image", "document")


class ModelError(ValueError):
    """Model wiring contract violation."""


@dataclass
class ModelParams:
    """Every learnable array, grouped by pipeline stage."""

    config: dict
    seed: int
    bank: dict[str, Param]
    groups: dict[str, tuple[str, ...]]
    embedders: ArtefactEmbedders
    artefact_encoders: dict[str, EncoderParams]
    unifiers: dict[str, LinearParams]
    artefact_heads: dict[str, ProjectionHeadSet]
    artefact_classifiers: dict[str, CountClassifiers]
    intra: dict[str, IntraStageParams]
    intra_classifiers: dict[str, CountClassifiers]
    fusion: FusionParams
    intention: IntentionDecoderParams
    intention_classifiers: CountClassifiers
    family: GenerativeFamilySpec
    weights: LossWeights
    stopping: StoppingConfig

    def group_params(self, group: str) -> list[Param]:
        try:
            names = self.groups[group]
        except KeyError:
            raise ModelError(f"unknown parameter group {group!r}") from None
        return [self.bank[n] for n in names]

    def set_trainable(self, groups) -> None:
        """Freeze everything, then thaw the listed groups (embedders stay frozen)."""
        for p in self.bank.values():
            p.frozen = True
        for g in groups:
            if g == "embedders":
                raise ModelError("the token table is shipped state and never trains")
            for p in self.group_params(g):
                p.frozen = False

    def group_hashes(self) -> dict[str, str]:
        out = {}
        for group, names in self.groups.items():
            digest = hashlib.sha256()
            for n in names:
                digest.update(n.encode())
                digest.update(self.bank[n].value.tobytes())
            out[group] = digest.hexdigest()
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.value)) for p in self.bank.values())


def _family_from_config(cfg: dict) -> GenerativeFamilySpec:
    fam = cfg["family"]
    return GenerativeFamilySpec(
        tuple(fam["input"]), tuple(fam["process"]), tuple(fam["output"]),
        fam["max_exact"])


def _weights_from_config(cfg: dict) -> LossWeights:
    loss = cfg["loss"]
    return LossWeights(
        steepness=loss["steepness"], midpoint=loss["midpoint"],
        alpha_coverage=loss["alpha_coverage"], alpha_overlength=loss["alpha_overlength"],
        alpha_underlength=loss["alpha_underlength"],
        match_threshold=loss["match_threshold"],
        aux_signal_weight=loss["aux_signal_weight"])


def _stopping_from_config(cfg: dict) -> StoppingConfig:
    stop = cfg["stopping"]
    return StoppingConfig(stop["similarity_threshold"], stop["max_steps"])


def _stack(cfg: dict, d: int, cross: bool = False) -> StackConfig:
    if cross:
        return StackConfig(cfg["n_layers"], d, cfg["n_heads_self"], cfg["ffn_inner"],
                           cfg["activation"], n_heads_cross=cfg["n_heads_cross"])
    return StackConfig(cfg["n_layers"], d, cfg["n_heads"], cfg["ffn_inner"],
                       cfg["activation"])


def _head_set(bank, rng, prefix: str, d: int) -> ProjectionHeadSet:
    return ProjectionHeadSet(
        make_linear(bank, rng, prefix + ".input", d, d),
        make_linear(bank, rng, prefix + ".process", d, d),
        make_linear(bank, rng, prefix + ".output", d, d),
    )


def _classifier_set(bank, rng, prefix: str, d: int, hidden: int, activation: str,
                    family: GenerativeFamilySpec) -> CountClassifiers:
    specs = {}
    for head in ("input", "process", "output"):
        n_out = len(family.elements(head)) * family.n_classes
        specs[head] = MlpSpec((
            (activation, make_linear(bank, rng, f"{prefix}.{head}.lin1", hidden, d)),
            ("identity", make_linear(bank, rng, f"{prefix}.{head}.lin2", n_out, hidden)),
        ))
    return CountClassifiers(specs["input"], specs["process"], specs["output"])


def build_model(config: dict | None = None, seed: int | None = None) -> ModelParams:
    """Deterministically initialize the full parameter set from a config."""
    cfg = make_config(config)
    if seed is None:
        seed = cfg["seed"]
    rng = np.random.default_rng(seed)
    bank: dict[str, Param] = {}
    groups: dict[str, list[str]] = {}

    def grab(group: str, fn, *args, **kwargs):
        before = set(bank)
        out = fn(*args, **kwargs)
        groups.setdefault(group, []).extend(n for n in bank if n not in before)
        return out

    d = cfg["dims"]["unified"]
    d_text = cfg["dims"]["text"]
    d_image = cfg["dims"]["image"]
    patch = cfg["dims"]["patch_size"]
    modality_dim = {"text": d_text, "image": d_image, "document": d_text}
    family = _family_from_config(cfg)
    clf_cfg = cfg["classifier"]

    # shipped embedding state; lookup semantics make the effective fan-in 1
    text_table = grab("embedders", make_param, bank, rng, "embedders.text_table",
                      d_text, VOCAB_SIZE, fan_in=1)
    text_table.frozen = True
    patch_proj = grab("artefact.image", make_linear, bank, rng,
                      "artefact.image.patch_proj", d_image, 3 * patch * patch)
    doc_patch_proj = grab("artefact.document", make_linear, bank, rng,
                          "artefact.document.patch_proj", d_text, d_image)
    embedders = ArtefactEmbedders(text_table, patch_proj, doc_patch_proj, patch)

    artefact_encoders, unifiers, artefact_heads, artefact_classifiers = {}, {}, {}, {}
    intra, intra_classifiers = {}, {}
    for m in MODALITIES:
        dm = modality_dim[m]
        g = f"artefact.{m}"
        artefact_encoders[m] = grab(g, make_encoder, bank, rng, f"artefact.{m}.encoder",
                                    _stack(cfg["stacks"]["artefact"], dm))
        unifiers[m] = grab(g, make_linear, bank, rng, f"artefact.{m}.unify", d, dm)
        artefact_heads[m] = grab(g, _head_set, bank, rng, f"artefact.{m}.heads", d)
        artefact_classifiers[m] = grab(g, _classifier_set, bank, rng,
                                       f"artefact.{m}.classifier", d,
                                       clf_cfg["hidden"], clf_cfg["activation"], family)
        gi = f"intra.{m}"
        intra_encoder = grab(gi, make_encoder, bank, rng, f"intra.{m}.encoder",
                             _stack(cfg["stacks"]["artefact"], dm))
        intra_unify = grab(gi, make_linear, bank, rng, f"intra.{m}.unify", d, dm)
        intra_heads = grab(gi, _head_set, bank, rng, f"intra.{m}.heads", d)
        intra[m] = IntraStageParams(intra_encoder, intra_unify, intra_heads)
        intra_classifiers[m] = grab(gi, _classifier_set, bank, rng,
                                    f"intra.{m}.classifier", d,
                                    clf_cfg["hidden"], clf_cfg["activation"], family)

    fusion_encoder = grab("fusion", make_encoder, bank, rng, "fusion.encoder",
                          _stack(cfg["stacks"]["fusion"], d))
    segments = {m: grab("fusion", make_param, bank, rng, f"fusion.segment.{m}", d, 1)
                for m in MODALITIES}
    fusion = FusionParams(fusion_encoder, segments)

    decoder = grab("decoder", make_decoder, bank, rng, "decoder.stack",
                   _stack(cfg["stacks"]["decoder"], d, cross=True))
    bos = grab("decoder", make_param, bank, rng, "decoder.bos", d, 1)
    candidate_proj = grab("decoder", make_linear, bank, rng, "decoder.candidate", d, d)
    gamma_heads = grab("decoder", _head_set, bank, rng, "decoder.heads", d)
    stop_hidden = cfg["stop_head"]["hidden"]
    stop_head = MlpSpec((
        ("relu", grab("decoder", make_linear, bank, rng, "decoder.stop.lin1",
                      stop_hidden, d)),
        ("identity", grab("decoder", make_linear, bank, rng, "decoder.stop.lin2",
                          2, stop_hidden)),
    ))
    gamma_classifiers = grab("decoder", _classifier_set, bank, rng, "decoder.classifier",
                             d, clf_cfg["hidden"], clf_cfg["activation"], family)
    intention = IntentionDecoderParams(decoder, bos, candidate_proj, gamma_heads, stop_head)

    return ModelParams(
        config=cfg, seed=seed, bank=bank,
        groups={k: tuple(v) for k, v in groups.items()},
        embedders=embedders,
        artefact_encoders=artefact_encoders, unifiers=unifiers,
        artefact_heads=artefact_heads, artefact_classifiers=artefact_classifiers,
        intra=intra, intra_classifiers=intra_classifiers,
        fusion=fusion, intention=intention, intention_classifiers=gamma_classifiers,
        family=family, weights=_weights_from_config(cfg),
        stopping=_stopping_from_config(cfg),
    )


def copy_stage1_encoders_to_intra(model: ModelParams) -> None:
    """Intra encoders start as deep copies of the trained artefact encoders."""
    for m in MODALITIES:
        src = model.groups[f"artefact.{m}"]
        src_enc = [n for n in src if n.startswith(f"artefact.{m}.encoder.")]
        for name in src_enc:
            target = name.replace(f"artefact.{m}.encoder.", f"intra.{m}.encoder.", 1)
            model.bank[target].value = model.bank[name].value.copy()


# --- forward paths -----------------------------------------------------------


def modality_of(artefact) -> str:
    if isinstance(artefact, TextArtefact):
        return "text"
    if isinstance(artefact, ImageArtefact):
        return "image"
    if isinstance(artefact, DocumentArtefact):
        return "document"
    raise ModelError(f"not an artefact: {type(artefact).__name__}")


def embed_artefact(model: ModelParams, artefact) -> EmbeddingSequence:
    if isinstance(artefact, TextArtefact):
        return embed_text(tokenize_text(artefact), model.embedders)
    if isinstance(artefact, ImageArtefact):
        patches = patch_image(artefact, model.embedders.patch_size)
        return embed_patches(patches, model.embedders)
    if isinstance(artefact, DocumentArtefact):
        return compose_document(artefact, model.embedders,
                                model.artefact_encoders["text"])
    raise ModelError(f"not an artefact: {type(artefact).__name__}")


def encode_artefact(model: ModelParams, artefact) -> EmbeddingSequence:
    """Modality encoder output at the modality dimension (pre-unify)."""
    seq = embed_artefact(model, artefact)
    encoded = encode(seq.matrix, model.artefact_encoders[seq.modality])
    return EmbeddingSequence(encoded, seq.modality, seq.has_cls, seq.elements)


def artefact_signals(model: ModelParams, artefact) -> tuple[Tensor, SignalTriple]:
    """Stage-1 chain: encode, unify, representative, signal heads."""
    seq = encode_artefact(model, artefact)
    h = nm.linear(seq.matrix, model.unifiers[seq.modality])
    rep = rep_vector(h, seq.modality, has_cls=seq.has_cls, elements=seq.elements)
    return h, project_signals(rep, model.artefact_heads[seq.modality], "artefact")


def encode_artefact_value(model: ModelParams, artefact) -> np.ndarray:
    """Pre-unify encoding as a plain array (for stages where it is frozen)."""
    return encode_artefact(model, artefact).matrix.value.copy()


def intra_signals(model: ModelParams, modality: str,
                  encoded_values: list[np.ndarray]) -> tuple[Tensor, SignalTriple]:
    """Stage-2 chain over one same-modality artefact set."""
    e = intra_concat([nm.constant(v) for v in encoded_values])
    return intra_encode_and_signal(e, model.intra[modality])


def fuse_sample(model: ModelParams, intra_values: dict[str, np.ndarray]):
    """Fusion context over precomputed per-modality intra encodings."""
    blocks = [(m, nm.constant(intra_values[m])) for m in MODALITIES if m in intra_values]
    return fuse(blocks, model.fusion)


def generate_for_sample(model: ModelParams, intra_values: dict[str, np.ndarray],
                        stopping: StoppingConfig | None = None) -> GenerationResult:
    context = fuse_sample(model, intra_values)
    return generate(context, model.intention, stopping or model.stopping)
