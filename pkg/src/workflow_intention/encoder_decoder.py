"""Configuration-driven encoder and decoder stacks.

Layer recipe (post-norm): attention block, residual add, LayerNorm, then
feed-forward, residual add, LayerNorm. Decoder layers insert a cross-
attention block (with its own Add+LayerNorm) between the masked
self-attention and the feed-forward. No positional term is applied inside
the stacks; sequence embedders own positions.

``param_count`` reproduces the weight-matrix counting convention used for
the production-scale sizing table: per layer, the three per-head
projections, the output mix, and the two feed-forward matrices; biases and
LayerNorm scalars excluded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .attention import AttentionParams, MultiHeadParams, multi_head
from .numerics import LinearParams, MlpSpec, Param, ShapeError, Tensor


@dataclass(frozen=True)
class StackConfig:
    n_layers: int
    d_model: int
    n_heads_self: int
    d_ffn_inner: int
    activation: str = "gelu"
    n_heads_cross: int = 0
    layer_norm_epsilon: float = 1e-5

    def __post_init__(self):
        if self.n_layers < 1:
            raise ShapeError("a stack needs at least one layer")
        if self.d_model % self.n_heads_self != 0:
            raise ShapeError(
                f"self-attention heads {self.n_heads_self} must divide d_model {self.d_model}"
            )
        if self.n_heads_cross and self.d_model % self.n_heads_cross != 0:
            raise ShapeError(
                f"cross-attention heads {self.n_heads_cross} must divide d_model {self.d_model}"
            )
        if self.activation not in nm.ACTIVATIONS:
            raise nm.NumericsError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class LayerNormParams:
    gamma: Param
    beta: Param


@dataclass(frozen=True)
class EncoderLayerParams:
    attn: MultiHeadParams
    ln_attn: LayerNormParams
    ffn: MlpSpec
    ln_ffn: LayerNormParams


@dataclass(frozen=True)
class EncoderParams:
    config: StackConfig
    layers: tuple[EncoderLayerParams, ...]


@dataclass(frozen=True)
class DecoderLayerParams:
    self_attn: MultiHeadParams
    ln_self: LayerNormParams
    cross_attn: MultiHeadParams
    ln_cross: LayerNormParams
    ffn: MlpSpec
    ln_ffn: LayerNormParams


@dataclass(frozen=True)
class DecoderParams:
    config: StackConfig
    layers: tuple[DecoderLayerParams, ...]


def _residual_norm(x: Tensor, block_out: Tensor, ln: LayerNormParams, eps: float) -> Tensor:
    return nm.layer_norm(nm.add(x, block_out), nm.lift(ln.gamma), nm.lift(ln.beta), eps)


def encode(x, p: EncoderParams) -> Tensor:
    x = nm.lift(x)
    if x.shape[0] != p.config.d_model:
        raise ShapeError(f"expected {p.config.d_model} rows, got {x.shape[0]}")
    eps = p.config.layer_norm_epsilon
    for layer in p.layers:
        x = _residual_norm(x, multi_head(x, layer.attn), layer.ln_attn, eps)
        x = _residual_norm(x, nm.mlp(x, layer.ffn), layer.ln_ffn, eps)
    return x


def decode_step(s, context, p: DecoderParams) -> Tensor:
    """One full pass over the decoded prefix; column t depends on s[:, :t] only."""
    s, context = nm.lift(s), nm.lift(context)
    if s.shape[0] != p.config.d_model:
        raise ShapeError(f"expected {p.config.d_model} rows, got {s.shape[0]}")
    if context.shape[0] != p.config.d_model:
        raise ShapeError("context dimension must match the decoder dimension")
    eps = p.config.layer_norm_epsilon
    for layer in p.layers:
        s = _residual_norm(s, multi_head(s, layer.self_attn, masked=True), layer.ln_self, eps)
        s = _residual_norm(s, multi_head(s, layer.cross_attn, context=context),
                           layer.ln_cross, eps)
        s = _residual_norm(s, nm.mlp(s, layer.ffn), layer.ln_ffn, eps)
    return s


# --- construction -----------------------------------------------------------


INIT_GAIN = np.sqrt(3.0)  # uniform bound sqrt(3/fan_in): unit-variance-preserving


def make_param(bank: dict[str, Param], rng, name: str, d_out: int, d_in: int,
               zero: bool = False, value: float | None = None,
               fan_in: int | None = None) -> Param:
    """Bank-registered Param, uniform in +-sqrt(3/fan_in), zero, or constant.

    The sqrt(3) gain makes matrix products variance-preserving; a smaller
    bound attenuates attention outputs below the residual stream and buries
    the sample signal. ``fan_in`` overrides the column count for the init
    bound; lookup tables and learned single columns are indexed rather than
    multiplied, so their effective fan-in is 1.
    """
    if name in bank:
        raise ValueError(f"duplicate parameter name {name!r}")
    if value is not None:
        arr = np.full((d_out, d_in), value)
    elif zero:
        arr = np.zeros((d_out, d_in))
    else:
        bound = INIT_GAIN / np.sqrt(fan_in if fan_in is not None else d_in)
        arr = rng.uniform(-bound, bound, size=(d_out, d_in))
    p = Param(name, arr)
    bank[name] = p
    return p


def make_linear(bank, rng, name: str, d_out: int, d_in: int) -> LinearParams:
    return LinearParams(
        make_param(bank, rng, name + ".w", d_out, d_in),
        make_param(bank, rng, name + ".b", d_out, 1, zero=True),
    )


def _make_layer_norm(bank, rng, name: str) -> LayerNormParams:
    return LayerNormParams(
        make_param(bank, rng, name + ".gamma", 1, 1, value=1.0),
        make_param(bank, rng, name + ".beta", 1, 1, value=0.0),
    )


def _make_multi_head(bank, rng, name: str, d: int, n_heads: int) -> MultiHeadParams:
    d_head = d // n_heads
    heads = tuple(
        AttentionParams(
            make_param(bank, rng, f"{name}.head{i}.wq", d_head, d),
            make_param(bank, rng, f"{name}.head{i}.wk", d_head, d),
            make_param(bank, rng, f"{name}.head{i}.wv", d_head, d),
        )
        for i in range(n_heads)
    )
    return MultiHeadParams(heads, make_param(bank, rng, name + ".wo", d, d))


def _make_ffn(bank, rng, name: str, cfg: StackConfig) -> MlpSpec:
    d, inner = cfg.d_model, cfg.d_ffn_inner
    first_out = 2 * inner if cfg.activation == "geglu" else inner
    return MlpSpec((
        (cfg.activation, make_linear(bank, rng, name + ".lin1", first_out, d)),
        ("identity", make_linear(bank, rng, name + ".lin2", d, inner)),
    ))


def make_encoder(bank: dict[str, Param], rng, name: str, cfg: StackConfig) -> EncoderParams:
    layers = []
    for l in range(cfg.n_layers):
        base = f"{name}.layer{l}"
        layers.append(EncoderLayerParams(
            _make_multi_head(bank, rng, base + ".attn", cfg.d_model, cfg.n_heads_self),
            _make_layer_norm(bank, rng, base + ".ln_attn"),
            _make_ffn(bank, rng, base + ".ffn", cfg),
            _make_layer_norm(bank, rng, base + ".ln_ffn"),
        ))
    return EncoderParams(cfg, tuple(layers))


def make_decoder(bank: dict[str, Param], rng, name: str, cfg: StackConfig) -> DecoderParams:
    if not cfg.n_heads_cross:
        raise ShapeError("decoder config needs n_heads_cross >= 1")
    layers = []
    for l in range(cfg.n_layers):
        base = f"{name}.layer{l}"
        layers.append(DecoderLayerParams(
            _make_multi_head(bank, rng, base + ".self", cfg.d_model, cfg.n_heads_self),
            _make_layer_norm(bank, rng, base + ".ln_self"),
            _make_multi_head(bank, rng, base + ".cross", cfg.d_model, cfg.n_heads_cross),
            _make_layer_norm(bank, rng, base + ".ln_cross"),
            _make_ffn(bank, rng, base + ".ffn", cfg),
            _make_layer_norm(bank, rng, base + ".ln_ffn"),
        ))
    return DecoderParams(cfg, tuple(layers))


# --- parameter-count oracle --------------------------------------------------


def param_count(config: StackConfig, kind: str = "encoder") -> int:
    """Weight-matrix parameter total under the sizing-table convention.

    Per layer: n_heads x 3 matrices x d_head x d for attention, plus the
    d x d output mix, plus two feed-forward matrices d x inner; the decoder
    carries two attention blocks. Biases and LayerNorm scalars excluded.
    """
    d = config.d_model
    ffn = 2 * d * config.d_ffn_inner

    def attn_block(heads: int) -> int:
        return heads * 3 * (d // heads) * d + d * d

    if kind == "encoder":
        per_layer = attn_block(config.n_heads_self) + ffn
    elif kind == "decoder":
        per_layer = (attn_block(config.n_heads_self)
                     + attn_block(config.n_heads_cross or config.n_heads_self) + ffn)
    else:
        raise ValueError(f"kind must be 'encoder' or 'decoder', got {kind!r}")
    return config.n_layers * per_layer


# Production-scale shapes used only for the sizing report.
TEXT_ENCODER_FULL = StackConfig(24, 1024, 16, 4096, "gelu")
IMAGE_ENCODER_FULL = StackConfig(45, 3200, 25, 12800, "gelu")
DOCUMENT_ENCODER_FULL = StackConfig(24, 1024, 16, 4096, "gelu")
FUSION_ENCODER_FULL = StackConfig(24, 1024, 128, 65536, "geglu")
INTENTION_DECODER_FULL = StackConfig(24, 1024, 128, 65536, "geglu", n_heads_cross=128)

IMAGE_PATCH_FLAT_FULL = 588      # flattened patch values entering the patch projection
IMAGE_PATCH_EMBED_FULL = 3200    # patch embedding width
UNIFIED_DIM_FULL = 1024
CLASSIFIER_INNER_FULL = 4096
FAMILY_SIZE_FULL = 10 ** 5


def full_scale_report() -> dict:
    """The sizing table: per-component totals and the grand total."""
    text = param_count(TEXT_ENCODER_FULL, "encoder")
    image_patch_proj = IMAGE_PATCH_FLAT_FULL * IMAGE_PATCH_EMBED_FULL
    image = image_patch_proj + param_count(IMAGE_ENCODER_FULL, "encoder")
    document_own = param_count(DOCUMENT_ENCODER_FULL, "encoder")
    document = text + image + document_own
    fusion = param_count(FUSION_ENCODER_FULL, "encoder")
    decoder = param_count(INTENTION_DECODER_FULL, "decoder")

    d, df = UNIFIED_DIM_FULL, IMAGE_PATCH_EMBED_FULL
    per_stage_heads = (d * d            # text unifier
                       + 3 * d * d      # text signal projections
                       + df * d         # image unifier
                       + 3 * d * d      # image signal projections
                       + d * d          # document unifier (past the patch projection)
                       + 3 * d * d)     # document signal projections
    heads = (2 * per_stage_heads        # artefact and intra-modality stages
             + df * d                   # document unifier's patch-side map
             + d * d + 3 * d * d)       # decoder projection and its signal heads

    classifier = CLASSIFIER_INNER_FULL * d + CLASSIFIER_INNER_FULL * FAMILY_SIZE_FULL
    classifiers = 7 * 3 * classifier
    stop_head = CLASSIFIER_INNER_FULL * d + CLASSIFIER_INNER_FULL * 2
    mlps = classifiers + stop_head

    total = text + image + document + fusion + decoder + heads + mlps
    return {
        "text_encoder": text,
        "image_encoder": image,
        "document_encoder": document,
        "fusion_encoder": fusion,
        "intention_decoder": decoder,
        "projection_heads": heads,
        "classifier_mlps": mlps,
        "total": total,
    }
