"""Learnable prompt parameters and prompted token-sequence assembly.

The bank holds four groups of per-layer prompt matrices: visual prompts
reserved for real images, visual prompts reserved for synthetic images,
shared (domain-agnostic) visual prompts used by both, and textual
prompts. Assembly prepends the right prompt rows to content tokens in a
fixed order: domain-specific first, then shared, then content. Content
always passes through untouched.

Assembly works on plain NumPy arrays and on autodiff Tensors, and on
single sequences ``[T, D]`` as well as batches ``[B, T, D]``; the token
axis is always the second-to-last.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .autodiff import Tensor
from .errors import ConfigurationError, ShapeError

REAL = "real"
SYNTHETIC = "synthetic"
IVLP = "ivlp"


class Segment(enum.Enum):
    """Role of one token position in an assembled sequence."""

    PROMPT_REAL = "prompt-real"
    PROMPT_SYNTH = "prompt-synth"
    PROMPT_SHARED = "prompt-shared"
    CONTENT = "content"


@dataclass(frozen=True)
class PromptConfig:
    """Sizes of the learnable prompt groups.

    m1/m2 are the per-layer counts of real-/synthetic-domain visual
    prompts, n the shared visual prompts, k the textual prompts. depth
    is how many encoder layers receive fresh prompts.
    """

    m1: int = 2
    m2: int = 2
    n: int = 2
    k: int = 4
    depth: int = 9
    embed_dim_v: int = 32
    embed_dim_t: int = 32
    init_scale: float = 0.02

    def __post_init__(self):
        if self.m1 < 0 or self.m2 < 0:
            raise ConfigurationError("domain prompt counts m1, m2 must be >= 0")
        if self.n < 1:
            raise ConfigurationError("shared prompt count n must be >= 1")
        if self.k < 1:
            raise ConfigurationError("textual prompt count k must be >= 1")
        if self.depth < 1:
            raise ConfigurationError("prompt depth must be >= 1")
        if self.embed_dim_v < 1 or self.embed_dim_t < 1:
            raise ConfigurationError("embedding widths must be positive")
        if self.init_scale < 0:
            raise ConfigurationError("init_scale must be >= 0")


@dataclass
class PromptBank:
    """Per-layer prompt matrices; the only trainable state of the model.

    Each group is a list of ``depth`` arrays: real_v[l] is [m1, embed_dim_v],
    synth_v[l] is [m2, embed_dim_v], shared_v[l] is [n, embed_dim_v] and
    textual[l] is [k, embed_dim_t].
    """

    config: PromptConfig
    real_v: list = field(default_factory=list)
    synth_v: list = field(default_factory=list)
    shared_v: list = field(default_factory=list)
    textual: list = field(default_factory=list)

    def groups(self) -> dict[str, list]:
        return {
            "real_v": self.real_v,
            "synth_v": self.synth_v,
            "shared_v": self.shared_v,
            "textual": self.textual,
        }

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Flatten to one named array per group per layer."""
        out = {}
        for name, layers in self.groups().items():
            for l, arr in enumerate(layers):
                out[f"{name}.layer{l:02d}"] = arr
        return out

    def validate(self) -> None:
        cfg = self.config
        expected = {
            "real_v": (cfg.m1, cfg.embed_dim_v),
            "synth_v": (cfg.m2, cfg.embed_dim_v),
            "shared_v": (cfg.n, cfg.embed_dim_v),
            "textual": (cfg.k, cfg.embed_dim_t),
        }
        for name, layers in self.groups().items():
            if len(layers) != cfg.depth:
                raise ConfigurationError(
                    f"{name} has {len(layers)} layers, expected depth {cfg.depth}"
                )
            for l, arr in enumerate(layers):
                if arr.shape != expected[name]:
                    raise ShapeError(
                        f"{name}[{l}] has shape {arr.shape}, expected {expected[name]}"
                    )
                if not np.all(np.isfinite(arr)):
                    raise ConfigurationError(f"{name}[{l}] contains non-finite entries")

    def astype(self, dtype) -> "PromptBank":
        return PromptBank(
            config=self.config,
            real_v=[a.astype(dtype) for a in self.real_v],
            synth_v=[a.astype(dtype) for a in self.synth_v],
            shared_v=[a.astype(dtype) for a in self.shared_v],
            textual=[a.astype(dtype) for a in self.textual],
        )

    def copy(self) -> "PromptBank":
        return PromptBank(
            config=self.config,
            real_v=[a.copy() for a in self.real_v],
            synth_v=[a.copy() for a in self.synth_v],
            shared_v=[a.copy() for a in self.shared_v],
            textual=[a.copy() for a in self.textual],
        )


@dataclass
class TokenSequence:
    """Ordered token embeddings plus the role of every position.

    tokens is array-like with the token axis second-to-last; segment_map
    has one Segment per token position, prompt segments first.
    """

    tokens: object
    segment_map: tuple

    def __post_init__(self):
        n_tokens = self.tokens.shape[-2]
        if len(self.segment_map) != n_tokens:
            raise ShapeError(
                f"segment map length {len(self.segment_map)} != token count {n_tokens}"
            )
        seen_content = False
        for seg in self.segment_map:
            if seg is Segment.CONTENT:
                seen_content = True
            elif seen_content:
                raise ShapeError("prompt segments must precede content segments")

    def __len__(self) -> int:
        return self.tokens.shape[-2]

    @property
    def content_start(self) -> int:
        return sum(1 for s in self.segment_map if s is not Segment.CONTENT)


def init_prompt_bank(config: PromptConfig, seed: int, dtype=np.float64) -> PromptBank:
    """Draw every prompt entry i.i.d. from Normal(0, init_scale^2).

    Deterministic for a fixed seed; init_scale 0 yields all-zero prompts.
    """
    rng = np.random.default_rng(seed)
    bank = PromptBank(config=config)
    for _ in range(config.depth):
        bank.real_v.append(
            rng.normal(0.0, config.init_scale, (config.m1, config.embed_dim_v)).astype(dtype)
        )
        bank.synth_v.append(
            rng.normal(0.0, config.init_scale, (config.m2, config.embed_dim_v)).astype(dtype)
        )
        bank.shared_v.append(
            rng.normal(0.0, config.init_scale, (config.n, config.embed_dim_v)).astype(dtype)
        )
        bank.textual.append(
            rng.normal(0.0, config.init_scale, (config.k, config.embed_dim_t)).astype(dtype)
        )
    bank.validate()
    return bank


def _concat_tokens(pieces, batch_shape):
    """Concatenate prompt/content pieces along the token axis.

    Prompt matrices are [m, D]; they broadcast up to the content's batch
    shape. Dispatches on NumPy arrays vs autodiff Tensors.
    """
    pieces = [p for p in pieces if p.shape[-2] > 0]
    if any(isinstance(p, Tensor) for p in pieces):
        expanded = []
        for p in pieces:
            t = p if isinstance(p, Tensor) else Tensor(p)
            if t.ndim == 2 and batch_shape:
                t = t.broadcast_to(batch_shape + t.shape)
            expanded.append(t)
        return autodiff.concat(expanded, axis=-2)
    expanded = [
        np.broadcast_to(p, batch_shape + p.shape) if p.ndim == 2 and batch_shape else p
        for p in pieces
    ]
    return np.concatenate(expanded, axis=-2)


def _layer_slot(layers, layer: int):
    if not 0 <= layer < len(layers):
        raise IndexError(f"layer {layer} out of range for depth {len(layers)}")
    return layers[layer]


def assemble_visual_input(patches, bank: PromptBank, layer: int, domain: str) -> TokenSequence:
    """Prepend [domain prompts, shared prompts] to content patch tokens.

    ``domain`` selects which domain-specific group fills the first slot:
    real images get the real-domain rows, synthetic images the
    synthetic-domain rows. Content tokens are passed through unchanged.
    """
    if domain not in (REAL, SYNTHETIC):
        raise ConfigurationError(f"domain must be '{REAL}' or '{SYNTHETIC}', got {domain!r}")
    tokens = patches.tokens if isinstance(patches, TokenSequence) else patches
    if domain == REAL:
        dom = _layer_slot(bank.real_v, layer)
        dom_segment = Segment.PROMPT_REAL
    else:
        dom = _layer_slot(bank.synth_v, layer)
        dom_segment = Segment.PROMPT_SYNTH
    shared = bank.shared_v[layer]
    batch_shape = tuple(tokens.shape[:-2])
    out = _concat_tokens([dom, shared, tokens], batch_shape)
    segments = (
        (dom_segment,) * dom.shape[-2]
        + (Segment.PROMPT_SHARED,) * shared.shape[-2]
        + (Segment.CONTENT,) * tokens.shape[-2]
    )
    return TokenSequence(tokens=out, segment_map=segments)


def assemble_ivlp_visual_input(patches, bank: PromptBank, layer: int) -> TokenSequence:
    """Single undivided visual prompt group ahead of the content.

    The shared group doubles as the whole prompt set; no domain-specific
    rows take part, which realizes the undivided-prompting baseline when
    m1 = m2 = 0.
    """
    tokens = patches.tokens if isinstance(patches, TokenSequence) else patches
    shared = _layer_slot(bank.shared_v, layer)
    batch_shape = tuple(tokens.shape[:-2])
    out = _concat_tokens([shared, tokens], batch_shape)
    segments = (Segment.PROMPT_SHARED,) * shared.shape[-2] + (Segment.CONTENT,) * tokens.shape[-2]
    return TokenSequence(tokens=out, segment_map=segments)


def assemble_text_input(class_tokens, bank: PromptBank, layer: int) -> TokenSequence:
    """Prepend the textual prompts to embedded class-description tokens."""
    tokens = class_tokens.tokens if isinstance(class_tokens, TokenSequence) else class_tokens
    if tokens.shape[-2] == 0:
        raise ShapeError("class token sequence is empty")
    textual = _layer_slot(bank.textual, layer)
    batch_shape = tuple(tokens.shape[:-2])
    out = _concat_tokens([textual, tokens], batch_shape)
    segments = (Segment.PROMPT_SHARED,) * textual.shape[-2] + (Segment.CONTENT,) * tokens.shape[-2]
    return TokenSequence(tokens=out, segment_map=segments)


class MetaNet:
    """Small two-layer map from an image feature to one prompt-shift vector.

    Hidden width defaults to embed_dim_t // 16 (at least 1) with a tanh
    middle activation. Parameters are trainable alongside the bank when
    the image-conditioned baseline is active.
    """

    def __init__(self, in_dim: int, out_dim: int, hidden: int | None = None,
                 seed: int = 0, dtype=np.float64):
        if hidden is None:
            hidden = max(1, out_dim // 16)
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0.0, in_dim**-0.5, (in_dim, hidden)).astype(dtype)
        self.b1 = np.zeros(hidden, dtype=dtype)
        self.w2 = rng.normal(0.0, hidden**-0.5, (hidden, out_dim)).astype(dtype)
        self.b2 = np.zeros(out_dim, dtype=dtype)

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {"metanet.w1": self.w1, "metanet.b1": self.b1,
                "metanet.w2": self.w2, "metanet.b2": self.b2}

    def __call__(self, feature, params: dict | None = None):
        """Apply the map; ``params`` may supply Tensor-wrapped weights."""
        p = params if params is not None else self.named_arrays()
        w1, b1, w2, b2 = p["metanet.w1"], p["metanet.b1"], p["metanet.w2"], p["metanet.b2"]
        h = feature @ w1 + b1
        h = h.tanh() if isinstance(h, Tensor) else np.tanh(h)
        return h @ w2 + b2


def cocoop_condition(image_feature, base_prompts, metanet, metanet_params: dict | None = None):
    """Shift every textual prompt row by one image-conditioned vector.

    A single feature yields one shifted [k, D] prompt matrix; a batch of
    features yields one matrix per image, [B, k, D].
    """
    shift = metanet(image_feature, metanet_params)
    width = shift.shape[-1]
    if width != base_prompts.shape[-1]:
        raise ShapeError(
            f"metanet output width {width} != prompt width {base_prompts.shape[-1]}"
        )
    if shift.ndim > 1:
        shift = shift.reshape(shift.shape[:-1] + (1, width))
    if isinstance(base_prompts, Tensor) or isinstance(shift, Tensor):
        base = base_prompts if isinstance(base_prompts, Tensor) else Tensor(base_prompts)
        return base + (shift if isinstance(shift, Tensor) else Tensor(shift))
    return base_prompts + shift


def maple_project(textual_prompts, projector):
    """Row-wise linear projection of textual prompts into visual space."""
    if projector.shape[0] != textual_prompts.shape[-1]:
        raise ShapeError(
            f"projector expects width {projector.shape[0]}, "
            f"prompts have width {textual_prompts.shape[-1]}"
        )
    return textual_prompts @ projector
