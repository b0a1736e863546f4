"""Frozen dual-encoder backbones with layerwise prompt injection.

The pair of desk-scale transformers here is small enough that every
objective gradient can be checked against finite differences in seconds,
yet structurally faithful: pre-norm multi-head self-attention blocks, a
content-token readout projected into a joint space shared by both
encoders, and deep prompting that replaces prompt positions with fresh
learnable rows at each prompted layer.

Backbone weights are generated once from a seed and never updated; a
checksum taken at construction lets callers verify freezing bit-wise.
An abstract contract (`DualEncoderBackbone`) documents the surface a
pretrained adapter must provide; nothing in this package requires one.
"""

from __future__ import annotations

import abc
import hashlib
import re
import zlib
from dataclasses import dataclass

import numpy as np

from . import prompts as prompts_mod
from .archive import load_archive, save_archive
from .autodiff import Tensor, no_grad, softmax
from .errors import (
    ConfigurationError,
    InputError,
    NumericError,
    ShapeError,
    TokenizerError,
)
from .prompts import IVLP, REAL, SYNTHETIC, PromptBank, TokenSequence


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture of one frozen tower.

    Exactly one of patch_count (visual) / max_tokens (text) is set.
    output_dim is the joint-space width and must agree between the two
    towers bound into one model.
    """

    n_layers: int
    embed_dim: int
    n_heads: int
    output_dim: int
    patch_count: int | None = None
    max_tokens: int | None = None

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        if (self.patch_count is None) == (self.max_tokens is None):
            raise ConfigurationError("set exactly one of patch_count / max_tokens")
        if self.n_layers < 1 or self.output_dim < 1:
            raise ConfigurationError("n_layers and output_dim must be positive")

    @property
    def token_slots(self) -> int:
        return self.patch_count if self.patch_count is not None else self.max_tokens

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "embed_dim": self.embed_dim,
            "n_heads": self.n_heads,
            "output_dim": self.output_dim,
            "patch_count": self.patch_count,
            "max_tokens": self.max_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(**d)


@dataclass
class Embedding:
    """Joint-space feature vector with its cached L2 norm."""

    vector: np.ndarray
    norm: float

    @classmethod
    def of(cls, vector: np.ndarray) -> "Embedding":
        vector = np.asarray(vector)
        if not np.all(np.isfinite(vector)):
            raise NumericError("embedding contains non-finite entries")
        return cls(vector=vector, norm=float(np.linalg.norm(vector)))


# ---------------------------------------------------------------------------
# toy tokenizer


class ToyTokenizer:
    """Lowercase word/punctuation splitter with hash-bucketed OOV ids.

    Id 0 is padding; a small fixed vocabulary covers the hand-crafted
    template words, everything else lands in a crc32 bucket. Sequences
    are padded/truncated to a fixed length so text batches stack.
    """

    _WORDS = (
        "a of the photo picture centered satellite person doing type "
        "texture flower food pet aircraft class this is an and . ,"
    ).split()
    _TOKEN_RE = re.compile(r"[a-z0-9]+|[.,]")

    def __init__(self, n_buckets: int = 64):
        self.n_buckets = n_buckets
        self._vocab = {w: i + 1 for i, w in enumerate(self._WORDS)}

    @property
    def vocab_size(self) -> int:
        return 1 + len(self._WORDS) + self.n_buckets

    def encode(self, text: str, length: int) -> np.ndarray:
        pieces = self._TOKEN_RE.findall(text.lower())
        if not pieces:
            raise TokenizerError(f"nothing to tokenize in {text!r}")
        ids = []
        base = 1 + len(self._WORDS)
        for w in pieces:
            ids.append(self._vocab.get(w, base + zlib.crc32(w.encode()) % self.n_buckets))
        ids = ids[:length]
        return np.asarray(ids + [0] * (length - len(ids)), dtype=np.int64)


# ---------------------------------------------------------------------------
# frozen transformer tower


def _layernorm(x: Tensor, gamma, beta, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    return d / (var + eps).sqrt() * gamma + beta


def _gelu(x: Tensor) -> Tensor:
    # tanh approximation; exact for the finite-difference checks because
    # the same composite is differentiated on both routes.
    inner = (x + (x**3) * 0.044715) * np.sqrt(2.0 / np.pi)
    return x * (inner.tanh() + 1.0) * 0.5


class _Tower:
    """Stack of pre-norm MSA blocks with a linear joint-space head."""

    def __init__(self, spec: EncoderSpec, rng: np.random.Generator, dtype):
        d, h = spec.embed_dim, spec.n_heads
        self.spec = spec
        self.dtype = dtype
        self.head_dim = d // h
        self.params: dict[str, np.ndarray] = {}
        w = lambda fan_in, shape: rng.normal(0.0, fan_in**-0.5, shape).astype(dtype)
        for l in range(spec.n_layers):
            p = f"layer{l:02d}."
            self.params[p + "ln1.g"] = np.ones(d, dtype=dtype)
            self.params[p + "ln1.b"] = np.zeros(d, dtype=dtype)
            self.params[p + "w_qkv"] = w(d, (d, 3 * d))
            self.params[p + "b_qkv"] = np.zeros(3 * d, dtype=dtype)
            self.params[p + "w_out"] = w(d, (d, d))
            self.params[p + "b_out"] = np.zeros(d, dtype=dtype)
            self.params[p + "ln2.g"] = np.ones(d, dtype=dtype)
            self.params[p + "ln2.b"] = np.zeros(d, dtype=dtype)
            self.params[p + "w_mlp1"] = w(d, (d, 4 * d))
            self.params[p + "b_mlp1"] = np.zeros(4 * d, dtype=dtype)
            self.params[p + "w_mlp2"] = w(4 * d, (4 * d, d))
            self.params[p + "b_mlp2"] = np.zeros(d, dtype=dtype)
        self.params["ln_final.g"] = np.ones(d, dtype=dtype)
        self.params["ln_final.b"] = np.zeros(d, dtype=dtype)
        self.params["w_proj"] = w(d, (d, spec.output_dim))

    def _block(self, layer: int, h: Tensor) -> Tensor:
        p = self.params
        k = f"layer{layer:02d}."
        a = _layernorm(h, p[k + "ln1.g"], p[k + "ln1.b"])
        a = self._attention(a, k)
        h = h + a
        m = _layernorm(h, p[k + "ln2.g"], p[k + "ln2.b"])
        m = _gelu(m @ p[k + "w_mlp1"] + p[k + "b_mlp1"]) @ p[k + "w_mlp2"] + p[k + "b_mlp2"]
        return h + m

    def _attention(self, x: Tensor, k: str) -> Tensor:
        p = self.params
        d, nh, dh = self.spec.embed_dim, self.spec.n_heads, self.head_dim
        t = x.shape[-2]
        qkv = x @ p[k + "w_qkv"] + p[k + "b_qkv"]
        lead = qkv.shape[:-2]

        def heads(z):
            return z.reshape(lead + (t, nh, dh)).swapaxes(-3, -2)

        q = heads(qkv[..., :d])
        key = heads(qkv[..., d : 2 * d])
        v = heads(qkv[..., 2 * d :])
        scores = (q @ key.swapaxes(-1, -2)) * (dh**-0.5)
        attn = softmax(scores, axis=-1)
        out = (attn @ v).swapaxes(-3, -2).reshape(lead + (t, d))
        return out @ p[k + "w_out"] + p[k + "b_out"]

    def run(self, content: Tensor, assemble, depth: int) -> Tensor:
        """Forward with deep prompting.

        ``assemble(content, layer)`` returns the prompted TokenSequence
        for that layer; at each prompted layer beyond the first, the
        previous layer's outputs at prompt positions are discarded and
        replaced by that layer's fresh prompts.
        """
        seq = assemble(content, 0)
        h = seq.tokens
        start = seq.content_start
        for l in range(self.spec.n_layers):
            if 0 < l < depth:
                seq = assemble(h[..., start:, :], l)
                h = seq.tokens
                start = seq.content_start
            h = self._block(l, h)
        h = _layernorm(h, self.params["ln_final.g"], self.params["ln_final.b"])
        return h[..., start, :] @ self.params["w_proj"]


# ---------------------------------------------------------------------------
# model contract and toy implementation


class DualEncoderBackbone(abc.ABC):
    """Surface a pretrained-backbone adapter must provide.

    Implementations bind fixed weights; prompts are the only trainable
    inputs. Any checkpoint exposing this protocol (for instance a
    ViT-B/16-compatible pair) can replace the toy encoders without
    touching the rest of the package.
    """

    @abc.abstractmethod
    def encode_visual(self, patches, bank: PromptBank, domain: str) -> Embedding:
        """Joint-space embedding of a patch-token sequence."""

    @abc.abstractmethod
    def encode_text(self, class_name: str, template: str, bank: PromptBank) -> Embedding:
        """Joint-space embedding of a class description."""

    @abc.abstractmethod
    def backbone_checksum(self) -> str:
        """Digest of every frozen parameter, bit-wise."""


class ToyDualEncoder(DualEncoderBackbone):
    """Seeded desk-scale encoder pair over a common joint space."""

    def __init__(self, visual_spec: EncoderSpec | None = None,
                 text_spec: EncoderSpec | None = None,
                 seed: int = 0, dtype=np.float64, patch_pixels: int = 16):
        self.visual_spec = visual_spec or EncoderSpec(
            n_layers=2, embed_dim=32, n_heads=4, output_dim=16, patch_count=9
        )
        self.text_spec = text_spec or EncoderSpec(
            n_layers=2, embed_dim=32, n_heads=4, output_dim=16, max_tokens=16
        )
        if self.visual_spec.patch_count is None:
            raise ConfigurationError("visual spec needs patch_count")
        if self.text_spec.max_tokens is None:
            raise ConfigurationError("text spec needs max_tokens")
        if self.visual_spec.output_dim != self.text_spec.output_dim:
            raise ConfigurationError("the two towers must share output_dim (joint space)")
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.patch_pixels = patch_pixels
        self.tokenizer = ToyTokenizer()

        rng = np.random.default_rng(seed)
        self.visual = _Tower(self.visual_spec, rng, self.dtype)
        self.text = _Tower(self.text_spec, rng, self.dtype)
        dv, dt = self.visual_spec.embed_dim, self.text_spec.embed_dim
        self.frozen: dict[str, np.ndarray] = {}
        self.frozen["visual.pos"] = rng.normal(
            0.0, 0.1, (self.visual_spec.patch_count, dv)
        ).astype(self.dtype)
        self.frozen["visual.w_patch"] = rng.normal(
            0.0, patch_pixels**-1.0, (patch_pixels * patch_pixels, dv)
        ).astype(self.dtype)
        self.frozen["text.pos"] = rng.normal(
            0.0, 0.1, (self.text_spec.max_tokens, dt)
        ).astype(self.dtype)
        self.frozen["text.vocab"] = rng.normal(
            0.0, 1.0, (self.tokenizer.vocab_size, dt)
        ).astype(self.dtype)
        self.frozen["text.vocab"][0] = 0.0  # padding row
        self._initial_checksum = self.backbone_checksum()

    # -- frozen-parameter bookkeeping ---------------------------------------

    def backbone_arrays(self) -> dict[str, np.ndarray]:
        out = {f"visual.{k}": v for k, v in self.visual.params.items()}
        out.update({f"text.{k}": v for k, v in self.text.params.items()})
        out.update(self.frozen)
        return out

    def backbone_checksum(self) -> str:
        digest = hashlib.sha256()
        arrays = self.backbone_arrays()
        for name in sorted(arrays):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(arrays[name]).tobytes())
        return digest.hexdigest()

    # -- embedding of raw content --------------------------------------------

    def embed_patches(self, patches: np.ndarray):
        """Add frozen positional information to patch tokens."""
        patches = np.asarray(patches, dtype=self.dtype)
        if patches.shape[-1] != self.visual_spec.embed_dim:
            raise ShapeError(
                f"patch width {patches.shape[-1]} != embed_dim {self.visual_spec.embed_dim}"
            )
        if patches.shape[-2] != self.visual_spec.patch_count:
            raise ShapeError(
                f"got {patches.shape[-2]} patches, expected {self.visual_spec.patch_count}"
            )
        return patches + self.frozen["visual.pos"]

    def patchify_image(self, image) -> np.ndarray:
        """Grayscale grid patchify + frozen projection into token space.

        ``image`` is a path or a PIL image; the patch grid must be square
        (patch_count a perfect square).
        """
        from PIL import Image

        grid = int(round(np.sqrt(self.visual_spec.patch_count)))
        if grid * grid != self.visual_spec.patch_count:
            raise ConfigurationError("patch_count must be square to patchify images")
        if not hasattr(image, "convert"):
            image = Image.open(image)
        ps = self.patch_pixels
        arr = np.asarray(
            image.convert("L").resize((grid * ps, grid * ps), Image.BILINEAR),
            dtype=self.dtype,
        )
        arr = arr / 255.0 - 0.5
        blocks = arr.reshape(grid, ps, grid, ps).swapaxes(1, 2).reshape(grid * grid, ps * ps)
        return blocks @ self.frozen["visual.w_patch"]

    def class_token_ids(self, class_name: str, template: str) -> np.ndarray:
        if "[CLS]" not in template:
            raise InputError(f"template {template!r} has no [CLS] placeholder")
        return self.tokenizer.encode(
            template.replace("[CLS]", class_name), self.text_spec.max_tokens
        )

    def embed_token_ids(self, ids: np.ndarray):
        return self.frozen["text.vocab"][ids] + self.frozen["text.pos"]

    # -- forward passes (Tensor in, Tensor out; used by the trainer) ----------

    def visual_features(self, patches, bank_like, domain: str) -> Tensor:
        """Joint-space features for [P, D] or [B, P, D] patch tokens."""
        content = patches if isinstance(patches, Tensor) else Tensor(self.embed_patches(patches))
        depth = self._check_depth(len(bank_like.shared_v))
        if domain == IVLP:
            assemble = lambda c, l: prompts_mod.assemble_ivlp_visual_input(c, bank_like, l)
        elif domain in (REAL, SYNTHETIC):
            assemble = lambda c, l: prompts_mod.assemble_visual_input(c, bank_like, l, domain)
        else:
            raise ConfigurationError(f"unknown domain {domain!r}")
        return self.visual.run(content, assemble, depth)

    def visual_features_promptless(self, patches) -> Tensor:
        """Frozen features of the bare content sequence (no prompt rows)."""
        content = patches if isinstance(patches, Tensor) else Tensor(self.embed_patches(patches))
        n_content = content.shape[-2]
        assemble = lambda c, l: TokenSequence(
            tokens=c, segment_map=(prompts_mod.Segment.CONTENT,) * n_content
        )
        return self.visual.run(content, assemble, 1)

    def text_features(self, token_embeddings, bank_like) -> Tensor:
        """Joint-space features for embedded class tokens [.., T, D]."""
        content = (
            token_embeddings
            if isinstance(token_embeddings, Tensor)
            else Tensor(np.asarray(token_embeddings, dtype=self.dtype))
        )
        depth = self._check_depth(len(bank_like.textual))
        assemble = lambda c, l: prompts_mod.assemble_text_input(c, bank_like, l)
        return self.text.run(content, assemble, depth)

    def text_features_conditioned(self, token_embeddings, bank_like, conditioned_layer0) -> Tensor:
        """Text features with image-conditioned prompts at the input layer.

        ``conditioned_layer0`` is [.., k, D]; deeper prompted layers fall
        back to the bank's own textual rows.
        """
        content = (
            token_embeddings
            if isinstance(token_embeddings, Tensor)
            else Tensor(np.asarray(token_embeddings, dtype=self.dtype))
        )
        depth = self._check_depth(len(bank_like.textual))

        def assemble(c, l):
            if l == 0:
                k = conditioned_layer0.shape[-2]
                batch_shape = tuple(c.shape[:-2])
                toks = prompts_mod._concat_tokens([conditioned_layer0, c], batch_shape)
                segs = (prompts_mod.Segment.PROMPT_SHARED,) * k + (
                    prompts_mod.Segment.CONTENT,
                ) * c.shape[-2]
                return TokenSequence(tokens=toks, segment_map=segs)
            return prompts_mod.assemble_text_input(c, bank_like, l)

        return self.text.run(content, assemble, depth)

    def _check_depth(self, depth: int) -> int:
        if depth > min(self.visual_spec.n_layers, self.text_spec.n_layers):
            raise ConfigurationError(
                f"prompt depth {depth} exceeds encoder layer count"
            )
        return depth

    # -- public single-example contract ---------------------------------------

    def encode_visual(self, patches, bank: PromptBank, domain: str) -> Embedding:
        with no_grad():
            vec = self.visual_features(np.asarray(patches), bank, domain).data
        if not np.all(np.isfinite(vec)):
            raise NumericError("non-finite activations in the visual tower")
        return Embedding.of(vec)

    def encode_text(self, class_name: str, template: str, bank: PromptBank) -> Embedding:
        ids = self.class_token_ids(class_name, template)
        with no_grad():
            vec = self.text_features(self.embed_token_ids(ids), bank).data
        if not np.all(np.isfinite(vec)):
            raise NumericError("non-finite activations in the text tower")
        return Embedding.of(vec)

    # -- serialization ---------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "kind": "toy-dual-encoder",
            "seed": self.seed,
            "dtype": self.dtype.str,
            "patch_pixels": self.patch_pixels,
            "visual_spec": self.visual_spec.to_dict(),
            "text_spec": self.text_spec.to_dict(),
        }
        save_archive(path, self.backbone_arrays(), meta)

    @classmethod
    def load(cls, path) -> "ToyDualEncoder":
        arrays, meta = load_archive(path)
        model = cls(
            visual_spec=EncoderSpec.from_dict(meta["visual_spec"]),
            text_spec=EncoderSpec.from_dict(meta["text_spec"]),
            seed=meta["seed"],
            dtype=np.dtype(meta["dtype"]),
            patch_pixels=meta["patch_pixels"],
        )
        for name, arr in arrays.items():
            if name.startswith("visual.") and name[7:] in model.visual.params:
                model.visual.params[name[7:]] = arr
            elif name.startswith("text.") and name[5:] in model.text.params:
                model.text.params[name[5:]] = arr
            elif name in model.frozen:
                model.frozen[name] = arr
        model._initial_checksum = model.backbone_checksum()
        return model


def freeze_check(model: ToyDualEncoder) -> bool:
    """True iff no backbone parameter changed since construction."""
    return model.backbone_checksum() == model._initial_checksum
