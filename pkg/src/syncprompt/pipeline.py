"""Binds a frozen backbone, a prompt bank and a baseline mode into one
classifier whose only trainable state is the prompt parameters (plus the
metanet or projector when the corresponding baseline is active).

Modes
-----
sync-clip : domain-split visual prompts (real/synthetic groups + shared)
ivlp      : one undivided visual prompt group (m1 = m2 = 0)
maple     : visual prompts are a linear projection of the textual prompts
cocoop    : no visual prompts; textual prompts shifted per image by a
            small metanet fed with the frozen image feature

The same forward code serves training (parameters wrapped as autodiff
leaves) and evaluation (plain arrays under no_grad).
"""

from __future__ import annotations

import numpy as np

from . import objectives
from .autodiff import Tensor, no_grad
from .data import ClassSpace, LabeledExample, resolve_content
from .encoders import ToyDualEncoder
from .errors import ConfigurationError
from .prompts import (
    IVLP,
    REAL,
    MetaNet,
    PromptConfig,
    cocoop_condition,
    init_prompt_bank,
    maple_project,
)

MODES = ("sync-clip", "ivlp", "cocoop", "maple")


def validate_mode_config(mode: str, config: PromptConfig) -> None:
    """Baseline modes constrain the prompt shape; reject bad combinations."""
    if mode not in MODES:
        raise ConfigurationError(f"unknown baseline mode {mode!r}; choose from {MODES}")
    if mode in ("ivlp", "cocoop", "maple") and (config.m1 != 0 or config.m2 != 0):
        raise ConfigurationError(
            f"baseline {mode!r} uses no domain-split visual prompts; set m1=0 and m2=0"
        )
    if mode == "cocoop" and config.depth != 1:
        raise ConfigurationError("baseline 'cocoop' conditions input-layer prompts; set depth=1")


class _BankView:
    """Prompt groups as Tensors (or arrays) for one forward pass."""

    __slots__ = ("real_v", "synth_v", "shared_v", "textual")

    def __init__(self, real_v, synth_v, shared_v, textual):
        self.real_v = real_v
        self.synth_v = synth_v
        self.shared_v = shared_v
        self.textual = textual


class PromptedClassifier:
    """Frozen dual encoder + trainable prompts, scored by cosine softmax."""

    def __init__(self, model: ToyDualEncoder, prompt_config: PromptConfig,
                 mode: str = "sync-clip", seed: int = 0,
                 temperature: float = objectives.DEFAULT_TEMPERATURE,
                 init_textual_from: str | None = None):
        validate_mode_config(mode, prompt_config)
        if prompt_config.embed_dim_v != model.visual_spec.embed_dim:
            raise ConfigurationError("prompt embed_dim_v must match the visual tower")
        if prompt_config.embed_dim_t != model.text_spec.embed_dim:
            raise ConfigurationError("prompt embed_dim_t must match the text tower")
        self.model = model
        self.prompt_config = prompt_config
        self.mode = mode
        self.temperature = temperature
        self.bank = init_prompt_bank(prompt_config, seed, dtype=model.dtype)
        if init_textual_from is not None:
            self._init_textual_from_template(init_textual_from)
        self.metanet = (
            MetaNet(model.visual_spec.output_dim, prompt_config.embed_dim_t,
                    seed=seed + 1, dtype=model.dtype)
            if mode == "cocoop"
            else None
        )
        rng = np.random.default_rng([seed, 9])
        self.projector = (
            rng.normal(
                0.0,
                prompt_config.embed_dim_t**-0.5,
                (prompt_config.embed_dim_t, prompt_config.embed_dim_v),
            ).astype(model.dtype)
            if mode == "maple"
            else None
        )
        self._token_embs: dict[int, np.ndarray] = {}
        self._patch_cache: dict[str, np.ndarray] = {}

    def _init_textual_from_template(self, template: str) -> None:
        """Seed the textual prompts from the hand-crafted template words.

        The first k token embeddings of the template (with the class
        placeholder stripped) replace the random rows at every prompted
        layer; shorter templates keep the random tail.
        """
        text = template.replace("[CLS]", " ").strip()
        ids = self.model.tokenizer.encode(text, self.model.text_spec.max_tokens)
        rows = self.model.frozen["text.vocab"][ids]
        k = min(self.prompt_config.k, int(np.count_nonzero(ids)))
        for l in range(self.prompt_config.depth):
            self.bank.textual[l][:k] = rows[:k]

    # -- trainable parameter plumbing -----------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Canonical trainable arrays, keyed like the checkpoint archive."""
        out = dict(self.bank.named_arrays())
        if self.metanet is not None:
            out.update(self.metanet.named_arrays())
        if self.projector is not None:
            out["projector"] = self.projector
        return out

    def set_parameters(self, arrays: dict[str, np.ndarray]) -> None:
        cfg = self.bank.config
        for name, layers in self.bank.groups().items():
            for l in range(cfg.depth):
                layers[l] = np.array(arrays[f"{name}.layer{l:02d}"], dtype=self.model.dtype)
        if self.metanet is not None:
            self.metanet.w1 = np.array(arrays["metanet.w1"], dtype=self.model.dtype)
            self.metanet.b1 = np.array(arrays["metanet.b1"], dtype=self.model.dtype)
            self.metanet.w2 = np.array(arrays["metanet.w2"], dtype=self.model.dtype)
            self.metanet.b2 = np.array(arrays["metanet.b2"], dtype=self.model.dtype)
        if self.projector is not None:
            self.projector = np.array(arrays["projector"], dtype=self.model.dtype)

    def wrap_parameters(self) -> dict[str, Tensor]:
        """Fresh autodiff leaves over the canonical arrays."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.parameters().items()}

    def _view(self, params: dict | None) -> _BankView:
        """Bank view over ``params`` (falls back to the canonical arrays)."""
        cfg = self.bank.config
        source = params if params is not None else self.parameters()

        def group(name):
            return [source[f"{name}.layer{l:02d}"] for l in range(cfg.depth)]

        view = _BankView(group("real_v"), group("synth_v"), group("shared_v"), group("textual"))
        if self.mode == "maple":
            projector = source.get("projector", self.projector)
            view.shared_v = [maple_project(t, projector) for t in view.textual]
        return view

    # -- content resolution ----------------------------------------------------

    def patch_tokens(self, examples: list[LabeledExample]) -> np.ndarray:
        """Stack patch tokens for a batch, patchifying paths once."""
        rows = []
        for ex in examples:
            if isinstance(ex.content, np.ndarray):
                rows.append(ex.content)
            else:
                if ex.uid not in self._patch_cache:
                    self._patch_cache[ex.uid] = resolve_content(ex, self.model.patchify_image)
                rows.append(self._patch_cache[ex.uid])
        return np.stack(rows, axis=0)

    def _class_tokens(self, class_ids, class_space: ClassSpace) -> np.ndarray:
        rows = []
        for cid in class_ids:
            if cid not in self._token_embs:
                ids = self.model.class_token_ids(class_space.names[cid], class_space.template)
                self._token_embs[cid] = self.model.embed_token_ids(ids)
            rows.append(self._token_embs[cid])
        return np.stack(rows, axis=0)

    # -- features ----------------------------------------------------------------

    def image_features(self, patches: np.ndarray, domain: str, params: dict | None = None):
        """Joint-space features [B, out] for a patch-token batch."""
        view = self._view(params)
        if self.mode == "cocoop":
            return self.model.visual_features_promptless(patches)
        if self.mode in ("ivlp", "maple"):
            return self.model.visual_features(patches, view, IVLP)
        return self.model.visual_features(patches, view, domain)

    def class_features(self, class_ids, class_space: ClassSpace, params: dict | None = None):
        """Joint-space features [C, out] of the class descriptions."""
        if self.mode == "cocoop":
            raise ConfigurationError("cocoop text features are image-conditioned; use logits()")
        view = self._view(params)
        return self.model.text_features(self._class_tokens(class_ids, class_space), view)

    def logits(self, patches: np.ndarray, domain: str, class_ids,
               class_space: ClassSpace, params: dict | None = None):
        """Temperature-scaled cosine logits [B, C]."""
        if self.mode == "cocoop":
            return self._cocoop_logits(patches, class_ids, class_space, params)
        img = self.image_features(patches, domain, params)
        txt = self.class_features(class_ids, class_space, params)
        return objectives.cosine_logits(img, txt, self.temperature)

    def _cocoop_logits(self, patches, class_ids, class_space, params):
        view = self._view(params)
        with no_grad():
            frozen_feat = self.model.visual_features_promptless(patches).data
        source = params if params is not None else None
        conditioned = cocoop_condition(
            Tensor(frozen_feat), view.textual[0], self.metanet, source
        )  # [B, k, D]
        tokens = self._class_tokens(class_ids, class_space)  # [C, T, D]
        b = frozen_feat.shape[0]
        ctok = np.broadcast_to(tokens, (b,) + tokens.shape).copy()  # [B, C, T, D]
        cond = conditioned.reshape((b, 1) + conditioned.shape[1:]).broadcast_to(
            (b, len(class_ids)) + conditioned.shape[1:]
        )  # [B, C, k, D]
        txt = self.model.text_features_conditioned(ctok, view, cond)  # [B, C, out]
        img = objectives._normalize_rows(Tensor(frozen_feat))  # [B, out]
        txtn = objectives._normalize_rows(txt)
        img3 = img.reshape(b, 1, img.shape[-1])
        return (img3 * txtn).sum(axis=-1) * self.temperature

    # -- convenience -----------------------------------------------------------

    def predict_rows(self, patches: np.ndarray, class_ids, class_space: ClassSpace) -> np.ndarray:
        """Argmax class ids over ``class_ids`` using real-domain prompts."""
        with no_grad():
            lg = self.logits(patches, REAL, class_ids, class_space)
        scores = lg.data if isinstance(lg, Tensor) else lg
        picks = np.argmax(scores, axis=-1)
        ids = np.asarray(list(class_ids))
        return ids[picks]
