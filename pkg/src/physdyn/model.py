"""The physical-dynamics network: encoders, fusion, decoder, and loss.

One model maps (pre-action inputs, action) to per-attribute logits for the
post-action state of both objects. Which encoders are active is fully
determined by the config, so the five input setups share one forward path:

    base                      object name embedding only
    base+symbolic             transformer encoder over the 38 embedded attributes
    base+images               attention over detector box features, name-conditioned
    base+symbolic+images      sum of the symbolic and visual object vectors
    base+images+text-labels   name/action embeddings from a frozen text adapter

The decoder reads a 38-slot query sequence (one learned query per attribute,
offset by the object representation) against the fused action memory and
emits logits over each attribute's own vocabulary; values belonging to other
attributes are masked to -inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import DecoderStack, EncoderStack
from .schema import AttributeSchema

SETUPS = (
    "base",
    "base+symbolic",
    "base+images",
    "base+symbolic+images",
    "base+images+text-labels",
)


@dataclass(frozen=True)
class AttributeLayout:
    """Vocabulary sizes per attribute slot and the derived global offsets.

    The model is generic over the slot count; the standard schema has 38
    slots, while tests use tiny layouts.
    """

    sizes: tuple[int, ...]

    @property
    def n_slots(self) -> int:
        return len(self.sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, total = [], 0
        for s in self.sizes:
            out.append(total)
            total += s
        return tuple(out)

    @property
    def n_values(self) -> int:
        return sum(self.sizes)

    @classmethod
    def from_schema(cls, schema: AttributeSchema) -> "AttributeLayout":
        return cls(sizes=schema.sizes)


@dataclass(frozen=True)
class ModelConfig:
    attribute_sizes: tuple[int, ...]
    hidden_size: int = 64
    dropout: float = 0.1
    encoder_layers: int = 3
    encoder_heads: int = 4
    decoder_layers: int = 3
    decoder_heads: int = 4
    ffn_size: int = 2048
    n_actions: int = 10
    n_boxes: int = 100
    box_dim: int = 256
    use_symbolic: bool = False
    use_images: bool = False
    use_text_labels: bool = False
    action_input: str = "symbolic"  # or "text"
    text_embed_dim: int | None = None

    def __post_init__(self):
        if self.hidden_size <= 0:
            raise ValueError("hidden_size must be positive")
        if self.action_input not in ("symbolic", "text"):
            raise ValueError(f"unknown action_input {self.action_input!r}")
        needs_text = self.action_input == "text" or self.use_text_labels
        if needs_text and not self.text_embed_dim:
            raise ValueError("text_embed_dim required when any text input is active")
        if not self.attribute_sizes:
            raise ValueError("attribute_sizes must be non-empty")

    @property
    def layout(self) -> AttributeLayout:
        return AttributeLayout(sizes=tuple(self.attribute_sizes))

    @classmethod
    def for_setup(cls, setup: str, layout: AttributeLayout, **overrides) -> "ModelConfig":
        if setup not in SETUPS:
            raise ValueError(f"unknown setup {setup!r}; choose one of {SETUPS}")
        flags = {
            "use_symbolic": "symbolic" in setup,
            "use_images": "images" in setup,
            "use_text_labels": "text-labels" in setup,
        }
        if flags["use_text_labels"]:
            flags["action_input"] = "text"
        return cls(attribute_sizes=tuple(layout.sizes), **flags, **overrides)

    @property
    def setup_name(self) -> str:
        parts = ["base"]
        if self.use_symbolic:
            parts.append("symbolic")
        if self.use_images:
            parts.append("images")
        if self.use_text_labels:
            parts.append("text-labels")
        return "+".join(parts)

    def to_json(self) -> dict:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["attribute_sizes"] = list(self.attribute_sizes)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "ModelConfig":
        doc = dict(doc)
        doc["attribute_sizes"] = tuple(doc["attribute_sizes"])
        return cls(**doc)


@dataclass
class ModelOutput:
    logits_post: torch.Tensor  # (B, 2, S, e), invalid values at -inf
    logits_pre: torch.Tensor | None = None
    alpha_pre: torch.Tensor | None = None  # (B, 2, N) when images active
    alpha_post: torch.Tensor | None = None


class PhysicalDynamicsModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        layout = config.layout
        h = config.hidden_size
        e = layout.n_values
        s = layout.n_slots

        self.value_embedding = nn.Embedding(e, h)
        self.position_embedding = nn.Parameter(torch.randn(s, h) * 0.02)
        self.query_embedding = nn.Parameter(torch.randn(s, h) * 0.02)

        if config.use_symbolic:
            self.object_encoder = EncoderStack(
                h, config.encoder_heads, config.encoder_layers, config.ffn_size, config.dropout
            )

        if config.action_input == "symbolic":
            self.action_embedding = nn.Embedding(config.n_actions, h)
            self.action_mlp = nn.Sequential(
                nn.Linear(h, h), nn.Tanh(), nn.Linear(h, h), nn.Tanh()
            )
        else:
            self.text_action_proj = nn.Linear(config.text_embed_dim, h)

        if config.use_text_labels:
            self.text_name_proj = nn.Linear(config.text_embed_dim, h)

        if config.use_images:
            self.box_key_proj = nn.Linear(config.box_dim, h, bias=False)
            self.box_out_proj = nn.Linear(config.box_dim, h)

        self.action_apply = nn.Sequential(
            nn.Linear(2 * h, h), nn.Tanh(),
            nn.Linear(h, h), nn.Tanh(),
            nn.Linear(h, h), nn.Tanh(),
        )
        self.object_decoder = DecoderStack(
            h, config.decoder_heads, config.decoder_layers, config.ffn_size, config.dropout
        )
        self.output_head = nn.Linear(h, e)

        # (S, e) additive mask: 0 inside each slot's own vocabulary, -inf outside.
        mask = torch.full((s, e), float("-inf"))
        for slot, (offset, size) in enumerate(zip(layout.offsets, layout.sizes)):
            mask[slot, offset : offset + size] = 0.0
        self.register_buffer("slot_mask", mask, persistent=False)
        offs = torch.tensor(layout.offsets, dtype=torch.long)
        sizes = torch.tensor(layout.sizes, dtype=torch.long)
        self.register_buffer("slot_offsets", offs, persistent=False)
        self.register_buffer("slot_sizes", sizes, persistent=False)

    # -- encoders ----------------------------------------------------------

    def embed_attributes(self, values_global: torch.Tensor) -> torch.Tensor:
        """(..., S) global value indices -> (..., S, h) embeddings plus
        per-slot position embeddings."""
        if values_global.shape[-1] != self.config.layout.n_slots:
            raise ValueError(
                f"expected {self.config.layout.n_slots} attribute slots, "
                f"got {values_global.shape[-1]}"
            )
        if values_global.min() < 0 or values_global.max() >= self.config.layout.n_values:
            raise ValueError("attribute value index out of range")
        return self.value_embedding(values_global) + self.position_embedding

    def encode_object(self, embedded: torch.Tensor) -> torch.Tensor:
        """(B, S, h) embedded attributes -> (B, h) object summary (slot 0)."""
        if embedded.shape[1] != self.config.layout.n_slots:
            raise ValueError(
                f"expected sequence length {self.config.layout.n_slots}, got {embedded.shape[1]}"
            )
        return self.object_encoder(embedded)[:, 0]

    def encode_action_symbolic(
        self,
        action_id: torch.Tensor,
        object_name: torch.Tensor,
        receptacle_name: torch.Tensor,
    ) -> torch.Tensor:
        if action_id.max() >= self.config.n_actions or action_id.min() < 0:
            raise ValueError("action id out of range")
        # Names summed first: pairwise float addition commutes, so swapping
        # the object and receptacle names leaves h_a bitwise unchanged.
        names = self.value_embedding(object_name) + self.value_embedding(receptacle_name)
        return self.action_mlp(self.action_embedding(action_id) + names)

    def encode_action_text(self, text_embedding: torch.Tensor) -> torch.Tensor:
        if text_embedding.shape[-1] != self.config.text_embed_dim:
            raise ValueError(
                f"text embedding dim {text_embedding.shape[-1]} does not match "
                f"config ({self.config.text_embed_dim})"
            )
        return self.text_action_proj(text_embedding)

    def _attend_boxes(self, boxes: torch.Tensor, cond: torch.Tensor):
        """Name-conditioned attention pooling over (B, N, D) box features."""
        if boxes.shape[1] < 1:
            raise ValueError("box set must be non-empty")
        keys = self.box_key_proj(boxes)  # (B, N, h)
        scores = torch.einsum("bnh,bh->bn", keys, cond)  # unscaled dot products
        alpha = F.softmax(scores, dim=-1)
        attended = torch.einsum("bn,bnd->bd", alpha, boxes)
        return self.box_out_proj(attended), alpha

    def encode_vision_object(self, boxes: torch.Tensor, object_name: torch.Tensor):
        """(B, N, D) box features + (B,) name indices -> ((B, h), (B, N))."""
        cond = self.value_embedding(object_name)
        return self._attend_boxes(boxes, cond)

    # -- fusion and decoding -------------------------------------------------

    def apply_action(self, h_action: torch.Tensor, h_object: torch.Tensor) -> torch.Tensor:
        return self.action_apply(torch.cat([h_action, h_object], dim=-1))

    def decode_object(self, memory: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        """(B, h) memory + (B, h) source -> (B, S, e) masked logits."""
        queries = self.query_embedding.unsqueeze(0) + source.unsqueeze(1)  # (B, S, h)
        decoded = self.object_decoder(queries, memory.unsqueeze(1))
        return self.output_head(decoded) + self.slot_mask

    # -- full forward --------------------------------------------------------

    def _name_condition(self, batch, flat_names: torch.Tensor | None) -> torch.Tensor:
        if self.config.use_text_labels:
            emb = batch["name_text_emb"]  # (B, 2, Td)
            return self.text_name_proj(emb.reshape(-1, emb.shape[-1]))
        return self.value_embedding(flat_names)

    def forward(self, batch: Mapping, compute_pre: bool = True) -> ModelOutput:
        cfg = self.config
        if cfg.action_input == "text":
            self._require(batch, "action_text_emb")
            h_action = self.encode_action_text(batch["action_text_emb"])
        else:
            h_action = self.encode_action_symbolic(
                batch["action_id"],
                batch["action_object_global"],
                batch["action_receptacle_global"],
            )
        n_records = h_action.shape[0]

        flat_names = None
        if not cfg.use_text_labels:
            flat_names = batch["name_global"].reshape(-1)  # (2B,)

        h_pre = None
        h_vis_post = None
        alpha_pre = alpha_post = None
        if cfg.use_symbolic:
            self._require(batch, "pre_global")
            values = batch["pre_global"]  # (B, 2, S)
            embedded = self.embed_attributes(values.reshape(-1, values.shape[-1]))
            h_pre = self.encode_object(embedded)
        if cfg.use_images:
            self._require(batch, "boxes_pre", "boxes_post")
            cond = self._name_condition(batch, flat_names)  # (2B, h)
            boxes_pre = batch["boxes_pre"].repeat_interleave(2, dim=0)
            boxes_post = batch["boxes_post"].repeat_interleave(2, dim=0)
            h_vis_pre, alpha_pre = self._attend_boxes(boxes_pre, cond)
            h_vis_post, alpha_post = self._attend_boxes(boxes_post, cond)
            h_pre = h_vis_pre if h_pre is None else h_pre + h_vis_pre
        if h_pre is None:
            # Base path: the object is represented by its name embedding alone.
            h_pre = self._name_condition(batch, flat_names)

        source = h_pre if h_vis_post is None else h_pre + h_vis_post
        memory_post = self.apply_action(h_action.repeat_interleave(2, dim=0), h_pre)
        s, e = self.config.layout.n_slots, self.config.layout.n_values

        logits_pre = None
        if compute_pre:
            # Decode both branches in one pass: the post branch reads the
            # fused action memory, the reconstruction branch the empty vector.
            memory = torch.cat([memory_post, torch.zeros_like(memory_post)], dim=0)
            logits = self.decode_object(memory, torch.cat([source, source], dim=0))
            half = memory_post.shape[0]
            logits_post = logits[:half].view(n_records, 2, s, e)
            logits_pre = logits[half:].view(n_records, 2, s, e)
        else:
            logits_post = self.decode_object(memory_post, source).view(n_records, 2, s, e)

        def _fold(alpha):
            return None if alpha is None else alpha.view(n_records, 2, -1)

        return ModelOutput(
            logits_post=logits_post,
            logits_pre=logits_pre,
            alpha_pre=_fold(alpha_pre),
            alpha_post=_fold(alpha_post),
        )

    @staticmethod
    def _require(batch: Mapping, *keys: str) -> None:
        for key in keys:
            if key not in batch:
                raise KeyError(f"config demands batch input {key!r} which is missing")

    # -- prediction ----------------------------------------------------------

    def predict_post(self, batch: Mapping) -> torch.Tensor:
        """Argmax post-state prediction as (B, 2, S) global value indices.

        Masked positions are -inf so the argmax is always a legal value for
        its slot; ties break toward the lowest index (torch argmax convention
        on equal values is the first occurrence).
        """
        out = self.forward(batch, compute_pre=False)
        return out.logits_post.argmax(dim=-1)


def validate_targets(model: PhysicalDynamicsModel, targets: torch.Tensor) -> None:
    """Raise if any target's global index lies outside its slot vocabulary."""
    offsets = model.slot_offsets  # (S,)
    sizes = model.slot_sizes
    low = targets < offsets
    high = targets >= offsets + sizes
    if bool((low | high).any()):
        raise ValueError("target value index is masked out for its attribute slot")


def compute_loss(
    logits_post: torch.Tensor,
    targets_post: torch.Tensor,
    logits_pre: torch.Tensor,
    targets_pre: torch.Tensor,
    scored_mask: torch.Tensor,
    model: PhysicalDynamicsModel | None = None,
) -> torch.Tensor:
    """Equal-weight sum of the post-prediction and pre-reconstruction
    cross-entropies, averaged over scored (object, attribute) slots.

    ``scored_mask`` is (B, 2); None-placeholder objects are excluded from
    both means.
    """
    if logits_post.shape[:3] != targets_post.shape:
        raise ValueError(
            f"logits shape {tuple(logits_post.shape)} does not match targets "
            f"{tuple(targets_post.shape)}"
        )
    if model is not None:
        validate_targets(model, targets_post[scored_mask])
        validate_targets(model, targets_pre[scored_mask])
    if not bool(scored_mask.any()):
        raise ValueError("no scored objects in batch")

    def branch(logits, targets):
        e = logits.shape[-1]
        ce = F.cross_entropy(logits.reshape(-1, e), targets.reshape(-1), reduction="none")
        ce = ce.view(targets.shape)  # (B, 2, S)
        return ce[scored_mask].mean()

    return branch(logits_post, targets_post) + branch(logits_pre, targets_pre)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "physdyn-checkpoint"


def save_checkpoint(path: str | Path, model: PhysicalDynamicsModel, extra: dict | None = None) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "config": model.config.to_json(),
            "state": model.state_dict(),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[PhysicalDynamicsModel, dict]:
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    config = ModelConfig.from_json(doc["config"])
    model = PhysicalDynamicsModel(config)
    model.load_state_dict(doc["state"])
    model.eval()
    return model, doc.get("extra", {})


def checkpoint_config(path: str | Path) -> ModelConfig:
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    return ModelConfig.from_json(doc["config"])
