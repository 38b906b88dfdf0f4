"""Minimal transformer encoder/decoder stacks.

Post-norm residual layers with fused QKV projections and ReLU feed-forward
blocks. Parameter shapes match the conventional layer layout (fused in-proj,
out-proj, two FFN linears, per-sublayer LayerNorm), but the implementation
keeps the op count small: CPU training here is bound by framework overhead on
small tensors, not FLOPs.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def _split_heads(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    # (B, T, H) -> (B, heads, T, H/heads)
    b, t, h = x.shape
    return x.view(b, t, n_heads, h // n_heads).transpose(1, 2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, n, t, d = x.shape
    return x.transpose(1, 2).reshape(b, t, n * d)


class EncoderLayer(nn.Module):
    def __init__(self, hidden: int, n_heads: int, ffn: int, dropout: float):
        super().__init__()
        if hidden % n_heads:
            raise ValueError(f"hidden size {hidden} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.scale = 1.0 / math.sqrt(hidden // n_heads)
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.attn_out = nn.Linear(hidden, hidden)
        self.ff1 = nn.Linear(hidden, ffn)
        self.ff2 = nn.Linear(ffn, hidden)
        self.norm1 = nn.LayerNorm(hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.p = dropout

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, h = x.shape
        qkv = self.qkv(x).view(b, t, 3, self.n_heads, h // self.n_heads)
        qkv = qkv.permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        probs = F.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        probs = F.dropout(probs, self.p, self.training)
        attended = _merge_heads(probs @ v)
        x = self.norm1(x + F.dropout(self.attn_out(attended), self.p, self.training))
        ff = self.ff2(F.dropout(F.relu(self.ff1(x)), self.p, self.training))
        return self.norm2(x + F.dropout(ff, self.p, self.training))


class DecoderLayer(nn.Module):
    """Self-attention over the query slots, cross-attention to the memory."""

    def __init__(self, hidden: int, n_heads: int, ffn: int, dropout: float):
        super().__init__()
        if hidden % n_heads:
            raise ValueError(f"hidden size {hidden} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.scale = 1.0 / math.sqrt(hidden // n_heads)
        self.self_qkv = nn.Linear(hidden, 3 * hidden)
        self.self_out = nn.Linear(hidden, hidden)
        self.cross_q = nn.Linear(hidden, hidden)
        self.cross_kv = nn.Linear(hidden, 2 * hidden)
        self.cross_out = nn.Linear(hidden, hidden)
        self.ff1 = nn.Linear(hidden, ffn)
        self.ff2 = nn.Linear(ffn, hidden)
        self.norm1 = nn.LayerNorm(hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.norm3 = nn.LayerNorm(hidden)
        self.p = dropout

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        b, t, h = x.shape
        qkv = self.self_qkv(x).view(b, t, 3, self.n_heads, h // self.n_heads)
        qkv = qkv.permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        probs = F.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        probs = F.dropout(probs, self.p, self.training)
        attended = _merge_heads(probs @ v)
        x = self.norm1(x + F.dropout(self.self_out(attended), self.p, self.training))

        m = memory.shape[1]
        q = _split_heads(self.cross_q(x), self.n_heads)
        kv = self.cross_kv(memory).view(b, m, 2, self.n_heads, h // self.n_heads)
        kv = kv.permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]
        probs = F.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        probs = F.dropout(probs, self.p, self.training)
        attended = _merge_heads(probs @ v)
        x = self.norm2(x + F.dropout(self.cross_out(attended), self.p, self.training))

        ff = self.ff2(F.dropout(F.relu(self.ff1(x)), self.p, self.training))
        return self.norm3(x + F.dropout(ff, self.p, self.training))


class EncoderStack(nn.Module):
    def __init__(self, hidden: int, n_heads: int, n_layers: int, ffn: int, dropout: float):
        super().__init__()
        self.layers = nn.ModuleList(
            EncoderLayer(hidden, n_heads, ffn, dropout) for _ in range(n_layers)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class DecoderStack(nn.Module):
    def __init__(self, hidden: int, n_heads: int, n_layers: int, ffn: int, dropout: float):
        super().__init__()
        self.layers = nn.ModuleList(
            DecoderLayer(hidden, n_heads, ffn, dropout) for _ in range(n_layers)
        )

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, memory)
        return x
