"""Pre-LayerNorm transformer blocks shared by the generator and the discriminator.

Masks are boolean and broadcast to [batch, queries, keys]; True means the key may be attended.
Projections carry no bias.
"""
import math
from typing import Optional

import torch
import torch.nn as nn


def sinusoidal_positions(max_len: int, d_model: int) -> torch.Tensor:
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div_term = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
    table = torch.zeros(max_len, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div_term)
    table[:, 1::2] = torch.cos(position * div_term)[:, :d_model // 2]
    return table.float()


def padding_mask(valid: torch.Tensor) -> torch.Tensor:
    """[b, n] validity -> [b, 1, n] key mask."""
    return valid.unsqueeze(1)


def causal_mask(size: int, device=None) -> torch.Tensor:
    return torch.tril(torch.ones(size, size, dtype=torch.bool, device=device)).unsqueeze(0)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError(f'd_model={d_model} is not divisible by heads={heads}')
        self.heads = heads
        self.d_k = d_model // heads
        self.query = nn.Linear(d_model, d_model, bias=False)
        self.key = nn.Linear(d_model, d_model, bias=False)
        self.value = nn.Linear(d_model, d_model, bias=False)
        self.output = nn.Linear(d_model, d_model, bias=False)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        return x.view(x.size(0), -1, self.heads, self.d_k).transpose(1, 2)

    def forward(self, x: torch.Tensor, memory: torch.Tensor, mask: Optional[torch.Tensor] = None,
                return_weights: bool = False):
        q, k, v = self._split(self.query(x)), self._split(self.key(memory)), self._split(self.value(memory))
        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_k)
        if mask is not None:
            scores = scores.masked_fill(~mask.unsqueeze(1), torch.finfo(scores.dtype).min)
        weights = scores.softmax(dim=-1)
        out = torch.matmul(self.dropout(weights), v)
        out = self.output(out.transpose(1, 2).contiguous().view(x.size(0), -1, self.heads * self.d_k))
        if return_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_mlp: int, dropout: float = 0.0):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, d_mlp, bias=False),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(d_mlp, d_model, bias=False),
        )

    def forward(self, x):
        return self.net(x)


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, d_mlp: int, dropout: float = 0.0):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads, dropout)
        self.ffn = FeedForward(d_model, d_mlp, dropout)
        self.attn_norm = nn.LayerNorm(d_model)
        self.ffn_norm = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        h = self.attn_norm(x)
        x = x + self.dropout(self.self_attn(h, h, mask))
        return x + self.dropout(self.ffn(self.ffn_norm(x)))


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, d_mlp: int, dropout: float = 0.0):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads, dropout)
        self.cross_attn = MultiHeadAttention(d_model, heads, dropout)
        self.ffn = FeedForward(d_model, d_mlp, dropout)
        self.self_attn_norm = nn.LayerNorm(d_model)
        self.cross_attn_norm = nn.LayerNorm(d_model)
        self.ffn_norm = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, memory, self_mask=None, memory_mask=None):
        h = self.self_attn_norm(x)
        x = x + self.dropout(self.self_attn(h, h, self_mask))
        x = x + self.dropout(self.cross_attn(self.cross_attn_norm(x), memory, memory_mask))
        return x + self.dropout(self.ffn(self.ffn_norm(x)))


class TransformerEncoder(nn.Module):
    """Bidirectional stack; zero layers reduces it to the final LayerNorm."""

    def __init__(self, num_layers: int, d_model: int, heads: int, d_mlp: int, dropout: float = 0.0):
        super().__init__()
        self.layers = nn.ModuleList([EncoderLayer(d_model, heads, d_mlp, dropout) for _ in range(num_layers)])
        self.final_norm = nn.LayerNorm(d_model)

    def forward(self, x, mask=None):
        for layer in self.layers:
            x = layer(x, mask)
        return self.final_norm(x)


class TransformerDecoder(nn.Module):
    def __init__(self, num_layers: int, d_model: int, heads: int, d_mlp: int, dropout: float = 0.0):
        super().__init__()
        self.layers = nn.ModuleList([DecoderLayer(d_model, heads, d_mlp, dropout) for _ in range(num_layers)])
        self.final_norm = nn.LayerNorm(d_model)

    def forward(self, x, memory, memory_mask=None):
        self_mask = causal_mask(x.size(1), device=x.device)
        for layer in self.layers:
            x = layer(x, memory, self_mask, memory_mask)
        return self.final_norm(x)
