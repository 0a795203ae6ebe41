"""Small torch building blocks shared by the silence predictor and txt2vec."""

import math

import torch
from torch import nn


def lengths_to_mask(lengths, max_len=None):
    """True on valid positions, shape (B, max_len)."""
    lengths = torch.as_tensor(lengths)
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


class SinusoidalPositions(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.width = width

    def forward(self, x):
        """x: (B, L, C) -> x + PE."""
        L = x.shape[1]
        pos = torch.arange(L, dtype=x.dtype, device=x.device)[:, None]
        i = torch.arange(0, self.width, 2, dtype=x.dtype, device=x.device)
        angle = pos / torch.pow(torch.tensor(10000.0, dtype=x.dtype), i / self.width)
        pe = torch.zeros(L, self.width, dtype=x.dtype, device=x.device)
        pe[:, 0::2] = torch.sin(angle)
        pe[:, 1::2] = torch.cos(angle[:, : self.width // 2])
        return x + pe[None]


class SelfAttentionBlock(nn.Module):
    """Post-norm transformer block; padded positions are zeroed on output."""

    def __init__(self, width, heads, ff_width=None, dropout=0.0):
        super().__init__()
        ff_width = ff_width or 4 * width
        self.attn = nn.MultiheadAttention(width, heads, dropout=dropout, batch_first=True)
        self.norm1 = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, ff_width), nn.GELU(), nn.Linear(ff_width, width))
        self.norm2 = nn.LayerNorm(width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        # mask: (B, L) True = valid
        keep = mask.unsqueeze(-1).to(x.dtype)
        a, _ = self.attn(x, x, x, key_padding_mask=~mask, need_weights=False)
        x = self.norm1(x + self.drop(a)) * keep
        x = self.norm2(x + self.drop(self.ff(x))) * keep
        return x


class SelfAttentionStack(nn.Module):
    def __init__(self, width, heads, blocks, ff_width=None, dropout=0.0):
        super().__init__()
        self.positions = SinusoidalPositions(width)
        self.blocks = nn.ModuleList(
            [SelfAttentionBlock(width, heads, ff_width, dropout) for _ in range(blocks)]
        )

    def forward(self, x, mask):
        x = self.positions(x) * mask.unsqueeze(-1).to(x.dtype)
        for block in self.blocks:
            x = block(x, mask)
        return x
