"""
Lightweight transformer stream.

Four parallel single-layer transformer branches read the stride-4 map f1 at
patch sizes 4, 8, 16 and 32; their token grids are mapped back to its resolution,
concatenated and fused by a 1x1 convolution.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from .config import PATCH_SIZES, ModelConfig
from .exceptions import ShapeError


@dataclass
class PatchTokens:
    """Token array (B, N, d) with the patch size and (rows, cols) grid it came from."""

    tokens: torch.Tensor
    patch_size: int
    grid: Tuple[int, int]

    @property
    def count(self) -> int:
        return self.grid[0] * self.grid[1]


def _check_divisible(f: torch.Tensor, p: int) -> None:
    if p < 1:
        raise ShapeError(f"Patch size must be >= 1, got {p}")
    h, w = f.shape[-2:]
    if h % p or w % p:
        raise ShapeError(f"Patch size {p} does not divide feature map {h}x{w}")


def patchify(f: torch.Tensor, p: int) -> PatchTokens:
    """Flatten every p x p x C patch of ``f`` into one raw token, row-major."""
    _check_divisible(f, p)
    rows, cols = f.shape[-2] // p, f.shape[-1] // p
    tokens = rearrange(f, "b c (gh p1) (gw p2) -> b (gh gw) (p1 p2 c)", p1=p, p2=p)
    return PatchTokens(tokens=tokens, patch_size=p, grid=(rows, cols))


def unpatchify(patches: PatchTokens, channels: int) -> torch.Tensor:
    """Inverse of :func:`patchify` for raw (unembedded) tokens."""
    rows, cols = patches.grid
    p = patches.patch_size
    return rearrange(
        patches.tokens,
        "b (gh gw) (p1 p2 c) -> b c (gh p1) (gw p2)",
        gh=rows,
        gw=cols,
        p1=p,
        p2=p,
        c=channels,
    )


def tokens_to_map(patches: PatchTokens) -> torch.Tensor:
    """Place tokens on their grid as a d-channel map of shape (B, d, rows, cols)."""
    rows, cols = patches.grid
    return rearrange(patches.tokens, "b (gh gw) d -> b d gh gw", gh=rows, gw=cols)


class PatchEmbedding(nn.Module):
    """
    Linear patch embedding plus a learned, zero-initialised position embedding.

    The position table is sized for ``grid``; other runtime grids get a
    bilinearly resampled copy.
    """

    def __init__(self, in_channels: int, patch_size: int, dmodel: int, grid: Tuple[int, int]):
        super().__init__()
        self.patch_size = patch_size
        self.grid = grid
        self.proj = nn.Linear(in_channels * patch_size * patch_size, dmodel)
        self.pos_embedding = nn.Parameter(torch.zeros(1, grid[0] * grid[1], dmodel))

    def position_table(self, grid: Tuple[int, int]) -> torch.Tensor:
        if tuple(grid) == tuple(self.grid):
            return self.pos_embedding
        table = rearrange(
            self.pos_embedding, "o (gh gw) d -> o d gh gw", gh=self.grid[0], gw=self.grid[1]
        )
        table = F.interpolate(table, size=grid, mode="bilinear", align_corners=False)
        return rearrange(table, "o d gh gw -> o (gh gw) d")

    def forward(self, f: torch.Tensor) -> PatchTokens:
        raw = patchify(f, self.patch_size)
        tokens = self.proj(raw.tokens) + self.position_table(raw.grid)
        return PatchTokens(tokens=tokens, patch_size=self.patch_size, grid=raw.grid)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product attention, softmax(QK^T / sqrt(d_k)) V, over all tokens."""

    def __init__(self, dmodel: int, heads: int):
        super().__init__()
        if heads < 1 or dmodel % heads != 0:
            raise ShapeError(f"heads ({heads}) must divide d_model ({dmodel})")
        self.heads = heads
        self.head_dim = dmodel // heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.q = nn.Linear(dmodel, dmodel)
        self.k = nn.Linear(dmodel, dmodel)
        self.v = nn.Linear(dmodel, dmodel)
        self.out = nn.Linear(dmodel, dmodel)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        q, k, v = (
            rearrange(proj(x), "b n (h d) -> b h n d", h=self.heads)
            for proj in (self.q, self.k, self.v)
        )
        attn = torch.softmax(torch.matmul(q, k.transpose(-1, -2)) * self.scale, dim=-1)
        out = rearrange(torch.matmul(attn, v), "b h n d -> b n (h d)")
        return self.out(out), attn


def mhsa(tokens: PatchTokens, attention: MultiHeadSelfAttention) -> Tuple[PatchTokens, torch.Tensor]:
    out, attn = attention(tokens.tokens)
    return PatchTokens(out, tokens.patch_size, tokens.grid), attn


class FeedForward(nn.Module):
    def __init__(self, dmodel: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dmodel, hidden)
        self.act = nn.ReLU()
        self.fc2 = nn.Linear(hidden, dmodel)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm encoder layer: x + MHSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dmodel: int, heads: int, ffn_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dmodel)
        self.attn = MultiHeadSelfAttention(dmodel, heads)
        self.norm2 = nn.LayerNorm(dmodel)
        self.ffn = FeedForward(dmodel, ffn_dim)

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        attended, attn = self.attn(self.norm1(x))
        x = x + attended
        x = x + self.ffn(self.norm2(x))
        if return_attention:
            return x, attn
        return x


def transformer_block(tokens: PatchTokens, block: TransformerBlock) -> PatchTokens:
    return PatchTokens(block(tokens.tokens), tokens.patch_size, tokens.grid)


class LightViTBranch(nn.Module):
    """
    One patch size: embed, encode, and map the tokens back to the input resolution.

    With ``pad_to_patch`` the input is zero-padded (bottom/right) up to a
    multiple of the patch size and the result cropped back; otherwise a patch
    size that does not divide the map raises ShapeError.
    """

    def __init__(
        self,
        in_channels: int,
        patch_size: int,
        dmodel: int,
        heads: int,
        ffn_dim: int,
        f1_size: int,
        pad_to_patch: bool = True,
    ):
        super().__init__()
        self.patch_size = patch_size
        self.pad_to_patch = pad_to_patch
        side = max(math.ceil(f1_size / patch_size), 1)
        self.embed = PatchEmbedding(in_channels, patch_size, dmodel, (side, side))
        self.block = TransformerBlock(dmodel, heads, ffn_dim)

    def _pad(self, f: torch.Tensor) -> torch.Tensor:
        p = self.patch_size
        h, w = f.shape[-2:]
        if not self.pad_to_patch:
            _check_divisible(f, p)
            return f
        pad_h = (-h) % p
        pad_w = (-w) % p
        if pad_h or pad_w:
            f = F.pad(f, (0, pad_w, 0, pad_h))
        return f

    def tokens(self, f: torch.Tensor) -> PatchTokens:
        return self.embed(self._pad(f))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        h, w = f.shape[-2:]
        padded = self._pad(f)
        encoded = transformer_block(self.embed(padded), self.block)
        grid_map = tokens_to_map(encoded)
        grid_map = F.interpolate(
            grid_map, size=padded.shape[-2:], mode="bilinear", align_corners=False
        )
        return grid_map[..., :h, :w]


class LightViT(nn.Module):
    """
    Four parallel branches over f1 fused to ``vit_channels`` channels.

    Args:
        in_channels: Channels of f1
        cfg: Model configuration (d_model, heads, FFN width, output channels)
    """

    def __init__(self, in_channels: int, cfg: ModelConfig):
        super().__init__()
        f1_size = cfg.image_size // 4
        self.branches = nn.ModuleList(
            LightViTBranch(
                in_channels,
                p,
                cfg.vit_dmodel,
                cfg.heads,
                cfg.vit_ffn_dim,
                f1_size,
                pad_to_patch=cfg.vit_pad_to_patch,
            )
            for p in PATCH_SIZES
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(len(PATCH_SIZES) * cfg.vit_dmodel, cfg.vit_channels, 1, bias=False),
            nn.BatchNorm2d(cfg.vit_channels),
            nn.ReLU(inplace=True),
        )

    @property
    def patch_sizes(self) -> List[int]:
        return [branch.patch_size for branch in self.branches]

    def token_counts(self, f1: torch.Tensor) -> List[int]:
        return [branch.tokens(f1).count for branch in self.branches]

    def forward(self, f1: torch.Tensor) -> torch.Tensor:
        # Branches are joined in patch-size order.
        maps = [branch(f1) for branch in self.branches]
        return self.fuse(torch.cat(maps, dim=1))


def lightvit_forward(f1: torch.Tensor, module: LightViT) -> torch.Tensor:
    return module(f1)

