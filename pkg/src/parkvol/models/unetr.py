"""UNETR-style backbone: transformer encoder over non-overlapping cubic
patches, convolutional decoder fed by skip taps at several encoder depths."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import UNETRConfig


class SelfAttention(nn.Module):
    def __init__(self, embed_dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = embed_dim // n_heads
        self.qkv = nn.Linear(embed_dim, 3 * embed_dim)
        self.proj = nn.Linear(embed_dim, embed_dim)
        self.store_attention = False
        self.last_attention = None  # (B, heads, T, T) softmax weights

    def forward(self, x):
        b, t, e = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.head_dim**0.5, dim=-1)
        if self.store_attention:
            self.last_attention = attn.detach()
        out = (attn @ v).transpose(1, 2).reshape(b, t, e)
        return self.proj(out)


class TransformerBlock(nn.Module):
    def __init__(self, embed_dim: int, n_heads: int, mlp_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(embed_dim)
        self.attn = SelfAttention(embed_dim, n_heads)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, mlp_dim), nn.GELU(), nn.Linear(mlp_dim, embed_dim)
        )

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class DeconvBlock(nn.Module):
    """2x transposed conv, BN, ReLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.deconv = nn.ConvTranspose3d(in_ch, out_ch, 2, stride=2)
        self.bn = nn.BatchNorm3d(out_ch, track_running_stats=False)

    def forward(self, x):
        return F.relu(self.bn(self.deconv(x)))


class ConvBlock(nn.Module):
    """3x3x3 conv, BN, ReLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv3d(in_ch, out_ch, 3, padding=1)
        self.bn = nn.BatchNorm3d(out_ch, track_running_stats=False)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class UNETR(nn.Module):
    def __init__(self, config: UNETRConfig):
        super().__init__()
        self.config = config
        p = config.patch_size
        e = config.embed_dim
        self.patch_embed = nn.Linear(p**3, e)
        self.pos_embed = nn.Parameter(torch.zeros(1, config.n_tokens, e))
        self.blocks = nn.ModuleList(
            TransformerBlock(e, config.n_heads, config.mlp_dim)
            for _ in range(config.n_transformer_layers)
        )

        def ch(scale: int) -> int:
            return config.decoder_base_channels * scale

        taps = config.skip_tap_layers
        m = len(taps)
        # Deepest tap becomes the bottleneck; earlier taps are projected to
        # progressively finer grids by chains of deconv blocks and fused
        # U-style on the way up.
        self.bottleneck = DeconvBlock(e, ch(p // 2))
        self.skip_chains = nn.ModuleList()
        self.fuse = nn.ModuleList()
        self.up = nn.ModuleList()
        scale = p // 2
        for j in range(m - 2, -1, -1):
            chain = []
            s, in_ch = p, e
            for _ in range(m - 1 - j):
                s //= 2
                chain.append(DeconvBlock(in_ch, ch(s)))
                in_ch = ch(s)
            self.skip_chains.append(nn.Sequential(*chain))
            self.fuse.append(ConvBlock(2 * ch(scale), ch(scale)))
            if j > 0:
                self.up.append(DeconvBlock(ch(scale), ch(scale // 2)))
                scale //= 2
        self.extra_up = nn.ModuleList()
        while scale > 1:
            self.extra_up.append(DeconvBlock(ch(scale), ch(scale // 2)))
            scale //= 2
        self.stem = nn.Sequential(ConvBlock(1, ch(1)), ConvBlock(ch(1), ch(1)))
        self.final_fuse = ConvBlock(2 * ch(1), ch(1))
        self.head = nn.Conv3d(ch(1), 1, 1)

    def patch_tokens(self, x):
        """Flatten non-overlapping cubic patches and apply the linear
        projection; no position embedding yet."""
        b = x.shape[0]
        p = self.config.patch_size
        gh, gw, gd = self.config.grid
        x = x.reshape(b, gh, p, gw, p, gd, p)
        x = x.permute(0, 1, 3, 5, 2, 4, 6).reshape(b, gh * gw * gd, p**3)
        return self.patch_embed(x)

    def _to_grid(self, tokens):
        b, t, e = tokens.shape
        gh, gw, gd = self.config.grid
        return tokens.transpose(1, 2).reshape(b, e, gh, gw, gd)

    def set_store_attention(self, flag: bool):
        for block in self.blocks:
            block.attn.store_attention = flag

    def attention_maps(self):
        return [block.attn.last_attention for block in self.blocks]

    def forward(self, x):
        vol = x
        tokens = self.patch_tokens(x.squeeze(1)) + self.pos_embed
        taps = set(self.config.skip_tap_layers)
        tapped = []
        for i, block in enumerate(self.blocks, start=1):
            tokens = block(tokens)
            if i in taps:
                tapped.append(tokens)
        y = self.bottleneck(self._to_grid(tapped[-1]))
        # tapped[-2], tapped[-3], ... fused coarsest to finest
        for i, (chain, fuse) in enumerate(zip(self.skip_chains, self.fuse)):
            skip = chain(self._to_grid(tapped[-2 - i]))
            y = fuse(torch.cat([skip, y], dim=1))
            if i < len(self.up):
                y = self.up[i](y)
        for up in self.extra_up:
            y = up(y)
        y = self.final_fuse(torch.cat([self.stem(vol), y], dim=1))
        return torch.sigmoid(self.head(y))
