"""V-Net style CNN: residual conv stages down, up-convolution stages up."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import VNetConfig


class ResBlock(nn.Module):
    """1-3 convs (5x5x5, same padding) with BN; input added to the last
    conv's output before the final ReLU. A 1x1x1 projection aligns channels
    when they differ."""

    def __init__(self, in_ch: int, out_ch: int, n_convs: int):
        super().__init__()
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleList()
        for i in range(n_convs):
            self.convs.append(nn.Conv3d(in_ch if i == 0 else out_ch, out_ch, 5, padding=2))
            # Batch statistics are used at inference too (track_running_stats
            # off): with batch size 1 this is instance normalization, and it
            # keeps train/eval forward passes consistent.
            self.bns.append(nn.BatchNorm3d(out_ch, track_running_stats=False))
        self.proj = nn.Conv3d(in_ch, out_ch, 1) if in_ch != out_ch else None

    def forward(self, x):
        skip = self.proj(x) if self.proj is not None else x
        y = x
        last = len(self.convs) - 1
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            y = bn(conv(y))
            if i != last:
                y = F.relu(y)
        return F.relu(y + skip)


class UpConv(nn.Module):
    """2x nearest upsampling, BN, ReLU, then a 5x5x5 conv."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.bn = nn.BatchNorm3d(in_ch, track_running_stats=False)
        self.conv = nn.Conv3d(in_ch, out_ch, 5, padding=2)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.conv(F.relu(self.bn(x)))


class VNet(nn.Module):
    def __init__(self, config: VNetConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels * 2**s for s in range(config.n_stages)]
        self.enc = nn.ModuleList()
        in_ch = 1
        for s in range(config.n_stages):
            self.enc.append(ResBlock(in_ch, chans[s], config.convs_per_stage[s]))
            in_ch = chans[s]
        self.pool = nn.MaxPool3d(2)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for s in range(config.n_stages - 2, -1, -1):
            self.up.append(UpConv(chans[s + 1], chans[s]))
            # concat with the encoder skip doubles the channel count
            self.dec.append(ResBlock(2 * chans[s], chans[s], config.convs_per_stage[s]))
        self.head = nn.Conv3d(chans[0], 1, 1)

    def forward(self, x):
        skips = []
        for s, block in enumerate(self.enc):
            x = block(x)
            if s != len(self.enc) - 1:
                skips.append(x)
                x = self.pool(x)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([skip, x], dim=1))
        return torch.sigmoid(self.head(x))
