"""Architecture configurations for the two segmentation backbones."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError


def _check_dims(dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ConfigError(f"input_dims must be three positive integers, got {dims}")
    return dims


@dataclass(frozen=True)
class VNetConfig:
    """CNN encoder-decoder; every conv is 5x5x5, same padding, stride 1."""

    input_dims: tuple[int, int, int]
    n_stages: int = 2
    base_channels: int = 8
    convs_per_stage: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "input_dims", _check_dims(self.input_dims))
        object.__setattr__(self, "convs_per_stage", tuple(int(c) for c in self.convs_per_stage))
        if self.n_stages < 2:
            raise ConfigError("n_stages must be >= 2")
        if self.base_channels < 4:
            raise ConfigError("base_channels must be >= 4")
        if len(self.convs_per_stage) != self.n_stages:
            raise ConfigError(
                f"convs_per_stage has {len(self.convs_per_stage)} entries for {self.n_stages} stages"
            )
        if any(not 1 <= c <= 3 for c in self.convs_per_stage):
            raise ConfigError("convs_per_stage entries must be in [1, 3]")
        factor = 2 ** (self.n_stages - 1)
        if any(d % factor for d in self.input_dims):
            raise ConfigError(
                f"input dims {self.input_dims} must be divisible by 2^(n_stages-1)={factor}"
            )

    def to_dict(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "n_stages": self.n_stages,
            "base_channels": self.base_channels,
            "convs_per_stage": list(self.convs_per_stage),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VNetConfig":
        return cls(
            tuple(d["input_dims"]),
            int(d["n_stages"]),
            int(d["base_channels"]),
            tuple(d["convs_per_stage"]),
        )


@dataclass(frozen=True)
class UNETRConfig:
    """Transformer encoder over cubic patches with a convolutional decoder."""

    input_dims: tuple[int, int, int]
    patch_size: int = 8
    embed_dim: int = 64
    n_transformer_layers: int = 12
    n_heads: int = 4
    mlp_dim: int = 128
    skip_tap_layers: tuple[int, ...] = (3, 6, 9, 12)
    decoder_base_channels: int = 16

    def __post_init__(self):
        object.__setattr__(self, "input_dims", _check_dims(self.input_dims))
        object.__setattr__(self, "skip_tap_layers", tuple(int(t) for t in self.skip_tap_layers))
        p = self.patch_size
        if p < 2 or (p & (p - 1)):
            raise ConfigError(f"patch_size must be a power of two >= 2, got {p}")
        if any(d % p for d in self.input_dims):
            raise ConfigError(f"input dims {self.input_dims} must be divisible by patch {p}")
        if self.embed_dim % self.n_heads:
            raise ConfigError("embed_dim must be divisible by n_heads")
        taps = self.skip_tap_layers
        if not taps or list(taps) != sorted(set(taps)):
            raise ConfigError("skip_tap_layers must be strictly increasing")
        if taps[-1] != self.n_transformer_layers:
            raise ConfigError("last skip tap must be the final transformer layer")
        if taps[0] < 1:
            raise ConfigError("skip tap layers are 1-indexed")
        n_up = p.bit_length() - 1
        if n_up < len(taps) - 1:
            raise ConfigError(
                f"patch {p} allows {n_up} upsampling steps; {len(taps)} taps need {len(taps) - 1}"
            )

    @property
    def grid(self) -> tuple[int, int, int]:
        return tuple(d // self.patch_size for d in self.input_dims)

    @property
    def n_tokens(self) -> int:
        gh, gw, gd = self.grid
        return gh * gw * gd

    def to_dict(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "n_transformer_layers": self.n_transformer_layers,
            "n_heads": self.n_heads,
            "mlp_dim": self.mlp_dim,
            "skip_tap_layers": list(self.skip_tap_layers),
            "decoder_base_channels": self.decoder_base_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UNETRConfig":
        return cls(
            tuple(d["input_dims"]),
            int(d["patch_size"]),
            int(d["embed_dim"]),
            int(d["n_transformer_layers"]),
            int(d["n_heads"]),
            int(d["mlp_dim"]),
            tuple(d["skip_tap_layers"]),
            int(d.get("decoder_base_channels", 16)),
        )


def desk_vnet_config(dims=(64, 64, 32)) -> VNetConfig:
    return VNetConfig(dims, n_stages=2, base_channels=8, convs_per_stage=(1, 2))


def full_vnet_config(dims=(256, 256, 128)) -> VNetConfig:
    return VNetConfig(dims, n_stages=5, base_channels=8, convs_per_stage=(1, 2, 3, 3, 3))


def desk_unetr_config(dims=(64, 64, 32)) -> UNETRConfig:
    return UNETRConfig(dims, patch_size=8, embed_dim=64, n_transformer_layers=12,
                       n_heads=4, mlp_dim=128, skip_tap_layers=(3, 6, 9, 12),
                       decoder_base_channels=20)


def full_unetr_config(dims=(256, 256, 128)) -> UNETRConfig:
    return UNETRConfig(dims, patch_size=16, embed_dim=768, n_transformer_layers=12,
                       n_heads=12, mlp_dim=3072, skip_tap_layers=(3, 6, 9, 12),
                       decoder_base_channels=32)
