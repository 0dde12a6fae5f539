"""Model wrapper: deterministic initialization, inference, checkpoints."""

from __future__ import annotations

import io as _io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from ..errors import InvalidArgument, ModelStateError, WriteError
from ..io import STRUCTURES, StructureMask, Volume3D
from .config import UNETRConfig, VNetConfig
from .unetr import UNETR
from .vnet import VNet

CHECKPOINT_FORMAT = "parkvol-checkpoint-v1"


def _init_parameters(net: nn.Module, seed: int) -> None:
    """Fan-in-scaled init, reproducible for a given seed.

    Conv/deconv weights ~ N(0, 2/fan_in) with fan_in = in_channels x kernel
    volume (He scaling for the ReLU paths); linear weights ~ N(0, 1/fan_in);
    position embeddings ~ N(0, 0.02^2); all biases 0; norm layers at
    identity. Modules are visited in definition order.
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, module in net.named_modules():
            if isinstance(module, (nn.Conv3d, nn.ConvTranspose3d)):
                fan_in = module.weight.shape[int(isinstance(module, nn.ConvTranspose3d))]
                fan_in *= int(np.prod(module.kernel_size))
                module.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.Linear):
                fan_in = module.weight.shape[1]
                module.weight.normal_(0.0, (1.0 / fan_in) ** 0.5, generator=gen)
                module.bias.zero_()
            elif isinstance(module, (nn.BatchNorm3d, nn.LayerNorm)):
                module.weight.fill_(1.0)
                module.bias.zero_()
        if hasattr(net, "pos_embed"):
            net.pos_embed.normal_(0.0, 0.02, generator=gen)


@dataclass
class SegmentationModel:
    """A backbone with its config, seed and training state."""

    backbone: str  # "cnn" | "vit"
    config: VNetConfig | UNETRConfig
    net: nn.Module
    seed: int
    trained_structure: str | None = None
    history_summary: dict = field(default_factory=dict)

    @property
    def input_dims(self) -> tuple[int, int, int]:
        return self.config.input_dims

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def parameter_vector(self) -> np.ndarray:
        with torch.no_grad():
            return torch.cat([p.reshape(-1) for p in self.net.parameters()]).numpy().copy()

    def predict_probs(self, vol: Volume3D | np.ndarray) -> np.ndarray:
        data = vol.data if isinstance(vol, Volume3D) else np.asarray(vol)
        if tuple(data.shape) != tuple(self.input_dims):
            raise InvalidArgument(
                f"volume dims {tuple(data.shape)} do not match model dims {self.input_dims}"
            )
        self.net.eval()
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(data, dtype=np.float32))
            out = self.net(x.unsqueeze(0).unsqueeze(0))
        return out.squeeze(0).squeeze(0).numpy()

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "SegmentationModel":
        return load_checkpoint(path)


def build_vnet(config: VNetConfig, seed: int = 0) -> SegmentationModel:
    net = VNet(config)
    _init_parameters(net, seed)
    return SegmentationModel("cnn", config, net, int(seed))


def build_unetr(config: UNETRConfig, seed: int = 0) -> SegmentationModel:
    net = UNETR(config)
    _init_parameters(net, seed)
    return SegmentationModel("vit", config, net, int(seed))


def build_model(backbone: str, config, seed: int = 0) -> SegmentationModel:
    if backbone == "cnn":
        return build_vnet(config, seed)
    if backbone == "vit":
        return build_unetr(config, seed)
    raise InvalidArgument(f"unknown backbone {backbone!r}")


def segment_structure(
    model: SegmentationModel, vol: Volume3D, threshold: float = 0.5
) -> StructureMask:
    """Forward pass, then binarize: voxels with probability strictly above
    the threshold are foreground."""
    if model.trained_structure is None:
        raise ModelStateError("model has no trained_structure; train it first")
    if model.trained_structure not in STRUCTURES:
        raise ModelStateError(f"model trained for unknown structure {model.trained_structure!r}")
    probs = model.predict_probs(vol)
    mask = (probs > threshold).astype(np.uint8)
    return StructureMask(mask, vol.spacing, model.trained_structure)


def save_checkpoint(model: SegmentationModel, path) -> None:
    """Self-describing container: JSON meta plus little-endian tensors."""
    path = Path(path)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "backbone": model.backbone,
        "config": model.config.to_dict(),
        "seed": model.seed,
        "trained_structure": model.trained_structure,
        "history_summary": model.history_summary,
    }
    arrays = {}
    for key, tensor in model.net.state_dict().items():
        arr = tensor.detach().numpy()
        if arr.dtype.kind == "f":
            arr = arr.astype("<f4")
        else:
            arr = arr.astype("<i8")
        arrays["s::" + key] = arr
    buf = _io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(buf.getvalue())
        tmp.replace(path)
    except OSError as exc:
        raise WriteError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> SegmentationModel:
    path = Path(path)
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise InvalidArgument(f"{path} is not a parkvol checkpoint")
        backbone = meta["backbone"]
        if backbone == "cnn":
            config = VNetConfig.from_dict(meta["config"])
        else:
            config = UNETRConfig.from_dict(meta["config"])
        model = build_model(backbone, config, meta["seed"])
        state = {}
        for key in npz.files:
            if not key.startswith("s::"):
                continue
            arr = npz[key]
            ref = model.net.state_dict()[key[3:]]
            state[key[3:]] = torch.from_numpy(np.ascontiguousarray(arr)).to(ref.dtype)
        model.net.load_state_dict(state)
    model.trained_structure = meta["trained_structure"]
    model.history_summary = meta.get("history_summary", {})
    return model
