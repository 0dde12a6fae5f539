from .config import (
    UNETRConfig,
    VNetConfig,
    desk_unetr_config,
    desk_vnet_config,
    full_unetr_config,
    full_vnet_config,
)
from .unetr import UNETR
from .vnet import VNet
from .wrapper import (
    SegmentationModel,
    build_model,
    build_unetr,
    build_vnet,
    load_checkpoint,
    save_checkpoint,
    segment_structure,
)

__all__ = [
    "UNETR",
    "UNETRConfig",
    "VNet",
    "VNetConfig",
    "SegmentationModel",
    "build_model",
    "build_unetr",
    "build_vnet",
    "desk_unetr_config",
    "desk_vnet_config",
    "full_unetr_config",
    "full_vnet_config",
    "load_checkpoint",
    "save_checkpoint",
    "segment_structure",
]
