"""Backbone: encode, initialize virtual views, refine with ELF blocks."""

from .elf import ElfBlock, build_cross_mask
from .encoder import PatchEncoder
from .features import DepthMap, StagedFeatureMap
from .heads import ClsHead, DepthHead
from .model import Backbone, backbone_loss, pairwise_epipolar_masks, sample_virtual_cameras
from .splat import init_virtual_views, splat_stage

__all__ = [
    "Backbone",
    "PatchEncoder",
    "ElfBlock",
    "DepthHead",
    "ClsHead",
    "StagedFeatureMap",
    "DepthMap",
    "init_virtual_views",
    "splat_stage",
    "backbone_loss",
    "sample_virtual_cameras",
    "pairwise_epipolar_masks",
    "build_cross_mask",
]
