from .patches import FoldPlan, PatchPair, extract_patches, make_folds, stack_pairs, window_origins
from .phantom import degrade, generate_phantom, make_pair
from .volume import (
    HU_MAX,
    HU_MIN,
    Volume,
    VolumeFormatError,
    denormalize_hu,
    load_pairs,
    normalize_hu,
    read_manifest,
    read_volume,
    validate_sidecar,
    write_manifest,
    write_volume,
)

__all__ = [
    "FoldPlan",
    "HU_MAX",
    "HU_MIN",
    "PatchPair",
    "Volume",
    "VolumeFormatError",
    "degrade",
    "denormalize_hu",
    "extract_patches",
    "generate_phantom",
    "load_pairs",
    "make_folds",
    "make_pair",
    "normalize_hu",
    "read_manifest",
    "read_volume",
    "stack_pairs",
    "validate_sidecar",
    "window_origins",
    "write_manifest",
    "write_volume",
]
