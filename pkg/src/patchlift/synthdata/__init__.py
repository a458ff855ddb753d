"""Synthetic paired-data pipeline: patterns, scenes, rendering, datasets."""

from patchlift.synthdata.dataset import (
    DatasetManifest,
    PairedSample,
    generate_dataset,
    load_manifest,
    load_sample,
    load_split_samples,
    split_benchmark,
    synthesize_sample,
    validate_sample,
)
from patchlift.synthdata.edges import derive_edge_map
from patchlift.synthdata.patterns import AssetImage, PatternBank, make_asset
from patchlift.synthdata.render import apply_occluders, render_pair
from patchlift.synthdata.scene import (
    CameraRanges,
    CameraSpec,
    LightSpec,
    OccluderSpec,
    SurfaceSpec,
    sample_camera,
)

__all__ = [
    "AssetImage",
    "CameraRanges",
    "CameraSpec",
    "DatasetManifest",
    "LightSpec",
    "OccluderSpec",
    "PairedSample",
    "PatternBank",
    "SurfaceSpec",
    "apply_occluders",
    "derive_edge_map",
    "generate_dataset",
    "load_manifest",
    "load_sample",
    "load_split_samples",
    "make_asset",
    "render_pair",
    "sample_camera",
    "split_benchmark",
    "synthesize_sample",
    "validate_sample",
]
