"""HoVer-map post-processing, distillation losses and metrics."""

from ._core import (
    HoverpostError,
    classify_instances,
    combined_loss,
    gen_targets,
    instance_segment,
    match_instances,
    panoptic_quality,
    sobel_energy,
)

__all__ = [
    "HoverpostError",
    "classify_instances",
    "combined_loss",
    "gen_targets",
    "instance_segment",
    "match_instances",
    "panoptic_quality",
    "sobel_energy",
]
