"""Desk-scale spiking driving stack: LIF primitives, BEV fusion, planning and
energy-model operations exposed from the C++ core."""

from ._core import (
    ContractError,
    FlaggedError,
    bicycle_step,
    energy_ratio,
    estimate_energy,
    fuse_history,
    generate_dataset,
    layer_sops,
    lif_sequence,
    lif_step,
    measure_firing_rate,
    panoptic_metrics,
    sample_trajectories,
    segmentation_iou,
    surrogate_backward,
)

__all__ = [
    "ContractError",
    "FlaggedError",
    "bicycle_step",
    "energy_ratio",
    "estimate_energy",
    "fuse_history",
    "generate_dataset",
    "layer_sops",
    "lif_sequence",
    "lif_step",
    "measure_firing_rate",
    "panoptic_metrics",
    "sample_trajectories",
    "segmentation_iou",
    "surrogate_backward",
]
