from .descriptors import DescriptorField, dense_sift
from .flow import FlowParams, estimate_flow, flow_energy, warp
from .pipeline import siftflow_mean, siftflow_means
from .stacking import ALL, temporal_mean, temporal_median

__all__ = [
    "ALL", "DescriptorField", "FlowParams", "dense_sift", "estimate_flow", "flow_energy",
    "siftflow_mean", "siftflow_means", "temporal_mean", "temporal_median", "warp",
]
