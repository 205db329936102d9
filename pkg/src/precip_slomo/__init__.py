"""Optical-flow temporal interpolation of radar precipitation fields, with a
linear baseline, an evaluation harness, and a mass-conserving overland-flow
flood surrogate for sensitivity studies."""

from .grids import (
    BBox,
    Dem,
    FrameSeries,
    GridMeta,
    PrecipFrame,
    crop_to_bbox,
    denormalize_precip,
    normalize_precip,
    resample_to,
    terrain_gradient,
    undersample,
)
from .warping import (
    FlowField3,
    FusionWeights,
    VisibilityMap,
    approx_intermediate_flows,
    backward_warp_2d,
    backward_warp_3d,
    fuse_frames,
)
from .flownet import (
    ModelParams,
    TopoChannels,
    UNetSpec,
    build_topo_channels,
    compute_bidirectional_flow,
    forward_interpolate,
    init_params,
    refine,
)
from .losses import (
    LossParts,
    LossWeights,
    reconstruction_loss,
    smoothness_loss,
    total_loss,
    warping_loss,
)
from .training import (
    TrainConfig,
    Triplet,
    build_triplets,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .interpolation import densify_series, linear_interpolate
from .floodsim import (
    FloodState,
    SimConfig,
    extent_diff,
    flood_extent,
    run,
    step,
)
from .evaluation import (
    emit_figures,
    mae_by_offset,
    normalize_series,
    rmse_series,
    window_aggregate,
)

__version__ = "0.1.0"
