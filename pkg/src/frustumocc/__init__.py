"""Geometry and numerics engine for frustum instance-occupancy BEV lifting.

Core pieces: pinhole frustum construction, point-level occupancy labeling
with dual verification paths, depth/occupancy weight fusion, feature
lifting and deterministic BEV voxel pooling, occupancy-keyed self-attention
with its analytic overlap identity, and the supervision losses with
verified gradients, all exercised on seeded synthetic scenes.
"""

from .fusion import (
    FusionGradients,
    FusionParams,
    WeightVolume,
    fuse_weights,
    fuse_weights_grad,
    head_param_count,
)
from .geometry import (
    CameraIntrinsics,
    FrustumGrid,
    FrustumSpec,
    OrientedBox3D,
    RigidTransform,
    box_faces,
    build_frustum,
    project,
    rot_x,
    rot_y,
    rot_z,
    uniform_depth_bins,
    unproject,
)
from .lifting import (
    BEVGrid,
    BEVGridSpec,
    FeatureMap,
    LiftedFeatureVolume,
    PoolResult,
    lift,
    voxel_pool,
    voxel_pool_grad,
)
from .losses import LossWeights, depth_bce, focal_loss, total_loss
from .occupancy import (
    OccupancyVolume,
    label_frustum,
    point_occupied_halfspace,
    point_occupied_oracle,
    ray_box_interval,
    ray_box_intervals,
)
from .propagation import (
    AttentionConfig,
    OccupancyTokenSet,
    analytic_overlap,
    empirical_overlap,
    occupancy_attention,
    occupancy_attention_grad,
    overlap_sweep,
    stable_softmax,
)
from .scenes import (
    Camera,
    GenerationError,
    Scene,
    SceneConfig,
    generate_scene,
    procedural_features,
    pseudo_weight_volumes,
    render_depth_gt,
    scene_from_json,
    scene_to_json,
)

__version__ = "0.1.0"
