"""Moving-object tracking for Doppler-velocity (FMCW) LiDAR point clouds.

The package bundles a synthetic scene simulator, a velocity-based
heuristic tracker, an embedding tracker trained with supervised
contrastive losses, point-level tracking metrics, dataset persistence,
a command-line interface, and an annotation HTTP service.
"""

from .core import (
    BACKGROUND_ID,
    Cluster,
    Frame,
    InstanceLabeling,
    Point,
    PointHeadOutput,
    Pose,
    Window,
    transform_point,
)
from .embedding import ClusterInferParams, assoc_prob, associate_volumes, cluster_volume
from .heuristic import TrackerParams, associate_clusters, build_window, compensate_position, dbscan, heuristic_track
from .learn import (
    FeatureSpec,
    LossWeights,
    SupConParams,
    ToyHead,
    loss_instance,
    loss_objectness,
    loss_supcon,
    loss_variance_smooth,
    objectness_target,
    pool_cluster_feature,
    total_loss,
    train_toy_head,
)
from .metrics import EvalReport, association_score, evaluate, match_frame
from .pipelines import build_training_windows, embed_track
from .preprocess import (
    EgoEstimate,
    PreprocessParams,
    estimate_ego_velocity,
    filter_outliers,
    fit_ground_plane,
    split_dynamic,
)
from .sim import (
    SceneConfig,
    SceneGroundTruth,
    generate_sequence,
    highway_scene,
    ideal_ego_radial_profile,
    paper_scene_set,
    radial_velocity,
    urban_scene,
)

__version__ = "0.1.0"
