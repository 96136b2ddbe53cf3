"""Trajectory-set motion prediction toolkit.

Builds epsilon-coverage trajectory sets, trains classification and
ordinal-regression heads with map-aware losses (off-road auxiliary term,
weighted cross-entropy variants), and evaluates them with the standard
multimodal forecasting metrics on procedurally generated driving scenes.
"""

from .geometry import (
    AGENT_FRAME,
    GLOBAL_FRAME,
    PolygonSet,
    Pose2,
    Trajectory,
    max_l2,
    mean_l2,
    point_in_polygons,
    trajectory_on_road,
    transform_to_frame,
)
from .losses import (
    avoid_nearby_target,
    ce_loss,
    offroad_loss,
    ordinal_regression_loss,
    smooth_l1,
    softmax,
    total_loss,
    wce_target,
)
from .metrics import PredictionSet, dac, dac_by_rank, mean_mode_distance, min_ade, miss_rate_single, residual_stats
from .model import Model, ModelConfig, TrainConfig, build_dataset, load_model, lr_at, predict_topk, pretrain_map_only, save_model, train
from .physics import MODELS, AgentKinematics, OracleResult, physics_oracle, rollout
from .raster import AgentState, AgentTrack, RasterImage, SceneContext, SceneMap, downsample_features, render
from .synthdata import ScenarioSpec, generate, load_scenes, read_scene, save_scenes, split, write_scene
from .trajset import TrajectorySet, build_set, build_set_of_size, closest_match, distances_to, load_set, onroad_mask, save_set, set_stats

__version__ = "0.1.0"
