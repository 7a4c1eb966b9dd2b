"""Speed-adjustable goal-conditioned SO(3) reorientation lab.

A desk-scale reinforcement-learning laboratory: an analytic surrogate for
in-hand reorientation, the reward algebra for time-optimal and
speed-adjustable behavior, a from-scratch PPO trainer, a recurrent
proprioceptive pose estimator with coupled training, and the evaluation
pipeline that produces plot-ready reports.
"""

from .env import (
    Action,
    EnvConfig,
    EnvState,
    Observation,
    ReorientEnv,
    StepEvents,
    VecReorientEnv,
    build_xi,
)
from .errors import (
    CompatibilityError,
    ConfigError,
    GaitspeedError,
    InvalidRotationError,
    NumericalError,
    UsageError,
)
from .geometry import (
    BasisPointSet,
    Cuboid,
    Pose,
    basis_point_encoding,
    closest_point_on_cuboid,
    default_basis_points,
)
from .rewards import (
    RewardConfig,
    RewardInputs,
    auxiliary_reward,
    clip_from_target_speed,
    clipped_reward,
    dense_reward,
    goal_bonus,
    mixed_reward,
)
from .so3 import (
    Rotation,
    discretized_goal_set,
    feature_to_rotation,
    geodesic_distance,
    relative_rotation,
    rotation_to_feature,
    sample_uniform_rotation,
)

__version__ = "0.1.0"
