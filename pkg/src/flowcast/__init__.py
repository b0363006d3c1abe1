"""Online sensorimotor forward models over optical flow.

An incremental Gaussian mixture learns the joint behaviour of (current flow,
command, odometry) and the flow change a fixed number of frames later, from a
stream, in one pass.  On top of it: stream/command re-synchronization,
prediction-quality evaluation against simple baselines, collision
anticipation by temporal credit assignment, and a deterministic ego-motion
simulator to exercise the whole stack end to end.
"""

from .alignment import AlignmentConfig, AlignmentResult, apply_delay, estimate_delay
from .collision import (
    ActivationHistory,
    CollisionMonitor,
    CreditConfig,
    alarm_events,
    bump_onsets,
    calibrate_alarm_threshold,
)
from .core import (
    ActionCommand,
    ActionKind,
    FlowGrid,
    FlowVector,
    InputEncoding,
    LogHeader,
    Proprioception,
    SensorimotorFrame,
    StreamFormatError,
    StreamLog,
    TrainingPair,
    make_pairs,
    read_stream_log,
    training_arrays,
    write_stream_log,
)
from .evaluation import (
    FlowRegion,
    MetricReport,
    aae,
    ablation_run,
    action_cluster_stats,
    aepe,
    default_regions,
    evaluate_model,
    export_distributions,
    separation_ratio,
)
from .forward_model import FeatureScales, FlowPrediction, ForwardModel, default_igmm_config
from .igmm import IgmmConfig, Mixture, MixtureComponent, SnapshotError
from .simulator import (
    Scenario,
    SimState,
    approach_scenario,
    render_flow,
    rotate_scenario,
    run,
    step,
    wander_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "ActionCommand",
    "ActionKind",
    "ActivationHistory",
    "AlignmentConfig",
    "AlignmentResult",
    "CollisionMonitor",
    "CreditConfig",
    "FeatureScales",
    "FlowGrid",
    "FlowPrediction",
    "FlowRegion",
    "FlowVector",
    "ForwardModel",
    "IgmmConfig",
    "InputEncoding",
    "LogHeader",
    "MetricReport",
    "Mixture",
    "MixtureComponent",
    "Proprioception",
    "Scenario",
    "SensorimotorFrame",
    "SimState",
    "SnapshotError",
    "StreamFormatError",
    "StreamLog",
    "TrainingPair",
    "aae",
    "ablation_run",
    "action_cluster_stats",
    "aepe",
    "alarm_events",
    "apply_delay",
    "approach_scenario",
    "bump_onsets",
    "calibrate_alarm_threshold",
    "default_igmm_config",
    "default_regions",
    "estimate_delay",
    "evaluate_model",
    "export_distributions",
    "make_pairs",
    "read_stream_log",
    "render_flow",
    "rotate_scenario",
    "run",
    "separation_ratio",
    "step",
    "training_arrays",
    "wander_scenario",
    "write_stream_log",
    "__version__",
]
