"""Gestural communication toolkit for underwater robots.

Script DSL, rigid-body simulator, procedural clip renderer, self-attention
recognizer with its training/evaluation pipeline, and a human transcription
study service.
"""

from .dsl import (
    GestureScript,
    MessageId,
    MotionSegment,
    NOMINAL_DURATIONS_S,
    bundled_library,
    load_library,
    parse_script,
    serialize_script,
    total_duration,
)
from .kinematics import (
    BodyState,
    ControllerModel,
    RobotProfile,
    Trajectory,
    default_profile,
    integrate_orientation,
    simulate,
)
from .render import EnvCondition, VideoClip, Viewpoint, read_clip, render_clip, write_clip
from .model import ModelConfig, forward, init_params, train
from .evaluate import PredictionResult, predict, ten_crop

__version__ = "0.1.0"
