"""FMCW acoustic hand tracking: sonar simulation, range-profile
preprocessing, pose analytics and the batch CLI, backed by the C++ core."""

from echosonar._core import (
    AnchorError,
    ChirpSpec,
    ConfigError,
    InputError,
    ShapeError,
    activation_similarity,
    flexion_angles,
    generate_chirp,
    hand_pose,
    highpass,
    instantaneous_freq_hz,
    joint_names,
    normalize_pose,
    preprocess,
    run,
    xcorr_fd,
)

__all__ = [
    "AnchorError",
    "ChirpSpec",
    "ConfigError",
    "InputError",
    "ShapeError",
    "activation_similarity",
    "flexion_angles",
    "generate_chirp",
    "hand_pose",
    "highpass",
    "instantaneous_freq_hz",
    "joint_names",
    "normalize_pose",
    "preprocess",
    "run",
    "xcorr_fd",
]

__version__ = "0.1.0"
