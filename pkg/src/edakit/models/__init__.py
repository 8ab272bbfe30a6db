"""Teacher/student model graphs, FiLM conditioning, profiling, serialization."""

from .nets import (
    DenoiserNet,
    StudentConfig,
    TeacherConfig,
    build_student,
    build_teacher,
    denoise,
    forward_segments,
)
from .profile import ProfileReport, profile, size_mb_from_params
from .archive import load_model, load_weights, save_model, save_weights

__all__ = [
    "DenoiserNet",
    "StudentConfig",
    "TeacherConfig",
    "build_student",
    "build_teacher",
    "denoise",
    "forward_segments",
    "ProfileReport",
    "profile",
    "size_mb_from_params",
    "load_model",
    "load_weights",
    "save_model",
    "save_weights",
]
