"""Superimposed fractal impedance controllers for redundant serial arms."""

from .fic_core import FicParams, profile_energy, profile_force, fic_step, fic_init
from .kinematics import ChainModel, Transform, builtin_model, forward_kinematics, geometric_jacobian
from .task_stack import ControllerStack, TaskAttachment, stack_step, saturation_bound

__version__ = "0.1.0"

__all__ = ["FicParams", "profile_energy", "profile_force", "fic_step", "fic_init", "ChainModel",
           "Transform", "builtin_model", "forward_kinematics", "geometric_jacobian",
           "ControllerStack", "TaskAttachment", "stack_step", "saturation_bound"]
