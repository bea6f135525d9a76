"""Latent Schroedinger-bridge speech restoration toolkit (desk scale)."""
from .errors import *  # noqa: F401,F403
from .schedule import NoiseSchedule, ScheduleKind

__version__ = "0.1.0"
