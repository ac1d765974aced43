"""sub-goal planning"""
from __future__ import absolute_import

from .planner import *

__all__ = [s for s in dir() if not s.startswith('_')]
