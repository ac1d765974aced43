"""synthetic indoor scenes and the navigation episode loop"""
from __future__ import absolute_import

from .grid import *
from .scene import *
from .metrics import *
from .episode import *

__all__ = [s for s in dir() if not s.startswith('_')]
