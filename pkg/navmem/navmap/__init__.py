"""navigation map"""
from __future__ import absolute_import

from .navmap import *
from .render import *

__all__ = [s for s in dir() if not s.startswith('_')]
