"""memory clustering"""
from __future__ import absolute_import

from .providers import *
from .clusterer import *

__all__ = [s for s in dir() if not s.startswith('_')]
