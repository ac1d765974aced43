"""latency cost model"""
from __future__ import absolute_import

from .costmodel import *

__all__ = [s for s in dir() if not s.startswith('_')]
