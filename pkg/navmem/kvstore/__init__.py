"""two-tier group KV store"""
from __future__ import absolute_import

from .store import *

__all__ = [s for s in dir() if not s.startswith('_')]
