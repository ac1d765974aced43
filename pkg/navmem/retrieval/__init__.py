"""semantics-aware memory retrieval"""
from __future__ import absolute_import

from .embedding import *
from .knapsack import *
from .retrieval import *

__all__ = [s for s in dir() if not s.startswith('_')]
