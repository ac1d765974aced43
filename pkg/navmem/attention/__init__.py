"""miniature decoder and discrete group attention"""
from __future__ import absolute_import

from .tokenizer import *
from .model import *
from .kvblock import *
from .discrete import *
from .reference import *

__all__ = [s for s in dir() if not s.startswith('_')]
