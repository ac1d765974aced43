"""Shipped data files"""
from __future__ import absolute_import

import json
import os

__all__ = ['load_themes', 'themes_path', 'DEFAULT_THEME_ORDER']

DEFAULT_THEME_ORDER = ('kitchen', 'bathroom', 'bedroom', 'living-room', 'office', 'dining')


def themes_path():
    return os.path.join(os.path.dirname(__file__), 'themes.json')


def load_themes(path=None):
    """Theme name -> list of object labels, in file order.

    Vocabularies are required to be pairwise disjoint; a label shared by
    two themes raises ValueError.
    """
    with open(path or themes_path()) as f:
        themes = json.load(f)
    seen = {}
    for theme, labels in themes.items():
        if not labels:
            raise ValueError('theme %r has an empty vocabulary' % theme)
        for label in labels:
            if label in seen and seen[label] != theme:
                raise ValueError('label %r appears in themes %r and %r' % (label, seen[label], theme))
            seen[label] = theme
    return themes
