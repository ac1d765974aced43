import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.spatial.distance import cdist

from ..attention.tokenizer import count_tokens
from ..navmap.render import render_group
from .providers import PROVIDERS

__all__ = ['ClusterConfig', 'Assignment', 'assign', 'assign_by_position', 'cluster', 'CLUSTER_METHODS']

logger = logging.getLogger(__name__)

CLUSTER_METHODS = ('attention', 'position')


@dataclass
class ClusterConfig:
    method: str = 'attention'
    attention_threshold: float = 0.25
    layer_fraction: float = 0.1
    provider: str = 'embedding-similarity'
    max_group_tokens: int = 256
    position_radius: float = 6.0
    temperature: float = 0.1
    null_similarity: float = 0.3

    def __post_init__(self):
        if self.method not in CLUSTER_METHODS:
            raise ValueError('cluster method must be one of %s, got %r' % (CLUSTER_METHODS, self.method))
        if self.provider not in PROVIDERS:
            raise ValueError('cluster provider must be one of %s, got %r' % (PROVIDERS, self.provider))
        # a zero threshold is accepted: every positive score then clears it
        if not 0.0 <= self.attention_threshold < 1.0:
            raise ValueError('attention_threshold must lie in [0, 1)')
        if not 0.0 < self.layer_fraction <= 1.0:
            raise ValueError('layer_fraction must lie in (0, 1]')
        if self.max_group_tokens < 1:
            raise ValueError('max_group_tokens must be positive')

    def to_dict(self):
        return asdict(self)


@dataclass
class Assignment:
    object_id: int
    group_id: int = None                 # None: the step's new group
    scores: list = field(default_factory=list)

    def to_dict(self, step=None):
        d = {'object_id': self.object_id, 'target': 'new' if self.group_id is None else self.group_id,
             'scores': [[g, s] for g, s in self.scores]}
        if step is not None:
            d = dict(step=step, **d)
        return d


def _open_groups(nav_map, max_group_tokens):
    return [g for g in nav_map.group_ids if count_tokens(render_group(nav_map, g)) < max_group_tokens]


def assign(nav_map, staged, cfg, provider):
    '''
    Attention-based assignment of staged objects to the groups present at the start of
    the step.

    Each object goes to its highest-scoring open group (ties to the lowest group id) when
    that score exceeds the threshold; the rest are left for one new group, in detection
    order. Groups at max_group_tokens are not candidates.
    '''
    candidates = _open_groups(nav_map, cfg.max_group_tokens)
    out = []
    for oid in staged:
        if not candidates:
            out.append(Assignment(oid))
            continue
        scores = np.asarray(provider.scores(nav_map, oid, candidates))
        k = int(np.argmax(scores))
        target = candidates[k] if scores[k] > cfg.attention_threshold else None
        out.append(Assignment(oid, target, [(g, float(s)) for g, s in zip(candidates, scores)]))
    return out


def assign_by_position(nav_map, staged, radius):
    """Nearest member centroid within radius (planar, ties to the lowest group id), else the new group."""
    gids = [g for g in nav_map.group_ids if nav_map.group(g).members]
    out = []
    if not gids:
        return [Assignment(oid) for oid in staged]
    centroids = np.array([nav_map.centroid(g) for g in gids])
    for oid in staged:
        p = np.asarray(nav_map.entry(oid).position[:2], dtype=float)
        d = cdist(p[None, :], centroids)[0]
        k = int(np.argmin(d))
        target = gids[k] if d[k] <= radius else None
        out.append(Assignment(oid, target, [(g, float(x)) for g, x in zip(gids, d)]))
    return out


def cluster(nav_map, staged, cfg, provider=None):
    if cfg.method == 'position':
        return assign_by_position(nav_map, staged, cfg.position_radius)
    return assign(nav_map, staged, cfg, provider)
