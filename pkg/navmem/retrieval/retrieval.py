import logging
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial.distance import cdist

from ..navmap.render import group_text
from .embedding import EmbeddingCache
from .knapsack import KnapsackInstance, RetrievalPlan, select_groups, EXACT_LIMIT

__all__ = ['RetrievalConfig', 'group_probability', 'refresh_group_embeddings', 'group_probabilities',
           'plan_step', 'select_by_distance', 'select_all', 'RETRIEVAL_METHODS', 'PROBABILITY_MODES']

logger = logging.getLogger(__name__)

RETRIEVAL_METHODS = ('knapsack', 'distance-baseline', 'all-groups')
PROBABILITY_MODES = ('group', 'object-max')


@dataclass
class RetrievalConfig:
    method: str = 'knapsack'
    threshold: float = 0.55
    quantum: int = 1024
    probability_mode: str = 'group'
    exact_limit: int = EXACT_LIMIT

    def __post_init__(self):
        if self.method not in RETRIEVAL_METHODS:
            raise ValueError('retrieval method must be one of %s, got %r' % (RETRIEVAL_METHODS, self.method))
        if self.probability_mode not in PROBABILITY_MODES:
            raise ValueError('probability mode must be one of %s, got %r'
                             % (PROBABILITY_MODES, self.probability_mode))
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError('threshold must lie in [0, 1]')

    def to_dict(self):
        return asdict(self)


def _probability(u, v):
    cos = float(np.dot(u, v))
    return min(1.0, max(0.0, 0.5 * (1.0 + cos)))


def group_probability(provider, goal, group_text):
    """(1 + cos(embed(goal), embed(group_text))) / 2, and 0 for an empty group text."""
    if not group_text.strip():
        return 0.0
    return _probability(provider.embed(goal), provider.embed(group_text))


def refresh_group_embeddings(cache, changed_group_ids, provider, nav_map):
    '''
    Group id -> embedding (None for an empty group) for every group of the map.

    Groups in changed_group_ids and groups missing from the cache are embedded again; the
    rest are served from the cache unchanged.
    '''
    if cache.provider is not provider:
        raise ValueError('cache belongs to a different provider')
    changed = set(changed_group_ids)
    return {gid: cache.group_vector(gid, group_text(nav_map, gid), force=gid in changed)
            for gid in nav_map.group_ids}


def group_probabilities(nav_map, goal, cache, changed=(), mode='group'):
    """Per-group P_i in map order."""
    goal_v = cache.text_vector(goal)
    vectors = refresh_group_embeddings(cache, changed, cache.provider, nav_map)
    probs = {}
    for gid in nav_map.group_ids:
        if vectors[gid] is None:
            probs[gid] = 0.0
        elif mode == 'object-max':
            probs[gid] = max(_probability(goal_v, cache.text_vector(label)) for label in nav_map.labels(gid))
        else:
            probs[gid] = _probability(goal_v, vectors[gid])
    return probs


def _objective(probs, selected, threshold):
    return math.fsum(probs[g] - threshold for g in selected) if probs else 0.0


def select_by_distance(nav_map, sizes, budget, position, probs=None, threshold=0.0):
    """Groups by planar centroid distance to position, ties by id, each taken if it still fits."""
    gids = [g for g in nav_map.group_ids if nav_map.group(g).members]
    plan = RetrievalPlan(method='distance-baseline', probabilities=dict(probs or {}))
    if not gids:
        return plan
    centroids = np.array([nav_map.centroid(g) for g in gids])
    d = cdist(np.asarray(position, dtype=float)[None, :2], centroids)[0]
    used = 0
    for k in sorted(range(len(gids)), key=lambda k: (d[k], gids[k])):
        if used + sizes[gids[k]] <= budget:
            plan.selected.append(gids[k])
            used += sizes[gids[k]]
    plan.total_bytes = used
    plan.objective_value = _objective(probs, plan.selected, threshold)
    return plan


def select_all(nav_map, sizes, budget=None, probs=None, threshold=0.0):
    """Every non-empty group in map order; under a budget, each taken if it still fits."""
    plan = RetrievalPlan(method='all-groups', probabilities=dict(probs or {}))
    used = 0
    for gid in nav_map.group_ids:
        if not nav_map.group(gid).members:
            continue
        if budget is not None and used + sizes[gid] > budget:
            continue
        plan.selected.append(gid)
        used += sizes[gid]
    plan.total_bytes = used
    plan.objective_value = _objective(probs, plan.selected, threshold)
    return plan


def plan_step(nav_map, goal, store, budget, provider=None, threshold=0.55, cache=None, changed=(),
              quantum=1024, mode='group', exact_limit=EXACT_LIMIT):
    '''
    Relevance-aware group selection for one navigation step.

    Parameters
    ----------
    store : anything with size_of(group_id), giving M_i in bytes
    budget : M in bytes
    provider, cache : an EmbeddingProvider, or an EmbeddingCache wrapping one (kept across
        steps so unchanged groups are not embedded again)
    changed : group ids whose members changed since the cache saw them

    Returns
    -------
    RetrievalPlan, with the per-group probabilities attached
    '''
    if cache is None:
        if provider is None:
            raise ValueError('plan_step needs a provider or a cache')
        cache = EmbeddingCache(provider)
    probs = group_probabilities(nav_map, goal, cache, changed, mode)
    gids = [g for g in nav_map.group_ids if nav_map.group(g).members]
    inst = KnapsackInstance([probs[g] for g in gids], threshold, [store.size_of(g) for g in gids],
                            int(budget), quantum, ids=gids)
    plan = select_groups(inst, exact_limit)
    plan.probabilities = probs
    logger.debug('goal %r: selected %s of %d groups (%d bytes, objective %.4f)', goal, plan.selected,
                 len(gids), plan.total_bytes, plan.objective_value)
    return plan
