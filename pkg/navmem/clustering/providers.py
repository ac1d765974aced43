"""Attention providers: per-group attention a new object would pay to existing groups."""

import numpy as np
from scipy.special import softmax

from ..attention.discrete import partial_forward_attention, layers_for_fraction
from ..navmap.render import render_object, group_text

__all__ = ['EmbeddingSimilarityProvider', 'TinyTransformerProvider', 'PROVIDERS']

PROVIDERS = ('embedding-similarity', 'tiny-transformer')


class EmbeddingSimilarityProvider:
    '''
    Attention stand-in with real semantics: softmax over cosine similarity between the
    object label and each group's label text, divided by temperature, next to a fixed null
    logit null_similarity / temperature playing the part of the query's self-attention.
    '''

    name = 'embedding-similarity'

    def __init__(self, cache, temperature=0.1, null_similarity=0.3):
        if temperature <= 0:
            raise ValueError('temperature must be positive')
        self.cache = cache
        self.temperature = temperature
        self.null_similarity = null_similarity

    def token_layers(self, nav_map, object_id, num_groups):
        return 0

    def scores(self, nav_map, object_id, group_ids):
        if not group_ids:
            return np.zeros(0)
        obj = self.cache.text_vector(nav_map.entry(object_id).label)
        sims = []
        for gid in group_ids:
            v = self.cache.group_vector(gid, group_text(nav_map, gid))
            sims.append(-1.0 if v is None else float(np.dot(obj, v)))
        logits = np.array(sims + [self.null_similarity]) / self.temperature
        return softmax(logits)[:-1]


class TinyTransformerProvider:
    '''
    Mean attention from a partial forward of the model over the object's rendered text,
    against cached group keys. blocks is a callable group id -> KVBlock holding at least
    the first layers_used layers, typically the store's pinned blocks.
    '''

    name = 'tiny-transformer'

    def __init__(self, model, blocks, layer_fraction=0.1):
        self.model = model
        self.blocks = blocks
        self.layers_used = layers_for_fraction(model, layer_fraction)

    def token_layers(self, nav_map, object_id, num_groups):
        return len(self.model.tokenize(render_object(nav_map.entry(object_id)))) * self.layers_used

    def scores(self, nav_map, object_id, group_ids):
        query = self.model.tokenize(render_object(nav_map.entry(object_id)))
        return partial_forward_attention(self.model, [self.blocks(g) for g in group_ids], query, self.layers_used)
