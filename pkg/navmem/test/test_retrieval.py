import io
import json
import urllib.error

import numpy as np
import pytest

from navmem.clustering import Assignment
from navmem.navmap import NavigationMap
from navmem.retrieval import (EmbeddingCache, HashedTrigramEmbedding, HashedWordEmbedding, RemoteEmbedding,
                              RetrievalConfig, cosine, group_probabilities, group_probability, make_provider,
                              plan_step, refresh_group_embeddings, select_all, select_by_distance)


class Sizes:

    def __init__(self, sizes):
        self.sizes = sizes

    def size_of(self, group_id):
        return self.sizes[group_id]


def themed_map():
    m = NavigationMap()
    m.add_detections(0, [('sofa', (2, 2, 10)), ('armchair', (3, 2, 10)), ('rug', (2, 4, 10))])
    m.place([Assignment(0), Assignment(1), Assignment(2)], 0)
    m.add_detections(1, [('stove', (20, 2, 10)), ('oven', (21, 3, 10)), ('kettle', (22, 2, 10))])
    m.place([Assignment(3), Assignment(4), Assignment(5)], 1)
    m.add_detections(2, [('toilet', (2, 20, 10)), ('sink', (3, 21, 10))])
    m.place([Assignment(6), Assignment(7)], 2)
    return m


def test_embeddings_are_unit_and_deterministic():
    a, b = HashedTrigramEmbedding(), HashedTrigramEmbedding()
    v = a.embed('refrigerator')
    assert v.shape == (256,)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.array_equal(v, b.embed('Refrigerator'))
    with pytest.raises(ValueError):
        a.embed('   ')


def test_themes_share_a_direction():
    e = HashedTrigramEmbedding()
    assert cosine(e.embed('stove'), e.embed('oven')) > cosine(e.embed('stove'), e.embed('toilet')) + 0.2
    w = HashedWordEmbedding()
    assert cosine(w.embed('tv'), w.embed('sofa')) > cosine(w.embed('tv'), w.embed('bathtub')) + 0.2


def test_plain_trigram_provider_has_no_theme_channel():
    plain = make_provider('trigram-plain')
    assert isinstance(plain, HashedTrigramEmbedding)
    assert plain.lexicon == {} and plain.concepts == {}
    themed = make_provider('trigram')
    assert cosine(plain.embed('stove'), plain.embed('oven')) < cosine(themed.embed('stove'), themed.embed('oven')) - 0.2


def test_group_probability_range():
    e = HashedTrigramEmbedding()
    assert group_probability(e, 'tv', '') == 0.0
    p = group_probability(e, 'tv', 'sofa armchair rug')
    assert 0.55 < p <= 1.0
    assert group_probability(e, 'tv', 'stove oven kettle') < 0.55


def test_only_changed_groups_are_embedded_again():
    m = themed_map()
    cache = EmbeddingCache(HashedTrigramEmbedding())
    refresh_group_embeddings(cache, [], cache.provider, m)
    assert cache.calls == 3
    refresh_group_embeddings(cache, [], cache.provider, m)
    assert cache.calls == 3
    refresh_group_embeddings(cache, [1], cache.provider, m)
    assert cache.calls == 4
    with pytest.raises(ValueError):
        refresh_group_embeddings(cache, [], HashedTrigramEmbedding(), m)


def test_plan_step_picks_the_relevant_group():
    m = themed_map()
    plan = plan_step(m, 'tv', Sizes({0: 1000, 1: 1000, 2: 1000}), 10000, provider=HashedTrigramEmbedding())
    assert plan.selected == [0]
    assert set(plan.probabilities) == {0, 1, 2}
    plan = plan_step(m, 'toilet', Sizes({0: 1000, 1: 1000, 2: 1000}), 10000, provider=HashedTrigramEmbedding())
    assert plan.selected == [2]


def test_plan_step_respects_budget():
    m = themed_map()
    plan = plan_step(m, 'tv', Sizes({0: 5000, 1: 100, 2: 100}), 4000, provider=HashedTrigramEmbedding())
    assert plan.selected == []
    assert plan.total_bytes == 0


def test_object_max_equals_group_mode_for_single_members():
    m = NavigationMap()
    m.add_detections(0, [('sofa', (1, 1, 1))])
    m.place([Assignment(0)], 0)
    cache = EmbeddingCache(HashedTrigramEmbedding())
    assert group_probabilities(m, 'tv', cache, mode='object-max')[0] == \
        pytest.approx(group_probabilities(m, 'tv', cache, mode='group')[0])


def test_distance_and_all_groups_selection():
    m = themed_map()
    sizes = {0: 100, 1: 100, 2: 100}
    plan = select_by_distance(m, sizes, 200, (22, 2))
    assert plan.selected == [1, 0]
    assert plan.total_bytes == 200
    assert select_all(m, sizes).selected == [0, 1, 2]
    assert select_all(m, {0: 150, 1: 100, 2: 50}, budget=160).selected == [0]


def test_retrieval_config_validation():
    with pytest.raises(ValueError):
        RetrievalConfig(method='random')
    with pytest.raises(ValueError):
        RetrievalConfig(probability_mode='mean')
    assert RetrievalConfig().threshold == 0.55


class _Response(io.BytesIO):

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def test_remote_embedding_and_fallback(monkeypatch):
    local = HashedTrigramEmbedding()
    remote = make_provider('trigram', endpoint='http://embed.invalid')
    assert isinstance(remote, RemoteEmbedding)

    def refuse(*args, **kwargs):
        raise urllib.error.URLError('refused')

    monkeypatch.setattr('urllib.request.urlopen', refuse)
    assert np.array_equal(remote.embed('sofa'), local.embed('sofa'))
    assert remote.fallbacks == 1

    served = np.zeros(256)
    served[3] = 1.0

    def serve(req, timeout=None):
        texts = json.loads(req.data.decode('utf-8'))['texts']
        return _Response(json.dumps({'dim': 256, 'vectors': [list(served)] * len(texts)}).encode('utf-8'))

    monkeypatch.setattr('urllib.request.urlopen', serve)
    assert np.array_equal(remote.embed('sofa'), served)
    assert remote.fallbacks == 1

    def wrong_dim(req, timeout=None):
        return _Response(json.dumps({'dim': 8, 'vectors': [[1.0] + [0.0] * 7]}).encode('utf-8'))

    monkeypatch.setattr('urllib.request.urlopen', wrong_dim)
    assert np.array_equal(remote.embed('sofa'), local.embed('sofa'))
    assert remote.fallbacks == 2
