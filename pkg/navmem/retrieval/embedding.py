"""Embedding providers.

Every provider maps text to a unit-length float64 vector of fixed dimension and is
deterministic. The hashed providers need no model weights; RemoteEmbedding talks to an
external service and falls back to a local provider when the service misbehaves.
"""

import hashlib
import json
import logging
import re
import struct
import urllib.error
import urllib.request

import numpy as np

from ..data import load_themes

__all__ = ['EmbeddingProvider', 'HashedTrigramEmbedding', 'HashedWordEmbedding', 'RemoteEmbedding',
           'EmbeddingCache', 'concept_vectors', 'default_lexicon', 'make_provider', 'cosine']

logger = logging.getLogger(__name__)

_WORD = re.compile(r'\w+')


def cosine(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _hash(text, seed):
    key = struct.pack('<Q', seed & 0xFFFFFFFFFFFFFFFF)
    return int.from_bytes(hashlib.blake2b(text.encode('utf-8'), digest_size=8, key=key).digest(), 'little')


def default_lexicon(themes=None):
    """Word -> theme map from the shipped vocabularies."""
    themes = load_themes() if themes is None else themes
    return {label.lower(): theme for theme, labels in themes.items() for label in labels}


def concept_vectors(themes, dim, seed):
    """One orthonormal direction per theme, in sorted theme order."""
    names = sorted(set(themes))
    if len(names) > dim:
        raise ValueError('%d themes do not fit in dimension %d' % (len(names), dim))
    rng = np.random.default_rng(_hash('concepts', seed))
    q, _ = np.linalg.qr(rng.standard_normal((dim, len(names))))
    return {name: q[:, i] for i, name in enumerate(names)}


class EmbeddingProvider:

    name = 'provider'
    dim = 0

    def embed(self, text):
        raise NotImplementedError

    def embed_many(self, texts):
        return np.stack([self.embed(t) for t in texts]) if texts else np.zeros((0, self.dim))


class _HashedEmbedding(EmbeddingProvider):

    def __repr__(self):
        output = self.__class__.__name__ + ' (dim = ' + str(self.dim) + ', seed = ' + str(self.seed) + ')\n'
        if self.lexicon:
            output += str(len(self.lexicon)) + ' lexicon words over ' + str(len(self.concepts)) + ' themes, '
            output += 'concept weight = ' + str(self.concept_weight) + '\n'
        return output

    def __init__(self, dim=256, seed=0, lexicon='default', concept_weight=2.0):
        if dim < 2:
            raise ValueError('dim must be at least 2')
        self.dim = dim
        self.seed = seed
        self.lexicon = default_lexicon() if lexicon == 'default' else dict(lexicon or {})
        self.concept_weight = concept_weight
        self.concepts = concept_vectors(self.lexicon.values(), dim, seed) if self.lexicon else {}

    def _features(self, word):
        raise NotImplementedError

    def embed(self, text):
        text = text.strip().lower()
        if not text:
            raise ValueError('cannot embed empty text')
        words = _WORD.findall(text) or [text]
        v = np.zeros(self.dim)
        for word in words:
            for feature in self._features(word):
                h = _hash(feature, self.seed)
                v[h % self.dim] += 1.0 if (h >> 32) & 1 else -1.0
            theme = self.lexicon.get(word)
            if theme is not None:
                v += self.concept_weight * self.concepts[theme]
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError('text %r hashed to a zero vector' % text)
        return v / norm


class HashedTrigramEmbedding(_HashedEmbedding):
    '''
    Signed hashing of character trigrams of each word padded with ^ and $, plus one concept
    direction per lexicon theme for every lexicon word. Disjoint vocabularies land near
    orthogonal; words of one theme share the concept direction.
    '''

    name = 'trigram'

    def _features(self, word):
        padded = '^' + word + '$'
        return [padded[i:i + 3] for i in range(len(padded) - 2)]


class HashedWordEmbedding(_HashedEmbedding):
    """Whole-word signed hashing with the same concept channel; no sub-word sharing."""

    name = 'word'

    def _features(self, word):
        return ['w:' + word]


class RemoteEmbedding(EmbeddingProvider):
    '''
    Client for an embedding service: POST <endpoint>/embed with {"texts": [...]}, answered by
    {"vectors": [[...], ...], "dim": E}. Responses with the wrong dimension, count or norm,
    timeouts and transport errors fall back to the local provider for that call.
    '''

    name = 'remote'

    def __repr__(self):
        return ('Remote embedding at ' + self.endpoint + ' (dim = ' + str(self.dim) + ', timeout = '
                + str(self.timeout) + ' s, fallbacks = ' + str(self.fallbacks) + ')\n')

    def __init__(self, endpoint, fallback=None, timeout=2.0, norm_tol=1e-4):
        self.endpoint = endpoint.rstrip('/')
        self.fallback = fallback or HashedTrigramEmbedding()
        self.dim = self.fallback.dim
        self.timeout = timeout
        self.norm_tol = norm_tol
        self.fallbacks = 0

    def _request(self, texts):
        body = json.dumps({'texts': list(texts)}).encode('utf-8')
        req = urllib.request.Request(self.endpoint + '/embed', data=body,
                                     headers={'Content-Type': 'application/json'}, method='POST')
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode('utf-8'))
        if payload.get('dim') != self.dim:
            raise ValueError('service dimension %r, expected %d' % (payload.get('dim'), self.dim))
        vectors = np.asarray(payload.get('vectors'), dtype=np.float64)
        if vectors.shape != (len(texts), self.dim):
            raise ValueError('service returned vectors of shape %s for %d texts' % (vectors.shape, len(texts)))
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > self.norm_tol):
            raise ValueError('service returned non-unit vectors')
        return vectors / norms[:, None]

    def embed_many(self, texts):
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dim))
        for t in texts:
            if not t.strip():
                raise ValueError('cannot embed empty text')
        try:
            return self._request(texts)
        except (urllib.error.URLError, OSError, ValueError, KeyError, TypeError) as e:
            self.fallbacks += 1
            logger.warning('embedding service %s failed (%s); using %s', self.endpoint, e, self.fallback.name)
            return self.fallback.embed_many(texts)

    def embed(self, text):
        return self.embed_many([text])[0]


def make_provider(name='trigram', endpoint=None, dim=256, seed=0):
    if endpoint:
        return RemoteEmbedding(endpoint, fallback=make_provider(name, None, dim, seed))
    if name == 'trigram':
        return HashedTrigramEmbedding(dim, seed)
    if name == 'trigram-plain':
        return HashedTrigramEmbedding(dim, seed, lexicon=None)
    if name == 'word':
        return HashedWordEmbedding(dim, seed)
    raise ValueError('unknown embedding provider %r' % name)


class EmbeddingCache:
    '''
    Embeddings keyed by text, with per-group bookkeeping so only groups whose text changed
    are sent to the provider again.

    Attributes:

        calls {int} : provider invocations so far
        groups {dict} : group id -> (text, vector or None for empty text)
    '''

    def __repr__(self):
        return ('Embedding cache: ' + str(len(self.groups)) + ' groups, ' + str(len(self.texts))
                + ' texts, ' + str(self.calls) + ' provider calls\n')

    def __init__(self, provider):
        self.provider = provider
        self.calls = 0
        self.groups = {}
        self.texts = {}

    def text_vector(self, text):
        v = self.texts.get(text)
        if v is None:
            v = self.provider.embed(text)
            self.calls += 1
            self.texts[text] = v
        return v

    def group_vector(self, group_id, text, force=False):
        cached = self.groups.get(group_id)
        if cached is not None and cached[0] == text and not force:
            return cached[1]
        if not text.strip():
            v = None
        else:
            v = self.provider.embed(text)
            self.calls += 1
        self.groups[group_id] = (text, v)
        return v
