import hashlib
import logging
import math
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np
from scipy.special import expit, softmax

from .tokenizer import Tokenizer

__all__ = ['ModelConfig', 'TinyTransformer', 'build_model', 'ModelMismatchError', 'rope']

logger = logging.getLogger(__name__)


class ModelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 8
    num_heads: int = 4
    model_dim: int = 128
    vocab_size: int = 4096
    rope_base: float = 10000.0
    seed: int = 0
    mlp_ratio: int = 4

    def __post_init__(self):
        for name in ('num_layers', 'num_heads', 'model_dim', 'vocab_size', 'mlp_ratio'):
            if getattr(self, name) < 1:
                raise ValueError('%s must be at least 1' % name)
        if self.model_dim % self.num_heads:
            raise ValueError('model_dim %d is not divisible by num_heads %d' % (self.model_dim, self.num_heads))
        if self.head_dim % 2:
            raise ValueError('head_dim must be even for rotary embedding, got %d' % self.head_dim)
        if self.rope_base <= 0:
            raise ValueError('rope_base must be positive')

    @property
    def head_dim(self):
        return self.model_dim // self.num_heads

    def to_dict(self):
        return asdict(self)

    @property
    def fingerprint(self):
        text = repr(sorted(asdict(self).items())).encode('ascii')
        return hashlib.blake2b(text, digest_size=8).hexdigest()


def rope(x, positions, base):
    """Rotate the two halves of the last axis of x by position-dependent angles.

    x has shape (..., S, hd); positions has shape (S,).
    """
    hd = x.shape[-1]
    half = hd // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) * 2.0 / hd)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def _rmsnorm(x, weight, eps=1e-6):
    x = x.astype(np.float64)
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps) * weight


class TinyTransformer:
    '''
    Seeded, untrained decoder-only transformer with rotary positions, RMS norm and a SiLU MLP.

    Weights are stored as float32 and generated from a Gaussian (std 0.02) driven by the
    config seed. Products accumulate in float64 and every tensor that outlives a layer
    (residual stream, cached keys and values) is rounded to float32, so the same row gives
    the same bits whether it is computed alone, in a longer sequence, or against cached keys.

    Attributes:

        config {ModelConfig} : dimensions and seed
        tokenizer {Tokenizer} : hashing tokenizer sharing the vocabulary size and seed
        embed {ndarray} : (vocab_size, model_dim) token embedding, tied to the output head
        layers {list} : per-layer weight dictionaries

    Methods:

        forward: run layers over new tokens with optional cached keys/values and mask
        logits: project final hidden states onto the vocabulary
    '''

    def __repr__(self):
        c = self.config
        output = 'Tiny transformer\n'
        output += 'Layers = ' + str(c.num_layers) + ', heads = ' + str(c.num_heads) + '\n'
        output += 'Model dim = ' + str(c.model_dim) + ', head dim = ' + str(c.head_dim) + '\n'
        output += 'Vocabulary = ' + str(c.vocab_size) + ', seed = ' + str(c.seed) + '\n'
        output += str(self.num_parameters) + ' parameters\n'
        return output

    def __init__(self, config=None):

        self.config = config or ModelConfig()
        c = self.config
        self.tokenizer = Tokenizer(c.vocab_size, c.seed)
        rng = np.random.default_rng(c.seed)
        D, F = c.model_dim, c.model_dim * c.mlp_ratio

        def gauss(*shape):
            return (0.02 * rng.standard_normal(shape)).astype(np.float32)

        self.embed = gauss(c.vocab_size, D)
        self.layers = []
        for _ in range(c.num_layers):
            self.layers.append({
                'attn_norm': np.ones(D, dtype=np.float32),
                'wq': gauss(D, D), 'wk': gauss(D, D), 'wv': gauss(D, D), 'wo': gauss(D, D),
                'mlp_norm': np.ones(D, dtype=np.float32),
                'w1': gauss(D, F), 'w2': gauss(F, D),
            })
        self.final_norm = np.ones(D, dtype=np.float32)
        self.scale = 1.0 / math.sqrt(c.head_dim)

    @property
    def fingerprint(self):
        return self.config.fingerprint

    @property
    def num_parameters(self):
        n = self.embed.size + self.final_norm.size
        for layer in self.layers:
            n += sum(w.size for w in layer.values())
        return n

    def tokenize(self, text):
        return self.tokenizer.tokenize(text)

    def _split_heads(self, x):
        S = x.shape[0]
        c = self.config
        return x.reshape(S, c.num_heads, c.head_dim).transpose(1, 0, 2)

    def forward(self, tokens, positions, past=None, mask=None, num_layers=None, keep_probs=False):
        '''
        Run the first num_layers layers over new tokens.

        Parameters
        ----------
        tokens : int array (S,)
        positions : rotary positions of the new tokens (S,)
        past : optional list over layers of (keys, values), each (H, P, hd) float32, already
            rotated; the new tokens attend to all of them unless mask says otherwise
        mask : optional bool array (S, P + S), True where attention is allowed. Defaults to
            all past keys plus causal attention among the new tokens.
        num_layers : number of layers to run (default all)
        keep_probs : also return the post-softmax attention of each layer, (H, S, P + S)

        Returns
        -------
        hidden : (S, D) float32 output of the last layer run
        new_kv : list over layers of (keys, values), each (H, S, hd) float32
        probs : list over layers (only when keep_probs)
        '''
        c = self.config
        L = c.num_layers if num_layers is None else num_layers
        if not 1 <= L <= c.num_layers:
            raise ValueError('num_layers must be in [1, %d], got %d' % (c.num_layers, L))
        tokens = np.asarray(tokens, dtype=np.int64)
        positions = np.asarray(positions, dtype=np.int64)
        S = tokens.shape[0]
        if positions.shape != (S,):
            raise ValueError('positions must have shape (%d,)' % S)
        if past is not None and len(past) < L:
            raise ValueError('cached keys cover %d layers, %d requested' % (len(past), L))
        P = 0 if past is None else past[0][0].shape[1]
        if mask is None:
            mask = np.ones((S, P + S), dtype=bool)
            mask[:, P:] = np.tril(np.ones((S, S), dtype=bool))
        elif mask.shape != (S, P + S):
            raise ValueError('mask must have shape (%d, %d), got %s' % (S, P + S, mask.shape))

        x = self.embed[tokens]
        new_kv, probs = [], []
        for l in range(L):
            w = self.layers[l]
            h = _rmsnorm(x, w['attn_norm'])
            q = rope(self._split_heads(h @ w['wq']), positions, c.rope_base)
            k = rope(self._split_heads(h @ w['wk']), positions, c.rope_base).astype(np.float32)
            v = self._split_heads(h @ w['wv']).astype(np.float32)
            new_kv.append((k, v))
            if P:
                keys = np.concatenate([past[l][0], k], axis=1)
                values = np.concatenate([past[l][1], v], axis=1)
            else:
                keys, values = k, v
            scores = (q @ keys.astype(np.float64).transpose(0, 2, 1)) * self.scale
            scores = np.where(mask[None, :, :], scores, -np.inf)
            p = softmax(scores, axis=-1)
            if keep_probs:
                probs.append(p)
            attn = (p @ values.astype(np.float64)).transpose(1, 0, 2).reshape(S, c.model_dim)
            x = (x + attn @ w['wo']).astype(np.float32)
            h = _rmsnorm(x, w['mlp_norm'])
            u = h @ w['w1']
            x = (x + (u * expit(u)) @ w['w2']).astype(np.float32)
        if keep_probs:
            return x, new_kv, probs
        return x, new_kv

    def logits(self, hidden):
        h = _rmsnorm(hidden, self.final_norm)
        return (h @ self.embed.T.astype(np.float64)).astype(np.float32)


@lru_cache(maxsize=8)
def build_model(config=None):
    """Shared model instance per config; weights are read-only after construction."""
    model = TinyTransformer(config)
    logger.info('built model %s (%d parameters)', model.fingerprint, model.num_parameters)
    return model
