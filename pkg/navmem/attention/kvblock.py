"""Per-group key/value tensors and their on-disk layout.

Layout (little endian): header ``<QIIIII`` holding group_id, L, H, head_dim, T and
position_offset, then keys then values, each (L, H, T, head_dim) float32 in C order.
"""

import struct
from dataclasses import dataclass

import numpy as np

__all__ = ['KVBlock', 'kv_nbytes', 'HEADER', 'HEADER_BYTES']

HEADER = struct.Struct('<QIIIII')
HEADER_BYTES = HEADER.size


def kv_nbytes(num_layers, num_heads, token_count, head_dim):
    """Serialized size of a block, header included."""
    return HEADER_BYTES + 2 * num_layers * num_heads * token_count * head_dim * 4


@dataclass(eq=False)
class KVBlock:
    group_id: int
    keys: np.ndarray
    values: np.ndarray
    position_offset: int = 0
    model_fingerprint: str = None

    def __post_init__(self):
        self.keys = np.ascontiguousarray(self.keys, dtype=np.float32)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.keys.ndim != 4 or self.keys.shape != self.values.shape:
            raise ValueError('keys and values must share an (L, H, T, head_dim) shape, got %s and %s'
                             % (self.keys.shape, self.values.shape))
        if self.position_offset < 0:
            raise ValueError('position_offset must be non-negative')

    def __repr__(self):
        L, H, T, hd = self.keys.shape
        return ('KVBlock(group_id=%d, L=%d, H=%d, T=%d, head_dim=%d, offset=%d)'
                % (self.group_id, L, H, T, hd, self.position_offset))

    @property
    def num_layers(self):
        return self.keys.shape[0]

    @property
    def num_heads(self):
        return self.keys.shape[1]

    @property
    def token_count(self):
        return self.keys.shape[2]

    @property
    def head_dim(self):
        return self.keys.shape[3]

    @property
    def end_position(self):
        return self.position_offset + self.token_count

    @property
    def nbytes(self):
        return kv_nbytes(self.num_layers, self.num_heads, self.token_count, self.head_dim)

    @classmethod
    def empty(cls, group_id, num_layers, num_heads, head_dim, position_offset=0, model_fingerprint=None):
        shape = (num_layers, num_heads, 0, head_dim)
        return cls(group_id, np.zeros(shape, np.float32), np.zeros(shape, np.float32),
                   position_offset, model_fingerprint)

    @classmethod
    def from_layers(cls, group_id, kv, position_offset=0, model_fingerprint=None):
        """Stack a per-layer list of (keys, values), each (H, T, hd)."""
        keys = np.stack([k for k, _ in kv])
        values = np.stack([v for _, v in kv])
        return cls(group_id, keys, values, position_offset, model_fingerprint)

    def layer_kv(self, num_layers=None):
        L = self.num_layers if num_layers is None else num_layers
        return [(self.keys[l], self.values[l]) for l in range(L)]

    def head_layers(self, num_layers):
        """Block restricted to its first num_layers layers."""
        if not 1 <= num_layers <= self.num_layers:
            raise ValueError('num_layers must be in [1, %d]' % self.num_layers)
        return KVBlock(self.group_id, self.keys[:num_layers], self.values[:num_layers],
                       self.position_offset, self.model_fingerprint)

    def append(self, delta):
        """New block with delta's rows after this block's rows; both blocks are left untouched."""
        if delta.keys.shape[:2] != self.keys.shape[:2] or delta.head_dim != self.head_dim:
            raise ValueError('delta shape %s does not match block shape %s' % (delta.keys.shape, self.keys.shape))
        if delta.token_count == 0:
            return self
        return KVBlock(self.group_id,
                       np.concatenate([self.keys, delta.keys], axis=2),
                       np.concatenate([self.values, delta.values], axis=2),
                       self.position_offset, self.model_fingerprint)

    def tail(self, start):
        """Rows start..T as a block positioned where they sit in this block."""
        return KVBlock(self.group_id, self.keys[:, :, start:], self.values[:, :, start:],
                       self.position_offset + start, self.model_fingerprint)

    def to_bytes(self):
        L, H, T, hd = self.keys.shape
        header = HEADER.pack(self.group_id, L, H, hd, T, self.position_offset)
        return header + self.keys.astype('<f4').tobytes() + self.values.astype('<f4').tobytes()

    @classmethod
    def from_bytes(cls, data, model_fingerprint=None):
        if len(data) < HEADER_BYTES:
            raise ValueError('truncated KV block header')
        group_id, L, H, hd, T, offset = HEADER.unpack_from(data)
        n = L * H * T * hd
        if len(data) != kv_nbytes(L, H, T, hd):
            raise ValueError('KV block payload is %d bytes, expected %d' % (len(data), kv_nbytes(L, H, T, hd)))
        payload = np.frombuffer(data, dtype='<f4', offset=HEADER_BYTES, count=2 * n)
        keys = payload[:n].reshape(L, H, T, hd).astype(np.float32)
        values = payload[n:].reshape(L, H, T, hd).astype(np.float32)
        return cls(group_id, keys, values, offset, model_fingerprint)

    def equals(self, other):
        """Bitwise equality of tensors and header fields."""
        return (self.group_id == other.group_id and self.position_offset == other.position_offset
                and self.keys.shape == other.keys.shape
                and np.array_equal(self.keys.view(np.uint32), other.keys.view(np.uint32))
                and np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32)))
