import hashlib
import re
import struct
from dataclasses import dataclass

import numpy as np

__all__ = ['TokenSeq', 'Tokenizer', 'tokenize', 'detokenize', 'count_tokens', 'split_pieces']

_PIECE = re.compile(r'\w+|[^\w\s]')


def split_pieces(text):
    """Words and single punctuation marks; whitespace separates and is dropped."""
    return _PIECE.findall(text)


def count_tokens(text):
    return len(split_pieces(text))


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple
    source_text: str = ''

    def __len__(self):
        return len(self.tokens)

    def __add__(self, other):
        text = ' '.join(t for t in (self.source_text, other.source_text) if t)
        return TokenSeq(self.tokens + other.tokens, text)

    def as_array(self):
        return np.asarray(self.tokens, dtype=np.int64)

    def split(self, index):
        '''
        Token-level split. Each half keeps the text of its pieces, space-joined, which
        tokenizes back to the same ids; a sequence built without text stays without.
        '''
        pieces = split_pieces(self.source_text)
        if len(pieces) != len(self.tokens):
            return TokenSeq(self.tokens[:index]), TokenSeq(self.tokens[index:])
        return (TokenSeq(self.tokens[:index], ' '.join(pieces[:index])),
                TokenSeq(self.tokens[index:], ' '.join(pieces[index:])))


class Tokenizer:
    '''
    Maps each piece to a vocabulary id with a keyed blake2b hash, so ids depend only on the
    piece, the vocabulary size and the seed.
    '''

    def __repr__(self):
        return 'Tokenizer (vocab_size = ' + str(self.vocab_size) + ', seed = ' + str(self.seed) + ')\n'

    def __init__(self, vocab_size=4096, seed=0):
        if vocab_size < 1:
            raise ValueError('vocab_size must be positive')
        self.vocab_size = vocab_size
        self.seed = seed
        self._key = struct.pack('<Q', seed & 0xFFFFFFFFFFFFFFFF)
        self._memo = {}

    def piece_id(self, piece):
        tok = self._memo.get(piece)
        if tok is None:
            digest = hashlib.blake2b(piece.encode('utf-8'), digest_size=8, key=self._key).digest()
            tok = int.from_bytes(digest, 'little') % self.vocab_size
            self._memo[piece] = tok
        return tok

    def tokenize(self, text):
        return TokenSeq(tuple(self.piece_id(p) for p in split_pieces(text)), text)

    def detokenize(self, seq):
        return seq.source_text


_default = Tokenizer()


def tokenize(text, tokenizer=None):
    return (tokenizer or _default).tokenize(text)


def detokenize(seq):
    return seq.source_text
