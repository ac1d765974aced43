"""Group KV computation and discrete attention over independently cached groups."""

import logging

import numpy as np
from scipy.special import log_softmax

from .kvblock import KVBlock
from .model import ModelMismatchError
from .tokenizer import TokenSeq

__all__ = ['compute_group_kv', 'extend_group_kv', 'attend_discrete', 'partial_forward_attention',
           'score_candidates', 'suffix_start', 'stack_blocks', 'layers_for_fraction']

logger = logging.getLogger(__name__)


def _check_block(model, block):
    c = model.config
    if block.model_fingerprint is not None and block.model_fingerprint != model.fingerprint:
        raise ModelMismatchError('block of group %d was computed by model %s, not %s'
                                 % (block.group_id, block.model_fingerprint, model.fingerprint))
    if (block.num_heads, block.head_dim) != (c.num_heads, c.head_dim):
        raise ModelMismatchError('block of group %d has %d heads of dim %d, model has %d of dim %d'
                                 % (block.group_id, block.num_heads, block.head_dim, c.num_heads, c.head_dim))


def layers_for_fraction(model, fraction):
    """ceil(fraction * L), at least one layer."""
    return max(1, min(model.config.num_layers, int(np.ceil(fraction * model.config.num_layers - 1e-9))))


def suffix_start(blocks):
    """First rotary position after every block: max of offset + T, 0 with no blocks."""
    return max((b.end_position for b in blocks), default=0)


def stack_blocks(model, blocks, num_layers=None):
    """Concatenate blocks along the token axis into per-layer (keys, values) past."""
    if not blocks:
        return None
    ids = [b.group_id for b in blocks]
    if len(set(ids)) != len(ids):
        raise ValueError('blocks must have distinct group ids, got %s' % ids)
    for b in blocks:
        _check_block(model, b)
    L = model.config.num_layers if num_layers is None else num_layers
    short = [b.group_id for b in blocks if b.num_layers < L]
    if short:
        raise ValueError('blocks %s hold fewer than %d layers' % (short, L))
    return [(np.concatenate([b.keys[l] for b in blocks], axis=1),
             np.concatenate([b.values[l] for b in blocks], axis=1)) for l in range(L)]


def compute_group_kv(model, seq, position_offset=0, group_id=0):
    """All-layer keys and values of seq alone, at rotary positions offset, offset + 1, ..."""
    if position_offset < 0:
        raise ValueError('position_offset must be non-negative')
    c = model.config
    if len(seq) == 0:
        return KVBlock.empty(group_id, c.num_layers, c.num_heads, c.head_dim, position_offset, model.fingerprint)
    positions = position_offset + np.arange(len(seq))
    _, kv = model.forward(seq.as_array(), positions)
    return KVBlock.from_layers(group_id, kv, position_offset, model.fingerprint)


def extend_group_kv(model, block, new_tokens):
    """Append rows for new_tokens, attending to the cached rows; the old rows are reused as is."""
    _check_block(model, block)
    if block.num_layers != model.config.num_layers:
        raise ModelMismatchError('block of group %d holds %d layers, model has %d'
                                 % (block.group_id, block.num_layers, model.config.num_layers))
    if len(new_tokens) == 0:
        return block
    positions = block.end_position + np.arange(len(new_tokens))
    past = block.layer_kv() if block.token_count else None
    _, kv = model.forward(new_tokens.as_array(), positions, past=past)
    delta = KVBlock.from_layers(block.group_id, kv, block.end_position, model.fingerprint)
    return block.append(delta)


def attend_discrete(model, blocks, suffix, start=None):
    '''
    Final-layer logits for suffix, attending to every cached block plus earlier suffix tokens.

    Cached rows never see each other across blocks: their keys and values are used exactly as
    cached. Suffix positions start at suffix_start(blocks) unless start is given, which must
    not be smaller.
    '''
    if len(suffix) == 0:
        raise ValueError('empty suffix')
    lo = suffix_start(blocks)
    if start is None:
        start = lo
    elif start < lo:
        raise ValueError('suffix start %d overlaps cached positions ending at %d' % (start, lo))
    past = stack_blocks(model, blocks)
    hidden, _ = model.forward(suffix.as_array(), start + np.arange(len(suffix)), past=past)
    return model.logits(hidden)


def partial_forward_attention(model, blocks, query, layers_used):
    '''
    Mean attention mass the query places on each block over the first layers_used layers.

    For every (query token, head, layer) the masses on all blocks plus the query's own tokens
    sum to one; the returned per-block value is the average over query tokens, heads and
    layers. Blocks need only hold their first layers_used layers.
    '''
    c = model.config
    if not 1 <= layers_used <= c.num_layers:
        raise ValueError('layers_used must be in [1, %d], got %d' % (c.num_layers, layers_used))
    if not blocks:
        return np.zeros(0)
    if len(query) == 0:
        raise ValueError('empty query')
    past = stack_blocks(model, blocks, num_layers=layers_used)
    positions = suffix_start(blocks) + np.arange(len(query))
    _, _, probs = model.forward(query.as_array(), positions, past=past, num_layers=layers_used,
                                keep_probs=True)
    probs = np.stack(probs)                     # (layers, H, S, P + S)
    bounds = np.cumsum([0] + [b.token_count for b in blocks])
    scores = np.array([probs[..., bounds[i]:bounds[i + 1]].sum(axis=-1).mean() for i in range(len(blocks))])
    return scores


def score_candidates(model, blocks, prompt_suffix, candidates):
    '''
    Summed next-token log-likelihood of each candidate text after prompt_suffix.

    The suffix is run once against the cached blocks; each candidate then runs against the
    blocks plus the suffix keys, so candidates never see each other.
    '''
    if len(prompt_suffix) == 0:
        raise ValueError('empty prompt suffix')
    cand_seqs = []
    for text in candidates:
        seq = model.tokenize(text) if isinstance(text, str) else text
        if len(seq) == 0:
            raise ValueError('empty candidate %r' % (text,))
        cand_seqs.append(seq)
    past = stack_blocks(model, blocks)
    start = suffix_start(blocks)
    S = len(prompt_suffix)
    hidden, suffix_kv = model.forward(prompt_suffix.as_array(), start + np.arange(S), past=past)
    first = log_softmax(model.logits(hidden[-1:]).astype(np.float64), axis=-1)[0]
    if past is None:
        ctx = suffix_kv
    else:
        ctx = [(np.concatenate([pk, sk], axis=1), np.concatenate([pv, sv], axis=1))
               for (pk, pv), (sk, sv) in zip(past, suffix_kv)]
    scores = []
    for seq in cand_seqs:
        toks = seq.as_array()
        total = first[toks[0]]
        if len(toks) > 1:
            h, _ = model.forward(toks[:-1], start + S + np.arange(len(toks) - 1), past=ctx)
            lp = log_softmax(model.logits(h).astype(np.float64), axis=-1)
            total += lp[np.arange(len(toks) - 1), toks[1:]].sum()
        scores.append(float(total))
    return scores
