"""Monolithic masked forward used as the oracle for discrete attention."""

import numpy as np

__all__ = ['block_causal_mask', 'reference_forward']


def block_causal_mask(lengths, suffix_len):
    """Mask over concatenated groups then suffix.

    Group tokens see earlier tokens of their own group only; suffix tokens see every
    group token and the causal prefix of the suffix.
    """
    total = sum(lengths) + suffix_len
    mask = np.zeros((total, total), dtype=bool)
    start = 0
    for n in lengths:
        mask[start:start + n, start:start + n] = np.tril(np.ones((n, n), dtype=bool))
        start += n
    mask[start:, :start] = True
    mask[start:, start:] = np.tril(np.ones((suffix_len, suffix_len), dtype=bool))
    return mask


def reference_forward(model, groups, suffix, start=None, num_layers=None, keep_probs=False):
    '''
    Forward over the concatenation of every group and the suffix in one pass.

    Parameters
    ----------
    groups : list of (TokenSeq, position_offset)
    suffix : TokenSeq
    start : first suffix position, default max(offset + T) over groups

    Returns
    -------
    logits of the suffix rows (only when all layers run), and the per-layer attention
    probabilities when keep_probs is set
    '''
    lengths = [len(seq) for seq, _ in groups]
    if start is None:
        start = max((off + n for (_, off), n in zip(groups, lengths)), default=0)
    tokens = np.concatenate([seq.as_array() for seq, _ in groups] + [suffix.as_array()]).astype(np.int64)
    positions = np.concatenate([off + np.arange(n) for (_, off), n in zip(groups, lengths)]
                               + [start + np.arange(len(suffix))]).astype(np.int64)
    mask = block_causal_mask(lengths, len(suffix))
    out = model.forward(tokens, positions, mask=mask, num_layers=num_layers, keep_probs=keep_probs)
    hidden = out[0][sum(lengths):]
    logits = model.logits(hidden) if num_layers in (None, model.config.num_layers) else None
    if keep_probs:
        return logits, out[2]
    return logits
