import numpy as np
import pytest
from numpy.testing import assert_allclose

from navmem.attention import (ModelConfig, TinyTransformer, TokenSeq, Tokenizer, KVBlock, ModelMismatchError,
                              attend_discrete, block_causal_mask, build_model, compute_group_kv, extend_group_kv,
                              kv_nbytes, layers_for_fraction, partial_forward_attention, reference_forward,
                              score_candidates, split_pieces, suffix_start, tokenize, detokenize)

SMALL = ModelConfig(num_layers=2, num_heads=2, model_dim=32, vocab_size=512)


@pytest.fixture(scope='module')
def model():
    return build_model(SMALL)


def random_seq(rng, n, vocab):
    return TokenSeq(tuple(int(t) for t in rng.integers(0, vocab, size=n)))


def test_split_pieces():
    assert split_pieces('object: sofa,') == ['object', ':', 'sofa', ',']
    assert split_pieces('{object: tv, position:(1,22,3)}') == \
        ['{', 'object', ':', 'tv', ',', 'position', ':', '(', '1', ',', '22', ',', '3', ')', '}']


def test_joined_and_split_sequences_detokenize_to_their_tokens():
    a, b = tokenize('object'), tokenize('sofa')
    joined = a + b
    assert tokenize(detokenize(joined)).tokens == joined.tokens
    seq = tokenize('Object Group 2: {object: sofa, position:(1,2,0)}')
    for index in (0, 3, len(seq)):
        head, rest = seq.split(index)
        assert head.tokens + rest.tokens == seq.tokens
        assert tokenize(detokenize(head)).tokens == head.tokens
        assert tokenize(detokenize(rest)).tokens == rest.tokens


def test_tokenizer_is_deterministic():
    a, b = Tokenizer(512, 3), Tokenizer(512, 3)
    text = 'Object Group 1: {object: sofa, position:(1,2,3)}'
    assert a.tokenize(text).tokens == b.tokenize(text).tokens
    assert all(0 <= t < 512 for t in a.tokenize(text).tokens)
    assert Tokenizer(512, 4).tokenize(text).tokens != a.tokenize(text).tokens


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(model_dim=30, num_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(num_layers=0)
    assert ModelConfig().head_dim == 32
    assert ModelConfig().fingerprint != ModelConfig(seed=1).fingerprint


def test_single_group_matches_monolithic_forward(model):
    rng = np.random.default_rng(0)
    for _ in range(10):
        group = random_seq(rng, int(rng.integers(1, 20)), SMALL.vocab_size)
        suffix = random_seq(rng, int(rng.integers(1, 10)), SMALL.vocab_size)
        block = compute_group_kv(model, group, 0, group_id=0)
        logits = attend_discrete(model, [block], suffix)
        joined = group + suffix
        hidden, _ = model.forward(joined.as_array(), np.arange(len(joined)))
        assert_allclose(logits, model.logits(hidden[len(group):]), rtol=1e-5, atol=1e-6)


def test_groups_match_block_causal_reference(model):
    rng = np.random.default_rng(1)
    for _ in range(10):
        seqs = [random_seq(rng, int(rng.integers(1, 12)), SMALL.vocab_size) for _ in range(3)]
        suffix = random_seq(rng, 5, SMALL.vocab_size)
        blocks = [compute_group_kv(model, s, 0, group_id=i) for i, s in enumerate(seqs)]
        expected = reference_forward(model, [(s, 0) for s in seqs], suffix)
        assert_allclose(attend_discrete(model, blocks, suffix), expected, rtol=1e-5, atol=1e-6)


def test_block_order_does_not_change_logits(model):
    rng = np.random.default_rng(2)
    seqs = [random_seq(rng, n, SMALL.vocab_size) for n in (4, 9, 6)]
    blocks = [compute_group_kv(model, s, 0, group_id=i) for i, s in enumerate(seqs)]
    suffix = random_seq(rng, 7, SMALL.vocab_size)
    assert_allclose(attend_discrete(model, blocks, suffix), attend_discrete(model, blocks[::-1], suffix),
                    rtol=1e-5, atol=1e-6)


def test_extend_equals_recompute(model):
    rng = np.random.default_rng(3)
    seq = random_seq(rng, 24, SMALL.vocab_size)
    full = compute_group_kv(model, seq, 0, group_id=5)
    for split in (0, 1, 11, 23):
        head, rest = seq.split(split)
        grown = extend_group_kv(model, compute_group_kv(model, head, 0, group_id=5), rest)
        assert grown.token_count == full.token_count
        assert_allclose(grown.keys, full.keys, atol=1e-6, rtol=0)
        assert_allclose(grown.values, full.values, atol=1e-6, rtol=0)


def test_suffix_start_and_overlap(model):
    rng = np.random.default_rng(4)
    a = compute_group_kv(model, random_seq(rng, 5, SMALL.vocab_size), 0, group_id=0)
    b = compute_group_kv(model, random_seq(rng, 3, SMALL.vocab_size), 10, group_id=1)
    assert suffix_start([a, b]) == 13
    assert suffix_start([]) == 0
    suffix = random_seq(rng, 2, SMALL.vocab_size)
    with pytest.raises(ValueError):
        attend_discrete(model, [a, b], suffix, start=12)
    with pytest.raises(ValueError):
        attend_discrete(model, [a, b], TokenSeq(()))
    attend_discrete(model, [a, b], suffix, start=40)


def test_duplicate_block_ids_rejected(model):
    rng = np.random.default_rng(5)
    a = compute_group_kv(model, random_seq(rng, 3, SMALL.vocab_size), 0, group_id=0)
    with pytest.raises(ValueError):
        attend_discrete(model, [a, a], random_seq(rng, 2, SMALL.vocab_size))


def test_model_mismatch(model):
    other = build_model(ModelConfig(num_layers=2, num_heads=2, model_dim=32, vocab_size=512, seed=9))
    block = compute_group_kv(other, TokenSeq((1, 2, 3)), 0)
    with pytest.raises(ModelMismatchError):
        attend_discrete(model, [block], TokenSeq((4,)))
    deep = build_model(ModelConfig(num_layers=3, num_heads=2, model_dim=32, vocab_size=512))
    with pytest.raises(ModelMismatchError):
        extend_group_kv(deep, compute_group_kv(model, TokenSeq((1, 2)), 0), TokenSeq((3,)))


def test_partial_forward_attention_is_a_share(model):
    rng = np.random.default_rng(6)
    seqs = [random_seq(rng, n, SMALL.vocab_size) for n in (6, 2, 9)]
    blocks = [compute_group_kv(model, s, 0, group_id=i) for i, s in enumerate(seqs)]
    query = random_seq(rng, 4, SMALL.vocab_size)
    scores = partial_forward_attention(model, blocks, query, 1)
    assert scores.shape == (3,)
    assert np.all(scores >= 0) and scores.sum() < 1.0

    _, probs = reference_forward(model, [(s, 0) for s in seqs], query, num_layers=1, keep_probs=True)
    rows = probs[0][:, -len(query):, :]
    bounds = np.cumsum([0, 6, 2, 9])
    expected = [rows[..., bounds[i]:bounds[i + 1]].sum(axis=-1).mean() for i in range(3)]
    assert_allclose(scores, expected, rtol=1e-5, atol=1e-7)

    assert partial_forward_attention(model, [], query, 1).shape == (0,)
    assert layers_for_fraction(model, 0.1) == 1
    assert layers_for_fraction(build_model(ModelConfig()), 0.1) == 1
    assert layers_for_fraction(build_model(ModelConfig()), 0.5) == 4


def test_score_candidates_are_independent(model):
    rng = np.random.default_rng(7)
    blocks = [compute_group_kv(model, random_seq(rng, 6, SMALL.vocab_size), 0, group_id=0)]
    suffix = model.tokenize('Instruction: find the tv. The next subgoal is')
    cands = [' tv at position (1,2,3).', ' sofa at position (4,5,6).']
    both = score_candidates(model, blocks, suffix, cands)
    alone = [score_candidates(model, blocks, suffix, [c])[0] for c in cands]
    assert_allclose(both, alone, rtol=1e-9)
    assert all(s < 0 for s in both)
    with pytest.raises(ValueError):
        score_candidates(model, blocks, suffix, [''])


def test_block_serialization(model):
    block = compute_group_kv(model, TokenSeq((5, 6, 7, 8)), 3, group_id=42)
    data = block.to_bytes()
    assert len(data) == block.nbytes == kv_nbytes(2, 2, 4, 16)
    back = KVBlock.from_bytes(data)
    assert back.equals(block)
    assert back.position_offset == 3 and back.group_id == 42
    with pytest.raises(ValueError):
        KVBlock.from_bytes(data[:-4])


def test_block_causal_mask_shape():
    mask = block_causal_mask([2, 1], 2)
    assert mask.shape == (5, 5)
    assert not mask[2, 0] and not mask[1, 2]
    assert mask[3, :4].all() and not mask[3, 4]


def test_repr_mentions_layers():
    assert 'Layers = 2' in repr(TinyTransformer(SMALL))
