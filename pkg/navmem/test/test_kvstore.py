import logging
import os
from collections import OrderedDict

import numpy as np
import pytest

from navmem.attention import KVBlock, kv_nbytes
from navmem.kvstore import KVStore, BudgetInfeasibleError, UnknownGroupError, Tier, hit_rate


def block(group_id, T, L=2, H=2, hd=4):
    rng = np.random.default_rng(group_id * 1000 + T)
    keys = rng.standard_normal((L, H, T, hd)).astype(np.float32)
    return KVBlock(group_id, keys, keys + 1.0)


def size(T):
    return kv_nbytes(2, 2, T, 4)


def test_new_groups_start_on_backing(tmp_path):
    store = KVStore(size(10), str(tmp_path))
    store.put(0, block(0, 5))
    assert store.entries[0].tier == Tier.BACKING
    assert store.device_bytes() == 0
    assert os.path.getsize(store.path(0)) == size(5)
    assert store.get(0).equals(block(0, 5))


def test_hits_and_misses(tmp_path):
    store = KVStore(size(10), str(tmp_path))
    store.put(0, block(0, 3))
    store.put(1, block(1, 3))
    r = store.ensure_resident([0, 1, 0], step=0)
    assert (r.hits, r.misses, r.loaded_bytes) == (0, 2, 2 * size(3))
    r = store.ensure_resident([1], step=1)
    assert (r.hits, r.misses, r.loaded_bytes) == (1, 0, 0)
    assert store.stats.cumulative_misses == 2 and store.stats.cumulative_hits == 1
    assert hit_rate(store.stats) == pytest.approx(1 / 3)
    assert hit_rate(store.stats, window=1) == 1.0


def test_lru_eviction_order(tmp_path):
    store = KVStore(2 * size(4), str(tmp_path))
    for g in range(3):
        store.put(g, block(g, 4))
    store.ensure_resident([0], 0)
    store.ensure_resident([1], 1)
    r = store.ensure_resident([2], 2)
    assert r.evicted == [0]
    assert sorted(store.resident_ids()) == [1, 2]
    r = store.ensure_resident([0], 3)
    assert r.evicted == [1]
    assert store.device_bytes() <= store.budget_bytes


def test_request_larger_than_budget(tmp_path):
    store = KVStore(size(4), str(tmp_path))
    store.put(0, block(0, 4))
    store.put(1, block(1, 4))
    with pytest.raises(BudgetInfeasibleError):
        store.ensure_resident([0, 1], 0)
    with pytest.raises(UnknownGroupError):
        store.ensure_resident([7], 0)


def test_append_updates_both_tiers(tmp_path):
    store = KVStore(size(20), str(tmp_path))
    full = block(0, 6)
    store.put(0, KVBlock(0, full.keys[:, :, :4], full.values[:, :, :4]))
    store.ensure_resident([0], 0)
    store.append(0, full.tail(4))
    assert store.size_of(0) == size(6)
    assert store.get(0).equals(full)
    assert KVBlock.from_bytes(open(store.path(0), 'rb').read()).equals(full)
    assert store.device_bytes() == size(6)


def test_append_past_budget_demotes_the_group(tmp_path, caplog):
    store = KVStore(size(5), str(tmp_path))
    store.put(0, block(0, 4))
    store.ensure_resident([0], 0)
    with caplog.at_level(logging.WARNING, logger='navmem.kvstore.store'):
        store.append(0, block(0, 3))
    assert store.entries[0].tier == Tier.BACKING
    assert store.device_bytes() == 0
    assert 'no longer fits' in caplog.text
    assert store.get(0).token_count == 7


def test_pinned_layers_reserve_budget(tmp_path):
    store = KVStore(size(20), str(tmp_path), pinned_layers=1)
    store.put(0, block(0, 5))
    assert store.pinned_bytes() == kv_nbytes(1, 2, 5, 4)
    assert store.available_budget() == size(20) - kv_nbytes(1, 2, 5, 4)
    assert store.pinned_block(0).num_layers == 1
    assert store.device_bytes() == store.pinned_bytes()


def test_demoted_group_reloads_bit_identical(tmp_path):
    store = KVStore(size(5), str(tmp_path))
    store.put(0, block(0, 5))
    store.put(1, block(1, 5))
    store.ensure_resident([0], 0)
    store.ensure_resident([1], 1)
    assert store.entries[0].tier == Tier.BACKING
    store.ensure_resident([0], 2)
    reloaded = store.get(0)
    assert store.entries[0].tier == Tier.DEVICE
    assert reloaded.equals(block(0, 5))
    assert np.array_equal(reloaded.keys, block(0, 5).keys)
    assert np.array_equal(reloaded.values, block(0, 5).values)


def test_append_evicts_another_resident_group(tmp_path):
    store = KVStore(size(10), str(tmp_path))
    store.put(0, block(0, 4))
    store.put(1, block(1, 4))
    store.ensure_resident([0, 1], 0)
    store.ensure_resident([1], 1)
    store.append(1, block(1, 3))
    assert store.entries[0].tier == Tier.BACKING
    assert store.entries[1].tier == Tier.DEVICE
    assert store.device_bytes() == size(7)
    assert store.get(1).token_count == 7


def test_budget_override_is_capped_to_store_budget(tmp_path):
    store = KVStore(size(10), str(tmp_path))
    for gid in range(3):
        store.put(gid, block(gid, 4))
    store.ensure_resident([0, 1], 0, budget_bytes=10 * size(10))
    store.ensure_resident([2], 1, budget_bytes=10 * size(10))
    assert store.device_bytes() <= size(10)
    assert store.entries[0].tier == Tier.BACKING
    with pytest.raises(BudgetInfeasibleError):
        store.ensure_resident([0, 1, 2], 2, budget_bytes=10 * size(10))
    assert store.device_bytes() <= size(10)


def test_pinned_overflow_leaves_the_store_unchanged(tmp_path):
    store = KVStore(size(10), str(tmp_path), pinned_layers=1)
    store.put(0, block(0, 8))
    with pytest.raises(BudgetInfeasibleError):
        store.put(1, block(1, 14))
    assert 1 not in store
    assert not os.path.exists(store.path(1))
    with pytest.raises(BudgetInfeasibleError):
        store.append(0, block(0, 14))
    assert store.size_of(0) == size(8)
    assert os.path.getsize(store.path(0)) == size(8)
    assert store.get(0).equals(block(0, 8))
    assert store.pinned_block(0).token_count == 8
    assert store.pinned_bytes() == kv_nbytes(1, 2, 8, 4)


def test_hit_rate_without_requests():
    store = KVStore(100)
    try:
        assert hit_rate(store.stats) is None
        assert hit_rate(store.stats, window=0) is None
    finally:
        store.close()


def test_matches_plain_lru(tmp_path):
    # equal sizes and single-group requests reduce to classic LRU with capacity k
    k, n = 3, 7
    store = KVStore(k * size(2), str(tmp_path))
    for g in range(n):
        store.put(g, block(g, 2))
    lru = OrderedDict()
    rng = np.random.default_rng(11)
    for step, g in enumerate(rng.integers(0, n, size=300)):
        g = int(g)
        expected_hit = g in lru
        if expected_hit:
            lru.move_to_end(g)
        else:
            if len(lru) == k:
                lru.popitem(last=False)
            lru[g] = True
        r = store.ensure_resident([g], step)
        assert r.hits == int(expected_hit)
        assert sorted(store.resident_ids()) == sorted(lru)


def test_stats_csv(tmp_path):
    store = KVStore(size(10), str(tmp_path / 'kv'))
    store.put(0, block(0, 2))
    store.ensure_resident([0], 0)
    path = str(tmp_path / 'stats.csv')
    store.stats.write_csv(path, comment='build=test')
    lines = open(path).read().splitlines()
    assert lines[0] == '# build=test'
    assert lines[1] == 'step,hits,misses,loaded_bytes,device_bytes'
    assert lines[2] == '0,0,1,%d,%d' % (size(2), size(2))


def test_temporary_directory_is_removed():
    with KVStore(1000) as store:
        root = store.root
        store.put(0, block(0, 1))
        assert os.path.exists(store.path(0))
    assert not os.path.exists(root)
