import csv
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field

from ..attention.kvblock import KVBlock, kv_nbytes

__all__ = ['KVStore', 'GroupCacheEntry', 'LoadReport', 'StoreStats', 'StepRecord', 'Tier',
           'BudgetInfeasibleError', 'UnknownGroupError', 'hit_rate']

logger = logging.getLogger(__name__)


class BudgetInfeasibleError(ValueError):
    pass


class UnknownGroupError(KeyError):
    pass


class Tier:
    DEVICE = 'device'
    BACKING = 'backing'


@dataclass
class GroupCacheEntry:
    group_id: int
    size_bytes: int
    tier: str = Tier.BACKING
    last_used_step: int = -1
    block: KVBlock = None            # held in memory only while on the device tier
    pinned_bytes: int = 0


@dataclass
class LoadReport:
    hits: int = 0
    misses: int = 0
    loaded_bytes: int = 0
    evicted: list = field(default_factory=list)


@dataclass
class StepRecord:
    step: int
    hits: int
    misses: int
    loaded_bytes: int
    device_bytes: int


@dataclass
class StoreStats:
    cumulative_loaded_bytes: int = 0
    cumulative_hits: int = 0
    cumulative_misses: int = 0
    per_step: list = field(default_factory=list)

    def copy(self):
        return StoreStats(self.cumulative_loaded_bytes, self.cumulative_hits, self.cumulative_misses,
                          list(self.per_step))

    def write_csv(self, path, comment=None):
        with open(path, 'w', newline='') as f:
            if comment:
                f.write('# ' + comment + '\n')
            w = csv.writer(f)
            w.writerow(['step', 'hits', 'misses', 'loaded_bytes', 'device_bytes'])
            for r in self.per_step:
                w.writerow([r.step, r.hits, r.misses, r.loaded_bytes, r.device_bytes])


def hit_rate(stats, window=None):
    '''
    Fraction of requested groups that were already on the device tier.

    window=None covers every recorded call, an integer n the last n calls. Returns None when
    the window holds no requests.
    '''
    records = stats.per_step if window is None else stats.per_step[-window:] if window > 0 else []
    hits = sum(r.hits for r in records)
    total = hits + sum(r.misses for r in records)
    if total == 0:
        return None
    return hits / total


class KVStore:
    '''
    Group-granular KV store with a byte-budgeted device tier over a directory of block files.

    Every group has an up-to-date backing file ``group_<id>.kv``; a device-tier entry also
    keeps its block in memory. Device usage counts the serialized size of resident blocks
    plus, when pinned_layers > 0, the first pinned_layers layers of every group, which stay
    on the device for clustering.

    Attributes:

        root {str} : backing directory
        budget_bytes {int} : device tier capacity
        pinned_layers {int} : layers of every group kept resident
        entries {dict} : group id -> GroupCacheEntry
        stats {StoreStats} : hit, miss and transfer accounting

    Methods:

        put, append: write blocks; new groups start on the backing tier
        ensure_resident: bring a request set to the device tier under the budget
        get: read a block from whichever tier holds it
    '''

    def __repr__(self):
        output = 'KV store\n'
        output += 'Backing directory ' + self.root + '\n'
        output += 'Budget = ' + str(self.budget_bytes) + ' bytes, device usage = ' + str(self.device_bytes()) + '\n'
        output += str(len(self.entries)) + ' groups, ' + str(len(self.resident_ids())) + ' resident\n'
        if self.pinned_layers:
            output += 'Pinned layers = ' + str(self.pinned_layers) + ' (' + str(self.pinned_bytes()) + ' bytes)\n'
        return output

    def __init__(self, budget_bytes, root=None, pinned_layers=0, diagnostics=()):

        if budget_bytes < 0:
            raise ValueError('budget_bytes must be non-negative')
        if pinned_layers < 0:
            raise ValueError('pinned_layers must be non-negative')
        self.budget_bytes = int(budget_bytes)
        self.pinned_layers = pinned_layers
        self.diagnostics = diagnostics
        self._tmp = None
        if root is None:
            self._tmp = tempfile.mkdtemp(prefix='navmem-kv-')
            root = self._tmp
        os.makedirs(root, exist_ok=True)
        self.root = root
        self.entries = {}
        self.stats = StoreStats()
        self._pinned = {}

    def close(self):
        if self._tmp is not None:
            shutil.rmtree(self._tmp, ignore_errors=True)
            self._tmp = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def path(self, group_id):
        return os.path.join(self.root, 'group_%d.kv' % group_id)

    def _entry(self, group_id):
        try:
            return self.entries[group_id]
        except KeyError:
            raise UnknownGroupError('unknown group id %r' % (group_id,))

    def _write(self, block):
        with open(self.path(block.group_id), 'wb') as f:
            f.write(block.to_bytes())

    def _read(self, group_id):
        with open(self.path(group_id), 'rb') as f:
            return KVBlock.from_bytes(f.read())

    def __contains__(self, group_id):
        return group_id in self.entries

    def resident_ids(self):
        return [gid for gid, e in self.entries.items() if e.tier == Tier.DEVICE]

    def pinned_bytes(self):
        return sum(e.pinned_bytes for e in self.entries.values())

    def device_bytes(self):
        return self.pinned_bytes() + sum(e.size_bytes for e in self.entries.values() if e.tier == Tier.DEVICE)

    def available_budget(self):
        """Bytes left for whole groups once pinned layers are accounted."""
        return max(0, self.budget_bytes - self.pinned_bytes())

    def size_of(self, group_id):
        return self._entry(group_id).size_bytes

    def _pinned_size(self, block):
        k = min(self.pinned_layers, block.num_layers)
        return kv_nbytes(k, block.num_heads, block.token_count, block.head_dim)

    def _check_pinned(self, group_id, block):
        """Raise before anything is written when the block's pinned layers would overflow the budget."""
        if not self.pinned_layers:
            return
        entry = self.entries.get(group_id)
        total = self.pinned_bytes() - (entry.pinned_bytes if entry is not None else 0) + self._pinned_size(block)
        if total > self.budget_bytes:
            raise BudgetInfeasibleError('pinned layers need %d bytes, budget is %d' % (total, self.budget_bytes))

    def _set_pinned(self, entry, block):
        if not self.pinned_layers:
            return
        self._pinned[entry.group_id] = block.head_layers(min(self.pinned_layers, block.num_layers))
        entry.pinned_bytes = self._pinned_size(block)

    def pinned_block(self, group_id):
        """First pinned_layers layers of a group, served from the device tier."""
        self._entry(group_id)
        if not self.pinned_layers:
            raise ValueError('store keeps no pinned layers')
        return self._pinned[group_id]

    def put(self, group_id, block):
        if block.group_id != group_id:
            block = KVBlock(group_id, block.keys, block.values, block.position_offset, block.model_fingerprint)
        self._check_pinned(group_id, block)
        self._write(block)
        entry = self.entries.get(group_id)
        if entry is None:
            entry = GroupCacheEntry(group_id, block.nbytes)
            self.entries[group_id] = entry
        else:
            entry.size_bytes = block.nbytes
            if entry.tier == Tier.DEVICE:
                entry.block = block
        self._set_pinned(entry, block)
        if entry.tier == Tier.DEVICE:
            self._fit(protect={group_id})

    def append(self, group_id, delta):
        entry = self._entry(group_id)
        if delta.token_count == 0:
            return
        if entry.tier == Tier.DEVICE:
            block = entry.block.append(delta)
        else:
            block = self._read(group_id).append(delta)
        block.model_fingerprint = delta.model_fingerprint
        self._check_pinned(group_id, block)
        self._write(block)
        entry.size_bytes = block.nbytes
        if entry.tier == Tier.DEVICE:
            entry.block = block
        self._set_pinned(entry, block)
        self._fit(protect={group_id})

    def get(self, group_id):
        entry = self._entry(group_id)
        if entry.tier == Tier.DEVICE:
            return entry.block
        return self._read(group_id)

    def _demote(self, entry):
        entry.tier = Tier.BACKING
        entry.block = None

    def _lru_order(self, exclude):
        resident = [e for e in self.entries.values() if e.tier == Tier.DEVICE and e.group_id not in exclude]
        return sorted(resident, key=lambda e: (e.last_used_step, e.group_id))

    def _fit(self, protect):
        evicted = []
        for victim in self._lru_order(protect):
            if self.device_bytes() <= self.budget_bytes:
                break
            self._demote(victim)
            evicted.append(victim.group_id)
        if self.device_bytes() > self.budget_bytes:
            # a single grown group larger than the whole budget leaves the device tier
            for gid in sorted(protect):
                entry = self.entries[gid]
                if entry.tier == Tier.DEVICE:
                    logger.warning('group %d (%d bytes) no longer fits the %d byte budget; demoted',
                                   gid, entry.size_bytes, self.budget_bytes)
                    self._demote(entry)
                    evicted.append(gid)
        if evicted and 'show cache' in self.diagnostics:
            logger.info('evicted groups %s', evicted)
        return evicted

    def ensure_resident(self, requested, step, budget_bytes=None):
        '''
        Bring every requested group onto the device tier.

        Hits are requested groups already resident; misses are read from their backing files.
        Eviction considers only resident groups outside the request, least recently used first
        (ties by group id). The request must fit the budget on its own; a budget_bytes above the
        store's own budget is capped to it.
        '''
        budget = self.budget_bytes if budget_bytes is None else min(budget_bytes, self.budget_bytes)
        requested = list(dict.fromkeys(requested))
        entries = [self._entry(gid) for gid in requested]
        need = self.pinned_bytes() + sum(e.size_bytes for e in entries)
        if need > budget:
            raise BudgetInfeasibleError('request %s needs %d bytes, budget is %d' % (requested, need, budget))

        report = LoadReport()
        misses = [e for e in entries if e.tier != Tier.DEVICE]
        report.hits = len(entries) - len(misses)
        report.misses = len(misses)
        incoming = sum(e.size_bytes for e in misses)
        for victim in self._lru_order(set(requested)):
            if self.device_bytes() + incoming <= budget:
                break
            self._demote(victim)
            report.evicted.append(victim.group_id)
        for e in misses:
            e.block = self._read(e.group_id)
            e.tier = Tier.DEVICE
            report.loaded_bytes += e.size_bytes
        for e in entries:
            e.last_used_step = step

        self.stats.cumulative_hits += report.hits
        self.stats.cumulative_misses += report.misses
        self.stats.cumulative_loaded_bytes += report.loaded_bytes
        self.stats.per_step.append(StepRecord(step, report.hits, report.misses, report.loaded_bytes,
                                              self.device_bytes()))
        if 'show cache' in self.diagnostics:
            logger.info('step %d: hits %d, misses %d, loaded %d bytes, evicted %s, device %d/%d bytes',
                        step, report.hits, report.misses, report.loaded_bytes, report.evicted,
                        self.device_bytes(), budget)
        return report
