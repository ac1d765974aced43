import logging
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ['KnapsackInstance', 'RetrievalPlan', 'select_groups', 'knapsack_exact', 'knapsack_greedy',
           'EXACT_LIMIT']

logger = logging.getLogger(__name__)

EXACT_LIMIT = 30
_TIE = 1e-12


@dataclass
class KnapsackInstance:
    '''
    Group selection: maximize sum((P_i - threshold) x_i) subject to sum(M_i x_i) <= M.

    ids default to 0..n-1; M_list holds sizes in bytes and quantum is the size unit of the
    dynamic program.
    '''
    P: list
    threshold: float
    M_list: list
    M: int
    quantum: int = 1024
    ids: list = None

    def __post_init__(self):
        if len(self.P) != len(self.M_list):
            raise ValueError('P and M_list lengths differ (%d, %d)' % (len(self.P), len(self.M_list)))
        if self.ids is None:
            self.ids = list(range(len(self.P)))
        elif len(self.ids) != len(self.P):
            raise ValueError('ids and P lengths differ')
        if len(set(self.ids)) != len(self.ids):
            raise ValueError('ids must be distinct')
        if any(m <= 0 for m in self.M_list):
            raise ValueError('sizes must be positive')
        if self.M < 0:
            raise ValueError('budget must be non-negative')
        if self.quantum < 1:
            raise ValueError('quantum must be at least 1')

    @property
    def n(self):
        return len(self.P)

    def values(self):
        return [p - self.threshold for p in self.P]


@dataclass
class RetrievalPlan:
    selected: list = field(default_factory=list)
    objective_value: float = 0.0
    total_bytes: int = 0
    approximate: bool = False
    probabilities: dict = field(default_factory=dict)
    method: str = 'knapsack'

    def to_dict(self):
        return {'selected': list(self.selected), 'objective_value': self.objective_value,
                'total_bytes': self.total_bytes, 'approximate': self.approximate, 'method': self.method,
                'probabilities': [[gid, p] for gid, p in sorted(self.probabilities.items())]}


def knapsack_exact(values, sizes, capacity):
    '''
    0/1 knapsack over integer sizes by a suffix-table dynamic program.

    Items are taken in index order on reconstruction and an item is kept whenever keeping it
    still reaches the optimum, so among optimal sets the lexicographically smallest index set
    is returned.

    Parameters
    ----------
    values : positive floats
    sizes : positive integers
    capacity : non-negative integer

    Returns
    -------
    sorted list of chosen indices
    '''
    n = len(values)
    C = int(min(capacity, sum(sizes)))
    best = np.zeros((n + 1, C + 1))
    for i in range(n - 1, -1, -1):
        best[i] = best[i + 1]
        w = sizes[i]
        if w <= C:
            best[i, w:] = np.maximum(best[i + 1, w:], best[i + 1, :C + 1 - w] + values[i])
    chosen, c = [], C
    for i in range(n):
        w = sizes[i]
        if w <= c and values[i] + best[i + 1, c - w] >= best[i, c] - _TIE:
            chosen.append(i)
            c -= w
    return chosen


def knapsack_greedy(values, sizes, capacity):
    """Density-ordered fill followed by single-swap and fill-in improvement."""
    n = len(values)
    order = sorted(range(n), key=lambda i: (-values[i] / sizes[i], i))
    chosen, used = set(), 0
    for i in order:
        if used + sizes[i] <= capacity:
            chosen.add(i)
            used += sizes[i]
    improved = True
    while improved:
        improved = False
        for i in sorted(chosen):
            for j in range(n):
                if j in chosen:
                    continue
                if used - sizes[i] + sizes[j] <= capacity and values[j] > values[i] + _TIE:
                    chosen.remove(i)
                    chosen.add(j)
                    used += sizes[j] - sizes[i]
                    improved = True
                    break
            if improved:
                break
        for j in order:
            if j not in chosen and used + sizes[j] <= capacity:
                chosen.add(j)
                used += sizes[j]
                improved = True
    return sorted(chosen)


def select_groups(inst, exact_limit=EXACT_LIMIT):
    '''
    Solve a KnapsackInstance.

    Items with P_i <= threshold are screened out. When the positive items fit together they
    are all selected; otherwise up to exact_limit of them are solved exactly over sizes
    rounded up to the quantum (capacity rounded down), beyond that greedily with the plan
    flagged approximate.
    '''
    vals = inst.values()
    pos = sorted((i for i in range(inst.n) if vals[i] > 0), key=lambda i: inst.ids[i])
    plan = RetrievalPlan(probabilities=dict(zip(inst.ids, inst.P)))
    if not pos:
        return plan
    v = [vals[i] for i in pos]
    m = [int(inst.M_list[i]) for i in pos]
    if sum(m) <= inst.M:
        picked = list(range(len(pos)))
    elif len(pos) <= exact_limit:
        sizes = [-(-s // inst.quantum) for s in m]
        picked = knapsack_exact(v, sizes, inst.M // inst.quantum)
    else:
        picked = knapsack_greedy(v, m, inst.M)
        plan.approximate = True
        logger.debug('greedy selection over %d positive groups', len(pos))
    plan.selected = [inst.ids[pos[k]] for k in picked]
    plan.objective_value = math.fsum(v[k] for k in picked)
    plan.total_bytes = sum(m[k] for k in picked)
    return plan
