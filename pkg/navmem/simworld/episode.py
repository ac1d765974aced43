import json
import logging
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from ..attention import ModelConfig, build_model, compute_group_kv, extend_group_kv, kv_nbytes, \
    count_tokens, layers_for_fraction
from ..clustering import ClusterConfig, cluster, EmbeddingSimilarityProvider, TinyTransformerProvider
from ..costmodel import LatencyParams, StepReport, MODES
from ..data import load_themes
from ..diagnostics import InvariantViolation, check_map, check_store, check_report
from ..kvstore import KVStore, BudgetInfeasibleError, hit_rate
from ..navmap import NavigationMap, render_group, render_object, render_prompt_suffix
from ..planner import plan, PlanningContext, SemanticOracleBackend, TinyLLMBackend, ANSWER_PREFIX, BACKENDS
from ..retrieval import RetrievalConfig, EmbeddingCache, make_provider, plan_step, select_by_distance, select_all
from .grid import grid_graph, grid_distances, index_cell
from .scene import AgentState, UnreachableTargetError, detect, move_to, visible_cells

__all__ = ['SystemConfig', 'NavigationSystem', 'EpisodeResult', 'run_episode', 'growth_detections',
           'simulate_growth_trace', 'nearest_frontier', 'TERMINATION_REASONS']

logger = logging.getLogger(__name__)

TERMINATION_REASONS = ('success', 'step_cap', 'path_cap', 'exhausted', 'unreachable', 'budget')


def _build(cls, value):
    if value is None:
        return cls()
    if isinstance(value, dict):
        return cls(**value)
    return value


@dataclass
class SystemConfig:
    '''
    Everything that decides one episode's behaviour apart from the scene, goal and start.

    path_cap defaults to ten times the scene diagonal.
    '''
    mode: str = 'efficientnav'
    backend: str = 'semantic-oracle'
    budget_bytes: int = 4 * 2 ** 20
    cluster: ClusterConfig = None
    retrieval: RetrievalConfig = None
    model: ModelConfig = None
    latency: LatencyParams = None
    embedding: str = 'trigram'
    embed_endpoint: str = None
    detection_range: float = 8.0
    success_radius: float = 1.0
    step_cap: int = 50
    path_cap: float = None
    dedup_radius: float = 2.0

    def __post_init__(self):
        self.cluster = _build(ClusterConfig, self.cluster)
        self.retrieval = _build(RetrievalConfig, self.retrieval)
        self.model = _build(ModelConfig, self.model)
        self.latency = _build(LatencyParams, self.latency)
        if self.mode not in MODES:
            raise ValueError('mode must be one of %s, got %r' % (MODES, self.mode))
        if self.backend not in BACKENDS:
            raise ValueError('backend must be one of %s, got %r' % (BACKENDS, self.backend))
        if self.budget_bytes < 0:
            raise ValueError('budget_bytes must be non-negative')
        if self.step_cap < 1:
            raise ValueError('step_cap must be at least 1')

    def to_dict(self):
        return asdict(self)


class _TokenSizer:
    """Group sizes from token counts, for the mode that keeps no cache."""

    def __init__(self, system):
        self.system = system

    def size_of(self, group_id):
        c = self.system.model.config
        return kv_nbytes(c.num_layers, c.num_heads, self.system.group_tokens[group_id], c.head_dim)


class NavigationSystem:
    '''
    The per-step memory pipeline: map update, clustering, group KV maintenance, retrieval,
    residency and sub-goal planning, with the counters the cost model reads.

    Attributes:

        config {SystemConfig} : system settings
        nav_map {NavigationMap} : agent memory
        store {KVStore} : group KV store, None in baseline-recompute mode
        cache {EmbeddingCache} : group and label embeddings shared by clustering, retrieval
        and the semantic backend
        group_tokens {dict} : group id -> token count of its rendering
        uncharged_rows {dict} : group id -> rows cached since the group was last in the prompt
        diagnostics {tuple} : any of 'show steps', 'show cache', 'show clustering'

    Methods:

        step: run one navigation step on a list of detections
    '''

    def __repr__(self):
        c = self.config
        output = 'Navigation system\n'
        output += 'Mode = ' + c.mode + ', backend = ' + c.backend + '\n'
        output += 'Clustering = ' + c.cluster.method
        if c.cluster.method == 'attention':
            output += ' (' + c.cluster.provider + ')'
        output += ', retrieval = ' + c.retrieval.method + '\n'
        output += 'Budget = ' + str(c.budget_bytes) + ' bytes\n'
        output += repr(self.nav_map)
        if self.store is not None:
            output += repr(self.store)
        return output

    def __init__(self, config=None, store_root=None, diagnostics=()):

        self.config = config or SystemConfig()
        c = self.config
        self.diagnostics = diagnostics
        self.model = build_model(c.model)
        self.nav_map = NavigationMap(c.dedup_radius)
        self.cache = EmbeddingCache(make_provider(c.embedding, c.embed_endpoint, seed=c.model.seed))
        self.group_tokens = {}
        self._group_seqs = {}
        self.uncharged_rows = {}
        self._warned_oversize = False
        self.layers_used = layers_for_fraction(self.model, c.cluster.layer_fraction)

        transformer_clustering = c.cluster.method == 'attention' and c.cluster.provider == 'tiny-transformer'
        self.store = None
        if c.mode != 'baseline-recompute':
            self.store = KVStore(c.budget_bytes, store_root, self.layers_used if transformer_clustering else 0,
                                 diagnostics=diagnostics)
        if transformer_clustering:
            blocks = self.store.pinned_block if self.store is not None else self._fresh_block
            self.cluster_provider = TinyTransformerProvider(self.model, blocks, c.cluster.layer_fraction)
        else:
            self.cluster_provider = EmbeddingSimilarityProvider(self.cache, c.cluster.temperature,
                                                                c.cluster.null_similarity)
        if c.backend == 'tiny-llm':
            self.backend = TinyLLMBackend(self.model)
        else:
            self.backend = SemanticOracleBackend(self.cache)

    def close(self):
        if self.store is not None:
            self.store.close()

    def _fresh_block(self, group_id):
        seq = self.model.tokenize(render_group(self.nav_map, group_id))
        return compute_group_kv(self.model, seq, 0, group_id)

    def _refresh_group(self, group_id):
        """Bring a changed group's tokens (and cache) up to date; returns the new row count."""
        seq = self.model.tokenize(render_group(self.nav_map, group_id))
        old = self._group_seqs.get(group_id)
        T_old = 0 if old is None else len(old)
        if old is not None and seq.tokens[:T_old] != old.tokens:
            raise InvariantViolation('rendering of group %d is no longer an extension of its cached text' % group_id)
        if self.store is not None:
            if old is None:
                self.store.put(group_id, compute_group_kv(self.model, seq, 0, group_id))
            else:
                _, delta = seq.split(T_old)
                block = extend_group_kv(self.model, self.store.get(group_id), delta)
                self.store.append(group_id, block.tail(T_old))
        self._group_seqs[group_id] = seq
        self.group_tokens[group_id] = len(seq)
        return len(seq) - T_old

    def _retrieve(self, goal, position, changed):
        c = self.config
        sizer = self.store if self.store is not None else _TokenSizer(self)
        budget = self.store.available_budget() if self.store is not None else c.budget_bytes
        method = c.retrieval.method
        if method == 'knapsack':
            largest = max((sizer.size_of(g) for g in self.nav_map.group_ids), default=0)
            if largest > budget and not self._warned_oversize:
                logger.warning('largest group needs %d bytes, more than the %d byte budget; it can never be '
                               'selected', largest, budget)
                self._warned_oversize = True
            return plan_step(self.nav_map, goal, sizer, budget, cache=self.cache, changed=changed,
                             threshold=c.retrieval.threshold, quantum=c.retrieval.quantum,
                             mode=c.retrieval.probability_mode, exact_limit=c.retrieval.exact_limit)
        sizes = {g: sizer.size_of(g) for g in self.nav_map.group_ids}
        if method == 'distance-baseline':
            return select_by_distance(self.nav_map, sizes, budget, position)
        return select_all(self.nav_map, sizes, budget if self.store is not None else None)

    def map_bytes(self):
        """KV bytes of every group of the map, resident or not."""
        c = self.model.config
        return sum(kv_nbytes(c.num_layers, c.num_heads, count_tokens(render_group(self.nav_map, g)), c.head_dim)
                   for g in self.nav_map.group_ids)

    def step(self, step, goal, position, detections, frontier=None):
        '''
        One pass of the memory pipeline.

        Returns
        -------
        (StepReport, SubGoalDecision or None, list of Assignment)
        '''
        c = self.config
        t0 = time.perf_counter()
        calls0 = self.cache.calls
        report = StepReport(step=step, mode=c.mode)

        self.nav_map.add_detections(step, detections)
        staged = list(self.nav_map.staged)
        assignments, changed = [], []
        if staged:
            assignments = cluster(self.nav_map, staged, c.cluster, self.cluster_provider)
            if c.cluster.method == 'attention':
                report.cluster_token_layers = sum(count_tokens(render_object(self.nav_map.entry(o)))
                                                  for o in staged) * self.layers_used
            changed, _ = self.nav_map.place(assignments, step)
            if 'show clustering' in self.diagnostics:
                for a in assignments:
                    logger.info('step %d: object %d (%s) -> %s', step, a.object_id,
                                self.nav_map.entry(a.object_id).label, 'new' if a.group_id is None else a.group_id)
        new_rows = {gid: self._refresh_group(gid) for gid in changed}
        if self.store is not None:
            report.tokens_newly_cached = sum(new_rows.values())
            for gid, rows in new_rows.items():
                self.uncharged_rows[gid] = self.uncharged_rows.get(gid, 0) + rows

        retrieval_plan = self._retrieve(goal, position, changed)
        selected = list(retrieval_plan.selected)
        if self.store is not None:
            load = self.store.ensure_resident(selected, step)
            report.hits, report.misses = load.hits, load.misses
            factor = c.latency.decode_tokens_per_plan if c.mode == 'offload-per-decode' else 1
            report.kv_bytes_loaded = load.loaded_bytes * factor
            report.device_bytes = self.store.device_bytes()

        suffix_text = render_prompt_suffix(goal, self.nav_map.trajectory, self.nav_map)
        suffix_tokens = count_tokens(suffix_text + ' ' + ANSWER_PREFIX)
        report.prompt_tokens_total = sum(self.group_tokens[g] for g in selected) + suffix_tokens
        if c.mode == 'baseline-recompute':
            report.tokens_recomputed = report.prompt_tokens_total
        else:
            # rows cached since a group was last in the prompt are prefilled with it
            report.tokens_recomputed = suffix_tokens + sum(self.uncharged_rows.pop(g, 0) for g in selected)
        report.decode_tokens = c.latency.decode_tokens_per_plan

        context = None
        if c.backend == 'tiny-llm':
            if self.store is not None:
                blocks = [self.store.get(g) for g in selected]
            else:
                blocks = [self._fresh_block(g) for g in selected]
            context = PlanningContext(blocks, suffix_text)
        decision = plan(self.nav_map, retrieval_plan, goal, self.backend, context, frontier)

        report.embed_calls = self.cache.calls - calls0
        report.selected_groups = selected
        report.wall_seconds = time.perf_counter() - t0
        check_map(self.nav_map)
        check_report(report)
        if self.store is not None:
            check_store(self.store)
        if 'show steps' in self.diagnostics:
            logger.info('step %d: %d groups, selected %s, decision %s', step, len(self.nav_map.groups), selected,
                        None if decision is None else decision.raw_answer)
        return report, decision, assignments


@dataclass
class EpisodeResult:
    goal: str
    start: tuple
    success: bool = False
    path_length: float = 0.0
    shortest_path_length: float = None
    steps: int = 0
    reports: list = field(default_factory=list)
    termination_reason: str = 'step_cap'
    records: list = field(default_factory=list)
    hit_rate: float = None
    map_bytes: int = 0

    def summary(self):
        return {'goal': self.goal, 'start': list(self.start), 'success': self.success,
                'path_length': self.path_length, 'shortest_path_length': self.shortest_path_length,
                'steps': self.steps, 'termination_reason': self.termination_reason, 'hit_rate': self.hit_rate}

    def log_lines(self):
        """One JSON document per step followed by the summary; wall-clock time is left out."""
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps(dict(kind='summary', **self.summary()), sort_keys=True))
        return lines


def nearest_frontier(walls, explored, dist):
    '''
    Closest explored free cell next to an unexplored free cell, by grid distance (ties to
    the lowest row-major index), as an (x, y, 0) triple; None when nothing is left.
    '''
    free = ~walls
    unexplored = free & ~explored
    near = np.zeros_like(unexplored)
    near[:, :-1] |= unexplored[:, 1:]
    near[:, 1:] |= unexplored[:, :-1]
    near[:-1, :] |= unexplored[1:, :]
    near[1:, :] |= unexplored[:-1, :]
    d = np.where(explored & free & near, dist, np.inf)
    if not np.isfinite(d).any():
        return None
    x, y = index_cell(int(np.argmin(d.ravel())), walls.shape[1])
    return (x, y, 0)


def run_episode(scene, goal, system_cfg=None, start=None, seed=0, store_root=None, diagnostics=()):
    '''
    Navigate scene toward goal until arrival within the success radius or a cap.

    The start cell is drawn from the scene's start pool with seed unless given. Failures
    inside the loop end the episode with a termination reason; only configuration errors
    and invariant violations propagate.
    '''
    cfg = system_cfg or SystemConfig()
    if start is None:
        rng = np.random.default_rng(seed)
        start = scene.start_pool[int(rng.integers(len(scene.start_pool)))]
    start = (int(start[0]), int(start[1]))
    if not scene.is_free(start):
        raise ValueError('start cell %s is not free' % (start,))
    path_cap = cfg.path_cap if cfg.path_cap is not None else 10.0 * scene.diagonal
    graph = grid_graph(scene.walls)
    goal_cells = scene.goal_cells(goal)

    dist0, _ = grid_distances(scene.walls, start, graph)
    reach = [dist0[y, x] for x, y in goal_cells if np.isfinite(dist0[y, x])]
    result = EpisodeResult(goal, start, shortest_path_length=float(min(reach)) if reach else None)

    agent = AgentState(start)
    system = NavigationSystem(cfg, store_root, diagnostics)
    explored = np.zeros(scene.walls.shape, dtype=bool)
    reason = 'step_cap'
    try:
        for step in range(cfg.step_cap):
            agent.step_index = step
            explored |= visible_cells(scene, agent.position, cfg.detection_range)
            detections = detect(scene, agent.position, cfg.detection_range)
            dist, _ = grid_distances(scene.walls, agent.position, graph)
            try:
                report, decision, assignments = system.step(
                    step, goal, agent.position, detections,
                    frontier=lambda: nearest_frontier(scene.walls, explored, dist))
            except BudgetInfeasibleError as e:
                logger.warning('step %d: %s; episode ends', step, e)
                reason = 'budget'
                break
            result.reports.append(report)
            record = {'kind': 'step', 'step': step, 'goal': goal, 'position': list(agent.position),
                      'assignments': [a.to_dict() for a in assignments],
                      'selected_groups': list(report.selected_groups),
                      'candidate_scores': [] if decision is None else decision.scores,
                      'decision': None if decision is None else decision.to_dict()}
            result.records.append(record)
            if decision is None:
                reason = 'exhausted'
                break
            tx, ty = decision.position[0], decision.position[1]
            if not scene.is_free((tx, ty)) or not np.isfinite(dist[ty, tx]):
                reason = 'unreachable'
                break
            if agent.path_length + dist[ty, tx] > path_cap:
                reason = 'path_cap'
                break
            try:
                report.distance_moved = move_to(scene, agent, (tx, ty), graph)
            except UnreachableTargetError:
                reason = 'unreachable'
                break
            if decision.object_id is not None:
                system.nav_map.mark_visited(decision.object_id)
                agent.visited.add(decision.object_id)
            if decision.is_final_goal and any(math.hypot(tx - gx, ty - gy) <= cfg.success_radius
                                              for gx, gy in goal_cells):
                result.success = True
                reason = 'success'
                break
        for record, report in zip(result.records, result.reports):
            record['report'] = report.to_dict()
        if system.store is not None:
            result.hit_rate = hit_rate(system.store.stats)
        result.map_bytes = system.map_bytes()
    finally:
        system.close()
    result.termination_reason = reason
    result.path_length = agent.path_length
    result.steps = len(result.reports)
    logger.info('episode goal=%s start=%s: %s after %d steps, l=%.1f p=%s', goal, start, reason, result.steps,
                result.path_length, result.shortest_path_length)
    return result


def growth_detections(steps, objects_per_step=4, scene=None, themes=None):
    '''
    Per-step detection lists for traces without motion.

    With a scene, its objects are revealed in scene order, objects_per_step at a time.
    Without one, a synthetic stream cycles through the theme vocabularies and places every
    object on its own lattice cell.
    '''
    if scene is not None:
        stream = [(o.label, tuple(o.position)) for o in scene.objects]
    else:
        vocab = themes or load_themes()
        names = sorted(vocab)
        stream = []
        for i in range(steps * objects_per_step):
            theme = names[i % len(names)]
            words = vocab[theme]
            label = words[(i // len(names)) % len(words)]
            stream.append((label, (3 * (i % 40), 3 * (i // 40), 20 + (i * 7) % 60)))
    return [stream[s * objects_per_step:(s + 1) * objects_per_step] for s in range(steps)]


def simulate_growth_trace(system_cfg=None, steps=30, goals=('tv',), goal_period=None, objects_per_step=4,
                          scene=None, store_root=None, diagnostics=()):
    '''
    Drive the pipeline over a growing map without moving the agent.

    The goal cycles through goals every goal_period steps (fixed when goal_period is None).
    Returns the StepReports and the store statistics (None in baseline-recompute mode).
    '''
    system = NavigationSystem(system_cfg, store_root, diagnostics)
    detections = growth_detections(steps, objects_per_step, scene)
    reports = []
    try:
        for s in range(steps):
            goal = goals[(s // goal_period) % len(goals)] if goal_period else goals[0]
            report, _, _ = system.step(s, goal, (0, 0), detections[s])
            reports.append(report)
        stats = system.store.stats.copy() if system.store is not None else None
    finally:
        system.close()
    return reports, stats
