"""Command-line front end: scene generation, episode runs, budget sweeps, ablations,
growth traces and log replay.

Configuration is a JSON file read into RunConfig; command-line flags override file
values, which override the dataclass defaults. Every artifact carries the resolved
configuration and the build identifier.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible budget,
3 invariant violation or replay mismatch.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import build_id
from .attention import count_tokens, kv_nbytes
from .clustering import Assignment
from .costmodel import step_latency, episode_latency, write_step_csv
from .data import load_themes
from .diagnostics import InvariantViolation
from .kvstore import BudgetInfeasibleError
from .navmap import NavigationMap, render_group
from .simworld import (Scene, SceneConfig, SystemConfig, generate_scene, run_episode, simulate_growth_trace,
                       compute_spl, compute_success_rate)

__all__ = ['RunConfig', 'ConfigError', 'main', 'smallest_group_bytes', 'episode_log_lines', 'ABLATION_ROWS']

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INVARIANT = 0, 1, 2, 3

ABLATION_ROWS = (
    ('position+distance+recompute', {'mode': 'baseline-recompute', 'cluster': 'position',
                                     'retrieval': 'distance-baseline'}),
    ('+discrete caching', {'mode': 'efficientnav', 'cluster': 'position', 'retrieval': 'distance-baseline'}),
    ('+attention clustering', {'mode': 'efficientnav', 'cluster': 'attention', 'retrieval': 'distance-baseline'}),
    ('+semantics-aware retrieval', {'mode': 'efficientnav', 'cluster': 'attention', 'retrieval': 'knapsack'}),
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    '''
    One command-line invocation.

    Every episode is identified by a (seed, goal) pair: the seed generates the scene
    (unless scene_file is given) and draws the start cell.
    '''
    scene: SceneConfig = None
    scene_file: str = None
    seeds: list = field(default_factory=lambda: [0])
    goals: list = field(default_factory=lambda: ['tv'])
    system: SystemConfig = None
    out_dir: str = 'navmem-out'
    jobs: int = 1
    budgets: list = None
    budget_fractions: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    growth_steps: int = 30
    objects_per_step: int = 4

    def __post_init__(self):
        if self.scene is None:
            self.scene = SceneConfig()
        if self.system is None:
            self.system = SystemConfig()
        self.seeds = [int(s) for s in self.seeds]
        self.goals = [str(g) for g in self.goals]
        if not self.seeds or not self.goals:
            raise ConfigError('seeds and goals must be non-empty')
        if self.jobs < 1:
            raise ConfigError('jobs must be at least 1')
        # scenes are generated with every run goal present
        missing = [g for g in self.goals if g not in self.scene.goals]
        if missing:
            self.scene.goals = self.scene.goals + tuple(missing)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError('unknown config keys: %s' % ', '.join(sorted(unknown)))
        d = dict(d)
        try:
            if isinstance(d.get('scene'), dict):
                d['scene'] = SceneConfig(**d['scene'])
            if isinstance(d.get('system'), dict):
                d['system'] = SystemConfig(**d['system'])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e))

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError('cannot read config %s: %s' % (path, e))

    def to_dict(self):
        return {'scene': self.scene.to_dict(), 'scene_file': self.scene_file, 'seeds': list(self.seeds),
                'goals': list(self.goals), 'system': self.system.to_dict(), 'out_dir': self.out_dir,
                'jobs': self.jobs, 'budgets': None if self.budgets is None else list(self.budgets),
                'budget_fractions': list(self.budget_fractions), 'growth_steps': self.growth_steps,
                'objects_per_step': self.objects_per_step}

    def with_system(self, **changes):
        d = self.to_dict()
        d['system'].update(changes)
        return RunConfig.from_dict(d)

    def scene_for(self, seed):
        if self.scene_file is not None:
            return Scene.load(self.scene_file)
        return generate_scene(seed, self.scene)

    def comment(self):
        return 'build=%s config=%s' % (build_id(), json.dumps(self.to_dict(), sort_keys=True))


def smallest_group_bytes(model_cfg, themes_file=None):
    """KV bytes of the shortest possible one-object group over the theme vocabulary."""
    vocab = load_themes(themes_file)
    label = min((w for words in vocab.values() for w in words), key=lambda w: (count_tokens(w), w))
    nav_map = NavigationMap()
    nav_map.add_detections(0, [(label, (0, 0, 0))])
    nav_map.place([Assignment(0)], 0)
    T = count_tokens(render_group(nav_map, nav_map.group_ids[0]))
    return kv_nbytes(model_cfg.num_layers, model_cfg.num_heads, T, model_cfg.head_dim)


def _check_budget(run):
    s = run.system
    if s.mode == 'baseline-recompute' and s.retrieval.method == 'all-groups':
        return
    need = smallest_group_bytes(s.model, run.scene.themes_file)
    if s.budget_bytes < need:
        raise BudgetInfeasibleError('budget of %d bytes is below the smallest possible group (%d bytes)'
                                    % (s.budget_bytes, need))


def _header(run, seed, goal, build=None):
    return json.dumps({'kind': 'header', 'build': build or build_id(), 'config': run.to_dict(),
                       'seed': seed, 'goal': goal}, sort_keys=True)


def episode_log_lines(run, seed, goal, build=None, diagnostics=()):
    """Run one episode and return (its JSONL lines, EpisodeResult)."""
    result = run_episode(run.scene_for(seed), goal, run.system, seed=seed, diagnostics=diagnostics)
    return [_header(run, seed, goal, build)] + result.log_lines(), result


def _episodes(run, diagnostics=()):
    keys = [(s, g) for s in run.seeds for g in run.goals]
    with ThreadPoolExecutor(max_workers=run.jobs) as pool:
        futures = [pool.submit(episode_log_lines, run, s, g, None, diagnostics) for s, g in keys]
        return [(k, f.result()) for k, f in zip(keys, futures)]


def _metrics(results, params):
    steps = [r for res in results for r in res.reports]
    hits = misses = 0
    for res in results:
        hits += sum(r.hits for r in res.reports)
        misses += sum(r.misses for r in res.reports)
    return {'episodes': len(results),
            'sr': compute_success_rate(results),
            'spl': compute_spl(results),
            'mean_rtl': float(np.mean([step_latency(r, params) for r in steps])) if steps else 0.0,
            'mean_e2el': float(np.mean([episode_latency(res.reports, params) for res in results])) if results else 0.0,
            'hit_rate': '' if hits + misses == 0 else hits / (hits + misses)}


def _write_rows(path, comment, columns, rows):
    with open(path, 'w', newline='') as f:
        f.write('# ' + comment + '\n')
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([row[c] for c in columns])


def _log_name(seed, goal):
    return 'episode_seed%d_%s.jsonl' % (seed, goal.replace(' ', '_'))


def cmd_gen_scenes(run, count):
    os.makedirs(run.out_dir, exist_ok=True)
    seeds = run.seeds if count is None else list(range(run.seeds[0], run.seeds[0] + count))
    entries = []
    for seed in seeds:
        scene = generate_scene(seed, run.scene)
        data = scene.to_json().encode('utf-8')
        name = 'scene_%d.json' % seed
        with open(os.path.join(run.out_dir, name), 'wb') as f:
            f.write(data)
        entries.append({'seed': seed, 'file': name, 'sha256': hashlib.sha256(data).hexdigest()})
    manifest = {'build': build_id(), 'config': run.to_dict(), 'scenes': entries}
    text = json.dumps(manifest, sort_keys=True, indent=1)
    with open(os.path.join(run.out_dir, 'manifest.json'), 'w') as f:
        f.write(text + '\n')
    print(text)
    return EXIT_OK


def cmd_run(run, diagnostics=()):
    os.makedirs(run.out_dir, exist_ok=True)
    done = _episodes(run, diagnostics)
    params = run.system.latency
    for (seed, goal), (lines, result) in done:
        with open(os.path.join(run.out_dir, _log_name(seed, goal)), 'w') as f:
            f.write('\n'.join(lines) + '\n')
        write_step_csv(os.path.join(run.out_dir, 'steps_seed%d_%s.csv' % (seed, goal.replace(' ', '_'))),
                       result.reports, params, run.comment())
    row = dict(mode=run.system.mode, **_metrics([res for _, (_, res) in done], params))
    _write_rows(os.path.join(run.out_dir, 'summary.csv'), run.comment(),
                ['mode', 'episodes', 'sr', 'spl', 'mean_rtl', 'mean_e2el', 'hit_rate'], [row])
    print('SR %.3f  SPL %.3f  RtL %.4f s  E2EL %.2f s  hit rate %s'
          % (row['sr'], row['spl'], row['mean_rtl'], row['mean_e2el'], row['hit_rate']))
    return EXIT_OK


def cmd_bench_budget(run, diagnostics=()):
    os.makedirs(run.out_dir, exist_ok=True)
    budgets = run.budgets
    if budgets is None:
        # fractions of the largest map built with nothing evicted
        full = run.with_system(budget_bytes=2 ** 40)
        total = max(res.map_bytes for _, (_, res) in _episodes(full))
        budgets = [int(round(f * total)) for f in run.budget_fractions]
        logger.info('total map KV %d bytes; budgets %s', total, budgets)
    rows = []
    for budget in budgets:
        sweep = run.with_system(budget_bytes=int(budget))
        _check_budget(sweep)
        results = [res for _, (_, res) in _episodes(sweep, diagnostics)]
        rows.append(dict(budget=int(budget), **_metrics(results, sweep.system.latency)))
    _write_rows(os.path.join(run.out_dir, 'bench_budget.csv'), run.comment(),
                ['budget', 'hit_rate', 'mean_rtl', 'sr', 'spl'], rows)
    for row in rows:
        print('budget %10d  hit rate %s  RtL %.4f s  SR %.3f  SPL %.3f'
              % (row['budget'], row['hit_rate'], row['mean_rtl'], row['sr'], row['spl']))
    return EXIT_OK


def ablation_config(run, setting):
    d = run.to_dict()
    d['system']['mode'] = setting['mode']
    d['system']['cluster']['method'] = setting['cluster']
    d['system']['retrieval']['method'] = setting['retrieval']
    return RunConfig.from_dict(d)


def cmd_ablate(run, diagnostics=()):
    os.makedirs(run.out_dir, exist_ok=True)
    rows = []
    for i, (label, setting) in enumerate(ABLATION_ROWS, 1):
        variant = ablation_config(run, setting)
        _check_budget(variant)
        results = [res for _, (_, res) in _episodes(variant, diagnostics)]
        rows.append(dict(row=i, label=label, seeds=' '.join(str(s) for s in run.seeds), **setting,
                         **_metrics(results, variant.system.latency)))
    _write_rows(os.path.join(run.out_dir, 'ablate.csv'), run.comment(),
                ['row', 'label', 'mode', 'cluster', 'retrieval', 'seeds', 'sr', 'spl', 'mean_rtl', 'mean_e2el',
                 'hit_rate'], rows)
    for row in rows:
        print('%d %-28s SR %.3f  SPL %.3f  RtL %.4f s  E2EL %.2f s'
              % (row['row'], row['label'], row['sr'], row['spl'], row['mean_rtl'], row['mean_e2el']))
    return EXIT_OK


def cmd_bench_growth(run, diagnostics=()):
    '''
    Per-step reports of a growing map for the three modes. The recompute baseline puts the
    whole map in the prompt; the other modes use the configured retrieval.
    '''
    os.makedirs(run.out_dir, exist_ok=True)
    reports = []
    for mode in ('baseline-recompute', 'offload-per-decode', 'efficientnav'):
        changes = {'mode': mode}
        if mode == 'baseline-recompute':
            changes['retrieval'] = dict(run.system.retrieval.to_dict(), method='all-groups')
        variant = run.with_system(**changes)
        trace, _ = simulate_growth_trace(variant.system, run.growth_steps, tuple(run.goals),
                                         objects_per_step=run.objects_per_step, diagnostics=diagnostics)
        reports += trace
    write_step_csv(os.path.join(run.out_dir, 'growth.csv'), reports, run.system.latency, run.comment())
    return EXIT_OK


def cmd_replay(path):
    '''
    Re-run the episode recorded in a JSONL log and compare line by line. The recorded build
    identifier is reused for the header so logs from other builds still compare.
    '''
    with open(path) as f:
        recorded = f.read().splitlines()
    if not recorded:
        raise ConfigError('%s is empty' % path)
    header = json.loads(recorded[0])
    if header.get('kind') != 'header':
        raise ConfigError('%s does not start with a header line' % path)
    if header['build'] != build_id():
        logger.warning('log was written by build %s, replaying with %s', header['build'], build_id())
    run = RunConfig.from_dict(header['config'])
    lines, _ = episode_log_lines(run, header['seed'], header['goal'], build=header['build'])
    for k, (a, b) in enumerate(zip(recorded, lines)):
        if a != b:
            print('replay differs at line %d' % (k + 1))
            return EXIT_INVARIANT
    if len(recorded) != len(lines):
        print('replay has %d lines, log has %d' % (len(lines), len(recorded)))
        return EXIT_INVARIANT
    print('replay of %s matches (%d lines)' % (path, len(lines)))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, '%s: error: %s\n' % (self.prog, message))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run configuration')
    common.add_argument('--seed', type=int, nargs='+', help='episode seeds')
    common.add_argument('--goal', nargs='+', help='goal labels')
    common.add_argument('--mode', choices=('baseline-recompute', 'offload-per-decode', 'efficientnav'))
    common.add_argument('--budget-bytes', type=int)
    common.add_argument('--backend', choices=('semantic-oracle', 'tiny-llm'))
    common.add_argument('--jobs', type=int)
    common.add_argument('--out-dir')
    common.add_argument('--embed-endpoint', help='embedding service URL')
    common.add_argument('--diagnostics', nargs='*', default=(),
                        choices=('show steps', 'show cache', 'show clustering'))
    common.add_argument('--verbose', '-v', action='store_true')

    parser = _Parser(prog='navmem', description=__doc__.split('\n')[0])
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True
    p = sub.add_parser('gen-scenes', parents=[common], help='write scene files and a manifest')
    p.add_argument('--count', type=int, help='number of consecutive seeds from the first --seed')
    sub.add_parser('run', parents=[common], help='run episodes and summarize')
    p = sub.add_parser('bench-budget', parents=[common], help='hit rate and latency across budgets')
    g = p.add_mutually_exclusive_group()
    g.add_argument('--budgets', type=int, nargs='+')
    g.add_argument('--fractions', type=float, nargs='+', help='fractions of the total map KV size')
    sub.add_parser('ablate', parents=[common], help='cumulative component ablation')
    p = sub.add_parser('bench-growth', parents=[common], help='per-step latency of a growing map')
    p.add_argument('--steps', type=int)
    p = sub.add_parser('replay', parents=[common], help='re-run a logged episode and compare')
    p.add_argument('log', help='episode JSONL log')
    return parser


def resolve_config(args):
    """Flag > file > default."""
    run = RunConfig.load(args.config) if args.config else RunConfig()
    d = run.to_dict()
    for flag, key in (('seed', 'seeds'), ('goal', 'goals'), ('jobs', 'jobs'), ('out_dir', 'out_dir')):
        if getattr(args, flag, None) is not None:
            d[key] = getattr(args, flag)
    for flag, key in (('mode', 'mode'), ('budget_bytes', 'budget_bytes'), ('backend', 'backend'),
                      ('embed_endpoint', 'embed_endpoint')):
        if getattr(args, flag, None) is not None:
            d['system'][key] = getattr(args, flag)
    if getattr(args, 'budgets', None) is not None:
        d['budgets'] = args.budgets
    if getattr(args, 'fractions', None) is not None:
        d['budget_fractions'] = args.fractions
        d['budgets'] = None
    if getattr(args, 'steps', None) is not None:
        d['growth_steps'] = args.steps
    return RunConfig.from_dict(d)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    diagnostics = tuple(args.diagnostics or ())
    try:
        if args.command == 'replay':
            return cmd_replay(args.log)
        run = resolve_config(args)
        if args.command == 'gen-scenes':
            return cmd_gen_scenes(run, args.count)
        _check_budget(run)
        if args.command == 'run':
            return cmd_run(run, diagnostics)
        if args.command == 'bench-budget':
            return cmd_bench_budget(run, diagnostics)
        if args.command == 'ablate':
            return cmd_ablate(run, diagnostics)
        return cmd_bench_growth(run, diagnostics)
    except ConfigError as e:
        print('navmem: configuration error: %s' % e, file=sys.stderr)
        return EXIT_USAGE
    except BudgetInfeasibleError as e:
        print('navmem: infeasible budget: %s' % e, file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantViolation as e:
        print('navmem: invariant violation: %s' % e, file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as e:
        print('navmem: %s' % e, file=sys.stderr)
        return EXIT_USAGE
