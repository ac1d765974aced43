import json
import os

import pytest

from navmem import build_id
from navmem.cli import ConfigError, RunConfig, main, smallest_group_bytes
from navmem.attention import ModelConfig


def write_config(tmp_path, **system):
    system.setdefault('step_cap', 4)
    path = str(tmp_path / 'config.json')
    with open(path, 'w') as f:
        json.dump({'system': system}, f)
    return path


def test_config_roundtrip():
    run = RunConfig.from_dict({'seeds': [1, 2], 'goals': ['bed'], 'system': {'mode': 'offload-per-decode'}})
    assert RunConfig.from_dict(run.to_dict()).to_dict() == run.to_dict()
    assert 'bed' in run.scene.goals
    assert run.system.mode == 'offload-per-decode'


def test_config_errors():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({'sedes': [1]})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({'system': {'mode': 'vllm'}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({'system': {'cluster': {'depth': 3}}})


def test_run_writes_logs_and_summary(tmp_path):
    out = str(tmp_path / 'out')
    code = main(['run', '--config', write_config(tmp_path), '--seed', '0', '1', '--out-dir', out])
    assert code == 0
    names = sorted(os.listdir(out))
    assert 'episode_seed0_tv.jsonl' in names and 'episode_seed1_tv.jsonl' in names
    assert 'summary.csv' in names
    with open(os.path.join(out, 'episode_seed0_tv.jsonl')) as f:
        lines = f.read().splitlines()
    header = json.loads(lines[0])
    assert header['kind'] == 'header' and header['build'] == build_id()
    assert header['config']['system']['step_cap'] == 4
    assert json.loads(lines[-1])['kind'] == 'summary'
    with open(os.path.join(out, 'summary.csv')) as f:
        summary = f.read().splitlines()
    assert summary[0].startswith('# build=')
    assert summary[1] == 'mode,episodes,sr,spl,mean_rtl,mean_e2el,hit_rate'
    assert len(summary) == 3


def test_flags_override_the_file(tmp_path):
    out = str(tmp_path / 'out')
    config = write_config(tmp_path, mode='efficientnav')
    assert main(['run', '--config', config, '--mode', 'baseline-recompute', '--out-dir', out]) == 0
    with open(os.path.join(out, 'episode_seed0_tv.jsonl')) as f:
        header = json.loads(f.readline())
    assert header['config']['system']['mode'] == 'baseline-recompute'


def test_replay_matches_and_detects_tampering(tmp_path):
    out = str(tmp_path / 'out')
    assert main(['run', '--config', write_config(tmp_path), '--seed', '3', '--out-dir', out]) == 0
    log = os.path.join(out, 'episode_seed3_tv.jsonl')
    assert main(['replay', log]) == 0
    with open(log) as f:
        lines = f.read().splitlines()
    step = json.loads(lines[1])
    step['position'] = [-1, -1, 0]
    lines[1] = json.dumps(step, sort_keys=True)
    with open(log, 'w') as f:
        f.write('\n'.join(lines) + '\n')
    assert main(['replay', log]) == 3


def test_gen_scenes_is_reproducible(tmp_path):
    a, b = str(tmp_path / 'a'), str(tmp_path / 'b')
    assert main(['gen-scenes', '--seed', '4', '--count', '2', '--out-dir', a]) == 0
    assert main(['gen-scenes', '--seed', '4', '--count', '2', '--out-dir', b]) == 0
    for name in ('scene_4.json', 'scene_5.json'):
        with open(os.path.join(a, name), 'rb') as fa, open(os.path.join(b, name), 'rb') as fb:
            assert fa.read() == fb.read()
    manifests = []
    for d in (a, b):
        with open(os.path.join(d, 'manifest.json')) as f:
            manifests.append(json.load(f))
    assert manifests[0]['scenes'] == manifests[1]['scenes']
    assert [s['seed'] for s in manifests[0]['scenes']] == [4, 5]


def test_budget_below_any_group_is_infeasible(tmp_path):
    small = smallest_group_bytes(ModelConfig())
    assert main(['run', '--config', write_config(tmp_path), '--budget-bytes', str(small - 1),
                 '--out-dir', str(tmp_path / 'out')]) == 2


def test_usage_errors_exit_with_one(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(['run', '--mode', 'vllm'])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(['teleport'])
    assert e.value.code == 1
    bad = str(tmp_path / 'bad.json')
    with open(bad, 'w') as f:
        f.write('{"speed": 3}')
    assert main(['run', '--config', bad]) == 1


def test_bench_budget_single_row(tmp_path):
    out = str(tmp_path / 'out')
    assert main(['bench-budget', '--config', write_config(tmp_path), '--budgets', '4000000', '--out-dir', out]) == 0
    with open(os.path.join(out, 'bench_budget.csv')) as f:
        lines = f.read().splitlines()
    assert lines[1] == 'budget,hit_rate,mean_rtl,sr,spl'
    assert len(lines) == 3 and lines[2].startswith('4000000,')


def test_ablate_rows(tmp_path):
    out = str(tmp_path / 'out')
    assert main(['ablate', '--config', write_config(tmp_path, step_cap=3), '--out-dir', out]) == 0
    with open(os.path.join(out, 'ablate.csv')) as f:
        lines = f.read().splitlines()
    assert len(lines) == 6
    assert lines[2].startswith('1,position+distance+recompute,baseline-recompute,position,distance-baseline,0,')
    assert lines[5].startswith('4,+semantics-aware retrieval,efficientnav,attention,knapsack,0,')


def test_bench_growth(tmp_path):
    out = str(tmp_path / 'out')
    assert main(['bench-growth', '--steps', '3', '--out-dir', out]) == 0
    with open(os.path.join(out, 'growth.csv')) as f:
        lines = f.read().splitlines()
    assert len(lines) == 2 + 9
    assert [l.split(',')[1] for l in lines[2:]] == ['baseline-recompute'] * 3 + ['offload-per-decode'] * 3 + \
        ['efficientnav'] * 3
