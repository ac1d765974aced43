import pytest

from navmem.costmodel import LatencyParams, StepReport, MB, episode_latency, latency_breakdown, step_latency, \
    write_step_csv
from navmem.simworld import SystemConfig, simulate_growth_trace


def report(**kw):
    base = dict(step=0, prompt_tokens_total=500, tokens_recomputed=120, kv_bytes_loaded=2 * MB, decode_tokens=40,
                embed_calls=3, cluster_token_layers=60, distance_moved=4.0)
    base.update(kw)
    return StepReport(**base)


def test_breakdown_sums_to_step_latency():
    p = LatencyParams()
    r = report()
    b = latency_breakdown(r, p)
    assert b['prefill'] == pytest.approx(0.12)
    assert b['decode'] == pytest.approx(0.16)
    assert b['transfer'] == pytest.approx(0.02)
    assert sum(b.values()) == pytest.approx(step_latency(r, p))


def test_episode_latency_adds_motion():
    p = LatencyParams()
    reports = [report(step=0), report(step=1, distance_moved=6.0)]
    planning = step_latency(reports[0], p) + step_latency(reports[1], p)
    assert episode_latency(reports, p) == pytest.approx(planning + 10 * p.move_per_cell)


def test_negative_coefficients_rejected():
    with pytest.raises(ValueError):
        LatencyParams(prefill_per_token=-1.0)


def test_report_dict_drops_wall_clock():
    r = report(wall_seconds=0.5)
    assert 'wall_seconds' not in r.to_dict()
    assert r.to_dict(wall_clock=True)['wall_seconds'] == 0.5


def test_step_csv(tmp_path):
    path = str(tmp_path / 'steps.csv')
    write_step_csv(path, [report(), report(step=1)], LatencyParams(), comment='build=x')
    lines = open(path).read().splitlines()
    assert lines[0] == '# build=x'
    assert lines[1].startswith('step,mode,prompt_tokens_total,tokens_recomputed')
    assert lines[1].endswith('device_bytes,rtl_modeled,rtl_wall')
    assert len(lines) == 4


def test_offload_per_decode_pays_transfer_every_token():
    eff, _ = simulate_growth_trace(SystemConfig(mode='efficientnav'), steps=8)
    off, _ = simulate_growth_trace(SystemConfig(mode='offload-per-decode'), steps=8)
    p = LatencyParams()
    for a, b in zip(eff, off):
        assert b.kv_bytes_loaded == p.decode_tokens_per_plan * a.kv_bytes_loaded
        assert b.tokens_recomputed == a.tokens_recomputed
        assert step_latency(a, p) <= step_latency(b, p)
