import csv
import logging
from dataclasses import dataclass, field, asdict, fields

__all__ = ['LatencyParams', 'StepReport', 'step_latency', 'episode_latency', 'latency_breakdown',
           'write_step_csv', 'MODES', 'MB']

logger = logging.getLogger(__name__)

MB = 2 ** 20
MODES = ('baseline-recompute', 'offload-per-decode', 'efficientnav')


@dataclass
class LatencyParams:
    '''
    Coefficients of the modeled latency, in seconds per unit.

    Defaults place the recompute-to-cached planning latency ratio of a thirty-step map in
    the mid single digits at the default model scale.
    '''
    prefill_per_token: float = 1e-3
    decode_per_token: float = 4e-3
    transfer_per_mb: float = 0.01
    embed_per_group: float = 2e-3
    cluster_per_token_layer: float = 5e-5
    move_per_cell: float = 0.25
    decode_tokens_per_plan: int = 40

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError('%s must be non-negative' % f.name)

    def to_dict(self):
        return asdict(self)


@dataclass
class StepReport:
    step: int = 0
    mode: str = 'efficientnav'
    prompt_tokens_total: int = 0
    tokens_recomputed: int = 0
    tokens_newly_cached: int = 0
    kv_bytes_loaded: int = 0
    hits: int = 0
    misses: int = 0
    decode_tokens: int = 0
    embed_calls: int = 0
    cluster_token_layers: int = 0
    distance_moved: float = 0.0
    device_bytes: int = 0
    selected_groups: list = field(default_factory=list)
    wall_seconds: float = 0.0

    def counters(self):
        return {k: getattr(self, k) for k in ('prompt_tokens_total', 'tokens_recomputed', 'tokens_newly_cached',
                                              'kv_bytes_loaded', 'hits', 'misses', 'decode_tokens',
                                              'embed_calls', 'cluster_token_layers', 'distance_moved')}

    def to_dict(self, wall_clock=False):
        d = asdict(self)
        if not wall_clock:
            del d['wall_seconds']
        return d


def latency_breakdown(report, params):
    """Modeled planning seconds per term; the values sum to step_latency."""
    return {
        'prefill': params.prefill_per_token * report.tokens_recomputed,
        'decode': params.decode_per_token * report.decode_tokens,
        'transfer': params.transfer_per_mb * (report.kv_bytes_loaded / MB),
        'embed': params.embed_per_group * report.embed_calls,
        'cluster': params.cluster_per_token_layer * report.cluster_token_layers,
    }


def step_latency(report, params):
    """Modeled planning latency (RtL) of one navigation step."""
    b = latency_breakdown(report, params)
    return b['prefill'] + b['decode'] + b['transfer'] + b['embed'] + b['cluster']


def episode_latency(reports, params):
    """Modeled end-to-end latency: planning of every step plus motion."""
    return sum(step_latency(r, params) for r in reports) + params.move_per_cell * sum(r.distance_moved for r in reports)


def write_step_csv(path, reports, params, comment=None):
    cols = ['step', 'mode'] + list(StepReport().counters()) + ['device_bytes', 'rtl_modeled', 'rtl_wall']
    with open(path, 'w', newline='') as f:
        if comment:
            f.write('# ' + comment + '\n')
        w = csv.writer(f)
        w.writerow(cols)
        for r in reports:
            c = r.counters()
            w.writerow([r.step, r.mode] + [c[k] for k in c] + [r.device_bytes, repr(step_latency(r, params)),
                                                               repr(r.wall_seconds)])
