from dataclasses import dataclass, field
import heapq
import logging

from odsgdlab.errors import ConfigError, ProtocolError

logger = logging.getLogger(__name__)


class TimingModel(object):
    """
    `t_cop` is the per-iteration compute time (optionally one value per
    worker), `t_com` the round-trip communication time of the one-step delay
    flow, `t_com_prime` the effective non-overlapped communication time of
    the synchronous flow. `local_update_cost` is how long the worker-side
    compensation step takes and `server_update_cost` how long the server is
    busy with one global update.
    """

    def __init__(self, t_cop, t_com, t_com_prime, local_update_cost=0.0, server_update_cost=0.0):
        per_worker = tuple(float(t) for t in t_cop) if isinstance(t_cop, (list, tuple)) else (float(t_cop),)
        for name, value in (('t_cop', min(per_worker)), ('t_com', t_com), ('t_com_prime', t_com_prime),
                            ('local_update_cost', local_update_cost),
                            ('server_update_cost', server_update_cost)):
            if not value >= 0:
                raise ConfigError(f'timing.{name}', 'must be non-negative')
        if t_com_prime > t_com:
            raise ConfigError('timing.t_com_prime', f'{t_com_prime} exceeds t_com = {t_com}')
        self.per_worker = per_worker
        self.t_com = float(t_com)
        self.t_com_prime = float(t_com_prime)
        self.local_update_cost = float(local_update_cost)
        self.server_update_cost = float(server_update_cost)

    @property
    def t_cop(self):
        """The compute time that paces a synchronous round (slowest worker)"""
        return max(self.per_worker)

    def t_cop_for(self, worker):
        if len(self.per_worker) == 1:
            return self.per_worker[0]
        return self.per_worker[worker]

    def homogeneous(self):
        return len(set(self.per_worker)) == 1


@dataclass(order=True)
class SimEvent:
    at: float
    seq: int
    actor: str = field(compare=False)
    name: str = field(compare=False)
    callback: object = field(compare=False, default=None)
    payload: object = field(compare=False, default=None)


class TraceRecord(object):
    __slots__ = ('sim_time', 'actor', 'event', 'round', 'labels')

    def __init__(self, sim_time, actor, event, round=None, labels=()):
        self.sim_time = sim_time
        self.actor = actor
        self.event = event
        self.round = round
        self.labels = tuple(labels)

    def to_line(self):
        round = '' if self.round is None else str(self.round)
        return f'{self.sim_time!r},{self.actor},{self.event},{round},{";".join(self.labels)}'

    def __repr__(self):
        return f'TraceRecord({self.to_line()})'


TRACE_HEADER = 'sim_time,actor,event,round,labels'


class Simulator(object):
    def __init__(self):
        self._now = 0.0
        self._seq = 0
        self._queue = []
        self.trace = []

    @property
    def now(self):
        return self._now

    def post(self, at, actor, name, callback=None, payload=None):
        if at < self._now:
            raise ProtocolError(f'event {name} for {actor} posted at {at}, before the current time {self._now}')
        event = SimEvent(at, self._seq, actor, name, callback, payload)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def after(self, delay, actor, name, callback=None, payload=None):
        return self.post(self._now + delay, actor, name, callback, payload)

    def record(self, actor, event, round=None, labels=()):
        self.trace.append(TraceRecord(self._now, actor, event, round, labels))

    def run_until_idle(self):
        while self._queue:
            event = heapq.heappop(self._queue)
            self._now = event.at
            logger.debug('t=%s %s: %s', event.at, event.actor, event.name)
            if event.callback is not None:
                if event.payload is None:
                    event.callback()
                else:
                    event.callback(event.payload)
        return self._now


def write_trace(trace, path):
    with open(path, 'w', newline='\n') as f:
        f.write(TRACE_HEADER + '\n')
        for record in trace:
            f.write(record.to_line() + '\n')


def predict_iter_time(tm):
    """Per-iteration cost of the one-step delay flow (two-iteration average when
    communication outlasts computation)"""
    if tm.t_com <= tm.t_cop:
        return tm.t_cop
    return (tm.t_com + tm.t_cop) / 2.0


def imp_rate(tm):
    """Predicted relative iteration-time improvement over the synchronous flow"""
    t_org = tm.t_cop + tm.t_com_prime
    if t_org <= 0:
        raise ConfigError('timing', 't_cop + t_com_prime must be positive')
    return (t_org - predict_iter_time(tm)) / t_org


def gr_rate(speed_x, speed_ssgd):
    """Throughput growth of `speed_x` over the baseline, in percent"""
    if not speed_ssgd > 0:
        raise ConfigError('baseline', 'baseline throughput must be positive')
    return (speed_x - speed_ssgd) / speed_ssgd * 100.0


def _round_ends(trace):
    ends = {}
    for record in trace:
        if record.event == 'iteration_end':
            ends.setdefault(record.round, {})[record.actor] = record.sim_time
    return ends


def measure_throughput(trace, workers, batch):
    """
    Steady samples per time unit over the completed rounds of a run: the
    work of every round after the first, divided by the time between the
    end of the first and the end of the last round. The initial pull and
    round 0 are not counted. A run with a single completed round reports
    M * batch / its end time.
    """
    ends = _round_ends(trace)
    complete = sorted(r for r, actors in ends.items() if len(actors) >= workers)
    if len(complete) == 0:
        raise ProtocolError('throughput of a trace without completed iterations')
    finish = [max(ends[r].values()) for r in complete]
    if len(complete) == 1:
        elapsed, rounds = finish[0], 1
    else:
        elapsed, rounds = finish[-1] - finish[0], len(complete) - 1
    if elapsed <= 0:
        raise ProtocolError('throughput over zero elapsed time')
    return rounds * workers * batch / elapsed


def steady_iter_time(trace, actor, skip=0):
    """
    Mean time between consecutive iteration ends of `actor`, ignoring the
    first `skip` iterations and averaging over an even number of intervals so
    that alternating two-iteration patterns are measured exactly.
    """
    ends = sorted((r.round, r.sim_time) for r in trace if r.actor == actor and r.event == 'iteration_end')
    times = [t for _, t in ends][skip:]
    intervals = len(times) - 1
    if intervals < 1:
        return None
    if intervals > 1 and intervals % 2 == 1:
        intervals -= 1
    return (times[intervals] - times[0]) / intervals


def staleness_histogram(values):
    histogram = {}
    for v in values:
        histogram[v] = histogram.get(v, 0) + 1
    return dict(sorted(histogram.items()))
