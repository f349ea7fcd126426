import logging

import numpy as np

from odsgdlab import enum
from odsgdlab import simnet
from odsgdlab.data import BatchPlan
from odsgdlab.engine import EngineState, OpSpec
from odsgdlab.errors import ConfigError, ProtocolError
from odsgdlab.metrics import MetricsRow
from odsgdlab.model import evaluate, forward_backward, init_params
from odsgdlab.optim import Updater, lr_at
from odsgdlab.params import copy_into, mean_of

logger = logging.getLogger(__name__)

# engine variables of a worker; Push/Pull slot i is COMM_BUF + i
DEVICES = 0
GRAD = 1
COMM_BAK = 2
COMM_BUF = 3

DEFERRED = object()

_server_updaters = {
    enum.mode.SSGD: enum.local_updater.sgd,
    enum.mode.ODSGD: enum.local_updater.sgd,
    enum.mode.ASGD: enum.local_updater.sgd,
    enum.mode.DCASGD_C: enum.local_updater.dcasgd_c,
    enum.mode.DCASGD_A: enum.local_updater.dcasgd_a,
}


class RoundCompleted(object):
    def __init__(self, t_new):
        self.t_new = t_new

    def __repr__(self):
        return f'RoundCompleted({self.t_new})'


def intra_node_reduce(grads):
    """Mean of the gradients of one worker's devices"""
    if len(grads) == 0:
        raise ConfigError('cluster.devices', 'cannot reduce gradients of zero devices')
    if len(grads) == 1:
        return grads[0]
    return mean_of(grads)


class PushMessage(object):
    def __init__(self, worker, round, grad, base_version, latency):
        self.worker = worker
        self.round = round
        self.grad = grad
        self.base_version = base_version
        self.latency = latency


class PullMessage(object):
    def __init__(self, worker, round, latency):
        self.worker = worker
        self.round = round
        self.latency = latency


class Server(object):
    """
    Holds the global weights. In the synchronous modes gradients are
    averaged per round and applied once all workers have pushed; in the
    asynchronous modes every gradient is applied on arrival.

    `lr_fn` maps the global progress (in rounds of M gradients) to a learning
    rate. `on_update` is called after every global update.
    """

    def __init__(self, mode, workers, w, updater, lr_fn, sim=None, update_cost=0.0, on_update=None):
        if workers < 1:
            raise ConfigError('cluster.workers', 'need at least one worker')
        self.mode = mode
        self.workers = workers
        self.w = w
        self.w.version = 0
        self.t = 0
        self.count = 0
        self.pushes = 0
        self.accumulator = w.zeros_like()
        self.updater = updater
        self.lr_fn = lr_fn
        self.sim = sim
        self.update_cost = update_cost
        self.on_update = on_update
        self.busy_until = 0.0
        self.snapshots = {}
        self.staleness = []
        self.workers_by_id = {}
        self._pushed = set()
        self._early = {}
        self._deferred = []

    def synchronous(self):
        return self.mode in enum.synchronous_modes

    def _check_worker(self, m):
        if not 0 <= m < self.workers:
            raise ProtocolError(f'message from unknown worker {m}')

    def _occupy(self):
        if self.sim is not None:
            self.busy_until = max(self.sim.now, self.busy_until) + self.update_cost

    def handle_push(self, m, grad, round=None, base_version=None):
        """Account for one gradient; returns RoundCompleted if this push
        completed a global update"""
        self._check_worker(m)
        self.w.require_compatible(grad, f'push from worker {m}')

        if not self.synchronous():
            if base_version is not None:
                self.staleness.append(self.t - base_version)
            lr = self.lr_fn(self.pushes / self.workers)
            if self.mode is enum.mode.ASGD:
                self.updater.apply(self.w, grad, lr)
            else:
                self.updater.apply(self.w, grad, lr, w_base=self.snapshots.get(m, self.w))
            self.pushes += 1
            return self._updated()

        if round is None:
            round = self.t
        if round < self.t or (round == self.t and m in self._pushed):
            raise ProtocolError(f'worker {m} pushed twice for round {round}')
        if round > self.t:
            logger.debug('holding early push of worker %d for round %d', m, round)
            self._early.setdefault(round, []).append((m, grad, base_version))
            return None
        return self._accumulate(m, grad, base_version)

    def _accumulate(self, m, grad, base_version):
        if base_version is not None:
            self.staleness.append(self.t - base_version)
        for k in self.accumulator:
            self.accumulator[k] += grad[k] / self.workers
        self.count += 1
        self._pushed.add(m)
        if self.count < self.workers:
            return None

        self.updater.apply(self.w, self.accumulator, self.lr_fn(self.t))
        self.pushes += self.workers
        self.count = 0
        self._pushed.clear()
        for k in self.accumulator:
            self.accumulator[k].fill(0.0)
        completed = self._updated()

        for m_early, g_early, base_early in self._early.pop(self.t, []):
            self._accumulate(m_early, g_early, base_early)
        return completed

    def _updated(self):
        self.t += 1
        self.w.version = self.t
        self._occupy()
        if self.sim is not None:
            self.sim.record('server', 'update', self.t - 1)
        if self.on_update is not None:
            self.on_update(self)
        self._release()
        return RoundCompleted(self.t)

    def _weights_for(self, m):
        weights = self.w.copy()
        if self.mode in (enum.mode.DCASGD_C, enum.mode.DCASGD_A):
            self.snapshots[m] = weights.copy()
        return weights

    def handle_pull(self, m, round=None, reply=None):
        """
        The current weights, or DEFERRED if this is a synchronous pull for a
        round that has not completed yet. A deferred pull is answered through
        `reply(weights)` once its round completes.
        """
        self._check_worker(m)
        if self.synchronous() and round is not None and round >= self.t:
            logger.debug('deferring pull of worker %d for round %d', m, round)
            self._deferred.append((m, round, reply))
            return DEFERRED
        return self._weights_for(m)

    def _release(self):
        waiting = []
        for m, round, reply in self._deferred:
            if round < self.t:
                weights = self._weights_for(m)
                if reply is not None:
                    reply(weights)
            else:
                waiting.append((m, round, reply))
        self._deferred = waiting

    def receive_push(self, msg):
        self.sim.record('server', 'push_received', msg.round, (f'worker{msg.worker}',))
        self.handle_push(msg.worker, msg.grad, msg.round, msg.base_version)

    def receive_pull(self, msg):
        reply = lambda weights: self._send(msg, weights)
        weights = self.handle_pull(msg.worker, None if msg.round < 0 else msg.round, reply)
        if weights is DEFERRED:
            self.sim.record('server', 'pull_deferred', msg.round, (f'worker{msg.worker}',))
        else:
            self._send(msg, weights)

    def _send(self, msg, weights):
        at = max(self.sim.now, self.busy_until) + msg.latency
        self.sim.post(at, f'worker{msg.worker}', 'pull_response', self.workers_by_id[msg.worker].on_pull_response,
                      (msg.round, weights))


class IterationReport(object):
    def __init__(self, iteration, stage):
        self.iteration = iteration
        self.stage = stage
        self.loss = None
        self.base_version = None
        self.events = []

    def __repr__(self):
        return f'IterationReport({self.iteration}, {self.stage}, events={self.events})'


class _Executor(object):
    """Starts ready engine ops on the simulated clock and completes them
    after their duration"""

    def __init__(self, engine, sim, actor):
        self.engine = engine
        self.sim = sim
        self.actor = actor

    def dispatch(self):
        for ticket in self.engine.ready():
            op = self.engine.op(ticket)
            self.engine.start(ticket, self.sim.now)
            logger.debug('%s: start %s at %s', self.actor, op.label, self.sim.now)
            if op.action is not None:
                op.action(ticket)
            if not op.external:
                self.sim.after(op.duration, self.actor, 'op_end', self.finish, ticket)

    def finish(self, ticket):
        op = self.engine.op(ticket)
        self.engine.complete(ticket, self.sim.now)
        if op.on_complete is not None:
            op.on_complete()
        self.dispatch()


class Worker(object):
    """
    One training node with `devices` local devices. The flow of iteration r
    depends on the stage: plain synchronous iterations until wp-1, a copy of
    the pulled weights into comm_bak at wp-1, the first local update at wp,
    then one-step delay iterations that train on comm_bak while the pull of
    the previous round is still in flight.
    """

    def __init__(self, m, env):
        self.m = m
        self.env = env
        self.name = f'worker{m}'
        self.stage = None
        self.num = 0
        self.wp = env.wp
        self.t_local = None
        self.slots = env.comm_slots
        self.comm_buf = [env.like.zeros_like() for _ in range(self.slots)]
        self.comm_bak = env.like.zeros_like()
        self.bak_seeded = False
        self._bak_scheduled = env.mode is enum.mode.ODSGD and self.wp == 0
        self.dev = env.like.zeros_like()
        self.grad = env.like.zeros_like()
        self.local = Updater(env.local_kind, env.local_hp, env.like)
        self.engine = EngineState()
        self.executor = _Executor(self.engine, env.sim, self.name)
        self.reports = []
        self.transitions = []
        self._pending_pulls = {}

    def _buf(self, r):
        return COMM_BUF + r % self.slots

    def stage_for(self, r):
        if self.env.mode is not enum.mode.ODSGD:
            return enum.worker_stage.WarmUp
        if self.wp == 0 or r > self.wp:
            return enum.worker_stage.Steady
        if r >= self.wp - 1:
            return enum.worker_stage.Switching
        return enum.worker_stage.WarmUp

    def _latency(self, r):
        timing = self.env.timing
        if self.env.mode is enum.mode.ODSGD and self.stage_for(r) is enum.worker_stage.Steady:
            return timing.t_com / 2.0
        return timing.t_com_prime / 2.0

    def _record(self, event, r=None, labels=()):
        self.env.sim.record(self.name, event, r, labels)

    # op builders

    def _broadcast(self, report, source):
        def action(ticket):
            weights = self.comm_bak if source == COMM_BAK else self.comm_buf[source - COMM_BUF]
            self.dev = weights.copy()
            report.base_version = self.dev.version
        return OpSpec(f'broadcast[{report.iteration}]', reads={source}, writes={DEVICES}, action=action)

    def _compute(self, report):
        env = self.env
        r = report.iteration

        def action(ticket):
            batch = env.plan.batch_for(r, self.m)
            results = [forward_backward(env.spec, self.dev, env.train, b) for b in batch.split(env.devices)]
            self.grad = intra_node_reduce([res.grads for res in results])
            self.grad.version = self.dev.version
            report.loss = float(np.mean([res.loss for res in results]))

        return OpSpec(f'compute[{r}]', reads={DEVICES}, writes={GRAD}, duration=env.timing.t_cop_for(self.m),
                      action=action, on_complete=lambda: self._advance(r))

    def _stage_grad(self, r):
        def action(ticket):
            copy_into(self.grad, self.comm_buf[r % self.slots])
        return OpSpec(f'grad_copy[{r}]', reads={GRAD}, writes={self._buf(r)}, action=action)

    def _push(self, r):
        env = self.env
        latency = self._latency(r)

        def action(ticket):
            buf = self.comm_buf[r % self.slots]
            msg = PushMessage(self.m, r, buf.copy(), buf.version, latency)
            self._record('push', r, (f'base={buf.version}',))
            env.sim.after(latency, 'server', 'push', env.server.receive_push, msg)
        return OpSpec(f'push[{r}]', reads={self._buf(r)}, action=action)

    def _pull(self, r):
        env = self.env
        latency = self._latency(r) if r >= 0 else env.timing.t_com_prime / 2.0

        def action(ticket):
            self._pending_pulls[r] = ticket
            self._record('pull', r)
            env.sim.after(latency, 'server', 'pull', env.server.receive_pull, PullMessage(self.m, r, latency))
        return OpSpec(f'pull[{r}]', writes={self._buf(r)}, action=action, external=True)

    def _backup_copy(self, report, r_pulled):
        def action(ticket):
            copy_into(self.comm_buf[r_pulled % self.slots], self.comm_bak)
            self.bak_seeded = True
            report.events.append('backup_copy')
            self._record('backup_copy', report.iteration, (f'version={self.comm_bak.version}',))
        return OpSpec(f'backup_copy[{report.iteration}]', reads={self._buf(r_pulled)}, writes={COMM_BAK},
                      action=action)

    def _local_update(self, report):
        env = self.env
        r = report.iteration

        def action(ticket):
            lr = env.local_lr(r)
            self.local.apply(self.comm_bak, self.grad, lr, w_base=self.dev)
            report.events.append('local_update')
            self._record('local_update', r)
        return OpSpec(f'local_update[{r}]', reads={GRAD, DEVICES}, writes={COMM_BAK},
                      duration=env.timing.local_update_cost, action=action)

    # iteration flows

    def _enter(self, r):
        stage = self.stage_for(r)
        if stage is not self.stage:
            self.stage = stage
            self.transitions.append((r, stage))
            self._record('stage', r, (str(stage),))
            logger.info('%s enters %s at iteration %d', self.name, stage, r)
        report = IterationReport(r, stage)
        self.reports.append(report)
        return report

    def worker_warmup_iter(self):
        r = self.num
        if self.stage_for(r) is enum.worker_stage.Steady:
            raise ProtocolError(f'{self.name}: warm-up iteration {r} requested in the Steady stage')
        report = self._enter(r)
        odsgd = self.env.mode is enum.mode.ODSGD

        ops = [self._broadcast(report, self._buf(r - 1)), self._compute(report), self._stage_grad(r), self._push(r)]
        if odsgd and r == self.wp:
            ops.append(self._local_update(report))
        ops.append(self._pull(r))
        if odsgd and r == self.wp - 1:
            ops.append(self._backup_copy(report, r))
        self._submit(ops)
        return report

    def worker_steady_iter(self):
        r = self.num
        if self.stage_for(r) is not enum.worker_stage.Steady:
            raise ProtocolError(f'{self.name}: steady iteration {r} requested in the {self.stage_for(r)} stage')
        if not self.bak_seeded and not self._bak_scheduled:
            raise ProtocolError(f'{self.name}: comm_bak was never seeded')
        report = self._enter(r)
        self._submit([
            self._broadcast(report, COMM_BAK),
            self._backup_copy(report, r - 1),
            self._compute(report),
            self._stage_grad(r),
            self._push(r),
            self._local_update(report),
            self._pull(r),
        ])
        return report

    def _submit(self, ops):
        for op in ops:
            self.engine.submit(op)

    def start(self):
        """Issue the initial pull of w_0, then the first iteration"""
        seed = IterationReport(-1, None)
        ops = [self._pull(-1)]
        if self._bak_scheduled:
            ops.append(self._backup_copy(seed, -1))
        self._submit(ops)
        self._next_iteration()
        self.executor.dispatch()

    def _next_iteration(self):
        if self.num >= self.env.iterations:
            return
        if self.stage_for(self.num) is enum.worker_stage.Steady:
            self.worker_steady_iter()
        else:
            self.worker_warmup_iter()

    def _advance(self, r):
        self.num = r + 1
        self._next_iteration()

    def on_pull_response(self, payload):
        r, weights = payload
        ticket = self._pending_pulls.pop(r, None)
        if ticket is None:
            raise ProtocolError(f'{self.name}: unexpected pull response for round {r}')
        copy_into(weights, self.comm_buf[r % self.slots])
        self.t_local = weights.version
        if r >= 0:
            self._record('iteration_end', r, (f'version={weights.version}',))
        self.executor.finish(ticket)


class _Environment(object):
    """What every worker of a run shares"""

    def __init__(self, **kwargs):
        self.__dict__.update(kwargs)


class RunSummary(object):
    def __init__(self, mode, rows, server, workers, sim, iterations, wp, params_history):
        self.mode = mode
        self.rows = rows
        self.params = server.w
        self.sim_time = sim.now
        self.trace = sim.trace
        self.iterations = iterations
        self.wp = wp
        self.staleness = list(server.staleness)
        self.staleness_histogram = simnet.staleness_histogram(server.staleness)
        self.mean_staleness = float(np.mean(server.staleness)) if server.staleness else 0.0
        self.reports = {w.m: w.reports for w in workers}
        self.stage_transitions = {w.m: w.transitions for w in workers}
        self.engine_traces = {w.m: w.engine.trace() for w in workers}
        self.params_history = params_history
        self.baseline = None

        batch = workers[0].env.batch
        try:
            self.throughput = simnet.measure_throughput(sim.trace, len(workers), batch)
        except ProtocolError:
            # a run with zero timing costs has no elapsed time to measure
            self.throughput = None
        skip = wp + 2 if mode is enum.mode.ODSGD else 0
        self.steady_iter_time = simnet.steady_iter_time(sim.trace, 'worker0', skip)

    @property
    def final(self):
        return self.rows[-1] if self.rows else None


class _EpochMonitor(object):
    def __init__(self, sim, spec, train, test, samples_per_push, samples_per_epoch, record_params):
        self.sim = sim
        self.spec = spec
        self.train = train
        self.test = test
        self.samples_per_push = samples_per_push
        self.samples_per_epoch = samples_per_epoch
        self.rows = []
        self.history = [] if record_params else None
        self._staleness_seen = 0

    def __call__(self, server):
        if self.history is not None:
            self.history.append(server.w.copy())
        samples = server.pushes * self.samples_per_push
        while samples >= (len(self.rows) + 1) * self.samples_per_epoch:
            self.emit(server, len(self.rows) + 1)

    def emit(self, server, epoch):
        train_acc, train_loss = evaluate(self.spec, server.w, self.train)
        test_acc, _ = evaluate(self.spec, server.w, self.test)
        samples = server.pushes * self.samples_per_push
        throughput = samples / self.sim.now if self.sim.now > 0 else 0.0
        recent = server.staleness[self._staleness_seen:]
        self._staleness_seen = len(server.staleness)
        staleness = float(np.mean(recent)) if recent else 0.0
        row = MetricsRow(epoch, self.sim.now, train_loss, train_acc, test_acc, throughput, staleness)
        logger.info('epoch %d at t=%s: loss %.4f, train %.4f, test %.4f', epoch, self.sim.now, train_loss,
                    train_acc, test_acc)
        self.rows.append(row)

    def finish(self, server):
        samples = server.pushes * self.samples_per_push
        if samples > len(self.rows) * self.samples_per_epoch:
            self.emit(server, len(self.rows) + 1)


def run_training(mode, cfg, train, test, record_params=False):
    """Train on `train` with every worker and the server on one simulated
    clock; evaluates the global weights on `train` and `test` each epoch"""
    if isinstance(mode, str):
        mode = enum.mode[mode]
    workers = cfg['cluster.workers']
    batch = cfg['cluster.batch']
    devices = cfg['cluster.devices']
    if batch % devices != 0:
        raise ConfigError('cluster.devices', f'{devices} devices do not divide the batch of {batch}')

    timing = cfg.timing_model()
    if len(timing.per_worker) not in (1, workers):
        raise ConfigError('timing.t_cop', f'{len(timing.per_worker)} compute times for {workers} workers')

    spec = cfg.model_spec(train.d, train.k)
    plan = BatchPlan(train.n, workers, batch, cfg['experiment.seed'])
    ipe = plan.iterations_per_epoch
    iterations = cfg['experiment.iterations'] or cfg['experiment.epochs'] * ipe
    if iterations < 1:
        raise ConfigError('experiment.iterations', 'the run needs at least one iteration')

    wp = cfg['cluster.wp']
    if cfg['cluster.wp_epochs'] > 0:
        wp = int(round(cfg['cluster.wp_epochs'] * ipe))
    slots = cfg['cluster.comm_slots'] if mode is enum.mode.ODSGD else 1

    schedule = cfg.lr_schedule(iterations)
    local_schedule = schedule.scaled(cfg.local_eta() / cfg['optimizer.eta'])

    sim = simnet.Simulator()
    w0 = init_params(spec, cfg['experiment.seed'], cfg['model.init_scale'])
    monitor = _EpochMonitor(sim, spec, train, test, batch, ipe * workers * batch, record_params)
    server = Server(
        mode, workers, w0,
        Updater(_server_updaters[mode], cfg.hyper_params('optimizer'), w0),
        lambda i: lr_at(schedule, i / ipe, i, iterations),
        sim=sim,
        update_cost=timing.server_update_cost,
        on_update=monitor,
    )
    env = _Environment(
        mode=mode, sim=sim, server=server, spec=spec, train=train, plan=plan, timing=timing,
        devices=devices, batch=batch, wp=wp, comm_slots=slots, iterations=iterations, like=w0,
        local_kind=cfg['local.updater'], local_hp=cfg.hyper_params('local'),
        local_lr=lambda r: lr_at(local_schedule, r / ipe, r, iterations),
    )
    nodes = [Worker(m, env) for m in range(workers)]
    server.workers_by_id = nodes

    logger.info('%s run: %d workers x %d iterations (wp=%d, %d comm slots)', mode, workers, iterations, wp, slots)
    for node in nodes:
        node.start()
    sim.run_until_idle()

    for node in nodes:
        if not node.engine.drained():
            raise ProtocolError(f'{node.name} finished with undrained operations')
    monitor.finish(server)
    return RunSummary(mode, monitor.rows, server, nodes, sim, iterations, wp, monitor.history)
