import unittest

import numpy as np

from . import context

from odsgdlab import enum
from odsgdlab.cluster import DEFERRED, RoundCompleted, Server, intra_node_reduce, run_training
from odsgdlab.config import ExperimentConfig
from odsgdlab.data import BatchPlan, gen_synthetic, split_dataset
from odsgdlab.errors import ConfigError, ProtocolError
from odsgdlab.model import forward_backward, init_params
from odsgdlab.optim import HyperParams, Updater
from odsgdlab.params import ParamStore, tensor


def scalar(v, version=None):
    return ParamStore({0: tensor([v])}, version=version)


def constant_lr(lr):
    return lambda progress: lr


class ClusterTestCase(unittest.TestCase):
    """Helpers for running small simulated clusters. Options given to simulate()
    override the defaults of `self.defaults`."""

    defaults = {
        'experiment.seed': 1,
        'experiment.iterations': 20,
        'cluster.workers': 2,
        'cluster.batch': 4,
        'cluster.wp': 3,
        'data.n': 400,
        'data.d': 5,
        'data.k': 3,
        'optimizer.eta': 0.1,
        'timing.t_cop': 3.0,
        'timing.t_com': 3.0,
        'timing.t_com_prime': 2.0,
    }

    def config(self, options={}):
        return ExperimentConfig({**self.defaults, **options}).validate()

    def datasets(self, cfg):
        data = gen_synthetic(cfg['experiment.seed'], cfg['data.n'], cfg['data.d'], cfg['data.k'],
                             cfg['data.separation'])
        return split_dataset(data, cfg['data.test_fraction'], cfg['experiment.seed'])

    def simulate(self, mode, options={}, record_params=False):
        cfg = self.config(options)
        train, test = self.datasets(cfg)
        return run_training(mode, cfg, train, test, record_params=record_params)

    def records(self, summary, actor, event):
        return [r for r in summary.trace if r.actor == actor and r.event == event]

    def assertSameParams(self, a, b):
        np.testing.assert_array_equal(a.params.flat(), b.params.flat())


class ServerTestCase(unittest.TestCase):
    def server(self, mode, workers, w=1.0, updater='sgd', hp=None):
        store = scalar(w)
        return Server(mode, workers, store, Updater(updater, hp or HyperParams(), store), constant_lr(0.1))

    def test_synchronous_round(self):
        server = self.server(enum.mode.SSGD, 4)
        for m, g in enumerate((0.1, 0.2, 0.3)):
            self.assertIsNone(server.handle_push(m, scalar(g), round=0))
            self.assertEqual(server.count, m + 1)
            self.assertEqual(server.w[0][0], 1.0)
        completed = server.handle_push(3, scalar(0.4), round=0)
        self.assertIsInstance(completed, RoundCompleted)
        self.assertEqual(completed.t_new, 1)
        self.assertEqual(server.count, 0)
        self.assertEqual(server.w.version, 1)
        self.assertAlmostEqual(server.w[0][0], 1.0 - 0.1 * 0.25, places=15)

    def test_single_worker(self):
        server = self.server(enum.mode.SSGD, 1)
        self.assertEqual(server.handle_push(0, scalar(0.5)).t_new, 1)
        self.assertAlmostEqual(server.w[0][0], 0.95, places=15)

    def test_deferred_pull(self):
        server = self.server(enum.mode.SSGD, 2)
        replies = []
        self.assertIs(server.handle_pull(0, round=0, reply=replies.append), DEFERRED)
        server.handle_push(0, scalar(1.0), round=0)
        self.assertEqual(replies, [])
        server.handle_push(1, scalar(1.0), round=0)
        self.assertEqual(len(replies), 1)
        self.assertEqual(replies[0].version, 1)
        self.assertAlmostEqual(replies[0][0][0], 0.9, places=15)

        # the reply is a copy
        replies[0][0][0] = 7.0
        self.assertAlmostEqual(server.w[0][0], 0.9, places=15)

        # round 0 is done, so a late pull for it is answered at once
        self.assertEqual(server.handle_pull(1, round=0).version, 1)

    def test_push_errors(self):
        server = self.server(enum.mode.SSGD, 2)
        server.handle_push(0, scalar(1.0), round=0)
        with self.assertRaises(ProtocolError):
            server.handle_push(0, scalar(1.0), round=0)
        with self.assertRaises(ProtocolError):
            server.handle_push(2, scalar(1.0), round=0)
        with self.assertRaises(ProtocolError):
            server.handle_pull(-1)
        with self.assertRaises(ConfigError):
            self.server(enum.mode.SSGD, 0)

    def test_early_push(self):
        server = self.server(enum.mode.SSGD, 2)
        server.handle_push(0, scalar(1.0), round=0)
        self.assertIsNone(server.handle_push(0, scalar(3.0), round=1))
        server.handle_push(1, scalar(1.0), round=0)
        self.assertEqual(server.t, 1)
        self.assertEqual(server.count, 1)
        server.handle_push(1, scalar(1.0), round=1)
        self.assertEqual(server.t, 2)
        self.assertAlmostEqual(server.w[0][0], 1.0 - 0.1 - 0.2, places=14)
        with self.assertRaises(ProtocolError):
            server.handle_push(0, scalar(1.0), round=1)

    def test_asynchronous(self):
        server = self.server(enum.mode.ASGD, 2)
        self.assertEqual(server.handle_push(0, scalar(0.5), base_version=0).t_new, 1)
        self.assertAlmostEqual(server.w[0][0], 0.95, places=15)
        self.assertEqual(server.handle_push(0, scalar(0.5), base_version=0).t_new, 2)
        self.assertEqual(server.staleness, [0, 1])
        self.assertEqual(server.handle_pull(1).version, 2)

    def test_delay_compensation_uses_pull_snapshot(self):
        server = self.server(enum.mode.DCASGD_C, 2, updater='dcasgd_c', hp=HyperParams(lam=0.04))
        server.handle_pull(0)
        server.handle_pull(1)
        server.handle_push(1, scalar(0.2), base_version=0)
        self.assertAlmostEqual(server.w[0][0], 0.98, places=15)
        server.handle_push(0, scalar(0.5), base_version=0)
        # 0.98 - 0.1 * (0.5 + 0.04 * 0.25 * (0.98 - 1.0))
        self.assertAlmostEqual(server.w[0][0], 0.93002, delta=1e-12)
        self.assertEqual(server.staleness, [0, 1])


class ReduceTestCase(unittest.TestCase):
    def test_reduce(self):
        one = scalar(2.0)
        self.assertIs(intra_node_reduce([one]), one)
        self.assertEqual(intra_node_reduce([one, scalar(4.0)])[0][0], 3.0)
        with self.assertRaises(ConfigError):
            intra_node_reduce([])


class EquivalenceTestCase(ClusterTestCase):
    def test_ssgd_matches_large_batch_sgd(self):
        options = {'cluster.workers': 4, 'cluster.batch': 8, 'experiment.iterations': 50}
        summary = self.simulate(enum.mode.SSGD, options, record_params=True)
        self.assertEqual(len(summary.params_history), 50)

        cfg = self.config(options)
        train, _ = self.datasets(cfg)
        spec = cfg.model_spec(train.d, train.k)
        plan = BatchPlan(train.n, 1, 32, cfg['experiment.seed'])
        w = init_params(spec, cfg['experiment.seed'], cfg['model.init_scale'])
        worst = 0.0
        for i in range(50):
            grads = forward_backward(spec, w, train, plan.batch_for(i, 0)).grads
            for k in w:
                w[k] = w[k] - 0.1 * grads[k]
            got = summary.params_history[i].flat()
            worst = max(worst, np.linalg.norm(got - w.flat()) / np.linalg.norm(w.flat()))
        self.assertLess(worst, 1e-6)

    def test_asgd_single_worker_is_ssgd(self):
        options = {'cluster.workers': 1}
        self.assertSameParams(self.simulate(enum.mode.ASGD, options), self.simulate(enum.mode.SSGD, options))

    def test_delay_compensation_single_worker_is_ssgd(self):
        # with one worker the pull snapshot is always the current weights
        options = {'cluster.workers': 1}
        ssgd = self.simulate(enum.mode.SSGD, options)
        dc = self.simulate(enum.mode.DCASGD_C, options)
        np.testing.assert_allclose(dc.params.flat(), ssgd.params.flat(), rtol=0, atol=1e-12)

    def test_odsgd_without_switch_is_ssgd(self):
        options = {'cluster.wp': 20, 'local.updater': 'none'}
        odsgd = self.simulate(enum.mode.ODSGD, options)
        ssgd = self.simulate(enum.mode.SSGD, options)
        self.assertSameParams(odsgd, ssgd)
        self.assertEqual(odsgd.sim_time, ssgd.sim_time)
        self.assertEqual(set(odsgd.staleness), {0})

    def test_determinism(self):
        options = {'cluster.wp': 2, 'local.updater': 'dcasgd_a'}
        a = self.simulate(enum.mode.ODSGD, options)
        b = self.simulate(enum.mode.ODSGD, options)
        self.assertSameParams(a, b)
        self.assertEqual([r.to_line() for r in a.trace], [r.to_line() for r in b.trace])
        self.assertEqual(a.rows, b.rows)


class SwitchTestCase(ClusterTestCase):
    def test_switch_sequence(self):
        summary = self.simulate(enum.mode.ODSGD, {'cluster.wp': 5})
        for m in (0, 1):
            reports = summary.reports[m]
            self.assertEqual([r.events for r in reports[:6]], [[], [], [], [], ['backup_copy'], ['local_update']])
            self.assertEqual(reports[6].events, ['backup_copy', 'local_update'])
            self.assertEqual(summary.stage_transitions[m], [
                (0, enum.worker_stage.WarmUp),
                (4, enum.worker_stage.Switching),
                (6, enum.worker_stage.Steady),
            ])
        self.assertEqual(self.records(summary, 'worker0', 'backup_copy')[0].round, 4)
        self.assertEqual(self.records(summary, 'worker0', 'local_update')[0].round, 5)

    def test_steady_staleness(self):
        wp = 5
        summary = self.simulate(enum.mode.ODSGD, {'cluster.wp': wp, 'experiment.iterations': wp + 101})
        warm = summary.staleness[:2 * (wp + 1)]
        steady = summary.staleness[2 * (wp + 1):]
        self.assertEqual(set(warm), {0})
        self.assertEqual(len(steady), 200)
        self.assertEqual(set(steady), {1})

    def test_no_warm_up(self):
        summary = self.simulate(enum.mode.ODSGD, {'cluster.wp': 0})
        self.assertEqual(summary.stage_transitions[0], [(0, enum.worker_stage.Steady)])
        self.assertEqual(summary.reports[0][0].events, ['backup_copy', 'local_update'])
        self.assertEqual(summary.staleness[:2], [0, 0])
        self.assertEqual(set(summary.staleness[2:]), {1})

    def test_warm_up_in_epochs(self):
        # 320 training samples / (2 x 4) = 40 iterations per epoch
        summary = self.simulate(enum.mode.ODSGD, {'cluster.wp_epochs': 0.25})
        self.assertEqual(summary.wp, 10)

    def test_pull_overlaps_next_iteration(self):
        summary = self.simulate(enum.mode.ODSGD, {'cluster.wp': 2})
        entries = {e.label: e for e in summary.engine_traces[0]}
        for r in range(4, 15):
            self.assertLess(entries[f'compute[{r + 1}]'].start, entries[f'pull[{r}]'].end)
            self.assertLess(entries[f'broadcast[{r + 1}]'].start, entries[f'pull[{r}]'].end)

        summary = self.simulate(enum.mode.SSGD)
        entries = {e.label: e for e in summary.engine_traces[0]}
        for r in range(0, 15):
            self.assertGreaterEqual(entries[f'compute[{r + 1}]'].start, entries[f'pull[{r}]'].end)

    def test_every_engine_drains(self):
        for mode in enum.mode:
            summary = self.simulate(mode, {'cluster.wp': 1})
            for m in (0, 1):
                self.assertTrue(all(e.end is not None for e in summary.engine_traces[m]))
                self.assertEqual(len(summary.reports[m]), 20)


class TimingTestCase(ClusterTestCase):
    grid = [(float(t_cop), float(t_com), t_com_prime)
            for t_cop in (1, 2, 3, 5)
            for t_com in range(9)
            for t_com_prime in sorted({0.0, t_com / 2.0, float(t_com)})]

    def timing(self, t_cop, t_com, t_com_prime, **options):
        return {'timing.t_cop': t_cop, 'timing.t_com': t_com, 'timing.t_com_prime': t_com_prime,
                'experiment.iterations': 30, 'local.updater': 'none', **options}

    def test_synchronous_iteration_time(self):
        for t_cop, t_com, t_com_prime in self.grid:
            summary = self.simulate(enum.mode.SSGD, self.timing(t_cop, t_com, t_com_prime))
            self.assertEqual(summary.steady_iter_time, t_cop + t_com_prime, msg=(t_cop, t_com, t_com_prime))

    def test_one_step_delay_iteration_time(self):
        for t_cop, t_com, t_com_prime in self.grid:
            summary = self.simulate(enum.mode.ODSGD, self.timing(t_cop, t_com, t_com_prime))
            expected = t_cop if t_com <= t_cop else (t_com + t_cop) / 2.0
            self.assertEqual(summary.steady_iter_time, expected, msg=(t_cop, t_com, t_com_prime))

    def test_single_slot_iteration_time(self):
        for t_cop, t_com, t_com_prime in self.grid:
            summary = self.simulate(enum.mode.ODSGD, self.timing(t_cop, t_com, t_com_prime, **{'cluster.comm_slots': 1}))
            self.assertEqual(summary.steady_iter_time, max(t_cop, t_com), msg=(t_cop, t_com, t_com_prime))

    def test_throughput(self):
        # 2 workers x 4 samples every 5 time units
        summary = self.simulate(enum.mode.SSGD)
        self.assertAlmostEqual(summary.throughput, 8 / 5.0, delta=1e-9)

    def test_server_update_cost(self):
        free = self.simulate(enum.mode.SSGD)
        busy = self.simulate(enum.mode.SSGD, {'timing.server_update_cost': 1.0})
        self.assertAlmostEqual(busy.steady_iter_time, 6.0, delta=1e-9)
        self.assertLess(busy.throughput, free.throughput)

    def test_local_update_cost(self):
        summary = self.simulate(enum.mode.ODSGD, self.timing(3.0, 3.0, 2.0, **{'timing.local_update_cost': 1.0}))
        self.assertAlmostEqual(summary.steady_iter_time, 4.0, delta=1e-9)

        # push and the local update only read the gradient, so they run side by side
        entries = {e.label: e for e in summary.engine_traces[0]}
        for r in range(6, 25):
            self.assertEqual(entries[f'push[{r}]'].start, entries[f'local_update[{r}]'].start)
            self.assertLess(entries[f'local_update[{r}]'].start, entries[f'local_update[{r}]'].end)

    def test_heterogeneous_workers(self):
        summary = self.simulate(enum.mode.ASGD, {'timing.t_cop': [1.0, 3.0]})
        histogram = summary.staleness_histogram
        self.assertEqual(sum(histogram.values()), 40)
        self.assertGreater(max(histogram), 1)
        self.assertGreater(summary.mean_staleness, 0.0)

        synchronous = self.simulate(enum.mode.SSGD, {'timing.t_cop': [1.0, 3.0]})
        self.assertAlmostEqual(synchronous.steady_iter_time, 5.0, delta=1e-9)
        self.assertEqual(set(synchronous.staleness), {0})

    def test_zero_cost_run(self):
        summary = self.simulate(enum.mode.SSGD, {'timing.t_cop': 0.0, 'timing.t_com': 0.0, 'timing.t_com_prime': 0.0})
        self.assertIsNone(summary.throughput)
        self.assertEqual(summary.sim_time, 0.0)


class EpochTestCase(ClusterTestCase):
    def test_rows(self):
        # 40 iterations per epoch
        summary = self.simulate(enum.mode.SSGD, {'experiment.iterations': 0, 'experiment.epochs': 3})
        self.assertEqual([r.epoch for r in summary.rows], [1, 2, 3])
        times = [r.sim_time for r in summary.rows]
        self.assertEqual(times, sorted(times))
        for row in summary.rows:
            self.assertTrue(0.0 <= row.test_acc <= 1.0)
            self.assertGreater(row.throughput, 0.0)
        self.assertIs(summary.final, summary.rows[-1])

    def test_partial_epoch(self):
        summary = self.simulate(enum.mode.ASGD, {'experiment.iterations': 50})
        self.assertEqual([r.epoch for r in summary.rows], [1, 2])

    def test_learning(self):
        summary = self.simulate(enum.mode.ODSGD, {'experiment.iterations': 0, 'experiment.epochs': 5})
        self.assertLess(summary.rows[-1].train_loss, summary.rows[0].train_loss)
        self.assertGreater(summary.rows[-1].test_acc, 0.8)
