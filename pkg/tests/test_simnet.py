import os
import random
import tempfile
import unittest

from . import context

from odsgdlab.errors import ConfigError, ProtocolError
from odsgdlab.simnet import (TRACE_HEADER, Simulator, TimingModel, TraceRecord, gr_rate, imp_rate, measure_throughput,
                             predict_iter_time, staleness_histogram, steady_iter_time, write_trace)


def iteration_ends(actor, times, first_round=0):
    return [TraceRecord(t, actor, 'iteration_end', first_round + i) for i, t in enumerate(times)]


class SimulatorTestCase(unittest.TestCase):
    def test_order(self):
        sim = Simulator()
        seen = []
        sim.post(2.0, 'a', 'late', lambda: seen.append('late'))
        sim.post(1.0, 'a', 'first', lambda: seen.append('first'))
        sim.post(1.0, 'b', 'second', lambda: seen.append('second'))
        self.assertEqual(sim.run_until_idle(), 2.0)
        self.assertEqual(seen, ['first', 'second', 'late'])

    def test_payload_and_chaining(self):
        sim = Simulator()
        seen = []

        def bounce(n):
            seen.append((sim.now, n))
            if n > 0:
                sim.after(0.5, 'x', 'bounce', bounce, n - 1)

        sim.post(0.0, 'x', 'bounce', bounce, 2)
        sim.run_until_idle()
        self.assertEqual(seen, [(0.0, 2), (0.5, 1), (1.0, 0)])

    def test_past(self):
        sim = Simulator()
        sim.post(3.0, 'a', 'tick')
        sim.run_until_idle()
        with self.assertRaises(ProtocolError):
            sim.post(2.0, 'a', 'back')

    def test_idle(self):
        self.assertEqual(Simulator().run_until_idle(), 0.0)

    def test_record_and_write(self):
        sim = Simulator()
        sim.post(1.5, 'worker0', 'tick', lambda: sim.record('worker0', 'iteration_end', 0, ('a', 'b')))
        sim.run_until_idle()
        self.assertEqual(sim.trace[0].to_line(), '1.5,worker0,iteration_end,0,a;b')

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'trace.csv')
            write_trace(sim.trace, path)
            with open(path) as f:
                self.assertEqual(f.read(), TRACE_HEADER + '\n1.5,worker0,iteration_end,0,a;b\n')


class TimingModelTestCase(unittest.TestCase):
    def test_per_worker(self):
        tm = TimingModel([2.0, 3.0], 3.0, 2.0)
        self.assertEqual(tm.t_cop, 3.0)
        self.assertEqual(tm.t_cop_for(0), 2.0)
        self.assertFalse(tm.homogeneous())
        self.assertTrue(TimingModel(2.0, 3.0, 2.0).homogeneous())
        self.assertEqual(TimingModel(2.0, 3.0, 2.0).t_cop_for(5), 2.0)

    def test_invalid(self):
        with self.assertRaises(ConfigError) as cm:
            TimingModel(-1.0, 3.0, 2.0)
        self.assertEqual(cm.exception.field, 'timing.t_cop')
        with self.assertRaises(ConfigError) as cm:
            TimingModel(1.0, 2.0, 3.0)
        self.assertEqual(cm.exception.field, 'timing.t_com_prime')
        with self.assertRaises(ConfigError):
            TimingModel(1.0, 2.0, 1.0, server_update_cost=-0.1)


class PredictionTestCase(unittest.TestCase):
    def test_predict(self):
        self.assertEqual(predict_iter_time(TimingModel(3.0, 3.0, 2.0)), 3.0)
        self.assertEqual(predict_iter_time(TimingModel(2.0, 4.0, 3.0)), 3.0)
        self.assertEqual(predict_iter_time(TimingModel(5.0, 1.0, 1.0)), 5.0)

    def test_improvement(self):
        tm = TimingModel(3.0, 3.0, 2.0)
        self.assertAlmostEqual(imp_rate(tm), 0.4, places=15)
        with self.assertRaises(ConfigError):
            imp_rate(TimingModel(0.0, 0.0, 0.0))

    def test_random_triples(self):
        rng = random.Random(0)
        for _ in range(10000):
            t_cop = rng.uniform(0.01, 10.0)
            t_com = rng.uniform(0.0, 10.0)
            t_com_prime = rng.uniform(0.0, t_com)
            tm = TimingModel(t_cop, t_com, t_com_prime)
            self.assertLess(imp_rate(tm), 0.5)
            if t_com <= t_cop:
                self.assertEqual(predict_iter_time(tm), t_cop)
                # any communication time hidden behind compute gives the same rate
                for other_t_com in (t_com_prime, t_cop):
                    self.assertEqual(imp_rate(TimingModel(t_cop, other_t_com, t_com_prime)), imp_rate(tm))

    def test_gr_rate(self):
        self.assertAlmostEqual(gr_rate(309.782, 236.78), 30.83, delta=0.01)
        self.assertAlmostEqual(gr_rate(149.83, 193.43), -22.54, delta=0.01)
        self.assertEqual(gr_rate(236.78, 236.78), 0.0)
        with self.assertRaises(ConfigError):
            gr_rate(1.0, 0.0)


class MeasurementTestCase(unittest.TestCase):
    def test_throughput(self):
        trace = iteration_ends('worker0', [10.0 * (i + 1) for i in range(10)])
        self.assertAlmostEqual(measure_throughput(trace, 1, 10), 1.0, places=12)

    def test_throughput_skips_first_round(self):
        # a slow first round does not count
        trace = iteration_ends('worker0', [10.0, 12.0, 14.0])
        self.assertEqual(measure_throughput(trace, 1, 1), 0.5)
        self.assertEqual(measure_throughput(trace[:1], 1, 5), 0.5)

    def test_throughput_waits_for_every_worker(self):
        trace = iteration_ends('worker0', [1.0, 2.0, 3.0]) + iteration_ends('worker1', [1.5, 2.5])
        # round 2 is incomplete; rounds end at 1.5 and 2.5
        self.assertAlmostEqual(measure_throughput(trace, 2, 4), 8.0, places=12)

    def test_throughput_empty(self):
        with self.assertRaises(ProtocolError):
            measure_throughput([], 1, 10)
        with self.assertRaises(ProtocolError):
            measure_throughput(iteration_ends('worker0', [0.0]), 1, 10)

    def test_steady_iter_time(self):
        trace = iteration_ends('worker0', [6.0, 9.0, 11.0, 14.0, 16.0, 19.0])
        self.assertEqual(steady_iter_time(trace, 'worker0'), 2.5)
        self.assertEqual(steady_iter_time(trace, 'worker0', skip=1), 2.5)
        self.assertIsNone(steady_iter_time(trace, 'worker0', skip=5))
        self.assertIsNone(steady_iter_time(trace, 'worker1'))

    def test_staleness_histogram(self):
        self.assertEqual(staleness_histogram([2, 0, 1, 1, 0, 1]), {0: 2, 1: 3, 2: 1})
        self.assertEqual(list(staleness_histogram([3, 1])), [1, 3])
