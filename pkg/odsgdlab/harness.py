import logging

from odsgdlab import enum
from odsgdlab import metrics
from odsgdlab import simnet
from odsgdlab.cluster import run_training
from odsgdlab.config import ExperimentConfig
from odsgdlab.data import gen_synthetic, load_idx, split_dataset
from odsgdlab.errors import ConfigError, FormatError, ProtocolError

logger = logging.getLogger(__name__)


def load_datasets(cfg):
    """(train, test) datasets described by the [data] section"""
    if cfg['data.source'] is enum.data_source.idx:
        k = cfg['data.k']
        train = load_idx(cfg['data.train_images'], cfg['data.train_labels'], k)
        test = load_idx(cfg['data.test_images'], cfg['data.test_labels'], k)
        return train, test
    data = gen_synthetic(cfg['experiment.seed'], cfg['data.n'], cfg['data.d'], cfg['data.k'],
                         cfg['data.separation'])
    return split_dataset(data, cfg['data.test_fraction'], cfg['experiment.seed'])


def with_overrides(cfg, **overrides):
    """A copy of `cfg` with dotted-key overrides given as keyword arguments
    (`cluster__wp=3` sets cluster.wp)"""
    copy = ExperimentConfig()
    for section in cfg.config.sections():
        for key, value in cfg.config[section].items():
            copy[f'{section}.{key}'] = value
    for name, value in overrides.items():
        copy[name.replace('__', '.')] = value
    return copy


class BaselineComparison(object):
    """
    Final throughput of a run against a baseline run's. `imp_rate` is the
    measured iteration-time improvement, 1 - speed_baseline / speed;
    `predicted_imp_rate` is the closed-form value, given only for one-step
    delay runs on a homogeneous timing model.
    """

    def __init__(self, name, rows, summary, timing):
        if len(rows) == 0:
            raise FormatError(name, 'no epochs')
        self.name = name
        self.throughput = rows[-1].throughput
        speed = summary.final.throughput if summary.final is not None else 0.0
        self.gr_rate = simnet.gr_rate(speed, self.throughput)
        self.imp_rate = 1.0 - self.throughput / speed if speed > 0 else None
        self.predicted_imp_rate = None
        if summary.mode is enum.mode.ODSGD and timing.homogeneous() and timing.t_cop + timing.t_com_prime > 0:
            self.predicted_imp_rate = simnet.imp_rate(timing)

    def __repr__(self):
        return f'BaselineComparison({self.name!r}, gr_rate={self.gr_rate}, imp_rate={self.imp_rate})'


def run_experiment(cfg, datasets=None, baseline=None):
    """Run one configured experiment, writing its metrics CSV and trace when
    the configuration names files for them. `baseline` is the metrics CSV of
    a run to compare the final throughput against."""
    baseline_rows = metrics.read_metrics(baseline) if baseline else None
    train, test = datasets if datasets is not None else load_datasets(cfg)
    summary = run_training(cfg['experiment.mode'], cfg, train, test)
    if baseline_rows is not None:
        summary.baseline = BaselineComparison(str(baseline), baseline_rows, summary, cfg.timing_model())

    output = cfg['experiment.output']
    if output:
        metrics.write_metrics(summary.rows, output)
    trace = cfg['experiment.trace']
    if trace:
        simnet.write_trace(summary.trace, trace)
        logger.info('wrote %d trace records to %s', len(summary.trace), trace)

    final = summary.final
    if final is not None:
        logger.info('%s finished at t=%s: test accuracy %.4f, throughput %s', summary.mode, summary.sim_time,
                    final.test_acc, summary.throughput)
    return summary


class Reconciliation(object):
    """Measured steady iteration times of a synchronous and a one-step delay
    run on the same timing model, next to the closed-form prediction"""

    def __init__(self, timing, t_org, t_new):
        self.timing = timing
        self.t_org = t_org
        self.t_new = t_new
        self.measured = (t_org - t_new) / t_org
        self.predicted = simnet.imp_rate(timing)
        self.predicted_t_new = simnet.predict_iter_time(timing)

    def __repr__(self):
        return (f'Reconciliation(T_org={self.t_org}, T_new={self.t_new}, measured={self.measured}, '
                f'predicted={self.predicted})')


def reconcile(cfg, datasets=None):
    timing = cfg.timing_model()
    if not timing.homogeneous():
        raise ConfigError('timing.t_cop', 'reconciling needs one compute time for every worker')
    datasets = datasets if datasets is not None else load_datasets(cfg)
    ssgd = run_training(enum.mode.SSGD, cfg, *datasets)
    odsgd = run_training(enum.mode.ODSGD, cfg, *datasets)
    if ssgd.steady_iter_time is None or odsgd.steady_iter_time is None:
        raise ProtocolError('too few iterations to measure a steady iteration time')
    return Reconciliation(timing, ssgd.steady_iter_time, odsgd.steady_iter_time)


def sweep_wp(cfg, wps, datasets=None):
    """One-step delay runs for each warm-up length in `wps`; returns
    (wp, summary) pairs"""
    datasets = datasets if datasets is not None else load_datasets(cfg)
    results = []
    for wp in wps:
        run_cfg = with_overrides(cfg, experiment__mode=enum.mode.ODSGD, cluster__wp=wp, cluster__wp_epochs=0.0,
                                 experiment__output='', experiment__trace='')
        logger.info('warm-up sweep: wp=%d', wp)
        results.append((wp, run_training(enum.mode.ODSGD, run_cfg, *datasets)))
    return results


def compare_files(baseline_path, other_paths, window=5, smooth_start=None):
    baseline = (str(baseline_path), metrics.read_metrics(baseline_path))
    others = [(str(p), metrics.read_metrics(p)) for p in other_paths]
    return metrics.compare_runs(baseline, others, window, smooth_start)
