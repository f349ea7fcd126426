__version__ = '0.1.0'

import argparse
import logging
import sys

from odsgdlab import config
from odsgdlab import enum
from odsgdlab import harness
from odsgdlab import metrics
from odsgdlab import simnet
from odsgdlab.errors import ConfigError, FormatError, IoError

logger = logging.getLogger(__name__)


def _overrides(args):
    """Dotted-key overrides from the command-line flags that were given"""
    flags = {
        'mode': 'experiment.mode',
        'workers': 'cluster.workers',
        'wp': 'cluster.wp',
        'seed': 'experiment.seed',
        't_cop': 'timing.t_cop',
        't_com': 'timing.t_com',
        't_com_prime': 'timing.t_com_prime',
        'optimizer_local': 'local.updater',
        'out': 'experiment.output',
    }
    overrides = {}
    for attribute, key in flags.items():
        value = getattr(args, attribute, None)
        if value is not None:
            overrides[key] = str(value)
    return overrides


def _print_summary(summary):
    final = summary.final
    print(f'mode:            {summary.mode}')
    print(f'iterations:      {summary.iterations} per worker (wp={summary.wp})')
    print(f'simulated time:  {summary.sim_time}')
    if summary.throughput is not None:
        print(f'throughput:      {summary.throughput:.6g} samples per time unit')
    if summary.steady_iter_time is not None:
        print(f'steady iter:     {summary.steady_iter_time:.6g} time units')
    print(f'mean staleness:  {summary.mean_staleness:.4g}')
    histogram = ', '.join(f'{k}: {v}' for k, v in summary.staleness_histogram.items())
    print(f'staleness:       {{{histogram}}}')
    if final is not None:
        print(f'final epoch {final.epoch}: train loss {final.train_loss:.6f}, train acc {final.train_acc:.4f}, '
              f'test acc {final.test_acc:.4f}')
    comparison = summary.baseline
    if comparison is not None:
        print(f'baseline:        {comparison.name} (throughput {comparison.throughput:.6g})')
        print(f'GR_Rate:         {comparison.gr_rate:.2f}%')
        if comparison.imp_rate is not None:
            predicted = ''
            if comparison.predicted_imp_rate is not None:
                predicted = f' (predicted {comparison.predicted_imp_rate:.4f})'
            print(f'IMP_Rate:        {comparison.imp_rate:.4f}{predicted}')


def run(args):
    cfg = config.load_config(args.config, _overrides(args))
    summary = harness.run_experiment(cfg, baseline=args.baseline)
    _print_summary(summary)
    if cfg['experiment.output']:
        print(f'\nMetrics written to {cfg["experiment.output"]}')


def compare(args):
    table = harness.compare_files(args.baseline, args.others, args.window, args.smooth_start)
    print(metrics.format_comparison(table, args.window))
    if args.out:
        metrics.write_comparison(table, args.out)
        print(f'\nComparison written to {args.out}')


def predict(args):
    tm = simnet.TimingModel(args.t_cop, args.t_com, args.t_com_prime)
    print(f'T_org    = {tm.t_cop + tm.t_com_prime:.6g}')
    print(f'T_new    = {simnet.predict_iter_time(tm):.6g}')
    print(f'IMP_Rate = {simnet.imp_rate(tm):.4f}')


def sweep_wp(args):
    cfg = config.load_config(args.config, _overrides(args))
    results = harness.sweep_wp(cfg, args.wps)
    format_str = '{:>6} | {:>9} | {:>12} | {:>10}'
    print(format_str.format('wp', 'test_acc', 'throughput', 'staleness'))
    print(format_str.format('-' * 6, '-' * 9, '-' * 12, '-' * 10))
    for wp, summary in results:
        accuracy = summary.final.test_acc if summary.final is not None else float('nan')
        throughput = summary.throughput if summary.throughput is not None else float('nan')
        print(format_str.format(wp, f'{accuracy:.4f}', f'{throughput:.3f}', f'{summary.mean_staleness:.3f}'))


def list_options(args):
    print(config.template())


def version(args):
    print(f'odsgdlab v{__version__}')


def _add_overrides(parser):
    parser.add_argument('--mode', choices=list(enum.mode.__members__), default=None, help='Training mode')
    parser.add_argument('--workers', type=int, default=None, help='Number of workers')
    parser.add_argument('--wp', type=int, default=None, help='Warm-up iterations of one-step delay training')
    parser.add_argument('--seed', type=int, default=None, help='Random seed')
    parser.add_argument('--t-cop', type=str, default=None, help='Compute time, one value or comma-separated per worker')
    parser.add_argument('--t-com', type=float, default=None, help='One-step delay communication time')
    parser.add_argument('--t-com-prime', type=float, default=None, help='Synchronous communication time')
    parser.add_argument('--optimizer-local', choices=list(enum.local_updater.__members__), default=None,
                        help='Local updater of one-step delay training')


def main():
    parser = argparse.ArgumentParser(description='Simulated parameter-server training lab')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for progress, -vv for every event')
    subparsers = parser.add_subparsers(required=True, help='sub-command help')

    run_parser = subparsers.add_parser('run', help='Run one configured training experiment')
    run_parser.add_argument('config', type=str, help='The INI file describing the experiment')
    _add_overrides(run_parser)
    run_parser.add_argument('--out', type=str, default=None, help='Metrics CSV file to write')
    run_parser.add_argument('--baseline', type=str, default=None,
                            help='Metrics CSV of a baseline run to report GR_Rate and IMP_Rate against')
    run_parser.set_defaults(func=run)

    compare_parser = subparsers.add_parser('compare', help='Compare metrics files against a baseline run')
    compare_parser.add_argument('baseline', type=str, help='Metrics CSV of the baseline run')
    compare_parser.add_argument('others', type=str, nargs='+', help='Metrics CSVs of the runs to compare')
    compare_parser.add_argument('--window', type=int, default=5, help='Smoothing window (odd, default: 5)')
    compare_parser.add_argument('--smooth-start', type=int, default=None,
                                help='First epoch index to smooth (default: half the window)')
    compare_parser.add_argument('--out', type=str, default=None, help='CSV file to write the table to')
    compare_parser.set_defaults(func=compare)

    predict_parser = subparsers.add_parser('predict', help='Predicted iteration times and improvement rate')
    predict_parser.add_argument('--t-cop', type=float, required=True, help='Compute time per iteration')
    predict_parser.add_argument('--t-com', type=float, required=True, help='One-step delay communication time')
    predict_parser.add_argument('--t-com-prime', type=float, required=True, help='Synchronous communication time')
    predict_parser.set_defaults(func=predict)

    sweep_parser = subparsers.add_parser('sweep-wp', help='Run one-step delay training for several warm-up lengths')
    sweep_parser.add_argument('config', type=str, help='The INI file describing the experiment')
    sweep_parser.add_argument('wps', type=int, nargs='+', help='Warm-up iteration counts to try')
    _add_overrides(sweep_parser)
    sweep_parser.set_defaults(func=sweep_wp)

    list_options_parser = subparsers.add_parser('list-options', help='List every configuration option, in a format '
                                                                     'suitable for editing into an experiment file')
    list_options_parser.set_defaults(func=list_options)

    version_parser = subparsers.add_parser('version', help='Display the current odsgdlab version.')
    version_parser.set_defaults(func=version)

    args = parser.parse_args()
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')

    try:
        args.func(args)
    except ConfigError as e:
        print(f'error: {e.message}', file=sys.stderr)
        sys.exit(2)
    except (FormatError, IoError) as e:
        print(f'error: {e.message}', file=sys.stderr)
        sys.exit(3)
