import csv
import logging

from odsgdlab.errors import ConfigError, FormatError, IoError
from odsgdlab.simnet import gr_rate

logger = logging.getLogger(__name__)


class Column(object):
    def __init__(self, name, _type):
        self._name = name
        self._type = _type

    def name(self):
        return self._name

    def to_string(self, value):
        raise NotImplementedError()

    def from_string(self, string):
        raise NotImplementedError()


class IntegerColumn(Column):
    def __init__(self, name):
        super().__init__(name, int)

    def to_string(self, value):
        return str(int(value))

    def from_string(self, string):
        return int(string)


class FloatColumn(Column):
    """Written with 17 significant digits so that files read back bit-exact"""

    def __init__(self, name):
        super().__init__(name, float)

    def to_string(self, value):
        return f'{value:.17g}'

    def from_string(self, string):
        return float(string)


COLUMNS = (
    IntegerColumn('epoch'),
    FloatColumn('sim_time'),
    FloatColumn('train_loss'),
    FloatColumn('train_acc'),
    FloatColumn('test_acc'),
    FloatColumn('throughput'),
    FloatColumn('mean_staleness'),
)

HEADER = tuple(c.name() for c in COLUMNS)


class MetricsRow(object):
    def __init__(self, epoch, sim_time, train_loss, train_acc, test_acc, throughput, mean_staleness):
        self.epoch = epoch
        self.sim_time = sim_time
        self.train_loss = train_loss
        self.train_acc = train_acc
        self.test_acc = test_acc
        self.throughput = throughput
        self.mean_staleness = mean_staleness

    def as_tuple(self):
        return tuple(getattr(self, name) for name in HEADER)

    def __eq__(self, other):
        return isinstance(other, MetricsRow) and self.as_tuple() == other.as_tuple()

    def __repr__(self):
        return f'MetricsRow{self.as_tuple()}'


def write_metrics(rows, path):
    previous = None
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(HEADER)
        for row in rows:
            if previous is not None and row.epoch <= previous:
                raise FormatError(path, f'epoch {row.epoch} does not follow epoch {previous}')
            previous = row.epoch
            writer.writerow([c.to_string(v) for c, v in zip(COLUMNS, row.as_tuple())])
    logger.info('wrote %d metrics rows to %s', len(rows), path)


def read_metrics(path):
    try:
        with open(path, newline='') as f:
            lines = list(csv.reader(f))
    except OSError as e:
        raise IoError(path, str(e)) from e

    if len(lines) == 0 or tuple(lines[0]) != HEADER:
        raise FormatError(path, f'expected the header {",".join(HEADER)}', line=1)
    rows = []
    for number, fields in enumerate(lines[1:], start=2):
        if len(fields) != len(COLUMNS):
            raise FormatError(path, f'{len(fields)} fields instead of {len(COLUMNS)}', line=number)
        try:
            row = MetricsRow(*(c.from_string(s) for c, s in zip(COLUMNS, fields)))
        except ValueError as e:
            raise FormatError(path, str(e), line=number) from e
        if rows and row.epoch <= rows[-1].epoch:
            raise FormatError(path, f'epoch {row.epoch} does not follow epoch {rows[-1].epoch}', line=number)
        rows.append(row)
    return rows


def smooth_moving_average(series, window=5, start_index=None):
    """
    Replace every point from `start_index` on by the mean of the `window`
    points centred on it. Near the end of the series the window shrinks to
    the points that exist; earlier points are left as they are.
    """
    if window < 1 or window % 2 == 0:
        raise ConfigError('window', f'smoothing window must be a positive odd number, not {window}')
    half = window // 2
    if start_index is None:
        start_index = half
    if start_index < half:
        raise ConfigError('start_index', f'must be at least {half} for a window of {window}')

    smoothed = list(series)
    for i in range(start_index, len(series)):
        points = series[i - half:i + half + 1]
        smoothed[i] = sum(points) / len(points)
    return smoothed


class Comparison(object):
    def __init__(self, name, test_acc, throughput, rate, baseline=False):
        self.name = name
        self.test_acc = test_acc
        self.throughput = throughput
        self.gr_rate = rate
        self.baseline = baseline


def _final_accuracy(rows, window, smooth_start):
    accuracies = [r.test_acc for r in rows]
    if len(accuracies) > smooth_start and window > 1:
        accuracies = smooth_moving_average(accuracies, window, smooth_start)
    return accuracies[-1]


def compare_runs(baseline, others, window=5, smooth_start=None):
    """
    `baseline` and each of `others` is a (name, rows) pair. Returns one
    Comparison per run, the baseline first, with the GR_Rate of its final
    throughput over the baseline's.
    """
    if smooth_start is None:
        smooth_start = window // 2
    runs = [baseline] + list(others)
    for name, rows in runs:
        if len(rows) == 0:
            raise FormatError(name, 'no metrics rows')
    base_speed = baseline[1][-1].throughput
    table = []
    for i, (name, rows) in enumerate(runs):
        speed = rows[-1].throughput
        table.append(Comparison(name, _final_accuracy(rows, window, smooth_start), speed,
                                gr_rate(speed, base_speed), baseline=(i == 0)))
    return table


def format_comparison(table, window):
    width = max(len('run'), max(len(c.name) for c in table) + 2)
    format_str = '{:<{width}} | {:>9} | {:>12} | {:>9}'
    lines = [
        f'# final test accuracy smoothed with a centred window of {window} (shrinking at the end)',
        format_str.format('run', 'test_acc', 'throughput', 'GR_Rate', width=width),
        format_str.format('-' * width, '-' * 9, '-' * 12, '-' * 9, width=width),
    ]
    for c in table:
        name = f'{c.name} *' if c.baseline else c.name
        lines.append(format_str.format(name, f'{c.test_acc:.4f}', f'{c.throughput:.3f}', f'{c.gr_rate:.2f}%',
                                       width=width))
    return '\n'.join(lines)


def write_comparison(table, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['run', 'baseline', 'test_acc', 'throughput', 'gr_rate'])
        for c in table:
            writer.writerow([c.name, int(c.baseline), f'{c.test_acc:.17g}', f'{c.throughput:.17g}',
                             f'{c.gr_rate:.17g}'])
