from collections.abc import MutableMapping
import configparser
import logging
from pathlib import Path

from odsgdlab import enum
from odsgdlab.errors import ConfigError, IoError
from odsgdlab.model import ModelSpec
from odsgdlab.optim import HyperParams, LrSchedule
from odsgdlab.simnet import TimingModel

logger = logging.getLogger(__name__)


class Input(object):
    def __init__(self, name, default, description=None, minimum=None, maximum=None):
        assert "." in name
        self._section, self._base_name = name.split(".")
        self.default = default
        self._description = name if description is None else description
        self.minimum = minimum
        self.maximum = maximum

    def section(self):
        return self._section

    def base_name(self):
        return self._base_name

    def name(self):
        return f'{self._section}.{self._base_name}'

    def help(self):
        return self._description

    def format_suggestion(self):
        return ''

    def parse(self, string):
        raise NotImplementedError()

    def to_string(self, value):
        return '' if value is None else str(value)

    def _check_range(self, v):
        if self.minimum is not None and v < self.minimum:
            raise ValueError(f'{v} is below the minimum {self.minimum}')
        if self.maximum is not None and v > self.maximum:
            raise ValueError(f'{v} is above the maximum {self.maximum}')

    def value(self, string):
        """Parse and check `string`, raising ConfigError naming this option"""
        try:
            return self.parse(string)
        except (ValueError, KeyError) as e:
            raise ConfigError(self.name(), f"'{string.strip()}' is not valid ({e})") from e


class StringInput(Input):
    def parse(self, string):
        return string.strip()


class PathInput(StringInput):
    def format_suggestion(self):
        return 'Input must be the path of an existing file (or empty)'

    def parse(self, string):
        string = string.strip()
        return Path(string) if string else None


class IntegerInput(Input):
    def format_suggestion(self):
        return 'Input must be an integer'

    def parse(self, string):
        v = int(string.strip())
        self._check_range(v)
        return v


class FloatInput(Input):
    def __init__(self, name, default, description=None, minimum=None, maximum=None, allow_empty=False):
        super().__init__(name, default, description, minimum, maximum)
        self.allow_empty = allow_empty

    def format_suggestion(self):
        empty = ' (empty for the default)' if self.allow_empty else ''
        return f'Input must be a floating point number{empty}'

    def parse(self, string):
        string = string.strip()
        if len(string) == 0 and self.allow_empty:
            return None
        v = float(string)
        if v != v:
            raise ValueError('NaN')
        self._check_range(v)
        return v

    def to_string(self, value):
        return '' if value is None else repr(float(value))


class FloatListInput(Input):
    def format_suggestion(self):
        return 'Input must be a comma-separated list of floating point numbers'

    def parse(self, string):
        items = [s for s in string.replace(' ', '').split(',') if s]
        values = [float(s) for s in items]
        for v in values:
            self._check_range(v)
        return values

    def to_string(self, value):
        if isinstance(value, (int, float)):
            value = [value]
        return ', '.join(repr(float(v)) for v in value)


class IntegerListInput(FloatListInput):
    def format_suggestion(self):
        return 'Input must be a comma-separated list of integers (may be empty)'

    def parse(self, string):
        values = [int(s) for s in string.replace(' ', '').split(',') if s]
        for v in values:
            self._check_range(v)
        return values

    def to_string(self, value):
        return ', '.join(str(int(v)) for v in value)


class EnumInput(StringInput):
    def __init__(self, name, enum, default, description=None):
        super().__init__(name, default, description)
        self.enum = enum

    def format_suggestion(self):
        suggestion = 'Input must be one of:\n'
        for k, v in self.enum.__members__.items():
            suggestion += f' * "{k}": {v.value}\n'
        return suggestion.strip()

    def parse(self, string):
        string = super().parse(string)
        if string not in self.enum.__members__:
            raise ValueError(f'choose one of {", ".join(self.enum.__members__)}')
        return self.enum[string]


options = [
    StringInput('experiment.name', 'run', 'Name of the run, used in comparison tables'),
    EnumInput('experiment.mode', enum.mode, enum.mode.SSGD, 'Training mode'),
    IntegerInput('experiment.seed', 0, 'Seed for data generation, sampling and initialization', minimum=0),
    IntegerInput('experiment.epochs', 10, 'Number of epochs to train (ignored when iterations is set)', minimum=0),
    IntegerInput('experiment.iterations', 0, 'Iterations per worker (0 means epochs x iterations per epoch)', minimum=0),
    StringInput('experiment.output', '', 'Metrics CSV file to write (empty for none)'),
    StringInput('experiment.trace', '', 'Event trace file to write (empty for none)'),

    IntegerInput('cluster.workers', 4, 'Number of workers M', minimum=1),
    IntegerInput('cluster.devices', 1, 'Devices per worker; must divide the batch', minimum=1),
    IntegerInput('cluster.batch', 8, 'Per-worker batch size', minimum=1),
    IntegerInput('cluster.wp', 5, 'Warm-up iterations before one-step delay training starts', minimum=0),
    FloatInput('cluster.wp_epochs', 0.0, 'Warm-up length in epochs; overrides cluster.wp when positive', minimum=0.0),
    IntegerInput('cluster.comm_slots', 2, 'Push/Pull buffers per worker in one-step delay mode (1 or 2)',
                 minimum=1, maximum=2),

    EnumInput('model.kind', enum.model_kind, enum.model_kind.softmax, 'Model architecture'),
    IntegerInput('model.hidden', 32, 'Hidden width of the mlp1 model', minimum=1),
    FloatInput('model.init_scale', 1.0, 'Scale of the initial weights', minimum=0.0),

    EnumInput('data.source', enum.data_source, enum.data_source.synthetic, 'Where samples come from'),
    IntegerInput('data.n', 2000, 'Synthetic sample count', minimum=2),
    IntegerInput('data.d', 20, 'Synthetic feature dimension', minimum=1),
    IntegerInput('data.k', 4, 'Number of classes', minimum=2),
    FloatInput('data.separation', 4.0, 'Distance between synthetic class means', minimum=0.0),
    FloatInput('data.test_fraction', 0.2, 'Share of synthetic samples held out for testing',
               minimum=0.0, maximum=1.0),
    PathInput('data.train_images', None, 'IDX training images (data.source = idx)'),
    PathInput('data.train_labels', None, 'IDX training labels (data.source = idx)'),
    PathInput('data.test_images', None, 'IDX test images (data.source = idx)'),
    PathInput('data.test_labels', None, 'IDX test labels (data.source = idx)'),

    FloatInput('optimizer.eta', 0.1, 'Global learning rate', minimum=0.0),
    FloatInput('optimizer.momentum', 0.0, 'Global SGD momentum', minimum=0.0, maximum=0.999),
    FloatInput('optimizer.weight_decay', 0.0, 'Global weight decay', minimum=0.0),
    FloatInput('optimizer.lambda', 0.04, 'Delay-compensation strength of the DC-ASGD server updaters', minimum=0.0),
    FloatInput('optimizer.ms_decay', 0.95, 'MeanSquare decay of DC-ASGD-a', minimum=0.0, maximum=0.999),
    FloatInput('optimizer.epsilon', 1e-7, 'MeanSquare epsilon of DC-ASGD-a', minimum=0.0),
    EnumInput('optimizer.lr_policy', enum.lr_policy, enum.lr_policy.constant, 'Learning-rate schedule'),
    IntegerListInput('optimizer.milestones', [], 'Epochs after which the step policy decays', minimum=0),
    FloatInput('optimizer.factor', 0.1, 'Decay factor of the step policy', minimum=0.0),
    FloatInput('optimizer.wp_start', None, 'Starting rate of the linear_wp ramp (empty for eta)', minimum=0.0,
               allow_empty=True),
    FloatInput('optimizer.wp_lr_epochs', 0.0, 'Length of the linear_wp ramp in epochs', minimum=0.0),
    EnumInput('optimizer.inner_policy', enum.lr_policy, enum.lr_policy.constant,
              'Schedule followed after the linear_wp ramp'),
    FloatInput('optimizer.power', 2.0, 'Exponent of the poly policy', minimum=0.0),

    EnumInput('local.updater', enum.local_updater, enum.local_updater.sgd,
              'Updater applied to the backup weights in one-step delay mode'),
    FloatInput('local.eta', None, 'Local learning rate (empty for optimizer.eta)', minimum=0.0, allow_empty=True),
    FloatInput('local.momentum', None, 'Local momentum (empty for optimizer.momentum)', minimum=0.0,
               maximum=0.999, allow_empty=True),
    FloatInput('local.weight_decay', None, 'Local weight decay (empty for optimizer.weight_decay)', minimum=0.0,
               allow_empty=True),
    FloatInput('local.lambda', None, 'Local delay-compensation strength (empty for optimizer.lambda)',
               minimum=0.0, allow_empty=True),
    FloatInput('local.ms_decay', None, 'Local MeanSquare decay (empty for optimizer.ms_decay)', minimum=0.0,
               maximum=0.999, allow_empty=True),
    FloatInput('local.epsilon', None, 'Local MeanSquare epsilon (empty for optimizer.epsilon)', minimum=0.0,
               allow_empty=True),

    FloatListInput('timing.t_cop', [3.0], 'Compute time per iteration, one value or one per worker', minimum=0.0),
    FloatInput('timing.t_com', 3.0, 'Round-trip communication time of one-step delay training', minimum=0.0),
    FloatInput('timing.t_com_prime', 2.0, 'Non-overlapped communication time of synchronous training',
               minimum=0.0),
    FloatInput('timing.local_update_cost', 0.0, 'Duration of one local update', minimum=0.0),
    FloatInput('timing.server_update_cost', 0.0, 'Time the server is busy per global update', minimum=0.0),
]

option_map = {i.name(): i for i in options}


class ExperimentConfig(MutableMapping):
    """
    Typed view of an experiment file. Unset options read as their defaults;
    values are stored as strings in the underlying ConfigParser so the
    configuration can be written back out.
    """

    def __init__(self, source=None, overrides=None):
        if isinstance(source, configparser.ConfigParser):
            self.config = source
        else:
            self.config = configparser.ConfigParser(interpolation=None)
            if isinstance(source, dict):
                overrides = {**source, **(overrides or {})}
            elif source is not None:
                try:
                    with open(source) as config_file:
                        self.config.read_file(config_file)
                except OSError as e:
                    raise IoError(source, str(e)) from e
                except configparser.Error as e:
                    raise ConfigError(str(source), str(e).splitlines()[0]) from e
        for section in self.config.sections():
            for key in self.config[section]:
                if f'{section}.{key}' not in option_map:
                    raise ConfigError(f'{section}.{key}', 'unknown option')
        for key, value in (overrides or {}).items():
            self[key] = value

    def _spec(self, key):
        if key not in option_map:
            raise ConfigError(key, 'unknown option')
        return option_map[key]

    def provides(self, key):
        i = self._spec(key)
        return self.config.has_option(i.section(), i.base_name())

    def __getitem__(self, key):
        i = self._spec(key)
        if not self.provides(key):
            return i.default
        return i.value(self.config.get(i.section(), i.base_name()))

    def __setitem__(self, key, value):
        i = self._spec(key)
        string = value if isinstance(value, str) else i.to_string(value)
        i.value(string)
        if i.section() not in self.config.sections():
            self.config.add_section(i.section())
        self.config.set(i.section(), i.base_name(), string)

    def __delitem__(self, key):
        i = self._spec(key)
        self.config.remove_option(i.section(), i.base_name())
        if len(self.config[i.section()]) == 0:
            self.config.remove_section(i.section())

    def __contains__(self, key):
        return key in option_map and self.provides(key)

    def __iter__(self):
        return iter(option_map)

    def __len__(self):
        return len(option_map)

    def write(self, filename):
        with open(filename, 'w') as outfile:
            self.config.write(outfile)

    def validate(self):
        """Parse every option and check the cross-option constraints"""
        for key in option_map:
            self[key]
        if self['cluster.batch'] % self['cluster.devices'] != 0:
            raise ConfigError('cluster.devices', f'{self["cluster.devices"]} devices do not divide the batch of '
                                                 f'{self["cluster.batch"]}')
        t_cop = self['timing.t_cop']
        if len(t_cop) not in (1, self['cluster.workers']):
            raise ConfigError('timing.t_cop', f'{len(t_cop)} compute times for {self["cluster.workers"]} workers')
        if self['experiment.epochs'] == 0 and self['experiment.iterations'] == 0:
            raise ConfigError('experiment.epochs', 'set epochs or iterations')
        if self['data.source'] is enum.data_source.idx:
            for key in ('data.train_images', 'data.train_labels', 'data.test_images', 'data.test_labels'):
                path = self[key]
                if path is None:
                    raise ConfigError(key, 'required when data.source = idx')
                if not path.is_file():
                    raise ConfigError(key, f'{path} does not exist')
        elif not 0.0 < self['data.test_fraction'] < 1.0:
            raise ConfigError('data.test_fraction', 'must lie strictly between 0 and 1')
        self.timing_model()
        self.hyper_params('optimizer')
        self.hyper_params('local')
        self.lr_schedule(1)
        return self

    def timing_model(self):
        t_cop = self['timing.t_cop']
        if len(t_cop) == 0:
            raise ConfigError('timing.t_cop', 'needs at least one value')
        return TimingModel(
            t_cop if len(t_cop) > 1 else t_cop[0],
            self['timing.t_com'],
            self['timing.t_com_prime'],
            self['timing.local_update_cost'],
            self['timing.server_update_cost'],
        )

    def hyper_params(self, section):
        """Hyperparameters of `section`; unset local values follow the optimizer"""
        def get(name):
            v = self[f'{section}.{name}']
            return self[f'optimizer.{name}'] if v is None else v
        return HyperParams(
            eta=get('eta'),
            lam=get('lambda'),
            ms_decay=get('ms_decay'),
            momentum=get('momentum'),
            weight_decay=get('weight_decay'),
            epsilon=get('epsilon'),
            section=section,
        )

    def lr_schedule(self, total_iters):
        base = self['optimizer.eta']
        policy = self['optimizer.lr_policy']
        kwargs = dict(base=base, milestones=self['optimizer.milestones'], factor=self['optimizer.factor'],
                      power=self['optimizer.power'], total_iters=total_iters)
        if policy is not enum.lr_policy.linear_wp:
            return LrSchedule(policy, **kwargs)
        inner_policy = self['optimizer.inner_policy']
        if inner_policy is enum.lr_policy.linear_wp:
            raise ConfigError('optimizer.inner_policy', 'cannot nest linear_wp')
        return LrSchedule(policy, start=self['optimizer.wp_start'], wp_epochs=self['optimizer.wp_lr_epochs'],
                          inner=LrSchedule(inner_policy, **kwargs), **kwargs)

    def model_spec(self, d, k):
        return ModelSpec(self['model.kind'], d, k, self['model.hidden'])

    def local_eta(self):
        v = self['local.eta']
        return self['optimizer.eta'] if v is None else v


def load_config(path, overrides=None):
    """Read and validate an experiment file, applying `overrides` (dotted
    keys to values) on top of it"""
    cfg = ExperimentConfig(path, overrides)
    logger.info('loaded configuration from %s', path)
    return cfg.validate()


def template():
    """A commented INI file listing every option with its default"""
    lines = []
    section = None
    for i in options:
        if i.section() != section:
            section = i.section()
            lines.append(f'\n[{section}]' if lines else f'[{section}]')
        comment = '# ' + i.help()
        suggestion = i.format_suggestion()
        if suggestion:
            comment += '\n' + suggestion
        lines.append('\n' + comment.replace('\n', '\n# '))
        lines.append(f'#{i.base_name()} = {i.to_string(i.default)}')
    return '\n'.join(lines)
