from collections.abc import MutableMapping

import numpy as np

from odsgdlab.errors import NumericError, ShapeError


def tensor(values, shape=None):
    """Build a float64 DenseTensor from `values`, optionally reshaped"""
    t = np.array(values, dtype=np.float64)
    if shape is not None:
        if int(np.prod(shape)) != t.size:
            raise ShapeError(f'{t.size} values cannot fill shape {tuple(shape)}')
        t = t.reshape(shape)
    if not np.all(np.isfinite(t)):
        raise NumericError('tensor construction')
    return t


def _check_same_shape(x, y, subject):
    if np.shape(x) != np.shape(y):
        raise ShapeError(f'{subject}: {np.shape(x)} vs {np.shape(y)}')


def _check_finite(t, subject):
    if not np.all(np.isfinite(t)):
        raise NumericError(subject)
    return t


def axpy(alpha, x, y):
    """Return y + alpha*x as a new tensor; neither input is modified"""
    _check_same_shape(x, y, 'axpy')
    if not np.isfinite(alpha):
        raise NumericError('axpy scale factor')
    return _check_finite(y + alpha * x, 'axpy')


def hadamard(x, y):
    """Elementwise product of two same-shaped tensors"""
    _check_same_shape(x, y, 'hadamard')
    return _check_finite(x * y, 'hadamard')


class ParamStore(MutableMapping):
    """
    Map from parameter key to DenseTensor. `version` optionally tags the
    store with the number of global updates its values reflect; the cluster
    uses it to measure staleness.
    """

    def __init__(self, *args, version=None, **kwargs):
        self.values = dict()
        self.version = version
        self.update(dict(*args, **kwargs))

    def __getitem__(self, key):
        try:
            return self.values[key]
        except KeyError as ke:
            raise ShapeError(f'no parameter with key {key}') from ke

    def __setitem__(self, key, value):
        if not isinstance(key, int) or key < 0:
            raise ShapeError(f'parameter keys must be non-negative integers, not {key!r}')
        self.values[key] = np.asarray(value, dtype=np.float64)

    def __delitem__(self, key):
        del self.values[key]

    def __contains__(self, key):
        return key in self.values

    def __iter__(self):
        return iter(sorted(self.values))

    def __len__(self):
        return len(self.values)

    def shapes(self):
        return {k: self.values[k].shape for k in self}

    def compatible(self, other):
        """True if `other` has the same keys with the same per-key shapes"""
        return self.shapes() == other.shapes()

    def require_compatible(self, other, subject):
        if not self.compatible(other):
            raise ShapeError(f'{subject}: stores are not shape-compatible')

    def copy(self):
        return ParamStore({k: v.copy() for k, v in self.values.items()}, version=self.version)

    def zeros_like(self):
        return ParamStore({k: np.zeros_like(v) for k, v in self.values.items()})

    def check_finite(self, subject):
        for k in self:
            _check_finite(self.values[k], f'{subject} (key {k})')

    def flat(self):
        """All values concatenated in key order (for comparisons and norms)"""
        if len(self) == 0:
            return np.zeros(0)
        return np.concatenate([self.values[k].ravel() for k in self])


def copy_into(src, dst):
    """Overwrite every tensor of `dst` with a value-equal, unaliased copy of
    the corresponding tensor of `src`"""
    src.require_compatible(dst, 'copy_into')
    for k in src:
        np.copyto(dst.values[k], src.values[k])
    dst.version = src.version


def mean_of(stores):
    """Elementwise arithmetic mean of shape-compatible stores"""
    first = stores[0]
    for s in stores[1:]:
        first.require_compatible(s, 'mean')
    out = first.zeros_like()
    for s in stores:
        for k in s:
            out.values[k] += s.values[k]
    for k in out:
        out.values[k] /= len(stores)
    out.check_finite('mean')
    return out
