import gzip
import logging
import struct

import numpy as np

from odsgdlab.errors import ConfigError, FormatError, IoError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


class Dataset(object):
    def __init__(self, features, labels, k):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ConfigError('data', f'features must be a non-empty n x d matrix, not {features.shape}')
        if labels.shape != (features.shape[0],):
            raise ConfigError('data', f'{labels.shape[0]} labels for {features.shape[0]} samples')
        if k < 1 or labels.min() < 0 or labels.max() >= k:
            raise ConfigError('data', f'labels must lie in [0, {k})')
        if not np.all(np.isfinite(features)):
            raise ConfigError('data', 'feature rows must be finite')
        self.features = features
        self.labels = labels
        self.k = int(k)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, indices):
        return Dataset(self.features[indices], self.labels[indices], self.k)


class Batch(object):
    def __init__(self, indices, n=None):
        self.indices = np.asarray(indices, dtype=np.int64)
        if self.indices.ndim != 1 or len(self.indices) == 0:
            raise ConfigError('batch', 'a batch needs at least one index')
        if len(np.unique(self.indices)) != len(self.indices):
            raise ConfigError('batch', 'batch indices must be unique')
        if self.indices.min() < 0 or (n is not None and self.indices.max() >= n):
            raise ConfigError('batch', f'batch indices must lie in [0, {n})')

    @property
    def size(self):
        return len(self.indices)

    def split(self, parts):
        """Split into `parts` equal contiguous device batches"""
        if parts < 1 or self.size % parts != 0:
            raise ConfigError('cluster.devices', f'batch of {self.size} cannot be split across {parts} devices')
        return [Batch(chunk) for chunk in np.split(self.indices, parts)]


class BatchPlan(object):
    """
    Deterministic sampling shared by every worker. Each epoch is a seeded
    permutation of the training set cut into global batches of
    `workers * batch` samples; global batch r of the run goes to iteration r,
    and worker m takes the m-th contiguous slice of it. A single worker with
    batch M*b therefore sees exactly the union of what M workers with batch b
    see in the same iteration.
    """

    def __init__(self, n, workers, batch, seed):
        if workers < 1 or batch < 1:
            raise ConfigError('cluster.batch', 'workers and batch must be positive')
        if workers * batch > n:
            raise ConfigError('cluster.batch', f'{workers} x {batch} samples per iteration exceeds the {n} training samples')
        self.n = n
        self.workers = workers
        self.batch = batch
        self.seed = seed
        self.iterations_per_epoch = n // (workers * batch)
        self._epoch = None
        self._permutation = None

    def _permutation_for(self, epoch):
        if epoch != self._epoch:
            self._permutation = np.random.default_rng([self.seed, epoch]).permutation(self.n)
            self._epoch = epoch
        return self._permutation

    def batch_for(self, iteration, worker):
        epoch, position = divmod(iteration, self.iterations_per_epoch)
        start = (position * self.workers + worker) * self.batch
        return Batch(self._permutation_for(epoch)[start:start + self.batch], self.n)


def gen_synthetic(seed, n, d, k, separation):
    """
    Draw `n` samples from `k` unit-variance Gaussian clusters in `d`
    dimensions with balanced labels. Class means sit `separation` apart
    (orthogonal directions when k <= d, random unit directions otherwise).
    """
    if k < 2 or d < 1 or n < k:
        raise ConfigError('data', f'need k >= 2, d >= 1 and n >= k (got n={n}, d={d}, k={k})')
    if separation < 0 or not np.isfinite(separation):
        raise ConfigError('data.separation', 'must be a finite non-negative number')

    rng = np.random.default_rng(seed)
    if k <= d:
        directions = np.eye(k, d)
    else:
        directions = rng.standard_normal((k, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = directions * (separation / np.sqrt(2.0))

    labels = rng.permutation(np.arange(n) % k)
    features = means[labels] + rng.standard_normal((n, d))
    return Dataset(features, labels, k)


def split_dataset(data, test_fraction, seed):
    """Deterministically hold out `test_fraction` of the samples"""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError('data.test_fraction', 'must lie strictly between 0 and 1')
    order = np.random.default_rng([seed, 1 << 20]).permutation(data.n)
    n_test = max(1, int(round(data.n * test_fraction)))
    if n_test >= data.n:
        raise ConfigError('data.test_fraction', f'leaves no training samples out of {data.n}')
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


def _open(path):
    opener = gzip.open if str(path).endswith('.gz') else open
    try:
        with opener(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise IoError(path, str(e)) from e


def _read_header(raw, path, magic, ndims):
    size = 4 * (1 + ndims)
    if len(raw) < size:
        raise IoError(path, f'file ends inside the {size}-byte header')
    found, *dims = struct.unpack(f'>{1 + ndims}I', raw[:size])
    if found != magic:
        raise FormatError(path, f'magic number {found}, expected {magic}')
    expected = int(np.prod(dims))
    if len(raw) - size < expected:
        raise IoError(path, f'expected {expected} data bytes, found {len(raw) - size}')
    if expected == 0:
        return dims, np.zeros(0, dtype=np.uint8)
    return dims, np.frombuffer(raw, dtype=np.uint8, count=expected, offset=size)


def load_idx(images_path, labels_path, k=10):
    """
    Read an IDX image file (magic 2051, dims [n, rows, cols]) and its IDX
    label file (magic 2049, dims [n]). Pixels are scaled to [0, 1].
    """
    (n, rows, cols), pixels = _read_header(_open(images_path), images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), labels = _read_header(_open(labels_path), labels_path, IDX_LABELS_MAGIC, 1)
    if n == 0:
        raise FormatError(images_path, 'no images')
    if n != n_labels:
        raise FormatError(labels_path, f'{n_labels} labels for {n} images')
    if labels.max() >= k:
        raise FormatError(labels_path, f'label {labels.max()} outside [0, {k})')

    logger.info('loaded %d %dx%d images from %s', n, rows, cols, images_path)
    features = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), k)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 `images` (n x rows x cols) and `labels` as an IDX pair"""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, 'wb') as f:
        f.write(struct.pack('>4I', IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, 'wb') as f:
        f.write(struct.pack('>2I', IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())
