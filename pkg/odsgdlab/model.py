import numpy as np

from odsgdlab import enum
from odsgdlab.errors import ConfigError, NumericError, ShapeError
from odsgdlab.params import ParamStore


class ModelSpec(object):
    def __init__(self, kind, d, k, hidden=None):
        if isinstance(kind, str):
            kind = enum.model_kind[kind]
        if d < 1 or k < 2:
            raise ConfigError('model', f'need d >= 1 and k >= 2 (got d={d}, k={k})')
        if kind is enum.model_kind.mlp1 and (hidden is None or hidden < 1):
            raise ConfigError('model.hidden', 'mlp1 needs a positive hidden width')
        self.kind = kind
        self.d = int(d)
        self.k = int(k)
        self.hidden = int(hidden) if kind is enum.model_kind.mlp1 else None
        self.activation = 'tanh'

    def shapes(self):
        """Parameter shapes by key, enumerating layers input to output"""
        if self.kind is enum.model_kind.softmax:
            return {0: (self.d, self.k), 1: (self.k,)}
        return {
            0: (self.d, self.hidden),
            1: (self.hidden,),
            2: (self.hidden, self.k),
            3: (self.k,),
        }

    def parameter_count(self):
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def __repr__(self):
        hidden = f', hidden={self.hidden}' if self.hidden else ''
        return f'ModelSpec({self.kind}, d={self.d}, k={self.k}{hidden})'


class LossGrad(object):
    def __init__(self, loss, grads):
        self.loss = loss
        self.grads = grads


def init_params(spec, seed, scale=1.0):
    """Weights drawn from N(0, scale^2 / fan_in), biases zero"""
    rng = np.random.default_rng(seed)
    params = ParamStore(version=0)
    for key, shape in spec.shapes().items():
        if len(shape) == 2:
            params[key] = rng.standard_normal(shape) * (scale / np.sqrt(shape[0]))
        else:
            params[key] = np.zeros(shape)
    return params


def _check(spec, params, data):
    if set(params) != set(spec.shapes()) or params.shapes() != spec.shapes():
        raise ShapeError(f'parameters do not match {spec!r}')
    if data.d != spec.d or data.k != spec.k:
        raise ShapeError(f'dataset with d={data.d}, k={data.k} does not match {spec!r}')


def _logits(spec, params, x):
    if spec.kind is enum.model_kind.softmax:
        return x @ params[0] + params[1], None
    a1 = np.tanh(x @ params[0] + params[1])
    return a1 @ params[2] + params[3], a1


def _cross_entropy(logits, y):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    losses = log_norm - shifted[np.arange(len(y)), y]
    return losses, shifted, log_norm


def batch_loss(spec, params, data, batch):
    _check(spec, params, data)
    x = data.features[batch.indices]
    y = data.labels[batch.indices]
    logits, _ = _logits(spec, params, x)
    losses, _, _ = _cross_entropy(logits, y)
    return float(losses.mean())


def forward_backward(spec, params, data, batch):
    """Mean cross-entropy over `batch` and its exact gradient"""
    _check(spec, params, data)
    x = data.features[batch.indices]
    y = data.labels[batch.indices]
    logits, a1 = _logits(spec, params, x)
    losses, shifted, log_norm = _cross_entropy(logits, y)
    loss = float(losses.mean())
    if not np.isfinite(loss):
        raise NumericError('forward pass')

    # d(mean loss)/d(logits) = (softmax - onehot) / B
    dlogits = np.exp(shifted - log_norm[:, None])
    dlogits[np.arange(len(y)), y] -= 1.0
    dlogits /= len(y)

    grads = ParamStore(version=params.version)
    if spec.kind is enum.model_kind.softmax:
        grads[0] = x.T @ dlogits
        grads[1] = dlogits.sum(axis=0)
    else:
        grads[2] = a1.T @ dlogits
        grads[3] = dlogits.sum(axis=0)
        dz1 = (dlogits @ params[2].T) * (1.0 - a1 * a1)
        grads[0] = x.T @ dz1
        grads[1] = dz1.sum(axis=0)
    grads.check_finite('backward pass')
    return LossGrad(loss, grads)


def finite_diff_grad(spec, params, data, batch, h=1e-5):
    """Central-difference estimate of the batch-loss gradient"""
    if not h > 0:
        raise ConfigError('h', 'finite-difference step must be positive')
    nudged = params.copy()
    estimate = params.zeros_like()
    for key in nudged:
        flat = nudged[key].reshape(-1)
        out = estimate[key].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = batch_loss(spec, nudged, data, batch)
            flat[i] = original - h
            minus = batch_loss(spec, nudged, data, batch)
            flat[i] = original
            out[i] = (plus - minus) / (2.0 * h)
    return estimate


def evaluate(spec, params, data):
    """
    Top-1 accuracy and mean cross-entropy over the whole dataset. Ties in the
    argmax go to the lowest class index.
    """
    _check(spec, params, data)
    logits, _ = _logits(spec, params, data.features)
    losses, _, _ = _cross_entropy(logits, data.labels)
    predictions = np.argmax(logits, axis=1)
    accuracy = float(np.mean(predictions == data.labels))
    return accuracy, float(losses.mean())
