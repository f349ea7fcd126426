import numpy as np

from odsgdlab import enum
from odsgdlab.errors import ConfigError, ShapeError


class HyperParams(object):
    def __init__(self, eta=0.1, lam=0.04, ms_decay=0.95, momentum=0.0, weight_decay=0.0, epsilon=1e-7, section='optimizer'):
        checks = (
            ('eta', eta > 0, 'must be positive'),
            ('lambda', lam >= 0, 'must be non-negative'),
            ('ms_decay', 0 <= ms_decay < 1, 'must lie in [0, 1)'),
            ('momentum', 0 <= momentum < 1, 'must lie in [0, 1)'),
            ('weight_decay', weight_decay >= 0, 'must be non-negative'),
            ('epsilon', epsilon > 0, 'must be positive'),
        )
        for name, ok, detail in checks:
            if not ok:
                raise ConfigError(f'{section}.{name}', detail)
        self.eta = eta
        self.lam = lam
        self.ms_decay = ms_decay
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epsilon = epsilon


class MomentumState(object):
    def __init__(self, like):
        self.velocity = like.zeros_like()


class MeanSquareState(object):
    def __init__(self, like):
        self.ms = like.zeros_like()


class LocalUpdateContext(object):
    """
    The weights `w_base` a gradient `g` was computed at, and the weights
    `w_cur` it is applied to, `delay` global rounds later.
    """

    def __init__(self, w_base, w_cur, g, delay=1):
        w_base.require_compatible(w_cur, 'update context')
        w_base.require_compatible(g, 'update context')
        if delay < 1:
            raise ShapeError(f'delay must be at least 1, not {delay}')
        self.w_base = w_base
        self.w_cur = w_cur
        self.g = g
        self.delay = delay


def sgd_momentum_update(w, g, hp, st, lr):
    """v <- mu*v + (g + wd*w); w <- w - lr*v"""
    w.require_compatible(g, 'sgd update')
    w.require_compatible(st.velocity, 'sgd update')
    for k in w:
        v = st.velocity[k]
        v *= hp.momentum
        v += g[k] + hp.weight_decay * w[k]
        w[k] -= lr * v
    w.check_finite('sgd update')


def dcasgd_c_update(ctx, hp, lr):
    """w_cur <- w_cur - lr*(g + lambda * g*g*(w_cur - w_base))"""
    w_cur = ctx.w_cur
    for k in w_cur:
        g = ctx.g[k]
        step = g + hp.lam * g * g * (w_cur[k] - ctx.w_base[k])
        w_cur[k] -= lr * step
    w_cur.check_finite('dcasgd_c update')


def mean_square_step(st, g, hp):
    """ms <- m*ms + (1-m)*g*g"""
    st.ms.require_compatible(g, 'mean square step')
    for k in st.ms:
        ms = st.ms[k]
        ms *= hp.ms_decay
        ms += (1.0 - hp.ms_decay) * g[k] * g[k]
    st.ms.check_finite('mean square step')


def dcasgd_a_update(ctx, hp, st, lr):
    """
    w_cur <- w_cur - lr*(g + lambda/sqrt(ms + eps) * g*g*(w_cur - w_base)).
    `st` must already include this gradient (see mean_square_step).
    """
    st.ms.require_compatible(ctx.g, 'dcasgd_a update')
    w_cur = ctx.w_cur
    for k in w_cur:
        g = ctx.g[k]
        scale = hp.lam / np.sqrt(st.ms[k] + hp.epsilon)
        step = g + scale * g * g * (w_cur[k] - ctx.w_base[k])
        w_cur[k] -= lr * step
    w_cur.check_finite('dcasgd_a update')


class LrSchedule(object):
    def __init__(self, policy=enum.lr_policy.constant, base=0.1, milestones=(), factor=0.1,
                 start=None, wp_epochs=0.0, inner=None, power=2.0, total_iters=None):
        if isinstance(policy, str):
            policy = enum.lr_policy[policy]
        milestones = tuple(milestones)
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ConfigError('optimizer.milestones', 'must be strictly increasing')
        if power <= 0:
            raise ConfigError('optimizer.power', 'must be positive')
        if policy is enum.lr_policy.linear_wp and wp_epochs <= 0:
            raise ConfigError('optimizer.wp_lr_epochs', 'linear warm-up needs a positive length')
        self.policy = policy
        self.base = base
        self.milestones = milestones
        self.factor = factor
        self.start = start
        self.wp_epochs = wp_epochs
        self.inner = inner
        self.power = power
        self.total_iters = total_iters

    def scaled(self, ratio):
        """The same schedule shape with every rate multiplied by `ratio`"""
        return LrSchedule(
            self.policy,
            base=self.base * ratio,
            milestones=self.milestones,
            factor=self.factor,
            start=None if self.start is None else self.start * ratio,
            wp_epochs=self.wp_epochs,
            inner=None if self.inner is None else self.inner.scaled(ratio),
            power=self.power,
            total_iters=self.total_iters,
        )


def lr_at(s, epoch, iteration=0, total_iters=None):
    p = s.policy
    if p is enum.lr_policy.constant:
        return s.base
    if p is enum.lr_policy.step:
        passed = sum(1 for m in s.milestones if epoch >= m)
        return s.base * s.factor ** passed
    if p is enum.lr_policy.linear_wp:
        start = s.base if s.start is None else s.start
        if epoch < s.wp_epochs:
            return start + (s.base - start) * epoch / s.wp_epochs
        inner = s.inner if s.inner is not None else LrSchedule(base=s.base)
        return lr_at(inner, epoch, iteration, total_iters)
    if p is enum.lr_policy.poly:
        total = s.total_iters if s.total_iters is not None else total_iters
        if not total:
            raise ConfigError('optimizer.lr_policy', 'poly decay needs the total iteration count')
        remaining = max(0.0, 1.0 - min(iteration, total) / total)
        return s.base * remaining ** s.power
    raise ConfigError('optimizer.lr_policy', f'unknown policy {p}')


class Updater(object):
    """
    An update rule plus the state it owns. `kind` is one of the local updater
    choices; the global updater of the synchronous modes is 'sgd' and the
    asynchronous server uses 'sgd', 'dcasgd_c' or 'dcasgd_a'.
    """

    def __init__(self, kind, hp, like):
        if isinstance(kind, str):
            kind = enum.local_updater[kind]
        self.kind = kind
        self.hp = hp
        self.momentum = MomentumState(like)
        self.mean_square = MeanSquareState(like)

    def apply(self, w_cur, g, lr, w_base=None):
        """Update `w_cur` in place with gradient `g` computed at `w_base`"""
        kind = self.kind
        if kind is enum.local_updater.none:
            return
        if kind is enum.local_updater.sgd:
            sgd_momentum_update(w_cur, g, self.hp, self.momentum, lr)
            return
        ctx = LocalUpdateContext(w_cur if w_base is None else w_base, w_cur, g)
        if kind is enum.local_updater.dcasgd_c:
            dcasgd_c_update(ctx, self.hp, lr)
        else:
            mean_square_step(self.mean_square, g, self.hp)
            dcasgd_a_update(ctx, self.hp, self.mean_square, lr)
