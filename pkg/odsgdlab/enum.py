from enum import Enum


class StringyEnum(object):
    """
    Mixin which changes the string formatting to only include the name
    """

    def __str__(self):
        return self.name


def make(name, options):
    assert type(options) == dict
    for k, v in options.items():
        assert isinstance(k, str)
        assert isinstance(v, str)
    return Enum(name, options, type=StringyEnum)


mode = make('Training Mode', {
    'SSGD': "synchronous SGD: the server waits for all M gradients before one global update",
    'ASGD': "asynchronous SGD: the server updates immediately with every arriving gradient",
    'DCASGD_C': "asynchronous SGD with constant-lambda delay compensation on the server",
    'DCASGD_A': "asynchronous SGD with MeanSquare-adaptive delay compensation on the server",
    'ODSGD': "one-step delay SGD: synchronous global update plus a locally updated one-round-stale weight copy",
})

synchronous_modes = (mode.SSGD, mode.ODSGD)

worker_stage = make('Worker Stage', {
    'WarmUp': "plain synchronous training before the switch",
    'Switching': "the last two warm-up iterations (wp-1 copies the pulled weights, wp applies the first local update)",
    'Steady': "one-step delay training on the locally updated backup weights",
})

local_updater = make('Local Updater', {
    'none': "identity: the backup weights are left as pulled",
    'sgd': "SGD with momentum and weight decay",
    'dcasgd_c': "delay-compensated SGD with a constant lambda",
    'dcasgd_a': "delay-compensated SGD with a MeanSquare-adaptive lambda",
})

lr_policy = make('Learning Rate Policy', {
    'constant': "the base learning rate throughout",
    'step': "multiply by a factor after each milestone epoch",
    'linear_wp': "linear ramp from a start value to the base over some epochs, then an inner policy",
    'poly': "polynomial decay to zero over the run",
})

model_kind = make('Model Kind', {
    'softmax': "softmax (multinomial logistic) regression",
    'mlp1': "one-hidden-layer tanh perceptron",
})

data_source = make('Data Source', {
    'synthetic': "seeded Gaussian clusters",
    'idx': "IDX-formatted image/label file pairs (MNIST layout)",
})
