# Copyright 2021 Faculty Science Limited
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Convolutional phase classifier with hand-written forward and reverse passes.

A configuration is read as a one-channel ``ly x lx`` image in row-major site
order and mapped through

    conv(3x3) -> ReLU -> [conv(3x3) -> ReLU] -> flatten -> dense -> ReLU
    -> dense -> softmax

to the probabilities of the disordered (0) and ordered (1) phases. The
convolutions are valid cross-correlations with stride 1 and no bias. The
second convolution is left out on lattices with a side shorter than 7.
"""


import logging

import numpy as np
from attr import attrs, attrib, evolve
from numpy.lib.stride_tricks import sliding_window_view

from rydnqs import data
from rydnqs.networks import base
from rydnqs.optim import Adam
from rydnqs.util import RydnqsError, rng_for


logger = logging.getLogger(__name__)

CHANNELS = 32
KERNEL_SIZE = 3
HIDDEN_UNITS = 64
N_CLASSES = 2
MIN_SIDE_FOR_SECOND_CONV = 7
PROBABILITY_CLAMP = 1e-12

HISTORY_COLUMNS = ("epoch", "loss", "accuracy", "test_loss", "test_accuracy")


class ShapeError(RydnqsError):
    """Inputs and kernels have incompatible shapes."""

    category = "shape"


class CriticalPointError(RydnqsError):
    """The output signals never cross."""

    category = "critical-point"


@attrs(frozen=True)
class ConvLayerParams(object):
    """A bias-free kernel of shape ``(out, in, my, mx)``."""

    kernel = attrib()

    @kernel.validator
    def _check_kernel(self, attribute, value):
        if value.ndim != 4 or min(value.shape) < 1:
            raise ShapeError(
                "convolution kernel of shape {}".format(value.shape)
            )


@attrs(frozen=True)
class DenseLayerParams(object):
    """A kernel of shape ``(out, in)`` and a bias of shape ``(out,)``."""

    kernel = attrib()
    bias = attrib()

    def __attrs_post_init__(self):
        if self.kernel.ndim != 2 or self.bias.shape != self.kernel.shape[:1]:
            raise ShapeError(
                "dense kernel {} with bias {}".format(
                    self.kernel.shape, self.bias.shape
                )
            )


@attrs(frozen=True)
class CnnArchitecture(object):
    lx = attrib()
    ly = attrib()
    n_conv = attrib()
    channels = attrib(default=CHANNELS)
    hidden_units = attrib(default=HIDDEN_UNITS)
    kernel_size = attrib(default=KERNEL_SIZE)

    def feature_shapes(self):
        """Activation shapes ``(channels, height, width)`` after each conv."""
        shapes = []
        height, width = self.ly, self.lx
        for _ in range(self.n_conv):
            height -= self.kernel_size - 1
            width -= self.kernel_size - 1
            shapes.append((self.channels, height, width))
        return shapes

    @property
    def n_features(self):
        return int(np.prod(self.feature_shapes()[-1]))


@attrs
class CnnModel(object):
    """A classifier architecture and its parameter arrays.

    Parameter names are ``conv1_kernel``, optionally ``conv2_kernel``,
    ``dense1_kernel``, ``dense1_bias``, ``dense2_kernel`` and
    ``dense2_bias``.
    """

    architecture = attrib()
    params = attrib()

    def conv_layers(self):
        return [
            ConvLayerParams(self.params["conv{}_kernel".format(i + 1)])
            for i in range(self.architecture.n_conv)
        ]

    def dense_layers(self):
        return [
            DenseLayerParams(
                self.params["dense{}_kernel".format(i)],
                self.params["dense{}_bias".format(i)],
            )
            for i in (1, 2)
        ]


def default_conv_layers(lx, ly):
    """Two convolutions when both sides are at least 7, otherwise one."""
    return 2 if min(lx, ly) >= MIN_SIDE_FOR_SECOND_CONV else 1


def build_architecture(
    geometry,
    n_conv=None,
    channels=CHANNELS,
    hidden_units=HIDDEN_UNITS,
    kernel_size=KERNEL_SIZE,
):
    if n_conv is None:
        n_conv = default_conv_layers(geometry.lx, geometry.ly)
    architecture = CnnArchitecture(
        geometry.lx, geometry.ly, n_conv, channels, hidden_units, kernel_size
    )
    if n_conv not in (1, 2) or min(architecture.feature_shapes()[-1]) < 1:
        raise ShapeError(
            "{} convolution(s) of size {} do not fit a {}x{} lattice".format(
                n_conv, kernel_size, geometry.lx, geometry.ly
            )
        )
    return architecture


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_cnn(architecture, seed=None):
    """Glorot-uniform kernels and zero biases."""
    rng = rng_for(seed)
    area = architecture.kernel_size ** 2
    params = {}
    in_channels = 1
    for i in range(architecture.n_conv):
        shape = (
            architecture.channels,
            in_channels,
            architecture.kernel_size,
            architecture.kernel_size,
        )
        params["conv{}_kernel".format(i + 1)] = _glorot(
            rng, shape, in_channels * area, architecture.channels * area
        )
        in_channels = architecture.channels
    dense_sizes = [
        (architecture.hidden_units, architecture.n_features),
        (N_CLASSES, architecture.hidden_units),
    ]
    for i, (n_out, n_in) in enumerate(dense_sizes, start=1):
        params["dense{}_kernel".format(i)] = _glorot(
            rng, (n_out, n_in), n_in, n_out
        )
        params["dense{}_bias".format(i)] = np.zeros(n_out)
    return CnnModel(architecture, params)


def zero_cnn(architecture):
    """A model with every parameter zero, which predicts 0.5 for both."""
    model = init_cnn(architecture, seed=0)
    params = {name: np.zeros_like(v) for name, v in model.params.items()}
    return evolve(model, params=params)


def conv2d_forward(inputs, kernel):
    """Valid 2D cross-correlation with stride 1.

    Parameters
    ----------
    inputs : numpy.ndarray
        Shape ``(channels, height, width)`` or a batch of such arrays.
    kernel : numpy.ndarray
        Shape ``(out_channels, channels, my, mx)``.

    Returns
    -------
    numpy.ndarray
        Shape ``(out_channels, height - my + 1, width - mx + 1)``, with the
        leading batch axis kept when given.
    """
    inputs = np.asarray(inputs, dtype=float)
    single = inputs.ndim == 3
    if single:
        inputs = inputs[np.newaxis]
    _check_conv_shapes(inputs, kernel)
    windows = sliding_window_view(inputs, kernel.shape[2:], axis=(2, 3))
    outputs = np.einsum("bchwyx,ocyx->bohw", windows, kernel)
    return outputs[0] if single else outputs


def _check_conv_shapes(inputs, kernel):
    if inputs.ndim != 4 or kernel.ndim != 4:
        raise ShapeError("convolution needs 4-index inputs and kernels")
    if inputs.shape[1] != kernel.shape[1]:
        raise ShapeError(
            "{} input channels for a kernel expecting {}".format(
                inputs.shape[1], kernel.shape[1]
            )
        )
    if inputs.shape[2] < kernel.shape[2] or inputs.shape[3] < kernel.shape[3]:
        raise ShapeError(
            "input {}x{} is smaller than the {}x{} kernel".format(
                inputs.shape[2], inputs.shape[3], *kernel.shape[2:]
            )
        )


def conv2d_backward(inputs, kernel, grad_outputs):
    """Gradients of a batched convolution.

    Returns
    -------
    Tuple[numpy.ndarray, numpy.ndarray]
        The gradients with respect to the inputs and to the kernel.
    """
    windows = sliding_window_view(inputs, kernel.shape[2:], axis=(2, 3))
    grad_kernel = np.einsum("bchwyx,bohw->ocyx", windows, grad_outputs)
    grad_inputs = np.zeros_like(inputs, dtype=float)
    out_h, out_w = grad_outputs.shape[2:]
    for y in range(kernel.shape[2]):
        for x in range(kernel.shape[3]):
            grad_inputs[:, :, y : y + out_h, x : x + out_w] += np.einsum(
                "bohw,oc->bchw", grad_outputs, kernel[:, :, y, x]
            )
    return grad_inputs, grad_kernel


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    """The indicator of ``x > 0``; the subgradient at 0 is taken as 0."""
    return (x > 0).astype(float)


def softmax(logits, axis=-1):
    """Softmax along an axis, computed after subtracting the maximum."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exponentials = np.exp(shifted)
    return exponentials / exponentials.sum(axis=axis, keepdims=True)


def as_images(configurations, architecture):
    """Reshape configurations ``(B, N)`` into images ``(B, 1, ly, lx)``."""
    configurations = np.atleast_2d(configurations)
    expected = architecture.lx * architecture.ly
    if configurations.shape[1] != expected:
        raise ShapeError(
            "configurations of {} sites for a {}x{} classifier".format(
                configurations.shape[1], architecture.lx, architecture.ly
            )
        )
    return configurations.reshape(
        -1, 1, architecture.ly, architecture.lx
    ).astype(float)


def _forward(model, configurations):
    cache = {"images": as_images(configurations, model.architecture)}
    hidden = cache["images"]
    for i, layer in enumerate(model.conv_layers(), start=1):
        cache["conv{}_input".format(i)] = hidden
        pre_activation = conv2d_forward(hidden, layer.kernel)
        cache["conv{}_pre".format(i)] = pre_activation
        hidden = relu(pre_activation)
    cache["features"] = hidden.reshape(hidden.shape[0], -1)
    dense1, dense2 = model.dense_layers()
    cache["dense1_pre"] = cache["features"] @ dense1.kernel.T + dense1.bias
    cache["dense1_out"] = relu(cache["dense1_pre"])
    cache["logits"] = cache["dense1_out"] @ dense2.kernel.T + dense2.bias
    cache["probabilities"] = softmax(cache["logits"])
    return cache


def forward(model, configurations):
    """The class distribution ``P(y|sigma)`` for each configuration.

    Parameters
    ----------
    model : CnnModel
    configurations : numpy.ndarray
        Shape ``(N,)`` or ``(B, N)``.

    Returns
    -------
    numpy.ndarray
        Shape ``(B, 2)``; column 0 is the disordered phase.
    """
    return _forward(model, configurations)["probabilities"]


def predict(model, configurations):
    return np.argmax(forward(model, configurations), axis=1)


def cross_entropy(probabilities, labels):
    """Mean negative log-likelihood of the labels.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]``.
    """
    probabilities = np.clip(
        np.atleast_2d(probabilities), PROBABILITY_CLAMP, 1 - PROBABILITY_CLAMP
    )
    labels = np.asarray(labels, dtype=np.int64)
    picked = probabilities[np.arange(labels.size), labels]
    return float(-np.mean(np.log(picked)))


def backward(model, configurations, labels):
    """Loss and exact gradients of the mean cross-entropy of a batch.

    Returns
    -------
    Tuple[float, Dict[str, numpy.ndarray]]
    """
    cache = _forward(model, configurations)
    labels = np.asarray(labels, dtype=np.int64)
    batch_size = labels.size
    probabilities = cache["probabilities"]
    loss = cross_entropy(probabilities, labels)

    one_hot = np.eye(N_CLASSES)[labels]
    grad_logits = (probabilities - one_hot) / batch_size

    dense1, dense2 = model.dense_layers()
    grads = {
        "dense2_kernel": grad_logits.T @ cache["dense1_out"],
        "dense2_bias": grad_logits.sum(axis=0),
    }
    grad_dense1 = (grad_logits @ dense2.kernel) * relu_grad(
        cache["dense1_pre"]
    )
    grads["dense1_kernel"] = grad_dense1.T @ cache["features"]
    grads["dense1_bias"] = grad_dense1.sum(axis=0)

    conv_layers = model.conv_layers()
    last = "conv{}_pre".format(len(conv_layers))
    grad_hidden = (grad_dense1 @ dense1.kernel).reshape(cache[last].shape)
    for i in range(len(conv_layers), 0, -1):
        grad_pre = grad_hidden * relu_grad(cache["conv{}_pre".format(i)])
        grad_hidden, grads["conv{}_kernel".format(i)] = conv2d_backward(
            cache["conv{}_input".format(i)],
            conv_layers[i - 1].kernel,
            grad_pre,
        )
    return loss, grads


def accuracy(model, dataset):
    if len(dataset) == 0:
        return float("nan")
    return float(
        np.mean(predict(model, dataset.configurations) == dataset.labels)
    )


def evaluate(model, dataset):
    """Mean loss and accuracy over a labeled dataset."""
    if len(dataset) == 0:
        return float("nan"), float("nan")
    probabilities = forward(model, dataset.configurations)
    loss = cross_entropy(probabilities, dataset.labels)
    hits = np.argmax(probabilities, axis=1) == dataset.labels
    return loss, float(np.mean(hits))


@attrs
class EpochRecord(object):
    epoch = attrib()
    loss = attrib()
    accuracy = attrib()
    test_loss = attrib(default=None)
    test_accuracy = attrib(default=None)


def train(
    model,
    train_set,
    test_set=None,
    epochs=5,
    batch_size=32,
    optimizer=None,
    seed=None,
):
    """Train a classifier with mini-batch gradient descent.

    Parameters
    ----------
    model : CnnModel
    train_set : rydnqs.data.LabeledDataset
    test_set : rydnqs.data.LabeledDataset, optional
        Evaluated after each epoch.
    epochs : int, optional
    batch_size : int, optional
    optimizer : rydnqs.optim.Optimizer, optional
        Defaults to Adam with learning rate 0.001.
    seed : int or numpy.random.Generator, optional
        Seeds the batch order.

    Returns
    -------
    Tuple[CnnModel, List[EpochRecord]]
        The trained model and one record per epoch.
    """
    optimizer = optimizer or Adam()
    rng = rng_for(seed)
    params = model.params
    history = []
    for epoch in range(1, epochs + 1):
        losses, sizes = [], []
        for batch in data.batches(train_set, batch_size, seed=rng):
            loss, grads = backward(
                evolve(model, params=params),
                batch.configurations,
                batch.labels,
            )
            params = optimizer.step(params, grads)
            losses.append(loss)
            sizes.append(len(batch))
        model = evolve(model, params=params)
        train_loss, train_accuracy = evaluate(model, train_set)
        record = EpochRecord(epoch, train_loss, train_accuracy)
        if test_set is not None:
            record.test_loss, record.test_accuracy = evaluate(model, test_set)
        history.append(record)
        logger.info(
            "epoch %d: batch loss %.5f, loss %.5f, accuracy %.4f",
            epoch,
            float(np.average(losses, weights=sizes)) if sizes else np.nan,
            train_loss,
            train_accuracy,
        )
    return model, history


@attrs
class SignalPoint(object):
    """Mean output of both neurons at one detuning."""

    delta = attrib()
    disordered = attrib()
    ordered = attrib()
    accuracy = attrib(default=None)


def _by_detuning(datasets):
    if isinstance(datasets, data.LabeledDataset):
        return [(d, datasets.at_detuning(d)) for d in datasets.detunings()]
    return sorted(datasets.items())


def _configurations_of(dataset):
    if isinstance(dataset, data.MeasurementDataset):
        return dataset.outcomes
    return dataset.configurations


def output_signal_curve(model, datasets):
    """Mean class probabilities at each detuning.

    Parameters
    ----------
    model : CnnModel
    datasets : rydnqs.data.LabeledDataset or Mapping
        A labeled dataset, grouped by its detunings, or a mapping from
        detuning to a labeled or occupation-basis measurement dataset.

    Returns
    -------
    List[SignalPoint]
        Sorted by detuning.
    """
    curve = []
    for delta, dataset in _by_detuning(datasets):
        probabilities = forward(model, _configurations_of(dataset))
        mean = probabilities.mean(axis=0)
        curve.append(SignalPoint(float(delta), mean[0], mean[1]))
    return curve


def accuracy_curve(model, dataset):
    """Classification accuracy at each detuning of a labeled dataset."""
    curve = []
    for delta, subset in _by_detuning(dataset):
        probabilities = forward(model, subset.configurations)
        mean = probabilities.mean(axis=0)
        curve.append(
            SignalPoint(
                float(delta), mean[0], mean[1], accuracy(model, subset)
            )
        )
    return curve


def critical_point_estimate(curve):
    """The detuning where the two output signals cross.

    The first sign change of ``ordered - disordered`` along the curve is
    located by linear interpolation between its bracketing points.

    Raises
    ------
    CriticalPointError
        If the signals never cross.
    """
    points = sorted(curve, key=lambda p: p.delta)
    differences = [p.ordered - p.disordered for p in points]
    for i, difference in enumerate(differences):
        if difference == 0.0:
            return points[i].delta
        if i + 1 < len(points) and difference * differences[i + 1] < 0:
            left, right = points[i], points[i + 1]
            fraction = difference / (difference - differences[i + 1])
            return left.delta + fraction * (right.delta - left.delta)
    raise CriticalPointError("the output signals do not cross")


def _architecture_dict(architecture):
    return {
        "lx": architecture.lx,
        "ly": architecture.ly,
        "n_conv": architecture.n_conv,
        "channels": architecture.channels,
        "hidden_units": architecture.hidden_units,
        "kernel_size": architecture.kernel_size,
    }


def save_cnn(prefix, model, seed=None, hyperparameters=None):
    checkpoint = base.Checkpoint(
        kind=base.NetworkKind.CNN,
        architecture=_architecture_dict(model.architecture),
        hyperparameters=hyperparameters or {},
        seed=seed,
    )
    base.save_checkpoint(prefix, checkpoint, model.params)


def load_cnn(prefix):
    checkpoint, params = base.load_checkpoint(prefix, base.NetworkKind.CNN)
    try:
        architecture = CnnArchitecture(**checkpoint.architecture)
    except TypeError as err:
        raise base.CheckpointError("invalid CNN architecture: {}".format(err))
    model = CnnModel(architecture, params)
    expected = init_cnn(architecture, seed=0).params
    for name, value in expected.items():
        if name not in params or params[name].shape != value.shape:
            raise base.CheckpointError(
                "checkpoint parameter {} is missing or misshapen".format(name)
            )
    return model
