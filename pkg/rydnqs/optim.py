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
First-order optimisers shared by the training loops.

Parameters and gradients are dictionaries mapping names to numpy arrays.
Complex parameters are updated component-wise: the gradient of a real loss
``L`` with respect to a complex array is passed as
``dL/dRe + 1j * dL/dIm``, and each optimiser treats the real and imaginary
parts as independent real parameters.
"""


from enum import Enum

import numpy as np
from attr import attrs, attrib


class OptimizerName(Enum):
    SGD = "sgd"
    ADAM = "adam"
    ADADELTA = "adadelta"


def _components(array):
    """A real array holding the independent components of ``array``."""
    array = np.asarray(array)
    if np.iscomplexobj(array):
        array = np.ascontiguousarray(np.atleast_1d(array), dtype=complex)
        return array.view(np.float64)
    return array.astype(np.float64)


def _like(components, reference):
    """Undo :func:`_components` for an array shaped like ``reference``."""
    if np.iscomplexobj(reference):
        return components.view(complex).reshape(np.shape(reference))
    return components


def _check_keys(params, grads):
    if set(params) != set(grads):
        raise ValueError(
            "gradients for {} do not match parameters {}".format(
                sorted(grads), sorted(params)
            )
        )


def sgd_update(params, grads, lr):
    """Plain gradient descent, ``theta <- theta - lr * grad``."""
    _check_keys(params, grads)
    return {
        name: _like(
            _components(value) - lr * _components(grads[name]), value
        )
        for name, value in params.items()
    }


@attrs
class AdamState(object):
    """Moment estimates of Adam, shaped like the parameters."""

    step = attrib()
    first_moment = attrib()
    second_moment = attrib()
    lr = attrib(default=1e-3)
    beta1 = attrib(default=0.9)
    beta2 = attrib(default=0.999)
    eps = attrib(default=1e-8)


def init_adam(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = {name: np.zeros_like(value) for name, value in params.items()}
    return AdamState(
        step=0,
        first_moment=zeros,
        second_moment={name: z.copy() for name, z in zeros.items()},
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_update(state, params, grads):
    """One bias-corrected Adam step.

    Parameters
    ----------
    state : AdamState
    params : Dict[str, numpy.ndarray]
    grads : Dict[str, numpy.ndarray]

    Returns
    -------
    Tuple[AdamState, Dict[str, numpy.ndarray]]
        The new state and the updated parameters. Inputs are not modified.
    """
    _check_keys(params, grads)
    step = state.step + 1
    first_correction = 1.0 - state.beta1 ** step
    second_correction = 1.0 - state.beta2 ** step

    first, second, updated = {}, {}, {}
    for name, value in params.items():
        g = _components(grads[name])
        m = state.beta1 * _components(state.first_moment[name]) + (
            1.0 - state.beta1
        ) * g
        v = state.beta2 * _components(state.second_moment[name]) + (
            1.0 - state.beta2
        ) * g ** 2
        m_hat = m / first_correction
        v_hat = v / second_correction
        theta = _components(value) - state.lr * m_hat / (
            np.sqrt(v_hat) + state.eps
        )
        first[name] = _like(m, value)
        second[name] = _like(v, value)
        updated[name] = _like(theta, value)

    new_state = AdamState(
        step, first, second, state.lr, state.beta1, state.beta2, state.eps
    )
    return new_state, updated


@attrs
class AdaDeltaState(object):
    """Running averages of squared gradients and squared updates."""

    squared_gradient = attrib()
    squared_update = attrib()
    rho = attrib(default=0.95)
    eps = attrib(default=1e-7)
    lr = attrib(default=1.0)


def init_adadelta(params, rho=0.95, eps=1e-7, lr=1.0):
    zeros = {name: np.zeros_like(value) for name, value in params.items()}
    return AdaDeltaState(
        zeros, {name: z.copy() for name, z in zeros.items()}, rho, eps, lr
    )


def adadelta_update(state, params, grads):
    """One AdaDelta step.

    With running averages ``Eg2`` and ``Edx2``::

        Eg2 <- rho Eg2 + (1 - rho) g^2
        dx = sqrt(Edx2 + eps) / sqrt(Eg2 + eps) * g
        theta <- theta - lr dx
        Edx2 <- rho Edx2 + (1 - rho) dx^2
    """
    _check_keys(params, grads)
    rho, eps = state.rho, state.eps

    squared_gradient, squared_update, updated = {}, {}, {}
    for name, value in params.items():
        g = _components(grads[name])
        eg2 = rho * _components(state.squared_gradient[name]) + (
            1.0 - rho
        ) * g ** 2
        edx2 = _components(state.squared_update[name])
        dx = np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
        edx2 = rho * edx2 + (1.0 - rho) * dx ** 2
        squared_gradient[name] = _like(eg2, value)
        squared_update[name] = _like(edx2, value)
        updated[name] = _like(_components(value) - state.lr * dx, value)

    new_state = AdaDeltaState(
        squared_gradient, squared_update, rho, eps, state.lr
    )
    return new_state, updated


class Optimizer(object):
    """Holds optimiser state between steps of a training loop."""

    name = None

    def step(self, params, grads):
        raise NotImplementedError

    def hyperparameters(self):
        raise NotImplementedError


class Sgd(Optimizer):
    name = OptimizerName.SGD

    def __init__(self, lr=0.01):
        self.lr = lr

    def step(self, params, grads):
        return sgd_update(params, grads, self.lr)

    def hyperparameters(self):
        return {"lr": self.lr}


class Adam(Optimizer):
    name = OptimizerName.ADAM

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = None

    def step(self, params, grads):
        if self.state is None:
            self.state = init_adam(
                params, self.lr, self.beta1, self.beta2, self.eps
            )
        self.state, params = adam_update(self.state, params, grads)
        return params

    def hyperparameters(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }


class AdaDelta(Optimizer):
    name = OptimizerName.ADADELTA

    def __init__(self, rho=0.95, eps=1e-7, lr=1.0):
        self.rho = rho
        self.eps = eps
        self.lr = lr
        self.state = None

    def step(self, params, grads):
        if self.state is None:
            self.state = init_adadelta(params, self.rho, self.eps, self.lr)
        self.state, params = adadelta_update(self.state, params, grads)
        return params

    def hyperparameters(self):
        return {"rho": self.rho, "eps": self.eps, "lr": self.lr}


OPTIMIZER_FOR_NAME = {
    OptimizerName.SGD: Sgd,
    OptimizerName.ADAM: Adam,
    OptimizerName.ADADELTA: AdaDelta,
}


def for_name(name, **hyperparameters):
    """Build an optimiser from its name and hyperparameters.

    Hyperparameters set to None fall back to the optimiser's defaults.
    """
    try:
        cls = OPTIMIZER_FOR_NAME[OptimizerName(name)]
    except ValueError:
        raise ValueError(
            "unsupported optimizer {}, choose one of {}".format(
                name, {n.value for n in OPTIMIZER_FOR_NAME}
            )
        )
    return cls(
        **{k: v for k, v in hyperparameters.items() if v is not None}
    )
