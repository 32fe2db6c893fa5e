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
Autoregressive GRU wavefunctions trained by variational Monte Carlo.

Sites are visited along a row-major snake. At step ``t`` the GRU reads the
previous occupation, one-hot encoded, or a start token at ``t = 0``:

    z = sig(W_z [h; x] + b_z)
    r = sig(W_r [h; x] + b_r)
    g = tanh(W_h [r * h; x] + b_h)
    h' = (1 - z) * h + z * g

and ``softmax(U h' + c)`` gives the conditional distribution of the site.
The wavefunction is ``psi(s) = sqrt(p(s))`` with ``p`` the product of the
conditionals, so it is normalised by construction and sampled exactly.
"""


import logging

import numpy as np
from attr import attrs, attrib
from scipy.special import expit

from rydnqs import exact, lattice
from rydnqs.networks import base
from rydnqs.optim import Adam
from rydnqs.util import rng_for


logger = logging.getLogger(__name__)

INPUT_DIM = 3
START_TOKEN = 2
N_HIDDEN = 32
N_SAMPLES = 500
LEARNING_RATE = 1e-3
EPOCHS = 1000
SEED = 1234
ENUMERATION_SITE_LIMIT = 16
PARAMETER_NAMES = ("w_z", "w_r", "w_h", "b_z", "b_r", "b_h", "u", "c")
HISTORY_COLUMNS = ("epoch", "energy", "energy_stderr", "variance")


@attrs(eq=False)
class GruParams(object):
    """Kernels and biases of a GRU cell and its softmax output layer.

    The gate kernels have shape ``(n_hidden, n_hidden + 3)`` and act on the
    concatenation of the hidden state and the input.
    """

    w_z = attrib()
    w_r = attrib()
    w_h = attrib()
    b_z = attrib()
    b_r = attrib()
    b_h = attrib()
    u = attrib()
    c = attrib()

    def __attrs_post_init__(self):
        for name in PARAMETER_NAMES:
            value = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(value)):
                raise ValueError("{} must be finite".format(name))
            setattr(self, name, value)
        n_hidden = self.b_z.shape[0]
        expected = {
            "w_z": (n_hidden, n_hidden + INPUT_DIM),
            "w_r": (n_hidden, n_hidden + INPUT_DIM),
            "w_h": (n_hidden, n_hidden + INPUT_DIM),
            "b_r": (n_hidden,),
            "b_h": (n_hidden,),
            "u": (2, n_hidden),
            "c": (2,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(
                    "{} has shape {}, expected {}".format(
                        name, getattr(self, name).shape, shape
                    )
                )

    @property
    def n_hidden(self):
        return self.b_z.shape[0]

    def as_dict(self):
        return {name: getattr(self, name) for name in PARAMETER_NAMES}

    @classmethod
    def from_dict(cls, params):
        return cls(**{name: params[name] for name in PARAMETER_NAMES})


def snake_order(geometry):
    """Row-major snake through the lattice: even rows left to right."""
    order = []
    for y in range(geometry.ly):
        xs = range(geometry.lx) if y % 2 == 0 else reversed(range(geometry.lx))
        order.extend(geometry.site_index(x, y) for x in xs)
    return np.array(order, dtype=np.int64)


@attrs(eq=False)
class RnnWavefunction(object):
    """A GRU wavefunction over the sites of a lattice.

    Parameters
    ----------
    params : GruParams
    order : numpy.ndarray
        The site visited at each step.
    """

    params = attrib()
    order = attrib(converter=lambda o: np.asarray(o, dtype=np.int64))

    def __attrs_post_init__(self):
        n_sites = self.order.size
        if not np.array_equal(np.sort(self.order), np.arange(n_sites)):
            raise ValueError("the site order must be a permutation")

    @property
    def n_sites(self):
        return self.order.size


def _glorot(rng, shape):
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_gru(n_hidden=N_HIDDEN, seed=None):
    """Glorot-uniform kernels and zero biases."""
    rng = rng_for(seed)
    gate_shape = (n_hidden, n_hidden + INPUT_DIM)
    return GruParams(
        w_z=_glorot(rng, gate_shape),
        w_r=_glorot(rng, gate_shape),
        w_h=_glorot(rng, gate_shape),
        b_z=np.zeros(n_hidden),
        b_r=np.zeros(n_hidden),
        b_h=np.zeros(n_hidden),
        u=_glorot(rng, (2, n_hidden)),
        c=np.zeros(2),
    )


def init_rnn(geometry, n_hidden=N_HIDDEN, seed=None):
    return RnnWavefunction(init_gru(n_hidden, seed), snake_order(geometry))


def one_hot(values):
    """Encode occupations, or ``START_TOKEN``, as network inputs."""
    values = np.asarray(values, dtype=np.int64)
    return np.eye(INPUT_DIM)[values]


def gru_step(params, h_prev, x_prev):
    """Advance the hidden state by one site.

    Parameters
    ----------
    params : GruParams
    h_prev : numpy.ndarray
        Shape ``(n_hidden,)`` or ``(M, n_hidden)``.
    x_prev : numpy.ndarray
        The encoded input, shape ``(3,)`` or ``(M, 3)``.

    Returns
    -------
    numpy.ndarray
    """
    return _gru_forward(params, h_prev, x_prev)["h"]


def _gru_forward(params, h_prev, x):
    h_prev = np.asarray(h_prev, dtype=float)
    x = np.asarray(x, dtype=float)
    if h_prev.shape[-1] != params.n_hidden or x.shape[-1] != INPUT_DIM:
        raise ValueError(
            "hidden state of shape {} and input of shape {} do not fit a "
            "GRU with {} hidden units".format(
                h_prev.shape, x.shape, params.n_hidden
            )
        )
    hx = np.concatenate([h_prev, x], axis=-1)
    z = expit(hx @ params.w_z.T + params.b_z)
    r = expit(hx @ params.w_r.T + params.b_r)
    rhx = np.concatenate([r * h_prev, x], axis=-1)
    g = np.tanh(rhx @ params.w_h.T + params.b_h)
    h = (1.0 - z) * h_prev + z * g
    return {
        "h_prev": h_prev,
        "hx": hx,
        "z": z,
        "r": r,
        "rhx": rhx,
        "g": g,
        "h": h,
    }


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def conditional(params, h):
    """The probabilities of an empty and an occupied site."""
    return np.exp(_log_softmax(np.asarray(h) @ params.u.T + params.c))


def sample(wavefunction, n_samples, seed=None):
    """Draw independent configurations by ancestral sampling.

    Returns
    -------
    Tuple[numpy.ndarray, numpy.ndarray]
        Configurations of shape ``(n_samples, N)`` and their ``log p``.
    """
    params = wavefunction.params
    rng = rng_for(seed)
    configs = np.zeros((n_samples, wavefunction.n_sites), dtype=np.int8)
    log_probs = np.zeros(n_samples)
    h = np.zeros((n_samples, params.n_hidden))
    x = one_hot(np.full(n_samples, START_TOKEN))
    rows = np.arange(n_samples)
    for site in wavefunction.order:
        h = gru_step(params, h, x)
        log_p = _log_softmax(h @ params.u.T + params.c)
        occupied = rng.random(n_samples) < np.exp(log_p[:, 1])
        values = occupied.astype(np.int64)
        log_probs += log_p[rows, values]
        configs[:, site] = values
        x = one_hot(values)
    return configs, log_probs


def _forward(wavefunction, sigma):
    params = wavefunction.params
    sigma = lattice.as_configuration(
        np.atleast_2d(sigma), wavefunction.n_sites
    )
    n_samples = sigma.shape[0]
    sequence = sigma[:, wavefunction.order].astype(np.int64)
    h = np.zeros((n_samples, params.n_hidden))
    x = one_hot(np.full(n_samples, START_TOKEN))
    rows = np.arange(n_samples)
    log_prob = np.zeros(n_samples)
    steps = []
    for t in range(wavefunction.n_sites):
        cache = _gru_forward(params, h, x)
        h = cache["h"]
        log_p = _log_softmax(h @ params.u.T + params.c)
        log_prob += log_p[rows, sequence[:, t]]
        cache["probabilities"] = np.exp(log_p)
        steps.append(cache)
        x = one_hot(sequence[:, t])
    return sequence, log_prob, steps


def log_psi(wavefunction, sigma):
    """``log psi(s) = log p(s) / 2`` for one configuration or a batch."""
    _, log_prob, _ = _forward(wavefunction, sigma)
    if np.ndim(sigma) == 1:
        return float(log_prob[0] / 2.0)
    return log_prob / 2.0


def log_psi_vjp(wavefunction, sigma, weights):
    """Gradient of ``sum_i weights_i log psi(s_i)`` by backpropagation.

    Parameters
    ----------
    wavefunction : RnnWavefunction
    sigma : numpy.ndarray
        Configurations of shape ``(M, N)``.
    weights : numpy.ndarray
        Shape ``(M,)``.

    Returns
    -------
    Dict[str, numpy.ndarray]
    """
    params = wavefunction.params
    sequence, _, steps = _forward(wavefunction, sigma)
    weights = np.asarray(weights, dtype=float)
    n_hidden = params.n_hidden
    grads = {
        name: np.zeros_like(value) for name, value in params.as_dict().items()
    }
    dh = np.zeros((sequence.shape[0], n_hidden))
    for t in reversed(range(len(steps))):
        cache = steps[t]
        targets = one_hot(sequence[:, t])[:, :2]
        dlogits = 0.5 * weights[:, np.newaxis] * (
            targets - cache["probabilities"]
        )
        grads["u"] += dlogits.T @ cache["h"]
        grads["c"] += dlogits.sum(axis=0)
        dh = dh + dlogits @ params.u

        z, r, g, h_prev = cache["z"], cache["r"], cache["g"], cache["h_prev"]
        dz = dh * (g - h_prev)
        dg = dh * z
        dh_prev = dh * (1.0 - z)

        dg_pre = dg * (1.0 - g ** 2)
        grads["w_h"] += dg_pre.T @ cache["rhx"]
        grads["b_h"] += dg_pre.sum(axis=0)
        drh = (dg_pre @ params.w_h)[:, :n_hidden]
        dr = drh * h_prev
        dh_prev += drh * r

        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        grads["w_z"] += dz_pre.T @ cache["hx"]
        grads["b_z"] += dz_pre.sum(axis=0)
        grads["w_r"] += dr_pre.T @ cache["hx"]
        grads["b_r"] += dr_pre.sum(axis=0)
        dhx = dz_pre @ params.w_z + dr_pre @ params.w_r
        dh = dh_prev + dhx[:, :n_hidden]
    return grads


def local_energy(wavefunction, sigma, model):
    """``E_loc(s) = sum_s' <s|H|s'> psi(s') / psi(s)`` of the Rydberg model."""
    samples = np.atleast_2d(sigma)
    values = np.real(
        base.local_values(
            lambda s: log_psi(wavefunction, s), samples, model
        )
    )
    if np.ndim(sigma) == 1:
        return float(values[0])
    return values


@attrs
class EnergyEstimate(object):
    """Sample statistics of the local energy."""

    mean = attrib()
    variance = attrib()
    stderr = attrib()

    @classmethod
    def from_local_energies(cls, values):
        values = np.asarray(values, dtype=float)
        variance = float(values.var())
        stderr = float(np.sqrt(variance / values.size))
        return cls(float(values.mean()), variance, stderr)


def surrogate_loss(wavefunction, samples, local_energies, baseline=True):
    """``mean(2 log psi (E_loc - E))`` with ``E_loc`` and ``E`` frozen.

    Its gradient is the stochastic energy gradient. Without the baseline the
    plain estimator ``mean(2 log psi E_loc)`` is used.
    """
    local_energies = np.asarray(local_energies, dtype=float)
    centred = local_energies - local_energies.mean() * bool(baseline)
    return float(np.mean(2.0 * log_psi(wavefunction, samples) * centred))


def estimator_gradient(wavefunction, samples, local_energies, baseline=True):
    """Gradient of :func:`surrogate_loss`."""
    local_energies = np.asarray(local_energies, dtype=float)
    centred = local_energies - local_energies.mean() * bool(baseline)
    weights = 2.0 * centred / local_energies.size
    return log_psi_vjp(wavefunction, samples, weights)


def energy_and_gradient(
    wavefunction, model, n_samples=N_SAMPLES, seed=None, baseline=True
):
    """Stochastic estimate of the energy and its gradient.

    Parameters
    ----------
    wavefunction : RnnWavefunction
    model : rydnqs.lattice.RydbergModel
    n_samples : int, optional
    seed : int or numpy.random.Generator, optional
    baseline : bool, optional
        Subtract the sample mean energy from the local energies, which
        leaves the expected gradient unchanged and reduces its variance.

    Returns
    -------
    Tuple[EnergyEstimate, Dict[str, numpy.ndarray]]
    """
    if n_samples < 1:
        raise ValueError("at least one sample is needed")
    samples, _ = sample(wavefunction, n_samples, seed)
    local_energies = local_energy(wavefunction, samples, model)
    grads = estimator_gradient(
        wavefunction, samples, local_energies, baseline
    )
    return EnergyEstimate.from_local_energies(local_energies), grads


def _enumerate(wavefunction):
    if wavefunction.n_sites > ENUMERATION_SITE_LIMIT:
        raise exact.SizeLimitError(
            "{} sites exceeds the enumeration limit of {}".format(
                wavefunction.n_sites, ENUMERATION_SITE_LIMIT
            )
        )
    return lattice.all_configurations(wavefunction.n_sites)


def rnn_statevector(wavefunction):
    """The wavefunction over all configurations, by basis integer."""
    configs = _enumerate(wavefunction)
    amplitudes = np.exp(log_psi(wavefunction, configs))
    return exact.StateVector(amplitudes, wavefunction.n_sites)


def exact_energy(wavefunction, model):
    """``<psi|H|psi>`` averaging local energies over exact probabilities."""
    configs = _enumerate(wavefunction)
    probabilities = np.exp(2.0 * log_psi(wavefunction, configs))
    return float(probabilities @ local_energy(wavefunction, configs, model))


def exact_gradient(wavefunction, model):
    """``dE = 2 sum_s p(s) dlog psi(s) (E_loc(s) - E)`` by enumeration."""
    configs = _enumerate(wavefunction)
    probabilities = np.exp(2.0 * log_psi(wavefunction, configs))
    local_energies = local_energy(wavefunction, configs, model)
    energy = probabilities @ local_energies
    weights = 2.0 * probabilities * (local_energies - energy)
    return log_psi_vjp(wavefunction, configs, weights)


@attrs
class VmcRecord(object):
    epoch = attrib()
    energy = attrib()
    energy_stderr = attrib()
    variance = attrib()


@attrs
class VmcRun(object):
    """The state of a variational Monte Carlo optimisation.

    Parameters
    ----------
    model : rydnqs.lattice.RydbergModel
    wavefunction : RnnWavefunction
    optimizer : rydnqs.optim.Optimizer, optional
        Defaults to Adam with learning rate 0.001.
    n_samples : int, optional
    epochs : int, optional
    seed : int, optional
    baseline : bool, optional
    history : List[VmcRecord], optional
    """

    model = attrib()
    wavefunction = attrib()
    optimizer = attrib(factory=lambda: Adam(lr=LEARNING_RATE))
    n_samples = attrib(default=N_SAMPLES)
    epochs = attrib(default=EPOCHS)
    seed = attrib(default=SEED)
    baseline = attrib(default=True)
    history = attrib(factory=list)

    def __attrs_post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.wavefunction.n_sites != self.model.n_sites:
            raise lattice.LatticeError(
                "wavefunction of {} sites does not fit a model of {} "
                "sites".format(self.wavefunction.n_sites, self.model.n_sites)
            )


def train(run):
    """Minimise the energy, updating ``run`` in place.

    Returns
    -------
    List[VmcRecord]
        The history of the run.
    """
    rng = rng_for(run.seed)
    start = len(run.history)
    for epoch in range(start + 1, start + run.epochs + 1):
        estimate, grads = energy_and_gradient(
            run.wavefunction, run.model, run.n_samples, rng, run.baseline
        )
        params = run.optimizer.step(run.wavefunction.params.as_dict(), grads)
        run.wavefunction = RnnWavefunction(
            GruParams.from_dict(params), run.wavefunction.order
        )
        run.history.append(
            VmcRecord(
                epoch, estimate.mean, estimate.stderr, estimate.variance
            )
        )
        logger.info(
            "epoch %d: energy %.6f +/- %.6f, variance %.6f",
            epoch,
            estimate.mean,
            estimate.stderr,
            estimate.variance,
        )
    return run.history


def save_rnn(prefix, wavefunction, seed=None, hyperparameters=None):
    checkpoint = base.Checkpoint(
        kind=base.NetworkKind.RNN,
        architecture={
            "n_hidden": wavefunction.params.n_hidden,
            "order": [int(site) for site in wavefunction.order],
        },
        hyperparameters=hyperparameters or {},
        seed=seed,
    )
    base.save_checkpoint(prefix, checkpoint, wavefunction.params.as_dict())


def load_rnn(prefix):
    checkpoint, arrays = base.load_checkpoint(prefix, base.NetworkKind.RNN)
    try:
        params = GruParams.from_dict(arrays)
        wavefunction = RnnWavefunction(
            params, checkpoint.architecture["order"]
        )
    except (KeyError, ValueError) as err:
        raise base.CheckpointError("invalid RNN checkpoint: {}".format(err))
    if checkpoint.architecture.get("n_hidden") != params.n_hidden:
        raise base.CheckpointError("RNN parameters do not match the manifest")
    return wavefunction
