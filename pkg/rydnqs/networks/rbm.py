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
Restricted Boltzmann machine wavefunctions for quantum state tomography.

The hidden layer is summed out analytically, leaving the effective energy

    E(s) = sum_j b_j s_j + sum_i log(1 + exp(sum_j W_ij s_j + c_i))

so that ``p(s) = exp(E(s)) / Z``. A positive wavefunction is
``psi(s) = exp(E(s) / 2)``. Promoting ``W``, ``b`` and ``c`` to complex
values gives a wavefunction with a phase, ``p(s) = exp(Re E(s)) / Z``, which
is learned from measurements taken in rotated bases.

Gradients of real losses with respect to complex parameters follow the
convention of :mod:`rydnqs.optim`: ``dL/dRe + i dL/dIm``.
"""


import logging
import warnings

import numpy as np
from attr import attrs, attrib
from scipy.special import expit, logsumexp

from rydnqs import exact, lattice
from rydnqs.data.util import validate_basis
from rydnqs.networks import base
from rydnqs.optim import AdaDelta
from rydnqs.util import RydnqsError, rng_for


logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("weights", "visible_bias", "hidden_bias")
INIT_SCALE = 0.01
DEFAULT_BURN_IN = 1000
ROTATION_LIMIT = 16
LOW_ACCEPTANCE = 0.01
FINAL_WINDOW = 100
ENUMERATION_SITE_LIMIT = exact.SPARSE_SITE_LIMIT


class RotationLimitError(RydnqsError):
    """A measurement basis rotates more sites than can be expanded."""

    category = "rotation-limit"


def _finite(instance, attribute, value):
    if not np.all(np.isfinite(value)):
        raise ValueError("{} must be finite".format(attribute.name))


@attrs(eq=False)
class RbmParams(object):
    """The weights and biases of an RBM.

    Parameters
    ----------
    weights : numpy.ndarray
        Shape ``(n_hidden, n_visible)``.
    visible_bias : numpy.ndarray
        Shape ``(n_visible,)``.
    hidden_bias : numpy.ndarray
        Shape ``(n_hidden,)``.

    The parameters are complex when any of the three arrays is.
    """

    weights = attrib(validator=_finite)
    visible_bias = attrib(validator=_finite)
    hidden_bias = attrib(validator=_finite)

    def __attrs_post_init__(self):
        dtype = complex if self._any_complex() else float
        self.weights = np.asarray(self.weights, dtype=dtype)
        self.visible_bias = np.asarray(self.visible_bias, dtype=dtype)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=dtype)
        n_hidden, n_visible = np.shape(self.weights)
        if self.visible_bias.shape != (n_visible,) or (
            self.hidden_bias.shape != (n_hidden,)
        ):
            raise ValueError(
                "biases of shape {} and {} do not fit weights of shape "
                "{}".format(
                    self.visible_bias.shape,
                    self.hidden_bias.shape,
                    self.weights.shape,
                )
            )

    def _any_complex(self):
        return any(
            np.iscomplexobj(a)
            for a in (self.weights, self.visible_bias, self.hidden_bias)
        )

    @property
    def n_visible(self):
        return self.weights.shape[1]

    @property
    def n_hidden(self):
        return self.weights.shape[0]

    @property
    def alpha(self):
        """The hidden unit density ``n_hidden / n_visible``."""
        return self.n_hidden / self.n_visible

    @property
    def is_complex(self):
        return np.iscomplexobj(self.weights)

    @property
    def field(self):
        return "complex" if self.is_complex else "real"

    def as_dict(self):
        return {
            "weights": self.weights,
            "visible_bias": self.visible_bias,
            "hidden_bias": self.hidden_bias,
        }

    @classmethod
    def from_dict(cls, params):
        return cls(**{name: params[name] for name in PARAMETER_NAMES})


def init_rbm(n_visible, alpha=1, complex_params=False, seed=None):
    """Initialise an RBM with zero biases and small Gaussian weights.

    Parameters
    ----------
    n_visible : int
    alpha : float, optional
        The hidden unit density; ``n_hidden = round(alpha * n_visible)``.
    complex_params : bool, optional
        Draw both components of complex weights.
    seed : int or numpy.random.Generator, optional

    Returns
    -------
    RbmParams
    """
    n_hidden = int(round(alpha * n_visible))
    if n_visible < 1 or n_hidden < 1:
        raise ValueError("an RBM needs at least one visible and hidden unit")
    rng = rng_for(seed)
    shape = (n_hidden, n_visible)
    weights = rng.normal(0.0, INIT_SCALE, size=shape)
    dtype = float
    if complex_params:
        weights = weights + 1j * rng.normal(0.0, INIT_SCALE, size=shape)
        dtype = complex
    return RbmParams(
        weights,
        np.zeros(n_visible, dtype=dtype),
        np.zeros(n_hidden, dtype=dtype),
    )


def _softplus(theta):
    """``log(1 + exp(theta))`` without overflow, for real or complex input.

    Complex input gives the principal branch, with the imaginary part in
    ``(-pi, pi]``.
    """
    if not np.iscomplexobj(theta):
        return np.logaddexp(0.0, theta)
    out = np.empty_like(theta)
    positive = theta.real > 0
    out[positive] = theta[positive] + np.log1p(np.exp(-theta[positive]))
    out[~positive] = np.log1p(np.exp(theta[~positive]))
    # theta + log1p(exp(-theta)) is off the principal branch by 2 pi k i
    return out.real + 1j * np.angle(np.exp(1j * out.imag))


def _sigmoid(theta):
    if not np.iscomplexobj(theta):
        return expit(theta)
    out = np.empty_like(theta)
    positive = theta.real > 0
    out[positive] = 1.0 / (1.0 + np.exp(-theta[positive]))
    exp_theta = np.exp(theta[~positive])
    out[~positive] = exp_theta / (1.0 + exp_theta)
    return out


def _configurations(params, sigma):
    return lattice.as_configuration(sigma, params.n_visible)


def _hidden_fields(params, sigma):
    return sigma @ params.weights.T + params.hidden_bias


def effective_energy(params, sigma):
    """The effective energy of one configuration or a batch of them.

    Returns
    -------
    float, complex or numpy.ndarray
        A scalar for a single configuration of shape ``(N,)``, otherwise an
        array of shape ``(M,)``.
    """
    sigma = _configurations(params, sigma)
    batch = np.atleast_2d(sigma)
    energy = batch @ params.visible_bias + _softplus(
        _hidden_fields(params, batch)
    ).sum(axis=1)
    if sigma.ndim == 1:
        return energy[0]
    return energy


def log_prob_unnormalized(params, sigma):
    """``log p(s) + log Z``: the real part of the effective energy."""
    return np.real(effective_energy(params, sigma))


def log_amplitude(params, sigma):
    """``log psi(s) = E(s) / 2``, unnormalised."""
    return effective_energy(params, sigma) / 2.0


def _enumerate(params):
    if params.n_visible > ENUMERATION_SITE_LIMIT:
        raise exact.SizeLimitError(
            "{} sites exceeds the enumeration limit of {}".format(
                params.n_visible, ENUMERATION_SITE_LIMIT
            )
        )
    return lattice.all_configurations(params.n_visible)


def log_partition_function(params):
    """``log Z`` by summing over all ``2 ** N`` configurations."""
    configs = _enumerate(params)
    return float(logsumexp(log_prob_unnormalized(params, configs)))


def partition_function(params):
    return float(np.exp(log_partition_function(params)))


def probabilities(params):
    """Normalised ``p(s)`` of every configuration, by basis integer."""
    configs = _enumerate(params)
    log_p = log_prob_unnormalized(params, configs)
    return np.exp(log_p - logsumexp(log_p))


def rbm_statevector(params):
    """The normalised wavefunction of an RBM as a state vector."""
    configs = _enumerate(params)
    log_psi = log_amplitude(params, configs)
    amplitudes = np.exp(log_psi - np.max(np.real(log_psi)))
    return exact.StateVector.from_amplitudes(amplitudes)


def kl_divergence(params, target_probabilities):
    """``KL(q || p)`` between target Born probabilities and the RBM."""
    q = np.asarray(target_probabilities, dtype=float)
    p = probabilities(params)
    support = q > 0
    return float(np.sum(q[support] * np.log(q[support] / p[support])))


def energy_gradients(params, sigma):
    """Per-configuration derivatives of the effective energy.

    Returns
    -------
    Dict[str, numpy.ndarray]
        Arrays with a leading batch axis: ``visible_bias`` of shape
        ``(M, N)``, ``hidden_bias`` of shape ``(M, n_hidden)`` and
        ``weights`` of shape ``(M, n_hidden, N)``.
    """
    batch = np.atleast_2d(_configurations(params, sigma))
    activations = _sigmoid(_hidden_fields(params, batch))
    return {
        "visible_bias": batch.astype(activations.dtype),
        "hidden_bias": activations,
        "weights": activations[:, :, np.newaxis] * batch[:, np.newaxis, :],
    }


def _mean_energy_gradients(params, sigma, weights=None):
    """Average of ``dE`` over configurations, optionally weighted."""
    batch = np.atleast_2d(_configurations(params, sigma))
    activations = _sigmoid(_hidden_fields(params, batch))
    if weights is None:
        weights = np.full(batch.shape[0], 1.0 / batch.shape[0])
    weighted = activations * weights[:, np.newaxis]
    return {
        "visible_bias": weights @ batch,
        "hidden_bias": weighted.sum(axis=0),
        "weights": weighted.T @ batch,
    }


@attrs
class MarkovChainState(object):
    """Persistent Metropolis chains.

    Parameters
    ----------
    configurations : numpy.ndarray
        The current configuration of each chain, shape ``(n_chains, N)``.
    rng : numpy.random.Generator
    accepted : int
    proposed : int
    """

    configurations = attrib()
    rng = attrib()
    accepted = attrib(default=0)
    proposed = attrib(default=0)

    @property
    def n_chains(self):
        return self.configurations.shape[0]

    @property
    def acceptance_rate(self):
        if self.proposed == 0:
            return 0.0
        return self.accepted / self.proposed


def init_chains(params, n_chains=1, seed=None):
    """Start chains from uniformly random configurations."""
    rng = rng_for(seed)
    configurations = rng.integers(
        0, 2, size=(n_chains, params.n_visible)
    ).astype(np.int8)
    return MarkovChainState(configurations, rng)


def _metropolis_updates(params, state, n_updates):
    sigma = state.configurations
    rng = state.rng
    chains = np.arange(state.n_chains)
    fields = _hidden_fields(params, sigma)
    log_p = np.real(
        sigma @ params.visible_bias + _softplus(fields).sum(axis=1)
    )
    for _ in range(n_updates):
        sites = rng.integers(0, params.n_visible, size=state.n_chains)
        direction = 1 - 2 * sigma[chains, sites]
        proposed_fields = (
            fields + direction[:, np.newaxis] * params.weights[:, sites].T
        )
        proposed_log_p = np.real(
            log_p
            + direction * params.visible_bias[sites]
            + _softplus(proposed_fields).sum(axis=1)
            - _softplus(fields).sum(axis=1)
        )
        ratio = np.exp(np.minimum(proposed_log_p - log_p, 0.0))
        accept = rng.random(state.n_chains) < ratio
        sigma[chains[accept], sites[accept]] ^= 1
        fields[accept] = proposed_fields[accept]
        log_p[accept] = proposed_log_p[accept]
        state.accepted += int(accept.sum())
        state.proposed += state.n_chains


def metropolis_chain(
    params,
    n_samples,
    burn_in=DEFAULT_BURN_IN,
    thin=None,
    seed=None,
    n_chains=1,
    state=None,
):
    """Draw samples from ``p(s)`` with single-site-flip Metropolis moves.

    Each proposal flips one uniformly chosen site and is accepted with
    probability ``min(1, p(s') / p(s))``. The chains advance in lock-step.

    Parameters
    ----------
    params : RbmParams
    n_samples : int
        The total number of samples, spread evenly over the chains.
    burn_in : int, optional
        Sweeps of ``N`` updates discarded before the first sample.
    thin : int, optional
        Single-site updates between kept samples. Defaults to ``N``.
    seed : int or numpy.random.Generator, optional
        Seeds new chains. Ignored when ``state`` is given.
    n_chains : int, optional
    state : MarkovChainState, optional
        Chains to continue. They are advanced in place.

    Returns
    -------
    Tuple[numpy.ndarray, MarkovChainState]
        Samples of shape ``(n_samples, N)`` and the chain state.
    """
    if state is None:
        state = init_chains(params, n_chains, seed)
    thin = params.n_visible if thin is None else thin
    if thin < 1:
        raise ValueError("thin must be at least 1")
    _metropolis_updates(params, state, burn_in * params.n_visible)
    per_chain = -(-n_samples // state.n_chains)
    samples = np.empty(
        (per_chain, state.n_chains, params.n_visible), dtype=np.int8
    )
    for i in range(per_chain):
        _metropolis_updates(params, state, thin)
        samples[i] = state.configurations
    if state.proposed and state.acceptance_rate < LOW_ACCEPTANCE:
        warnings.warn(
            "Metropolis acceptance rate {:.4f} is below {}".format(
                state.acceptance_rate, LOW_ACCEPTANCE
            )
        )
    samples = samples.reshape(-1, params.n_visible)[:n_samples]
    return samples, state


def nll(params, configurations):
    """Exact negative log-likelihood of occupation-basis data."""
    log_p = log_prob_unnormalized(params, np.atleast_2d(configurations))
    return float(log_partition_function(params) - np.mean(log_p))


def _model_term(params, model_samples):
    """``<conj dE>`` under the model distribution."""
    if model_samples is None:
        configs = _enumerate(params)
        term = _mean_energy_gradients(params, configs, probabilities(params))
    else:
        term = _mean_energy_gradients(params, model_samples)
    return {name: np.conj(value) for name, value in term.items()}


def _cast(params, grads):
    if params.is_complex:
        return grads
    return {name: np.real(value) for name, value in grads.items()}


def nll_gradient(params, data_batch, model_samples=None):
    """Gradient of the negative log-likelihood of occupation-basis data.

    Computes ``<dE>_model - <dE>_data``.

    Parameters
    ----------
    params : RbmParams
    data_batch : numpy.ndarray
        Measured configurations, shape ``(M, N)``.
    model_samples : numpy.ndarray, optional
        Samples from the RBM estimating the model term. When None the model
        term is computed exactly by enumeration.

    Returns
    -------
    Dict[str, numpy.ndarray]
    """
    if params.is_complex:
        batch = np.atleast_2d(data_batch)
        bases = ["Z" * params.n_visible] * batch.shape[0]
        return multi_basis_nll_gradient(params, bases, batch, model_samples)
    model = _model_term(params, model_samples)
    data = _mean_energy_gradients(params, data_batch)
    return _cast(
        params, {name: model[name] - data[name] for name in PARAMETER_NAMES}
    )


def _rotated_expansion(params, basis, outcomes, limit):
    """Reference configurations and rotation weights behind each outcome.

    Returns configurations of shape ``(M, K, N)`` and log weights of shape
    ``(M, K)`` with ``K = 2 ** (number of rotated sites)``.
    """
    rotated = [j for j, letter in enumerate(basis) if letter != "Z"]
    if len(rotated) > limit:
        raise RotationLimitError(
            "basis {} rotates {} sites, more than the limit of {}".format(
                basis, len(rotated), limit
            )
        )
    outcomes = np.atleast_2d(outcomes)
    assignments = lattice.all_configurations(len(rotated))
    configs = np.repeat(
        outcomes[:, np.newaxis, :], assignments.shape[0], axis=1
    )
    log_weights = np.zeros(configs.shape[:2], dtype=complex)
    for k, site in enumerate(rotated):
        configs[:, :, site] = assignments[:, k]
        rotation = exact.BASIS_ROTATIONS[basis[site]]
        rows = outcomes[:, site][:, np.newaxis]
        elements = rotation[rows, assignments[:, k]]
        log_weights += np.log(elements.astype(complex))
    return configs, log_weights


def _complex_logsumexp(values, axis):
    shift = np.max(np.real(values), axis=axis, keepdims=True)
    total = np.log(np.sum(np.exp(values - shift), axis=axis))
    return total + np.squeeze(shift, axis=axis)


def _rotated_log_amplitudes(params, basis, outcomes, limit):
    configs, log_weights = _rotated_expansion(params, basis, outcomes, limit)
    m, k, n = configs.shape
    terms = log_weights + log_amplitude(params, configs.reshape(m * k, n))
    terms = terms.reshape(m, k)
    return configs, terms, _complex_logsumexp(terms, axis=1)


def rotated_log_amplitude(params, basis, outcome, limit=ROTATION_LIMIT):
    """``log <outcome|U(basis)|psi>`` of an unnormalised RBM wavefunction.

    Parameters
    ----------
    params : RbmParams
    basis : str
        One of ``X``, ``Y`` or ``Z`` per site.
    outcome : array-like
        A configuration in the measured basis, or a batch of them.
    limit : int, optional
        The largest number of rotated sites to expand.

    Returns
    -------
    complex or numpy.ndarray
    """
    basis = validate_basis(basis, params.n_visible)
    outcome = _configurations(params, outcome)
    _, _, log_amplitudes = _rotated_log_amplitudes(
        params, basis, outcome, limit
    )
    if outcome.ndim == 1:
        return complex(log_amplitudes[0])
    return log_amplitudes


def multi_basis_nll(params, bases, outcomes, limit=ROTATION_LIMIT):
    """Exact negative log-likelihood of measurements in several bases."""
    outcomes = np.atleast_2d(_configurations(params, outcomes))
    bases = list(bases)
    total = 0.0
    for basis, rows in _group_rows(bases, params.n_visible).items():
        _, _, log_amplitudes = _rotated_log_amplitudes(
            params, basis, outcomes[rows], limit
        )
        total += float(np.sum(2.0 * np.real(log_amplitudes)))
    return log_partition_function(params) - total / len(bases)


def _group_rows(bases, n_sites):
    groups = {}
    for i, basis in enumerate(bases):
        basis = validate_basis(basis, n_sites)
        groups.setdefault(basis, []).append(i)
    return groups


def multi_basis_nll_gradient(
    params, bases, outcomes, model_samples=None, limit=ROTATION_LIMIT
):
    """Gradient of the negative log-likelihood of rotated measurements.

    The loss is ``-mean_k log p(x_k)`` with
    ``p(x) = |<s|U(basis)|psi>|^2 / <psi|psi>``.

    Parameters
    ----------
    params : RbmParams
    bases : Sequence[str]
        The basis of each shot.
    outcomes : numpy.ndarray
        The outcome of each shot, shape ``(M, N)``.
    model_samples : numpy.ndarray, optional
        Samples estimating the normalisation term; exact when None.
    limit : int, optional
        The largest number of rotated sites to expand.

    Returns
    -------
    Dict[str, numpy.ndarray]
    """
    outcomes = np.atleast_2d(_configurations(params, outcomes))
    bases = list(bases)
    if len(bases) != outcomes.shape[0]:
        raise ValueError("one basis is needed per outcome")
    n_sites = params.n_visible
    data = {
        "weights": np.zeros(params.weights.shape, dtype=complex),
        "visible_bias": np.zeros(n_sites, dtype=complex),
        "hidden_bias": np.zeros(params.n_hidden, dtype=complex),
    }
    for basis, rows in _group_rows(bases, n_sites).items():
        configs, terms, log_amplitudes = _rotated_log_amplitudes(
            params, basis, outcomes[rows], limit
        )
        responsibilities = np.exp(terms - log_amplitudes[:, np.newaxis])
        flat_configs = configs.reshape(-1, n_sites)
        activations = _sigmoid(_hidden_fields(params, flat_configs))
        flat_resp = responsibilities.reshape(-1)
        weighted = activations * flat_resp[:, np.newaxis]
        data["visible_bias"] += flat_resp @ flat_configs
        data["hidden_bias"] += weighted.sum(axis=0)
        data["weights"] += weighted.T @ flat_configs
    model = _model_term(params, model_samples)
    grads = {
        name: model[name] - np.conj(data[name]) / len(bases)
        for name in PARAMETER_NAMES
    }
    return _cast(params, grads)


def local_observable(params, samples, operator):
    """``O_loc(s) = sum_s' <s|O|s'> psi(s') / psi(s)`` for each sample."""
    samples = np.atleast_2d(_configurations(params, samples))
    return base.local_values(
        lambda s: log_amplitude(params, s), samples, operator
    )


def estimate_expectation(
    params,
    operator,
    n_samples=2000,
    seed=None,
    samples=None,
    burn_in=DEFAULT_BURN_IN,
    n_chains=1,
):
    """Monte Carlo estimate of ``<psi|O|psi>``.

    Returns
    -------
    Tuple[float, float]
        The mean of the real part of the local values and its standard
        error.
    """
    if samples is None:
        samples, _ = metropolis_chain(
            params, n_samples, burn_in=burn_in, seed=seed, n_chains=n_chains
        )
    values = np.real(local_observable(params, samples, operator))
    if values.size < 2:
        return float(values.mean()), 0.0
    return (
        float(values.mean()),
        float(values.std(ddof=1) / np.sqrt(values.size)),
    )


def exact_expectation(params, operator):
    """``<psi|O|psi>`` averaging local values over exact probabilities."""
    configs = _enumerate(params)
    values = local_observable(params, configs, operator)
    return float(np.real(probabilities(params) @ values))


@attrs
class TomographyRecord(object):
    """Diagnostics of one training iteration."""

    iteration = attrib()
    acceptance_rate = attrib()
    observables = attrib(factory=dict)
    fidelity = attrib(default=None)


def _data_batch(dataset, size, rng):
    n = len(dataset)
    if size is None or size >= n:
        return dataset
    return dataset.subset(np.sort(rng.choice(n, size=size, replace=False)))


def train_tomography(
    params,
    dataset,
    optimizer=None,
    n_samples_data=1000,
    n_samples=2000,
    epochs=100,
    seed=None,
    n_chains=10,
    burn_in=DEFAULT_BURN_IN,
    observables=None,
    target=None,
    exact_model_term=False,
    limit=ROTATION_LIMIT,
):
    """Fit an RBM to measurement data.

    Every iteration draws ``n_samples_data`` shots from the dataset and
    ``n_samples`` model samples from persistent Metropolis chains, then
    steps the optimiser along the negative log-likelihood gradient.

    Parameters
    ----------
    params : RbmParams
    dataset : rydnqs.data.MeasurementDataset
    optimizer : rydnqs.optim.Optimizer, optional
        Defaults to AdaDelta.
    n_samples_data : int, optional
    n_samples : int, optional
    epochs : int, optional
        The number of iterations.
    seed : int or numpy.random.Generator, optional
    n_chains : int, optional
    burn_in : int, optional
        Sweeps discarded before the first iteration only.
    observables : Mapping[str, operator], optional
        Observables estimated on the model samples of each iteration.
    target : rydnqs.exact.StateVector, optional
        When given, the exact fidelity is recorded every iteration.
    exact_model_term : bool, optional
        Compute the normalisation term and the observables by enumeration
        instead of sampling.
    limit : int, optional
        The largest number of rotated sites to expand.

    Returns
    -------
    Tuple[RbmParams, List[TomographyRecord]]
    """
    if dataset.n_sites != params.n_visible:
        raise lattice.LatticeError(
            "dataset of {} sites does not fit an RBM of {} visible "
            "units".format(dataset.n_sites, params.n_visible)
        )
    optimizer = optimizer or AdaDelta()
    observables = observables or {}
    rng = rng_for(seed)
    chains = None
    use_reference = dataset.is_reference_basis and not params.is_complex
    history = []
    for iteration in range(1, epochs + 1):
        batch = _data_batch(dataset, n_samples_data, rng)
        if exact_model_term:
            model_samples = None
        else:
            model_samples, chains = metropolis_chain(
                params,
                n_samples,
                burn_in=burn_in if chains is None else 0,
                seed=rng,
                n_chains=n_chains,
                state=chains,
            )
        if use_reference:
            grads = nll_gradient(params, batch.outcomes, model_samples)
        else:
            grads = multi_basis_nll_gradient(
                params, batch.bases, batch.outcomes, model_samples, limit
            )
        acceptance = None if chains is None else chains.acceptance_rate
        record = TomographyRecord(iteration, acceptance)
        # observables belong to the parameters the model samples came from
        for name, operator in observables.items():
            if exact_model_term:
                record.observables[name] = exact_expectation(params, operator)
            else:
                record.observables[name], _ = estimate_expectation(
                    params, operator, samples=model_samples
                )
        params = RbmParams.from_dict(optimizer.step(params.as_dict(), grads))
        if target is not None:
            record.fidelity = exact.fidelity(rbm_statevector(params), target)
        history.append(record)
        logger.info(
            "iteration %d: acceptance %s, fidelity %s, %s",
            iteration,
            record.acceptance_rate,
            record.fidelity,
            record.observables,
        )
    return params, history


def final_observable_averages(history, window=FINAL_WINDOW):
    """Average each tracked observable over the last ``window`` records."""
    tail = history[-window:]
    if not tail:
        return {}
    names = tail[0].observables.keys()
    return {
        name: float(np.mean([r.observables[name] for r in tail]))
        for name in names
    }


def moving_average(values, window=50):
    """Averages over a sliding window; short series are returned as is."""
    values = np.asarray(values, dtype=float)
    if values.size < window:
        return values
    return np.convolve(values, np.ones(window) / window, mode="valid")


def smoothed_fidelity(history, window=50):
    """Moving average of the recorded fidelities."""
    return moving_average(
        [r.fidelity for r in history if r.fidelity is not None], window
    )


def history_columns(history):
    names = sorted(history[0].observables) if history else []
    return ["iteration", "acceptance_rate", "fidelity"] + names


def history_rows(history):
    """Flatten records into mappings accepted by ``base.write_history``."""
    rows = []
    for record in history:
        row = {
            "iteration": record.iteration,
            "acceptance_rate": record.acceptance_rate,
            "fidelity": record.fidelity,
        }
        row.update(record.observables)
        rows.append(row)
    return rows


def save_rbm(prefix, params, seed=None, hyperparameters=None):
    checkpoint = base.Checkpoint(
        kind=base.NetworkKind.RBM,
        architecture={
            "n_visible": params.n_visible,
            "n_hidden": params.n_hidden,
            "field": params.field,
        },
        hyperparameters=hyperparameters or {},
        seed=seed,
    )
    base.save_checkpoint(prefix, checkpoint, params.as_dict())


def load_rbm(prefix):
    checkpoint, arrays = base.load_checkpoint(prefix, base.NetworkKind.RBM)
    try:
        params = RbmParams.from_dict(arrays)
    except (KeyError, ValueError) as err:
        raise base.CheckpointError("invalid RBM parameters: {}".format(err))
    architecture = checkpoint.architecture
    if (
        architecture.get("n_visible") != params.n_visible
        or architecture.get("n_hidden") != params.n_hidden
        or architecture.get("field") != params.field
    ):
        raise base.CheckpointError(
            "RBM parameters do not match the manifest {}".format(architecture)
        )
    return params
