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
import numpy as np
import pytest

from rydnqs import exact, lattice
from rydnqs.lattice import LatticeGeometry, RydbergModel
from rydnqs.networks import base, rnn
from rydnqs.networks.rnn import GruParams, RnnWavefunction, VmcRun
from rydnqs.optim import Adam


CHAIN_3 = LatticeGeometry(3, 1)
SQUARE_2 = LatticeGeometry(2, 2)
SQUARE_4 = LatticeGeometry(4, 4)


def _zero_params(n_hidden):
    template = rnn.init_gru(n_hidden, seed=0).as_dict()
    return GruParams.from_dict(
        {name: np.zeros_like(value) for name, value in template.items()}
    )


def _random_wavefunction(geometry, n_hidden, seed):
    params = rnn.init_gru(n_hidden, seed=seed).as_dict()
    rng = np.random.default_rng(seed + 1)
    for name in ("b_z", "b_r", "b_h", "c"):
        params[name] = rng.normal(scale=0.5, size=params[name].shape)
    return RnnWavefunction(
        GruParams.from_dict(params), rnn.snake_order(geometry)
    )


def _shifted(wavefunction, name, index, step):
    params = {k: v.copy() for k, v in wavefunction.params.as_dict().items()}
    params[name][index] += step
    return RnnWavefunction(GruParams.from_dict(params), wavefunction.order)


def _finite_differences(wavefunction, function, step=1e-6):
    grads = {}
    for name, value in wavefunction.params.as_dict().items():
        grads[name] = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            plus = function(_shifted(wavefunction, name, index, step))
            minus = function(_shifted(wavefunction, name, index, -step))
            grads[name][index] = (plus - minus) / (2 * step)
    return grads


def _assert_gradients_close(actual, expected, rtol, atol):
    for name in rnn.PARAMETER_NAMES:
        np.testing.assert_allclose(
            actual[name], expected[name], rtol=rtol, atol=atol
        )


def test_params_reject_bad_shape():
    params = rnn.init_gru(4, seed=0).as_dict()
    params["u"] = np.zeros((3, 4))
    with pytest.raises(ValueError):
        GruParams.from_dict(params)


def test_gru_step_of_zero_params():
    params = _zero_params(3)
    start = rnn.one_hot(rnn.START_TOKEN)
    np.testing.assert_array_equal(
        rnn.gru_step(params, np.zeros(3), start), np.zeros(3)
    )
    h = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(rnn.gru_step(params, h, start), 0.5 * h)


def test_gru_step_is_convex_combination():
    params = _random_wavefunction(CHAIN_3, 4, seed=0).params
    rng = np.random.default_rng(0)
    h = rng.uniform(-1, 1, size=(10, 4))
    x = rnn.one_hot(rng.integers(0, 2, size=10))
    cache = rnn._gru_forward(params, h, x)
    low = np.minimum(h, cache["g"])
    high = np.maximum(h, cache["g"])
    assert np.all(cache["h"] >= low - 1e-15)
    assert np.all(cache["h"] <= high + 1e-15)


def test_gru_step_dimension_mismatch():
    params = rnn.init_gru(4, seed=0)
    with pytest.raises(ValueError):
        rnn.gru_step(params, np.zeros(3), rnn.one_hot(0))


def test_conditional():
    params = _zero_params(2)
    np.testing.assert_allclose(rnn.conditional(params, np.ones(2)), 0.5)
    shifted = params.as_dict()
    shifted["c"] = np.array([0.0, 100.0])
    probabilities = rnn.conditional(
        GruParams.from_dict(shifted), np.ones(2)
    )
    assert probabilities[1] == pytest.approx(1.0)
    shifted["c"] = np.array([5.0, 105.0])
    np.testing.assert_allclose(
        rnn.conditional(GruParams.from_dict(shifted), np.ones(2)),
        probabilities,
    )


def test_snake_order():
    order = rnn.snake_order(LatticeGeometry(3, 2))
    np.testing.assert_array_equal(order, [0, 1, 2, 5, 4, 3])


def test_wavefunction_rejects_bad_order():
    with pytest.raises(ValueError):
        RnnWavefunction(rnn.init_gru(2, seed=0), [0, 0, 1])


def test_log_psi_of_zero_params():
    wavefunction = RnnWavefunction(_zero_params(4), rnn.snake_order(SQUARE_2))
    assert rnn.log_psi(wavefunction, [1, 0, 1, 1]) == pytest.approx(
        -2 * np.log(2)
    )


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exact_normalization(seed):
    wavefunction = _random_wavefunction(LatticeGeometry(3, 2), 5, seed)
    configs = lattice.all_configurations(6)
    total = np.exp(2 * rnn.log_psi(wavefunction, configs)).sum()
    assert total == pytest.approx(1.0, abs=1e-10)


def test_sampling_zero_params_is_uniform():
    wavefunction = RnnWavefunction(_zero_params(2), rnn.snake_order(SQUARE_2))
    n_samples = 100000
    configs, _ = rnn.sample(wavefunction, n_samples, seed=0)
    counts = np.bincount(
        lattice.configuration_to_index(configs), minlength=16
    )
    sigma = np.sqrt((1 / 16) * (15 / 16) / n_samples)
    np.testing.assert_allclose(counts / n_samples, 1 / 16, atol=5 * sigma)


def test_sampled_log_probs_match_log_psi():
    wavefunction = _random_wavefunction(SQUARE_2, 6, seed=3)
    configs, log_probs = rnn.sample(wavefunction, 200, seed=1)
    np.testing.assert_allclose(
        log_probs, 2 * rnn.log_psi(wavefunction, configs), atol=1e-12
    )


def test_sampling_matches_exact_distribution():
    wavefunction = _random_wavefunction(SQUARE_2, 6, seed=4)
    configs, _ = rnn.sample(wavefunction, 50000, seed=2)
    counts = np.bincount(
        lattice.configuration_to_index(configs), minlength=16
    )
    expected = rnn.rnn_statevector(wavefunction).probabilities
    distance = 0.5 * np.abs(counts / counts.sum() - expected).sum()
    assert distance < 0.02


def test_sampling_is_deterministic():
    wavefunction = _random_wavefunction(SQUARE_2, 4, seed=5)
    first, _ = rnn.sample(wavefunction, 20, seed=9)
    second, _ = rnn.sample(wavefunction, 20, seed=9)
    np.testing.assert_array_equal(first, second)


def test_local_energy_without_drive_is_diagonal():
    model = RydbergModel(SQUARE_2, omega=0.0, delta=1.3)
    wavefunction = _random_wavefunction(SQUARE_2, 4, seed=6)
    configs = lattice.all_configurations(4)
    np.testing.assert_array_equal(
        rnn.local_energy(wavefunction, configs, model),
        lattice.diagonal_energy(configs, model),
    )


def test_exact_energy_matches_dense_contraction():
    model = RydbergModel(SQUARE_2, delta=0.7)
    wavefunction = _random_wavefunction(SQUARE_2, 5, seed=7)
    state = rnn.rnn_statevector(wavefunction)
    assert rnn.exact_energy(wavefunction, model) == pytest.approx(
        exact.expectation_rydberg(state, model), abs=1e-8
    )


@pytest.mark.parametrize("seed", range(5))
def test_variational_bound(seed):
    model = RydbergModel(SQUARE_2, delta=1.0)
    e0 = exact.solve_spectrum(model, method="dense").e0
    wavefunction = _random_wavefunction(SQUARE_2, 4, seed)
    assert rnn.exact_energy(wavefunction, model) >= e0 - 1e-8


def test_backpropagation_matches_finite_differences():
    wavefunction = _random_wavefunction(CHAIN_3, 4, seed=8)
    configs = lattice.all_configurations(3)
    weights = np.random.default_rng(0).normal(size=configs.shape[0])

    def objective(wf):
        return float(weights @ rnn.log_psi(wf, configs))

    _assert_gradients_close(
        rnn.log_psi_vjp(wavefunction, configs, weights),
        _finite_differences(wavefunction, objective),
        rtol=1e-4,
        atol=1e-8,
    )


def test_estimator_gradient_vanishes_for_constant_local_energy():
    wavefunction = _random_wavefunction(CHAIN_3, 4, seed=9)
    samples, _ = rnn.sample(wavefunction, 10, seed=0)
    grads = rnn.estimator_gradient(wavefunction, samples, np.full(10, 1.5))
    for value in grads.values():
        assert np.all(value == 0)


@pytest.mark.parametrize("baseline", [True, False])
def test_estimator_is_gradient_of_surrogate(baseline):
    geometry = LatticeGeometry(2, 1)
    model = RydbergModel(geometry, delta=0.5)
    wavefunction = _random_wavefunction(geometry, 3, seed=10)
    samples, _ = rnn.sample(wavefunction, 20, seed=3)
    local_energies = rnn.local_energy(wavefunction, samples, model)

    def objective(wf):
        return rnn.surrogate_loss(wf, samples, local_energies, baseline)

    _assert_gradients_close(
        rnn.estimator_gradient(
            wavefunction, samples, local_energies, baseline
        ),
        _finite_differences(wavefunction, objective),
        rtol=1e-4,
        atol=1e-8,
    )


def test_exact_gradient_matches_finite_differences():
    model = RydbergModel(CHAIN_3, delta=0.8)
    wavefunction = _random_wavefunction(CHAIN_3, 4, seed=11)
    _assert_gradients_close(
        rnn.exact_gradient(wavefunction, model),
        _finite_differences(
            wavefunction, lambda wf: rnn.exact_energy(wf, model)
        ),
        rtol=1e-4,
        atol=1e-8,
    )


def test_plain_estimator_has_same_expectation():
    model = RydbergModel(CHAIN_3, delta=0.8)
    wavefunction = _random_wavefunction(CHAIN_3, 4, seed=12)
    configs = lattice.all_configurations(3)
    probabilities = np.exp(2 * rnn.log_psi(wavefunction, configs))
    local_energies = rnn.local_energy(wavefunction, configs, model)
    plain = rnn.log_psi_vjp(
        wavefunction, configs, 2 * probabilities * local_energies
    )
    _assert_gradients_close(
        plain, rnn.exact_gradient(wavefunction, model), rtol=0, atol=1e-10
    )


def test_energy_and_gradient():
    model = RydbergModel(SQUARE_2, delta=1.0)
    wavefunction = _random_wavefunction(SQUARE_2, 4, seed=13)
    estimate, grads = rnn.energy_and_gradient(
        wavefunction, model, n_samples=50, seed=0
    )
    assert estimate.variance >= 0
    assert estimate.stderr == pytest.approx(np.sqrt(estimate.variance / 50))
    assert set(grads) == set(rnn.PARAMETER_NAMES)
    assert grads["w_z"].shape == wavefunction.params.w_z.shape


def test_run_rejects_empty_sample_set():
    model = RydbergModel(SQUARE_2)
    with pytest.raises(ValueError):
        VmcRun(model, rnn.init_rnn(SQUARE_2, 4, seed=0), n_samples=0)


def test_run_rejects_mismatched_model():
    model = RydbergModel(CHAIN_3)
    with pytest.raises(lattice.LatticeError):
        VmcRun(model, rnn.init_rnn(SQUARE_2, 4, seed=0))


@pytest.fixture(scope="module")
def trained_square_2():
    model = RydbergModel(SQUARE_2, delta=1.0)
    run = VmcRun(
        model,
        rnn.init_rnn(SQUARE_2, n_hidden=8, seed=0),
        optimizer=Adam(lr=0.01),
        n_samples=200,
        epochs=300,
        seed=0,
    )
    rnn.train(run)
    return run


def test_train_approaches_ground_energy(trained_square_2):
    run = trained_square_2
    model = run.model
    e0 = exact.solve_spectrum(model, method="dense").e0
    history = run.history
    assert len(history) == 300
    assert [r.epoch for r in history[:2]] == [1, 2]
    energy = rnn.exact_energy(run.wavefunction, model)
    assert energy >= e0 - 1e-8
    assert abs(energy - e0) < 0.03 * abs(e0)
    final_variance = np.mean([r.variance for r in history[-20:]])
    assert final_variance < history[0].variance


def _per_configuration_gradients(wavefunction, configs):
    rows = []
    for sigma in configs:
        grads = rnn.log_psi_vjp(wavefunction, sigma[np.newaxis], [1.0])
        rows.append(
            np.concatenate([grads[n].ravel() for n in rnn.PARAMETER_NAMES])
        )
    return np.array(rows)


def test_baseline_reduces_estimator_variance(trained_square_2):
    wavefunction, model = trained_square_2.wavefunction, trained_square_2.model
    configs = lattice.all_configurations(4)
    probabilities = np.exp(2 * rnn.log_psi(wavefunction, configs))
    local_energies = rnn.local_energy(wavefunction, configs, model)
    energy = probabilities @ local_energies
    dlog_psi = _per_configuration_gradients(wavefunction, configs)

    def variance(shift):
        single = 2 * dlog_psi * (local_energies - shift)[:, np.newaxis]
        mean = probabilities @ single
        return probabilities @ (single ** 2).sum(axis=1) - mean @ mean

    plain, centred = variance(0.0), variance(energy)
    assert centred < 0.5 * plain


def _chain_rule_log_psi(state, order):
    """``log psi`` from the exact conditionals of a state along ``order``."""
    configs = lattice.all_configurations(state.n_sites)
    probabilities = state.probabilities

    def marginal(samples, sites):
        matches = configs[np.newaxis, :, sites] == (
            samples[:, np.newaxis, sites]
        )
        return matches.all(axis=2) @ probabilities

    def log_amplitude(samples):
        samples = np.atleast_2d(samples)
        total = np.zeros(samples.shape[0])
        for t in range(len(order)):
            total += np.log(
                marginal(samples, order[: t + 1])
                / marginal(samples, order[:t])
            )
        return total / 2

    return log_amplitude


def test_local_energy_of_exact_conditionals_is_ground_energy():
    model = RydbergModel(SQUARE_2, delta=1.0)
    spectrum = exact.solve_spectrum(model, method="dense")
    log_amplitude = _chain_rule_log_psi(
        spectrum.ground, rnn.snake_order(SQUARE_2)
    )
    configs = lattice.all_configurations(4)
    np.testing.assert_allclose(
        np.exp(2 * log_amplitude(configs)),
        spectrum.ground.probabilities,
        atol=1e-12,
    )
    local_energies = base.local_values(log_amplitude, configs, model)
    np.testing.assert_allclose(local_energies, spectrum.e0, atol=1e-8)


def _final_energy(history):
    energies = [r.energy for r in history[-len(history) // 10 :]]
    return np.mean(energies), np.std(energies) / np.sqrt(len(energies))


def _square_4_run(n_hidden):
    model = RydbergModel(SQUARE_4, omega=1.0, delta=1.0, v0=7.0)
    run = VmcRun(
        model,
        rnn.init_rnn(SQUARE_4, n_hidden=n_hidden, seed=rnn.SEED),
        optimizer=Adam(lr=rnn.LEARNING_RATE),
        n_samples=rnn.N_SAMPLES,
        epochs=rnn.EPOCHS,
        seed=rnn.SEED,
    )
    rnn.train(run)
    return run


@pytest.mark.slow
def test_train_square_4_within_one_percent():
    run = _square_4_run(rnn.N_HIDDEN)
    e0 = exact.solve_spectrum(run.model).e0
    energy, _ = _final_energy(run.history)
    assert abs(energy - e0) < 0.01 * abs(e0)
    assert np.mean([r.variance for r in run.history[-10:]]) < (
        0.1 * run.history[0].variance
    )


@pytest.mark.slow
def test_more_hidden_units_improve_energy():
    small, small_stderr = _final_energy(_square_4_run(25).history)
    large, large_stderr = _final_energy(_square_4_run(100).history)
    assert large <= small + 2 * np.hypot(small_stderr, large_stderr)


def test_checkpoint_round_trip(tmpdir):
    wavefunction = _random_wavefunction(SQUARE_2, 3, seed=14)
    prefix = str(tmpdir.join("rnn"))
    rnn.save_rnn(prefix, wavefunction, seed=1234)
    loaded = rnn.load_rnn(prefix)
    np.testing.assert_array_equal(loaded.order, wavefunction.order)
    for name in rnn.PARAMETER_NAMES:
        np.testing.assert_array_equal(
            getattr(loaded.params, name), getattr(wavefunction.params, name)
        )


def test_load_rejects_other_network(tmpdir):
    from rydnqs.networks import rbm

    prefix = str(tmpdir.join("rbm"))
    rbm.save_rbm(prefix, rbm.init_rbm(2, seed=0))
    with pytest.raises(base.CheckpointError):
        rnn.load_rnn(prefix)
