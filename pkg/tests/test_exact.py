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
from rydnqs.data.util import DataError
from rydnqs.exact import StateVector
from rydnqs.lattice import (
    LatticeGeometry,
    PauliSumHamiltonian,
    PauliTerm,
    RydbergModel,
)


SQUARE_2 = LatticeGeometry(2, 2)
SQUARE_3 = LatticeGeometry(3, 3)
SQUARE_4 = LatticeGeometry(4, 4)


def _basis_state(bits):
    bits = np.asarray(bits)
    amplitudes = np.zeros(2 ** bits.size, dtype=complex)
    amplitudes[int(lattice.configuration_to_index(bits))] = 1.0
    return StateVector(amplitudes, bits.size)


def _checkerboard(geometry, parity=0):
    return (geometry.coords.sum(axis=1) % 2 == parity).astype(np.int8)


def _random_state(n_sites, seed):
    rng = np.random.default_rng(seed)
    amplitudes = rng.normal(size=2 ** n_sites) + 1j * rng.normal(
        size=2 ** n_sites
    )
    return StateVector.from_amplitudes(amplitudes)


def test_single_site_dense_hamiltonian():
    model = RydbergModel(LatticeGeometry(1, 1), omega=1.0, delta=2.0)
    np.testing.assert_array_equal(
        exact.build_dense_hamiltonian(model), [[0.0, -0.5], [-0.5, -2.0]]
    )
    spectrum = exact.solve_spectrum(model)
    assert spectrum.e0 == pytest.approx(-1.0 - np.sqrt(5.0) / 2.0)
    assert spectrum.e1 == pytest.approx(-1.0 + np.sqrt(5.0) / 2.0)
    assert spectrum.gap == pytest.approx(np.sqrt(5.0))


def test_dense_hamiltonian_symmetric_and_matches_sparse():
    model = RydbergModel(SQUARE_3, omega=1.0, delta=1.5, v0=3.0)
    dense = exact.build_dense_hamiltonian(model)
    np.testing.assert_array_equal(dense, dense.T)
    np.testing.assert_array_equal(
        dense, exact.build_sparse_hamiltonian(model).toarray()
    )


def test_dense_rows_match_lattice_elements():
    model = RydbergModel(SQUARE_2, omega=0.9, delta=0.3, v0=3.0)
    dense = exact.build_dense_hamiltonian(model)
    for sigma in lattice.all_configurations(4):
        i = int(lattice.configuration_to_index(sigma))
        row = np.zeros(16)
        row[i] = lattice.diagonal_energy(sigma, model)
        for flipped, element in lattice.connected_configs(sigma, model):
            row[int(lattice.configuration_to_index(flipped))] += element
        np.testing.assert_array_equal(dense[i], row)


def test_pauli_matrix_matches_rows():
    ham = PauliSumHamiltonian(
        [
            PauliTerm(0.5, "XYZ"),
            PauliTerm(-0.3, "ZZI"),
            PauliTerm(0.2, "IYY"),
            PauliTerm(1.1, "III"),
        ]
    )
    matrix = exact.build_pauli_matrix(ham, sparse_output=False)
    np.testing.assert_allclose(matrix, matrix.conj().T)
    for sigma in lattice.all_configurations(3):
        column = np.zeros(8, dtype=complex)
        for target, element in lattice.pauli_matrix_row(sigma, ham):
            column[int(lattice.configuration_to_index(target))] = element
        j = int(lattice.configuration_to_index(sigma))
        np.testing.assert_allclose(matrix[:, j], column)


def test_rydberg_pauli_matrix_equals_hamiltonian():
    model = RydbergModel(SQUARE_2, omega=1.0, delta=0.7, v0=3.0)
    np.testing.assert_allclose(
        exact.build_pauli_matrix(
            lattice.rydberg_as_pauli_sum(model), sparse_output=False
        ),
        exact.build_dense_hamiltonian(model),
        atol=1e-12,
    )


def test_size_limits():
    model = RydbergModel(LatticeGeometry(13, 1))
    with pytest.raises(exact.SizeLimitError):
        exact.build_dense_hamiltonian(model)
    with pytest.raises(exact.SizeLimitError):
        exact.build_sparse_hamiltonian(RydbergModel(LatticeGeometry(21, 1)))


def test_dense_and_sparse_solvers_agree():
    model = RydbergModel(SQUARE_3, omega=1.0, delta=1.0, v0=3.0)
    dense = exact.solve_spectrum(model, method="dense")
    sparse = exact.solve_spectrum(model, method="sparse")
    assert sparse.e0 == pytest.approx(dense.e0, abs=1e-8)
    assert sparse.e1 == pytest.approx(dense.e1, abs=1e-8)
    assert exact.fidelity(dense.ground, sparse.ground) == pytest.approx(1.0)


def test_ground_state_is_gauge_fixed_positive():
    model = RydbergModel(SQUARE_2, omega=1.0, delta=1.0, v0=3.0)
    ground = exact.solve_spectrum(model).ground.amplitudes
    assert np.all(ground.real > -1e-12)
    np.testing.assert_allclose(ground.imag, 0.0)


def test_disordered_ground_state_near_empty():
    model = RydbergModel(SQUARE_3, omega=1.0, delta=-5.0, v0=3.0)
    ground = exact.solve_spectrum(model).ground
    assert ground.probabilities[0] > 0.9


def test_variational_bound():
    model = RydbergModel(SQUARE_2, omega=1.0, delta=2.0, v0=3.0)
    e0 = exact.solve_spectrum(model).e0
    dense = exact.build_dense_hamiltonian(model)
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.normal(size=16)
        v /= np.linalg.norm(v)
        assert v @ dense @ v >= e0 - 1e-12


def test_ground_energy_matches_pauli_expectation():
    model = RydbergModel(SQUARE_3, omega=1.0, delta=2.0, v0=3.0)
    spectrum = exact.solve_spectrum(model)
    ham = lattice.rydberg_as_pauli_sum(model)
    assert exact.expectation_pauli(spectrum.ground, ham) == pytest.approx(
        spectrum.e0, abs=1e-8
    )
    assert exact.expectation_rydberg(
        spectrum.ground, model
    ) == pytest.approx(spectrum.e0, abs=1e-8)


def test_solve_pauli_spectrum():
    ham = PauliSumHamiltonian([PauliTerm(-1.0, "ZI"), PauliTerm(-0.5, "IZ")])
    spectrum = exact.solve_pauli_spectrum(ham)
    assert spectrum.e0 == pytest.approx(-1.5)
    assert spectrum.e1 == pytest.approx(-0.5)
    assert spectrum.ground.probabilities[0] == pytest.approx(1.0)


def test_staggered_magnetization_basis_states():
    empty = _basis_state(np.zeros(4))
    assert exact.staggered_magnetization(empty, SQUARE_2) == 0.0
    board = _basis_state(_checkerboard(SQUARE_4))
    assert exact.staggered_magnetization(board, SQUARE_4) == pytest.approx(
        0.5
    )


def test_staggered_magnetization_checkerboard_superposition():
    amplitudes = (
        _basis_state(_checkerboard(SQUARE_2, 0)).amplitudes
        + _basis_state(_checkerboard(SQUARE_2, 1)).amplitudes
    )
    state = StateVector.from_amplitudes(amplitudes)
    assert exact.staggered_magnetization(state, SQUARE_2) == pytest.approx(
        0.5
    )


def test_momentum_occupation_checkerboard():
    board = _basis_state(_checkerboard(SQUARE_4))
    value = exact.momentum_occupation(board, SQUARE_4, (np.pi, np.pi))
    assert abs(value) == pytest.approx(2.0)


def test_momentum_occupation_empty_state():
    empty = _basis_state(np.zeros(4))
    for k in [(0.0, 0.0), (np.pi, 0.0), (1.0, 2.0)]:
        assert exact.momentum_occupation(empty, SQUARE_2, k) == 0.0


def test_momentum_occupation_at_zero_is_total_density():
    state = _random_state(6, seed=11)
    geometry = LatticeGeometry(3, 2)
    mean_occupation = exact.site_occupations(state).mean()
    assert exact.momentum_occupation(
        state, geometry, (0.0, 0.0)
    ) == pytest.approx(np.sqrt(6) * mean_occupation)
    _, _, values = exact.momentum_scan(state, geometry)
    assert values[0, 0] == pytest.approx(np.sqrt(6) * mean_occupation)


def test_momentum_grid():
    kx, ky = exact.momentum_grid(LatticeGeometry(3, 2))
    np.testing.assert_allclose(kx, [0, np.pi / 3, 2 * np.pi / 3, np.pi])
    np.testing.assert_allclose(ky, [0, np.pi / 2, np.pi])


def test_ordered_ground_state_momentum_peak():
    model = RydbergModel(SQUARE_3, omega=1.0, delta=4.0, v0=3.0)
    ground = exact.solve_spectrum(model).ground
    assert exact.momentum_peak(ground, SQUARE_3) == pytest.approx(
        (np.pi, np.pi)
    )


def test_phases_on_4x4():
    disordered = exact.solve_spectrum(
        RydbergModel(SQUARE_4, delta=-5.0, v0=3.0), n_states=1
    ).ground
    ordered = exact.solve_spectrum(
        RydbergModel(SQUARE_4, delta=4.0, v0=3.0), n_states=1
    ).ground
    assert exact.staggered_magnetization(disordered, SQUARE_4) <= 0.05
    assert exact.staggered_magnetization(ordered, SQUARE_4) >= 0.40
    assert exact.momentum_peak(ordered, SQUARE_4) == pytest.approx(
        (np.pi, np.pi)
    )


def test_rotate_state_identity_for_reference_basis():
    state = _random_state(3, seed=1)
    rotated = exact.rotate_state(state, "ZZZ")
    np.testing.assert_array_equal(rotated.amplitudes, state.amplitudes)


def test_rotate_state_hadamard():
    rotated = exact.rotate_state(_basis_state([0]), "X")
    np.testing.assert_allclose(rotated.amplitudes, [2 ** -0.5, 2 ** -0.5])


def test_rotate_state_y_eigenstate_maps_to_zero():
    state = StateVector.from_amplitudes([1.0, 1j])
    rotated = exact.rotate_state(state, "Y")
    np.testing.assert_allclose(rotated.amplitudes, [1.0, 0.0], atol=1e-12)


def test_rotate_state_acts_on_the_right_site():
    # Site 0 is the lowest bit of the basis index
    rotated = exact.rotate_state(_basis_state([0, 0]), "XZ")
    np.testing.assert_allclose(
        rotated.amplitudes, [2 ** -0.5, 2 ** -0.5, 0, 0], atol=1e-12
    )


@pytest.mark.parametrize("basis", ["XYZ", "YYX", "ZXY"])
def test_rotate_state_inverse_round_trip(basis):
    state = _random_state(3, seed=5)
    back = exact.rotate_state(
        exact.rotate_state(state, basis), basis, inverse=True
    )
    np.testing.assert_allclose(back.amplitudes, state.amplitudes, atol=1e-12)


def test_rotate_state_invalid_basis():
    with pytest.raises(DataError):
        exact.rotate_state(_basis_state([0, 1]), "XA")


def test_fidelity():
    state = _random_state(3, seed=8)
    assert exact.fidelity(state, state) == pytest.approx(1.0)
    phased = StateVector(np.exp(0.7j) * state.amplitudes, 3)
    assert exact.fidelity(state, phased) == pytest.approx(1.0)
    assert exact.fidelity(_basis_state([0, 1]), _basis_state([1, 1])) == 0.0


def test_sample_measurements_reference_state():
    dataset = exact.sample_measurements(_basis_state([0]), ["Z"], 50, seed=1)
    assert len(dataset) == 50
    assert dataset.outcomes.sum() == 0
    assert set(dataset.bases) == {"Z"}


def test_sample_measurements_born_frequencies():
    plus = StateVector.from_amplitudes([1.0, 1.0])
    dataset = exact.sample_measurements(plus, ["Z"], 100000, seed=2)
    frequency = np.mean(dataset.outcomes[:, 0] == 0)
    assert abs(frequency - 0.5) < 0.006
    rotated = exact.sample_measurements(
        _basis_state([0]), ["X"], 100000, seed=3
    )
    assert abs(np.mean(rotated.outcomes) - 0.5) < 0.006


def test_sample_measurements_deterministic():
    state = _random_state(3, seed=4)
    first = exact.sample_measurements(state, ["ZZZ", "XYZ"], 20, seed=9)
    second = exact.sample_measurements(state, ["ZZZ", "XYZ"], 20, seed=9)
    assert first == second
    assert first.bases == ("ZZZ",) * 20 + ("XYZ",) * 20
    assert first.meta.seed == 9


def test_sampling_total_variation():
    model = RydbergModel(SQUARE_2, omega=1.0, delta=2.0, v0=3.0)
    ground = exact.solve_spectrum(model).ground
    samples = exact.sample_configurations(ground, 100000, seed=7)
    counts = np.bincount(lattice.configuration_to_index(samples), minlength=16)
    distance = 0.5 * np.abs(counts / 100000 - ground.probabilities).sum()
    assert distance <= 0.01


def test_sample_mixed_measurements():
    state = _random_state(2, seed=6)
    bases = ["XX", "YZ", "ZZ"]
    dataset = exact.sample_mixed_measurements(state, bases, 3000, seed=1)
    assert len(dataset) == 3000
    counts = {basis: dataset.bases.count(basis) for basis in bases}
    assert all(800 < count < 1200 for count in counts.values())


def test_hamiltonian_bases():
    ham = PauliSumHamiltonian(
        [
            PauliTerm(1.0, "XIZ"),
            PauliTerm(1.0, "IIZ"),
            PauliTerm(0.5, "XZZ"),
            PauliTerm(0.5, "YYI"),
        ]
    )
    assert exact.hamiltonian_bases(ham) == ["XZZ", "ZZZ", "YYZ"]


def test_save_and_load_state(tmpdir):
    path = tmpdir.join("ground.bin")
    state = _random_state(4, seed=12)
    exact.save_state(path, state)
    assert path.size() == 16 * 16
    loaded = exact.load_state(path)
    assert loaded.n_sites == 4
    np.testing.assert_array_equal(loaded.amplitudes, state.amplitudes)


def test_load_state_missing_sidecar(tmpdir):
    path = tmpdir.join("state.bin")
    path.write_binary(b"\x00" * 32)
    with pytest.raises(lattice.LatticeError):
        exact.load_state(path)


def test_gap_closing_delta_first_closed_gap():
    deltas = [0.5, 1.0, 1.5, 2.0, 2.5, 3.5, 4.5]
    gaps = [0.6, 0.237, 0.051, 0.0046, 0.0005, 1e-9, 1e-12]
    assert exact.gap_closing_delta(deltas, gaps, scale=1.0) == 2.0


def test_gap_closing_delta_scales_tolerance():
    deltas = [1.0, 1.5, 2.0]
    gaps = [0.237, 0.051, 0.0046]
    assert exact.gap_closing_delta(deltas, gaps, scale=10.0) == 1.5


def test_gap_closing_delta_unsorted_grid():
    deltas = [4.5, 2.0, 1.0, 2.5]
    gaps = [1e-12, 0.0046, 0.237, 0.0005]
    assert exact.gap_closing_delta(deltas, gaps, scale=1.0) == 2.0


def test_gap_closing_delta_falls_back_to_minimum():
    deltas = [-1.0, 0.0, 1.0]
    gaps = [1.0, 0.3, 0.5]
    assert exact.gap_closing_delta(deltas, gaps, scale=1.0) == 0.0


@pytest.mark.parametrize(
    "deltas, gaps", [([], []), ([0.0, 1.0], [0.5]), ([[0.0]], [0.5])]
)
def test_gap_closing_delta_invalid(deltas, gaps):
    with pytest.raises(ValueError):
        exact.gap_closing_delta(deltas, gaps, scale=1.0)
