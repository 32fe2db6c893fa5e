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
Exact diagonalisation, observables and Born-rule sampling.

Basis index ``i`` of a state vector holds the amplitude of the configuration
whose bit ``j`` is the occupation of site ``j``.
"""


import logging
from configparser import ConfigParser, Error as ConfigParserError

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg
from attr import attrs, attrib
from marshmallow import fields, validate, ValidationError

from rydnqs import lattice
from rydnqs.data import DatasetMeta, MeasurementDataset
from rydnqs.data.util import validate_basis
from rydnqs.util import BaseSchema, RydnqsError, rng_for


logger = logging.getLogger(__name__)

DENSE_SITE_LIMIT = 12
SPARSE_SITE_LIMIT = 20
RESIDUAL_TOLERANCE = 1e-8
GAP_CLOSED_TOLERANCE = 1e-2

_SQRT_HALF = 1.0 / np.sqrt(2.0)

# Maps the eigenstates of each Pauli operator to the computational states,
# with the +1 eigenstate sent to outcome 0.
BASIS_ROTATIONS = {
    "Z": np.eye(2, dtype=complex),
    "X": _SQRT_HALF * np.array([[1, 1], [1, -1]], dtype=complex),
    "Y": _SQRT_HALF * np.array([[1, -1j], [1, 1j]], dtype=complex),
}


class SizeLimitError(RydnqsError):
    """A system is too large for the requested exact method."""

    category = "size-limit"


class ConvergenceError(RydnqsError):
    """An eigensolver failed to converge."""

    category = "convergence"


@attrs(eq=False)
class StateVector(object):
    """Complex amplitudes over all ``2 ** n_sites`` configurations."""

    amplitudes = attrib(converter=lambda a: np.asarray(a, dtype=complex))
    n_sites = attrib(converter=int)

    def __attrs_post_init__(self):
        if self.amplitudes.shape != (2 ** self.n_sites,):
            raise lattice.LatticeError(
                "{} amplitudes do not describe {} sites".format(
                    self.amplitudes.size, self.n_sites
                )
            )

    @classmethod
    def from_amplitudes(cls, amplitudes):
        """Build a normalised state, inferring the number of sites."""
        amplitudes = np.asarray(amplitudes, dtype=complex)
        n_sites = int(round(np.log2(amplitudes.size)))
        return cls(amplitudes, n_sites).normalized()

    @property
    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    @property
    def probabilities(self):
        probabilities = np.abs(self.amplitudes) ** 2
        return probabilities / probabilities.sum()

    def normalized(self):
        return StateVector(self.amplitudes / self.norm, self.n_sites)


@attrs
class SpectrumResult(object):
    """The lowest eigenpairs of a Hamiltonian.

    ``e1`` and ``gap`` are None when a single state was requested.
    """

    energies = attrib()
    states = attrib()

    @property
    def e0(self):
        return float(self.energies[0])

    @property
    def e1(self):
        return float(self.energies[1]) if len(self.energies) > 1 else None

    @property
    def ground(self):
        return self.states[0]

    @property
    def gap(self):
        return abs(self.e1 - self.e0) if self.e1 is not None else None


def _check_size(n_sites, limit, method):
    if n_sites > limit:
        raise SizeLimitError(
            "{} sites exceeds the {} limit of {}".format(
                n_sites, method, limit
            )
        )


def _rabi_entries(model):
    dim = 2 ** model.n_sites
    indices = np.arange(dim, dtype=np.int64)
    rows = np.concatenate(
        [indices ^ (1 << j) for j in range(model.n_sites)]
    )
    cols = np.tile(indices, model.n_sites)
    values = np.full(rows.size, -0.5 * model.omega)
    return rows, cols, values


def build_sparse_hamiltonian(model, max_sites=SPARSE_SITE_LIMIT):
    """The Rydberg Hamiltonian as a sparse CSR matrix.

    Parameters
    ----------
    model : rydnqs.lattice.RydbergModel
    max_sites : int, optional
        The largest system accepted.

    Returns
    -------
    scipy.sparse.csr_matrix
        A real symmetric matrix of shape ``(2 ** N, 2 ** N)``.
    """
    _check_size(model.n_sites, max_sites, "sparse")
    dim = 2 ** model.n_sites
    diagonal = lattice.diagonal_energy_of_indices(np.arange(dim), model)
    rows, cols, values = _rabi_entries(model)
    off_diagonal = sparse.coo_matrix((values, (rows, cols)), shape=(dim, dim))
    return (sparse.diags(diagonal) + off_diagonal).tocsr()


def build_dense_hamiltonian(model, max_sites=DENSE_SITE_LIMIT):
    """The Rydberg Hamiltonian as a dense real symmetric array."""
    _check_size(model.n_sites, max_sites, "dense")
    dim = 2 ** model.n_sites
    matrix = np.diag(
        lattice.diagonal_energy_of_indices(np.arange(dim), model)
    )
    rows, cols, values = _rabi_entries(model)
    matrix[rows, cols] = values
    return matrix


def build_pauli_matrix(ham, sparse_output=True, max_sites=SPARSE_SITE_LIMIT):
    """The matrix of a Pauli-sum operator in the occupation basis.

    Parameters
    ----------
    ham : rydnqs.lattice.PauliSumHamiltonian
    sparse_output : bool, optional
        Return a CSR matrix rather than a dense array.
    max_sites : int, optional

    Returns
    -------
    scipy.sparse.csr_matrix or numpy.ndarray
        A complex Hermitian matrix.
    """
    n_sites = ham.n_sites
    _check_size(n_sites, max_sites, "sparse" if sparse_output else "dense")
    dim = 2 ** n_sites
    indices = np.arange(dim, dtype=np.int64)
    configurations = lattice.index_to_configuration(indices, n_sites)

    rows, cols, values = [], [], []
    for term in ham.terms:
        target, amplitude = lattice.pauli_column(term, configurations)
        rows.append(lattice.configuration_to_index(target))
        cols.append(indices)
        values.append(np.broadcast_to(amplitude, (dim,)))

    if rows:
        matrix = sparse.coo_matrix(
            (
                np.concatenate(values),
                (np.concatenate(rows), np.concatenate(cols)),
            ),
            shape=(dim, dim),
            dtype=complex,
        ).tocsr()
    else:
        matrix = sparse.csr_matrix((dim, dim), dtype=complex)
    matrix.sum_duplicates()
    return matrix if sparse_output else matrix.toarray()


def _fix_gauge(vector):
    """Rotate the global phase so the largest amplitude is real positive."""
    pivot = vector[np.argmax(np.abs(vector))]
    return vector * (np.abs(pivot) / pivot)


def _solve(matrix, n_states, n_sites, dense):
    dim = matrix.shape[0]
    n_states = min(n_states, dim)
    if dense or n_states >= dim - 1:
        if sparse.issparse(matrix):
            matrix = matrix.toarray()
        energies, vectors = np.linalg.eigh(matrix)
    else:
        try:
            energies, vectors = sparse_linalg.eigsh(
                matrix, k=n_states, which="SA", tol=0
            )
        except sparse_linalg.ArpackNoConvergence as err:
            raise ConvergenceError(
                "Lanczos solver did not converge: {}".format(err)
            )
    order = np.argsort(energies)[:n_states]
    energies = energies[order]
    vectors = vectors[:, order]

    states = []
    for energy, vector in zip(energies, vectors.T):
        residual = np.linalg.norm(matrix @ vector - energy * vector)
        logger.debug("eigenvalue %.12g residual %.3g", energy, residual)
        if residual > RESIDUAL_TOLERANCE * max(1.0, abs(energy)):
            raise ConvergenceError(
                "residual {:.3g} of eigenvalue {:.12g} exceeds {}".format(
                    residual, energy, RESIDUAL_TOLERANCE
                )
            )
        states.append(StateVector(_fix_gauge(vector), n_sites).normalized())
    return SpectrumResult(np.array(energies, dtype=float), states)


def solve_spectrum(model, n_states=2, method="auto"):
    """The lowest eigenpairs of a Rydberg Hamiltonian.

    Parameters
    ----------
    model : rydnqs.lattice.RydbergModel
    n_states : int, optional
        The number of eigenpairs to compute. At least 2 for a gap.
    method : str, optional
        ``"dense"``, ``"sparse"`` (Lanczos) or ``"auto"``, which picks the
        dense solver up to the dense size limit.

    Returns
    -------
    SpectrumResult
    """
    if n_states < 1:
        raise ValueError("n_states must be at least 1")
    if method not in ("auto", "dense", "sparse"):
        raise ValueError("unknown method {!r}".format(method))
    dense = method == "dense" or (
        method == "auto" and model.n_sites <= DENSE_SITE_LIMIT
    )
    if dense:
        matrix = build_dense_hamiltonian(model)
    else:
        matrix = build_sparse_hamiltonian(model)
    return _solve(matrix, n_states, model.n_sites, dense)


def solve_pauli_spectrum(ham, n_states=2, method="auto"):
    """The lowest eigenpairs of a Pauli-sum Hamiltonian."""
    if n_states < 1:
        raise ValueError("n_states must be at least 1")
    dense = method == "dense" or (
        method == "auto" and ham.n_sites <= DENSE_SITE_LIMIT
    )
    matrix = build_pauli_matrix(
        ham,
        sparse_output=not dense,
        max_sites=DENSE_SITE_LIMIT if dense else SPARSE_SITE_LIMIT,
    )
    return _solve(matrix, n_states, ham.n_sites, dense)


def _site_bits(n_sites):
    indices = np.arange(2 ** n_sites, dtype=np.int64)
    return [(indices >> j) & 1 for j in range(n_sites)]


def _check_geometry(state, geometry):
    if state.n_sites != geometry.n_sites:
        raise lattice.LatticeError(
            "state of {} sites does not match a {}x{} lattice".format(
                state.n_sites, geometry.lx, geometry.ly
            )
        )


def site_occupations(state):
    """The expected occupation ``<n_j>`` of every site."""
    probabilities = state.probabilities
    bits = _site_bits(state.n_sites)
    return np.array([probabilities @ b for b in bits])


def staggered_magnetization(state, geometry):
    """The staggered magnetisation of a state on a square lattice.

    Each configuration contributes ``|N^-1 sum_r (-1)^(x+y) S^z(r)|`` with
    ``S^z = 1/2 - n``, weighted by its Born probability. Taking the magnitude
    per configuration gives 0.5 for any mixture of the two checkerboards.
    """
    _check_geometry(state, geometry)
    signs = (-1.0) ** geometry.coords.sum(axis=1)
    per_configuration = np.zeros(2 ** state.n_sites)
    for sign, bits in zip(signs, _site_bits(state.n_sites)):
        per_configuration += sign * (0.5 - bits)
    per_configuration = np.abs(per_configuration) / state.n_sites
    return float(state.probabilities @ per_configuration)


def momentum_occupation(state, geometry, k):
    """``N^-1/2 sum_r exp(i k.r) <n(r)>`` at wavevector ``k = (kx, ky)``."""
    _check_geometry(state, geometry)
    phases = np.exp(1j * (geometry.coords @ np.asarray(k, dtype=float)))
    return complex(phases @ site_occupations(state) / np.sqrt(state.n_sites))


def momentum_grid(geometry):
    """Wavevector components ``linspace(0, pi, L + 1)`` along each axis."""
    return (
        np.linspace(0.0, np.pi, geometry.lx + 1),
        np.linspace(0.0, np.pi, geometry.ly + 1),
    )


def momentum_scan(state, geometry):
    """Snapshot-averaged ``|n(k)|`` over the momentum grid.

    Returns
    -------
    Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]
        The grids of ``kx`` and ``ky`` and the array of values with shape
        ``(len(kx), len(ky))``.
    """
    _check_geometry(state, geometry)
    kx, ky = momentum_grid(geometry)
    probabilities = state.probabilities
    bits = np.array(_site_bits(state.n_sites), dtype=float)
    coords = geometry.coords
    values = np.zeros((kx.size, ky.size))
    for a, qx in enumerate(kx):
        for b, qy in enumerate(ky):
            phases = np.exp(1j * (coords[:, 0] * qx + coords[:, 1] * qy))
            per_configuration = np.abs(phases @ bits)
            values[a, b] = probabilities @ per_configuration
    return kx, ky, values / np.sqrt(state.n_sites)


def momentum_peak(state, geometry):
    """The grid wavevector maximising snapshot-averaged ``|n(k)|``.

    ``k = 0`` is excluded: it measures the total density, not order.
    """
    kx, ky, values = momentum_scan(state, geometry)
    values = values.copy()
    values[0, 0] = -np.inf
    a, b = np.unravel_index(np.argmax(values), values.shape)
    return float(kx[a]), float(ky[b])


def expectation_pauli(state, ham):
    """``<psi|H|psi>`` for a Pauli-sum operator, as a real number."""
    if ham.n_sites != state.n_sites:
        raise lattice.LatticeError("operator and state sizes differ")
    psi = state.normalized().amplitudes
    matrix = build_pauli_matrix(ham)
    return float(np.real(np.vdot(psi, matrix @ psi)))


def expectation_rydberg(state, model):
    """``<psi|H|psi>`` for the Rydberg Hamiltonian."""
    psi = state.normalized().amplitudes
    matrix = build_sparse_hamiltonian(model)
    return float(np.real(np.vdot(psi, matrix @ psi)))


def rotate_state(state, basis, inverse=False):
    """Apply the single-site rotations of a measurement basis to a state.

    Parameters
    ----------
    state : StateVector
    basis : str
        One of ``X``, ``Y`` or ``Z`` per site.
    inverse : bool, optional
        Apply the adjoint rotations instead.

    Returns
    -------
    StateVector
    """
    basis = validate_basis(basis, state.n_sites)
    n_sites = state.n_sites
    tensor = state.amplitudes.reshape((2,) * n_sites)
    for site, letter in enumerate(basis):
        if letter == "Z":
            continue
        rotation = BASIS_ROTATIONS[letter]
        if inverse:
            rotation = rotation.conj().T
        # Axis 0 of the reshaped vector holds the highest bit
        axis = n_sites - 1 - site
        tensor = np.moveaxis(
            np.tensordot(rotation, tensor, axes=([1], [axis])), 0, axis
        )
    return StateVector(tensor.reshape(-1), n_sites)


def _draw(probabilities, n_samples, rng):
    cdf = np.cumsum(probabilities)
    cdf /= cdf[-1]
    draws = np.searchsorted(cdf, rng.random(n_samples), side="right")
    return np.minimum(draws, probabilities.size - 1)


def sample_configurations(state, n_samples, seed=None):
    """Independent occupation-basis samples from the Born distribution."""
    indices = _draw(state.probabilities, n_samples, rng_for(seed))
    return lattice.index_to_configuration(indices, state.n_sites)


def _dataset_meta(state, geometry, delta, seed):
    if geometry is None:
        geometry = lattice.LatticeGeometry(state.n_sites, 1)
    _check_geometry(state, geometry)
    seed = seed if isinstance(seed, (int, np.integer)) else None
    return DatasetMeta.for_geometry(geometry, delta=delta, seed=seed)


def sample_measurements(
    state, bases, n_per_basis, seed=None, geometry=None, delta=None
):
    """Draw projective measurements in each of a list of bases.

    For every basis the state is rotated into that basis and ``n_per_basis``
    outcomes are drawn by inverse transform sampling of the exact outcome
    distribution.

    Parameters
    ----------
    state : StateVector
    bases : Sequence[str]
    n_per_basis : int
    seed : int or numpy.random.Generator, optional
    geometry : rydnqs.lattice.LatticeGeometry, optional
        Recorded in the dataset metadata. Defaults to a chain.
    delta : float, optional
        Recorded in the dataset metadata.

    Returns
    -------
    rydnqs.data.MeasurementDataset
    """
    bases = [validate_basis(basis, state.n_sites) for basis in bases]
    meta = _dataset_meta(state, geometry, delta, seed)
    rng = rng_for(seed)
    all_bases, outcomes = [], []
    for basis in bases:
        rotated = rotate_state(state, basis)
        indices = _draw(rotated.probabilities, n_per_basis, rng)
        outcomes.append(lattice.index_to_configuration(indices, state.n_sites))
        all_bases.extend([basis] * n_per_basis)
    outcomes = (
        np.concatenate(outcomes)
        if outcomes
        else np.zeros((0, state.n_sites), dtype=np.int8)
    )
    return MeasurementDataset(all_bases, outcomes, meta)


def sample_mixed_measurements(
    state, bases, n_shots, seed=None, geometry=None, delta=None
):
    """Draw shots whose basis is chosen uniformly at random per shot."""
    bases = [validate_basis(basis, state.n_sites) for basis in bases]
    meta = _dataset_meta(state, geometry, delta, seed)
    rng = rng_for(seed)
    choices = rng.integers(len(bases), size=n_shots)
    outcomes = np.zeros((n_shots, state.n_sites), dtype=np.int8)
    for b, basis in enumerate(bases):
        rows = np.flatnonzero(choices == b)
        if rows.size == 0:
            continue
        rotated = rotate_state(state, basis)
        indices = _draw(rotated.probabilities, rows.size, rng)
        outcomes[rows] = lattice.index_to_configuration(
            indices, state.n_sites
        )
    return MeasurementDataset([bases[c] for c in choices], outcomes, meta)


def hamiltonian_bases(ham):
    """Measurement bases covering the Pauli strings of an operator.

    Identity letters are measured in the occupation basis. The order of first
    appearance is kept.
    """
    bases = []
    for term in ham.terms:
        basis = term.string.replace("I", "Z")
        if basis not in bases:
            bases.append(basis)
    return bases


def gap_closing_delta(deltas, gaps, scale, tolerance=GAP_CLOSED_TOLERANCE):
    """The first detuning of a sweep at which the gap has closed.

    In the ordered phase of an array with two degenerate checkerboards the
    gap vanishes, so the smallest gap on a grid lies at an arbitrary point
    inside that phase. The gap counts as closed below ``tolerance * scale``.

    Parameters
    ----------
    deltas : Sequence[float]
    gaps : Sequence[float]
        The gap at each detuning.
    scale : float
        The energy scale of the model, usually the Rabi frequency.
    tolerance : float, optional

    Returns
    -------
    float
        The smallest detuning with a closed gap, or the detuning of the
        smallest gap when it never closes on the grid.
    """
    deltas = np.asarray(deltas, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if deltas.size == 0 or deltas.shape != gaps.shape:
        raise ValueError("one gap is needed per detuning")
    order = np.argsort(deltas, kind="stable")
    closed = np.flatnonzero(gaps[order] < tolerance * scale)
    if closed.size:
        return float(deltas[order][closed[0]])
    return float(deltas[int(np.argmin(gaps))])


def fidelity(a, b):
    """``|<a|b>|^2`` of two states, normalising both."""
    if a.n_sites != b.n_sites:
        raise lattice.LatticeError("states have differing sizes")
    overlap = np.vdot(a.amplitudes, b.amplitudes)
    value = np.abs(overlap) ** 2 / (a.norm ** 2 * b.norm ** 2)
    return float(min(1.0, value))


class _StateSidecarSchema(BaseSchema):
    n_sites = fields.Integer(
        required=True, validate=validate.Range(min=0, max=SPARSE_SITE_LIMIT)
    )
    ordering = fields.String(
        required=True, validate=validate.OneOf([lattice.ORDERING])
    )
    dtype = fields.String(required=True, validate=validate.OneOf(["<c16"]))


def sidecar_path(path):
    return str(path) + ".txt"


def save_state(path, state):
    """Write a state as little-endian complex doubles with a text sidecar."""
    state.amplitudes.astype("<c16").tofile(str(path))
    with open(sidecar_path(path), "w") as fp:
        fp.write("n_sites = {}\n".format(state.n_sites))
        fp.write("ordering = {}\n".format(lattice.ORDERING))
        fp.write("dtype = <c16\n")


def load_state(path):
    parser = ConfigParser()
    try:
        with open(sidecar_path(path)) as fp:
            parser.read_string("[state]\n" + fp.read())
        sidecar = _StateSidecarSchema().load(dict(parser["state"]))
    except (OSError, ConfigParserError, ValidationError) as err:
        raise lattice.LatticeError(
            "cannot read state sidecar for {}: {}".format(path, err)
        )
    amplitudes = np.fromfile(str(path), dtype="<c16")
    return StateVector(amplitudes.astype(complex), sidecar["n_sites"])
