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
Square-array geometry and matrix elements of the Rydberg Hamiltonian.

Sites are indexed row-major, ``index = y * lx + x``, and a configuration is a
length-N array of occupations where 1 marks an atom in the Rydberg state. As a
basis integer, bit ``j`` holds the occupation of site ``j``.

Energies are in MHz. The Rabi term is ``-omega * sum_j S^x_j`` with
``S^x = sigma^x / 2`` and the interaction sum runs over unordered pairs once,
which absorbs the factor of one half in front of the double sum.
"""


import math
from collections import OrderedDict
from configparser import ConfigParser, Error as ConfigParserError

import numpy as np
from attr import attrs, attrib, validators
from marshmallow import fields, post_load, ValidationError

from rydnqs.util import BaseSchema, RydnqsError


# Squared distances of the first, second and third neighbour shells
SHELL_SQUARED_DISTANCES = (1, 2, 4)

PAULI_LETTERS = "IXYZ"

ORDERING = "row-major"


class LatticeError(RydnqsError):
    """A lattice, configuration or operator was malformed."""

    category = "lattice"


def _positive(instance, attribute, value):
    if not value > 0:
        raise LatticeError("{} must be positive".format(attribute.name))


def _non_negative(instance, attribute, value):
    if not value >= 0:
        raise LatticeError("{} must be non-negative".format(attribute.name))


def _valid_shell(instance, attribute, value):
    if value not in range(1, len(SHELL_SQUARED_DISTANCES) + 1):
        raise LatticeError(
            "cutoff must be between 1 and {}".format(
                len(SHELL_SQUARED_DISTANCES)
            )
        )


@attrs(frozen=True)
class LatticeGeometry(object):
    """An open-boundary square array of atoms.

    Parameters
    ----------
    lx : int
        The number of sites along x.
    ly : int
        The number of sites along y.
    """

    lx = attrib(converter=int, validator=_positive)
    ly = attrib(converter=int, validator=_positive)

    @property
    def n_sites(self):
        return self.lx * self.ly

    @property
    def coords(self):
        """Integer ``(x, y)`` positions of the sites, shape ``(N, 2)``."""
        index = np.arange(self.n_sites)
        return np.stack([index % self.lx, index // self.lx], axis=1)

    def site_index(self, x, y):
        return y * self.lx + x


@attrs(frozen=True)
class RydbergModel(object):
    """Parameters of the Rydberg Hamiltonian on a square array.

    Parameters
    ----------
    geometry : LatticeGeometry
        The array of atoms.
    omega : float
        The Rabi frequency in MHz.
    delta : float
        The detuning in MHz.
    v0 : float
        The Van der Waals interaction strength in MHz.
    cutoff : int
        The outermost neighbour shell with a nonzero interaction, 1 to 3.
    """

    geometry = attrib(validator=validators.instance_of(LatticeGeometry))
    omega = attrib(default=1.0, converter=float, validator=_non_negative)
    delta = attrib(default=0.0, converter=float)
    v0 = attrib(default=3.0, converter=float, validator=_positive)
    cutoff = attrib(default=3, converter=int, validator=_valid_shell)

    @property
    def n_sites(self):
        return self.geometry.n_sites


@attrs(frozen=True)
class PauliTerm(object):
    """A real coefficient times a string of single-qubit Pauli operators."""

    coefficient = attrib(converter=float)
    string = attrib(converter=lambda s: str(s).upper())

    @coefficient.validator
    def _check_coefficient(self, attribute, value):
        if not math.isfinite(value):
            raise LatticeError("Pauli coefficients must be finite")

    @string.validator
    def _check_string(self, attribute, value):
        unknown = set(value) - set(PAULI_LETTERS)
        if unknown:
            raise LatticeError(
                "unknown Pauli letter(s) {} in {!r}".format(
                    "".join(sorted(unknown)), value
                )
            )


@attrs(frozen=True)
class PauliSumHamiltonian(object):
    """A Hermitian operator written as a sum of weighted Pauli strings.

    Character ``j`` of every string acts on site ``j``.
    """

    terms = attrib(converter=tuple)

    @terms.validator
    def _check_terms(self, attribute, value):
        lengths = {len(term.string) for term in value}
        if len(lengths) > 1:
            raise LatticeError(
                "Pauli strings have differing lengths {}".format(
                    sorted(lengths)
                )
            )

    @property
    def n_sites(self):
        return len(self.terms[0].string) if self.terms else 0


def as_configuration(sigma, n_sites):
    """Validate one configuration or a batch of them.

    Parameters
    ----------
    sigma : array-like
        Occupations of shape ``(N,)`` or ``(M, N)``.
    n_sites : int
        The expected number of sites.

    Returns
    -------
    numpy.ndarray
        The configurations as ``int8``.
    """
    sigma = np.asarray(sigma)
    if sigma.ndim not in (1, 2) or sigma.shape[-1] != n_sites:
        raise LatticeError(
            "configuration of shape {} does not match {} sites".format(
                sigma.shape, n_sites
            )
        )
    if sigma.size and not np.isin(sigma, (0, 1)).all():
        raise LatticeError("configurations must only contain 0 and 1")
    return sigma.astype(np.int8)


def configuration_to_index(sigma):
    """Convert configurations to basis integers (bit j is site j)."""
    sigma = np.asarray(sigma, dtype=np.int64)
    weights = np.left_shift(1, np.arange(sigma.shape[-1], dtype=np.int64))
    return sigma @ weights


def index_to_configuration(index, n_sites):
    """Convert basis integers to configurations of ``n_sites`` sites."""
    index = np.asarray(index, dtype=np.int64)
    shifts = np.arange(n_sites, dtype=np.int64)
    bits = np.right_shift(index[..., np.newaxis], shifts) & 1
    return bits.astype(np.int8)


def all_configurations(n_sites):
    """Every configuration of ``n_sites`` sites, ordered by basis integer."""
    return index_to_configuration(np.arange(2 ** n_sites), n_sites)


def build_couplings(model):
    """List the interacting pairs of a Rydberg model.

    Each unordered pair within the cutoff shell appears once, with
    ``V_ij = v0 / d_ij ** 6``. Pairs beyond the cutoff are absent.

    Parameters
    ----------
    model : RydbergModel

    Returns
    -------
    List[Tuple[int, int, float]]
        The pairs ``(i, j, V_ij)`` with ``i < j``.
    """
    coords = model.geometry.coords
    max_squared = SHELL_SQUARED_DISTANCES[model.cutoff - 1]
    couplings = []
    for i in range(model.n_sites):
        for j in range(i + 1, model.n_sites):
            squared = int(np.sum((coords[i] - coords[j]) ** 2))
            if squared <= max_squared:
                couplings.append((i, j, model.v0 / squared ** 3))
    return couplings


def coupling_matrix(model):
    """The symmetric matrix of pair interactions with a zero diagonal."""
    matrix = np.zeros((model.n_sites, model.n_sites))
    for i, j, value in build_couplings(model):
        matrix[i, j] = matrix[j, i] = value
    return matrix


def diagonal_energy(sigma, model):
    """The diagonal part of the Hamiltonian in the occupation basis.

    Computes ``-delta * sum_j sigma_j + sum_pairs V_ij sigma_i sigma_j``.

    Parameters
    ----------
    sigma : array-like
        One configuration of shape ``(N,)`` or a batch ``(M, N)``.
    model : RydbergModel

    Returns
    -------
    float or numpy.ndarray
        The energy of each configuration, in MHz.
    """
    sigma = as_configuration(sigma, model.n_sites).astype(float)
    interactions = 0.5 * np.einsum(
        "...i,ij,...j->...", sigma, coupling_matrix(model), sigma
    )
    energy = -model.delta * sigma.sum(axis=-1) + interactions
    return float(energy) if np.ndim(energy) == 0 else energy


def diagonal_energy_of_indices(indices, model):
    """Diagonal energies of basis integers, without unpacking to arrays."""
    indices = np.asarray(indices, dtype=np.int64)
    energy = np.zeros(indices.shape)
    for j in range(model.n_sites):
        energy -= model.delta * ((indices >> j) & 1)
    for i, j, value in build_couplings(model):
        energy += value * ((indices >> i) & (indices >> j) & 1)
    return energy


def connected_configs(sigma, model):
    """Configurations connected to ``sigma`` by the Rabi term.

    Parameters
    ----------
    sigma : array-like
        A configuration of shape ``(N,)``.
    model : RydbergModel

    Returns
    -------
    List[Tuple[numpy.ndarray, float]]
        One entry per site ``j``: ``sigma`` with site ``j`` flipped, and the
        matrix element ``-omega / 2``.
    """
    sigma = as_configuration(sigma, model.n_sites)
    if sigma.ndim != 1:
        raise LatticeError("connected_configs takes a single configuration")
    element = -0.5 * model.omega
    connected = []
    for j in range(model.n_sites):
        flipped = sigma.copy()
        flipped[j] ^= 1
        connected.append((flipped, element))
    return connected


def _pauli_masks(string):
    letters = np.array(list(string))
    flips = (letters == "X") | (letters == "Y")
    phases = (letters == "Y") | (letters == "Z")
    n_y = int(np.count_nonzero(letters == "Y"))
    return flips, phases, 1j ** n_y


def pauli_column(term, sigma):
    """``P|sigma>`` as the target configurations and their amplitudes."""
    flips, phases, y_factor = _pauli_masks(term.string)
    target = sigma ^ flips.astype(np.int8)
    parity = (sigma[..., phases].sum(axis=-1) % 2).astype(float)
    amplitude = term.coefficient * y_factor * (1.0 - 2.0 * parity)
    return target, amplitude


def pauli_matrix_row(sigma, ham):
    """Matrix elements ``<sigma'|H|sigma>`` of a Pauli-sum operator.

    X flips a site, Y flips it with a factor ``+i`` (from 0) or ``-i`` (from
    1), and Z contributes ``(-1) ** bit``. Contributions reaching the same
    ``sigma'`` are merged and exact zeros dropped.

    Parameters
    ----------
    sigma : array-like
        A configuration of shape ``(N,)``.
    ham : PauliSumHamiltonian

    Returns
    -------
    List[Tuple[numpy.ndarray, complex]]
        The nonzero elements in order of first appearance.
    """
    sigma = as_configuration(sigma, ham.n_sites)
    merged = OrderedDict()
    for term in ham.terms:
        target, amplitude = pauli_column(term, sigma)
        key = int(configuration_to_index(target))
        merged[key] = merged.get(key, 0j) + complex(amplitude)
    scale = max([abs(term.coefficient) for term in ham.terms] + [1.0])
    return [
        (index_to_configuration(key, ham.n_sites), value)
        for key, value in merged.items()
        if abs(value) > 1e-14 * scale
    ]


def connections(samples, operator):
    """Batched matrix elements ``<sigma|O|sigma'>`` for local estimators.

    Parameters
    ----------
    samples : numpy.ndarray
        Configurations of shape ``(M, N)``; these are the bra states.
    operator : RydbergModel or PauliSumHamiltonian

    Returns
    -------
    List[Tuple[numpy.ndarray, numpy.ndarray]]
        Pairs of connected configurations ``sigma'`` of shape ``(M, N)`` and
        the elements ``<sigma|O|sigma'>`` of shape ``(M,)``.
    """
    if isinstance(operator, RydbergModel):
        samples = as_configuration(samples, operator.n_sites)
        result = [(samples, diagonal_energy(samples, operator))]
        element = np.full(samples.shape[0], -0.5 * operator.omega)
        for j in range(operator.n_sites):
            flipped = samples.copy()
            flipped[:, j] ^= 1
            result.append((flipped, element))
        return result

    if isinstance(operator, PauliSumHamiltonian):
        samples = as_configuration(samples, operator.n_sites)
        grouped = OrderedDict()
        for term in operator.terms:
            flips, _, _ = _pauli_masks(term.string)
            key = flips.tobytes()
            connected = samples ^ flips.astype(np.int8)
            # <sigma|P|sigma'> is the amplitude of sigma in P|sigma'>
            _, amplitude = pauli_column(term, connected)
            if key in grouped:
                grouped[key] = (connected, grouped[key][1] + amplitude)
            else:
                grouped[key] = (connected, amplitude)
        return list(grouped.values())

    raise LatticeError(
        "unsupported operator type {}".format(type(operator).__name__)
    )


def rydberg_as_pauli_sum(model):
    """Rewrite the Rydberg Hamiltonian as a sum of Pauli strings.

    Uses ``Pi_j = (1 - Z_j) / 2`` and ``S^x_j = X_j / 2``.
    """
    n_sites = model.n_sites
    coefficients = OrderedDict()

    def _add(sites, letter, value):
        chars = ["I"] * n_sites
        for site in sites:
            chars[site] = letter
        key = "".join(chars)
        coefficients[key] = coefficients.get(key, 0.0) + value

    _add([], "I", -0.5 * model.delta * n_sites)
    for j in range(n_sites):
        _add([j], "X", -0.5 * model.omega)
        _add([j], "Z", 0.5 * model.delta)
    for i, j, value in build_couplings(model):
        _add([], "I", 0.25 * value)
        _add([i], "Z", -0.25 * value)
        _add([j], "Z", -0.25 * value)
        _add([i, j], "Z", 0.25 * value)

    return PauliSumHamiltonian(
        [
            PauliTerm(value, string)
            for string, value in coefficients.items()
            if value != 0.0
        ]
    )


def _single_site_sum(n_sites, letter, weight):
    terms = []
    for j in range(n_sites):
        chars = ["I"] * n_sites
        chars[j] = letter
        terms.append(PauliTerm(weight, "".join(chars)))
    return PauliSumHamiltonian(terms)


def magnetization_z(n_sites):
    """The site-averaged ``S^z``; ``S^z = +1/2`` on an unoccupied site."""
    return _single_site_sum(n_sites, "Z", 0.5 / n_sites)


def magnetization_x(n_sites):
    """The site-averaged ``S^x``."""
    return _single_site_sum(n_sites, "X", 0.5 / n_sites)


def site_sz(n_sites, site):
    """``S^z`` on a single site."""
    chars = ["I"] * n_sites
    chars[site] = "Z"
    return PauliSumHamiltonian([PauliTerm(0.5, "".join(chars))])


class _RydbergModelSchema(BaseSchema):
    lx = fields.Integer(required=True)
    ly = fields.Integer(required=True)
    omega = fields.Float(load_default=1.0)
    delta = fields.Float(load_default=0.0)
    v0 = fields.Float(load_default=3.0)
    cutoff = fields.Integer(load_default=3)

    @post_load
    def make_model(self, data, **kwargs):
        try:
            geometry = LatticeGeometry(data.pop("lx"), data.pop("ly"))
            return RydbergModel(geometry, **data)
        except LatticeError as err:
            raise ValidationError(str(err))


def model_from_mapping(mapping):
    """Build a Rydberg model from string or typed key/value pairs."""
    try:
        return _RydbergModelSchema().load(dict(mapping))
    except ValidationError as err:
        raise LatticeError("invalid model description: {}".format(err))


def model_to_mapping(model):
    return OrderedDict(
        [
            ("lx", model.geometry.lx),
            ("ly", model.geometry.ly),
            ("omega", model.omega),
            ("delta", model.delta),
            ("v0", model.v0),
            ("cutoff", model.cutoff),
        ]
    )


def load_model(path):
    """Read a model description file of ``key = value`` lines.

    Recognised keys are ``lx``, ``ly``, ``omega``, ``delta``, ``v0`` and
    ``cutoff``; ``#`` starts a comment line.
    """
    parser = ConfigParser()
    with open(str(path)) as fp:
        content = fp.read()
    try:
        parser.read_string("[model]\n" + content)
    except ConfigParserError as err:
        raise LatticeError("cannot parse {}: {}".format(path, err))
    return model_from_mapping(parser["model"])


def save_model(path, model):
    lines = ["# site ordering: {}".format(ORDERING)]
    for key, value in model_to_mapping(model).items():
        lines.append("{} = {!r}".format(key, value))
    with open(str(path), "w") as fp:
        fp.write("\n".join(lines) + "\n")


def load_pauli_sum(path):
    """Read a Pauli-sum file with one ``coefficient STRING`` term per line.

    Blank lines and lines starting with ``#`` are ignored.
    """
    terms = []
    with open(str(path)) as fp:
        for number, line in enumerate(fp, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise LatticeError(
                    "{}:{}: expected 'coefficient pauli_string'".format(
                        path, number
                    )
                )
            try:
                coefficient = float(parts[0])
            except ValueError:
                raise LatticeError(
                    "{}:{}: bad coefficient {!r}".format(
                        path, number, parts[0]
                    )
                )
            terms.append(PauliTerm(coefficient, parts[1]))
    return PauliSumHamiltonian(terms)


def save_pauli_sum(path, ham):
    with open(str(path), "w") as fp:
        for term in ham.terms:
            fp.write("{!r} {}\n".format(term.coefficient, term.string))


def load_hamiltonian(path):
    """Read a model description or a Pauli-sum file.

    Files with ``key = value`` lines are model descriptions; anything else is
    read as a Pauli sum.

    Returns
    -------
    RydbergModel or PauliSumHamiltonian
    """
    with open(str(path)) as fp:
        lines = [line.split("#", 1)[0] for line in fp]
    if any("=" in line for line in lines):
        return load_model(path)
    return load_pauli_sum(path)
