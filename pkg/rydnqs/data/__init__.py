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

"""Build, label, split and batch measurement datasets."""


from collections import OrderedDict

import numpy as np
from attr import attrs, attrib, evolve

from rydnqs.data.util import DataError, validate_basis
from rydnqs.util import rng_for


DEFAULT_EXCLUSION_WINDOW = 0.2

DISORDERED = 0
ORDERED = 1
CLASS_NAMES = ("disordered", "ordered")


@attrs(frozen=True)
class DatasetMeta(object):
    """Header metadata carried by every dataset file.

    ``delta`` and ``seed`` are None when a dataset mixes several detunings or
    was not generated by a seeded sampler.
    """

    n_sites = attrib()
    lx = attrib()
    ly = attrib()
    delta = attrib(default=None)
    seed = attrib(default=None)

    @classmethod
    def for_geometry(cls, geometry, delta=None, seed=None):
        return cls(geometry.n_sites, geometry.lx, geometry.ly, delta, seed)


@attrs(frozen=True)
class MeasurementRecord(object):
    """A single-shot measurement: a basis string and the observed outcome."""

    basis = attrib()
    outcome = attrib()


def _as_outcomes(outcomes, n_sites):
    outcomes = np.asarray(outcomes)
    if outcomes.size == 0:
        return np.zeros((0, n_sites), dtype=np.int8)
    if outcomes.ndim != 2 or outcomes.shape[1] != n_sites:
        raise DataError(
            "outcomes of shape {} do not match {} sites".format(
                outcomes.shape, n_sites
            )
        )
    if not np.isin(outcomes, (0, 1)).all():
        raise DataError("outcomes must only contain 0 and 1")
    return outcomes.astype(np.int8)


@attrs(eq=False)
class MeasurementDataset(object):
    """Projective measurements, one basis string per shot.

    Parameters
    ----------
    bases : Sequence[str]
        The measurement basis of each shot.
    outcomes : numpy.ndarray
        The outcomes, shape ``(M, N)``, in the measured basis.
    meta : DatasetMeta
    """

    bases = attrib(converter=tuple)
    outcomes = attrib()
    meta = attrib()

    def __attrs_post_init__(self):
        n_sites = self.meta.n_sites
        self.bases = tuple(validate_basis(b, n_sites) for b in self.bases)
        self.outcomes = _as_outcomes(self.outcomes, n_sites)
        if len(self.bases) != self.outcomes.shape[0]:
            raise DataError(
                "{} bases given for {} outcomes".format(
                    len(self.bases), self.outcomes.shape[0]
                )
            )

    def __len__(self):
        return len(self.bases)

    def __iter__(self):
        for basis, outcome in zip(self.bases, self.outcomes):
            yield MeasurementRecord(basis, outcome)

    def __eq__(self, other):
        if not isinstance(other, MeasurementDataset):
            return NotImplemented
        return (
            self.bases == other.bases
            and np.array_equal(self.outcomes, other.outcomes)
            and self.meta == other.meta
        )

    @property
    def n_sites(self):
        return self.meta.n_sites

    @property
    def is_reference_basis(self):
        """Whether every shot was taken in the occupation (all-Z) basis."""
        return all(set(basis) <= {"Z"} for basis in self.bases)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return MeasurementDataset(
            [self.bases[i] for i in indices], self.outcomes[indices], self.meta
        )

    def grouped_by_basis(self):
        """Map each distinct basis to the outcomes measured in it."""
        groups = OrderedDict()
        for i, basis in enumerate(self.bases):
            groups.setdefault(basis, []).append(i)
        return OrderedDict(
            (basis, self.outcomes[rows]) for basis, rows in groups.items()
        )


@attrs(eq=False)
class LabeledDataset(object):
    """Configurations with phase labels and the detuning each came from.

    Labels are 0 for the disordered phase and 1 for the ordered phase.
    """

    configurations = attrib()
    labels = attrib()
    deltas = attrib()
    meta = attrib()

    def __attrs_post_init__(self):
        self.configurations = _as_outcomes(
            self.configurations, self.meta.n_sites
        )
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        self.deltas = np.asarray(self.deltas, dtype=float).reshape(-1)
        m = self.configurations.shape[0]
        if self.labels.shape != (m,) or self.deltas.shape != (m,):
            raise DataError(
                "{} configurations, {} labels and {} detunings".format(
                    m, self.labels.size, self.deltas.size
                )
            )
        if not np.isin(self.labels, (DISORDERED, ORDERED)).all():
            raise DataError("labels must be 0 (disordered) or 1 (ordered)")

    def __len__(self):
        return self.configurations.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            np.array_equal(self.configurations, other.configurations)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.deltas, other.deltas)
            and self.meta == other.meta
        )

    @property
    def n_sites(self):
        return self.meta.n_sites

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.configurations[indices],
            self.labels[indices],
            self.deltas[indices],
            self.meta,
        )

    def at_detuning(self, delta):
        return self.subset(np.flatnonzero(self.deltas == delta))

    def detunings(self):
        return sorted(set(self.deltas.tolist()))


def label_for_detuning(delta, delta_c):
    """The phase label of a detuning; ties count as ordered."""
    return DISORDERED if delta < delta_c else ORDERED


def label_by_detuning(
    datasets, delta_c, exclusion_window=DEFAULT_EXCLUSION_WINDOW
):
    """Label occupation-basis snapshots by the phase of their detuning.

    Parameters
    ----------
    datasets : Mapping[float, MeasurementDataset]
        Occupation-basis measurements keyed by detuning.
    delta_c : float
        The critical detuning separating the two phases.
    exclusion_window : float, optional
        Detunings with ``|delta - delta_c| < exclusion_window`` are dropped.
        Set to 0 to keep every record.

    Returns
    -------
    LabeledDataset
    """
    if not datasets:
        raise DataError("no datasets to label")

    configurations, labels, deltas = [], [], []
    meta = None
    for delta in sorted(datasets):
        dataset = datasets[delta]
        if not dataset.is_reference_basis:
            raise DataError(
                "phase labels need occupation-basis snapshots, got other "
                "bases at delta={}".format(delta)
            )
        if meta is None:
            meta = evolve(dataset.meta, delta=None, seed=None)
        elif dataset.n_sites != meta.n_sites:
            raise DataError("datasets have differing numbers of sites")
        if abs(delta - delta_c) < exclusion_window:
            continue
        configurations.append(dataset.outcomes)
        labels.append(
            np.full(len(dataset), label_for_detuning(delta, delta_c))
        )
        deltas.append(np.full(len(dataset), float(delta)))

    if not configurations:
        return LabeledDataset(np.zeros((0, meta.n_sites)), [], [], meta)
    return LabeledDataset(
        np.concatenate(configurations),
        np.concatenate(labels),
        np.concatenate(deltas),
        meta,
    )


def _strata(dataset):
    if isinstance(dataset, LabeledDataset):
        keys = dataset.deltas
    else:
        keys = np.asarray(dataset.bases)
    groups = OrderedDict()
    for i, key in enumerate(keys.tolist()):
        groups.setdefault(key, []).append(i)
    return [np.array(rows) for rows in groups.values()]


def _apportion(sizes, total):
    """Largest-remainder apportionment of ``total`` over strata sizes."""
    sizes = np.asarray(sizes, dtype=float)
    quotas = total * sizes / sizes.sum()
    counts = np.floor(quotas).astype(int)
    remainders = quotas - counts
    order = np.argsort(-remainders, kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts


def split(dataset, test_fraction, seed=None):
    """Split a dataset into train and test parts, stratified by detuning.

    Records keep their original relative order within each part.

    Parameters
    ----------
    dataset : LabeledDataset or MeasurementDataset
        Labeled datasets are stratified by detuning, measurement datasets by
        basis.
    test_fraction : float
        The fraction of records assigned to the test part, in [0, 1].
    seed : int or numpy.random.Generator, optional

    Returns
    -------
    Tuple
        The train and test datasets.
    """
    if not 0.0 <= test_fraction <= 1.0:
        raise DataError("test_fraction must lie in [0, 1]")
    rng = rng_for(seed)
    n_records = len(dataset)
    if n_records == 0:
        return dataset.subset([]), dataset.subset([])

    strata = _strata(dataset)
    n_test = int(round(test_fraction * n_records))
    counts = _apportion([len(rows) for rows in strata], n_test)

    test_rows = []
    for rows, count in zip(strata, counts):
        test_rows.append(rng.permutation(rows)[:count])
    test_mask = np.zeros(n_records, dtype=bool)
    test_mask[np.concatenate(test_rows).astype(np.int64)] = True

    return (
        dataset.subset(np.flatnonzero(~test_mask)),
        dataset.subset(np.flatnonzero(test_mask)),
    )


def batches(dataset, batch_size, seed=None):
    """Iterate over a shuffled dataset in batches.

    Every record is visited exactly once; the final batch is shorter when the
    dataset size is not a multiple of ``batch_size``.
    """
    if batch_size < 1:
        raise DataError("batch_size must be at least 1")
    order = rng_for(seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        yield dataset.subset(order[start : start + batch_size])
