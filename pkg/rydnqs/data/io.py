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
Read and write the line-oriented dataset files.

Three kinds of file share a header of ``# key=value`` lines carrying the
number of sites, the lattice shape, the site ordering and, where known, the
detuning and sampling seed:

* configurations: one configuration per line, space-separated 0/1 in
  row-major site order
* labels: one integer per line
* measurements: ``BASIS outcome_bits`` per line, e.g. ``ZZXZ 0110``
"""


import numpy as np
from marshmallow import fields, post_load, validate, ValidationError

from rydnqs.data import DatasetMeta, LabeledDataset, MeasurementDataset
from rydnqs.data.util import DataError
from rydnqs.util import BaseSchema


ORDERING = "row-major"


class _DatasetMetaSchema(BaseSchema):
    n_sites = fields.Integer(required=True, validate=validate.Range(min=1))
    lx = fields.Integer(required=True, validate=validate.Range(min=1))
    ly = fields.Integer(required=True, validate=validate.Range(min=1))
    ordering = fields.String(
        load_default=ORDERING, validate=validate.OneOf([ORDERING])
    )
    delta = fields.Float(load_default=None, allow_none=True)
    seed = fields.Integer(load_default=None, allow_none=True)

    @post_load
    def make_meta(self, data, **kwargs):
        data.pop("ordering")
        if data["lx"] * data["ly"] != data["n_sites"]:
            raise ValidationError("lx * ly does not equal n_sites")
        return DatasetMeta(**data)


def _header_lines(meta):
    lines = [
        "n_sites={}".format(meta.n_sites),
        "lx={}".format(meta.lx),
        "ly={}".format(meta.ly),
        "ordering={}".format(ORDERING),
    ]
    if meta.delta is not None:
        lines.append("delta={!r}".format(float(meta.delta)))
    if meta.seed is not None:
        lines.append("seed={}".format(int(meta.seed)))
    return ["# " + line for line in lines]


def _read(path):
    """Split a file into its header mapping and its data lines."""
    header, rows = {}, []
    with open(str(path)) as fp:
        for line in fp:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition("=")
                if sep:
                    header[key.strip()] = value.strip()
                continue
            rows.append(line)
    try:
        meta = _DatasetMetaSchema().load(header)
    except ValidationError as err:
        raise DataError("invalid header in {}: {}".format(path, err))
    return meta, rows


def _write(path, meta, rows):
    with open(str(path), "w") as fp:
        for line in _header_lines(meta):
            fp.write(line + "\n")
        for row in rows:
            fp.write(row + "\n")


def save_configurations(path, configurations, meta):
    rows = [" ".join(str(int(b)) for b in row) for row in configurations]
    _write(path, meta, rows)


def load_configurations(path):
    """Read a configurations file.

    Returns
    -------
    Tuple[numpy.ndarray, DatasetMeta]
        The configurations, shape ``(M, N)``, and the header metadata.
    """
    meta, rows = _read(path)
    try:
        values = [[int(token) for token in row.split()] for row in rows]
    except ValueError:
        raise DataError("non-integer entry in {}".format(path))
    if any(len(row) != meta.n_sites for row in values):
        raise DataError(
            "{} contains a line without {} sites".format(path, meta.n_sites)
        )
    configurations = np.array(values, dtype=np.int8).reshape(-1, meta.n_sites)
    if not np.isin(configurations, (0, 1)).all():
        raise DataError("{} contains entries other than 0 and 1".format(path))
    return configurations, meta


def save_labels(path, labels, meta):
    _write(path, meta, [str(int(label)) for label in labels])


def load_labels(path):
    meta, rows = _read(path)
    try:
        labels = np.array([int(row) for row in rows], dtype=np.int8)
    except ValueError:
        raise DataError("non-integer label in {}".format(path))
    return labels, meta


def save_measurements(path, dataset):
    rows = [
        "{} {}".format(basis, "".join(str(int(b)) for b in outcome))
        for basis, outcome in zip(dataset.bases, dataset.outcomes)
    ]
    _write(path, dataset.meta, rows)


def load_measurements(path):
    """Read a measurements file into a :class:`MeasurementDataset`."""
    meta, rows = _read(path)
    bases, outcomes = [], []
    for row in rows:
        parts = row.split()
        if len(parts) != 2:
            raise DataError(
                "expected 'BASIS outcome_bits' in {}, got {!r}".format(
                    path, row
                )
            )
        basis, bits = parts
        if len(bits) != meta.n_sites or set(bits) - {"0", "1"}:
            raise DataError("invalid outcome {!r} in {}".format(bits, path))
        bases.append(basis)
        outcomes.append([int(b) for b in bits])
    outcomes = np.array(outcomes, dtype=np.int8).reshape(-1, meta.n_sites)
    return MeasurementDataset(bases, outcomes, meta)


def labeled_paths(prefix):
    """The configurations, labels and detunings files of a labeled dataset."""
    prefix = str(prefix)
    return (
        prefix + "_x.txt",
        prefix + "_y.txt",
        prefix + "_delta.txt",
    )


def save_labeled(prefix, dataset):
    x_path, y_path, delta_path = labeled_paths(prefix)
    save_configurations(x_path, dataset.configurations, dataset.meta)
    save_labels(y_path, dataset.labels, dataset.meta)
    _write(
        delta_path, dataset.meta, [repr(float(d)) for d in dataset.deltas]
    )


def load_labeled(prefix):
    x_path, y_path, delta_path = labeled_paths(prefix)
    configurations, meta = load_configurations(x_path)
    labels, _ = load_labels(y_path)
    _, rows = _read(delta_path)
    try:
        deltas = np.array([float(row) for row in rows])
    except ValueError:
        raise DataError("non-numeric detuning in {}".format(delta_path))
    return LabeledDataset(configurations, labels, deltas, meta)
