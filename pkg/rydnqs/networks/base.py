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
Common functionality of the trainable networks.

Checkpoints are a pair of files sharing a prefix: ``{prefix}.bin`` holds the
parameter arrays in a versioned little-endian binary layout and
``{prefix}.json`` a manifest with the architecture, hyperparameters and seed.
Neither file carries a timestamp, so saving identical parameters twice yields
identical bytes.
"""


import csv
import json
import struct
from collections import OrderedDict
from enum import Enum

import numpy as np
from attr import attrs, attrib
from marshmallow import fields, post_load, ValidationError
from marshmallow_enum import EnumField

from rydnqs import lattice
from rydnqs.util import BaseSchema, RydnqsError


CHECKPOINT_MAGIC = b"RYDNQS01"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = OrderedDict(
    [
        (b"f", np.dtype("<f8")),
        (b"c", np.dtype("<c16")),
        (b"i", np.dtype("<i8")),
    ]
)


class CheckpointError(RydnqsError):
    """A checkpoint could not be written or read."""

    category = "checkpoint"


class NetworkKind(Enum):
    CNN = "cnn"
    RBM = "rbm"
    RNN = "rnn"


@attrs
class Checkpoint(object):
    kind = attrib()
    architecture = attrib()
    hyperparameters = attrib()
    seed = attrib()
    version = attrib(default=CHECKPOINT_VERSION)


class CheckpointSchema(BaseSchema):
    kind = EnumField(NetworkKind, by_value=True, required=True)
    architecture = fields.Dict(required=True)
    hyperparameters = fields.Dict(load_default=dict)
    seed = fields.Integer(load_default=None, allow_none=True)
    version = fields.Integer(required=True)

    @post_load
    def make_checkpoint(self, data, **kwargs):
        if data["version"] != CHECKPOINT_VERSION:
            raise ValidationError(
                "unsupported checkpoint version {}".format(data["version"])
            )
        return Checkpoint(**data)


def _dtype_code(array):
    if np.iscomplexobj(array):
        return b"c"
    if np.issubdtype(array.dtype, np.integer):
        return b"i"
    return b"f"


def save_arrays(path, arrays):
    """Write named arrays in the checkpoint binary layout.

    Parameters
    ----------
    path : str or pathlib.Path
    arrays : Mapping[str, numpy.ndarray]
        Written in sorted name order.
    """
    with open(str(path), "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            array = np.asarray(arrays[name])
            code = _dtype_code(array)
            encoded = name.encode("utf-8")
            fp.write(struct.pack("<H", len(encoded)))
            fp.write(encoded)
            fp.write(code)
            fp.write(struct.pack("<B", array.ndim))
            fp.write(struct.pack("<{}Q".format(array.ndim), *array.shape))
            fp.write(array.astype(_DTYPE_CODES[code]).tobytes(order="C"))


def _read_exact(fp, size):
    content = fp.read(size)
    if len(content) != size:
        raise CheckpointError("truncated checkpoint file")
    return content


def load_arrays(path):
    """Read arrays written by :func:`save_arrays`."""
    arrays = OrderedDict()
    with open(str(path), "rb") as fp:
        if fp.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError("{} is not a rydnqs checkpoint".format(path))
        (count,) = struct.unpack("<I", _read_exact(fp, 4))
        for _ in range(count):
            (name_length,) = struct.unpack("<H", _read_exact(fp, 2))
            name = _read_exact(fp, name_length).decode("utf-8")
            code = _read_exact(fp, 1)
            if code not in _DTYPE_CODES:
                raise CheckpointError("unknown dtype code {!r}".format(code))
            dtype = _DTYPE_CODES[code]
            (ndim,) = struct.unpack("<B", _read_exact(fp, 1))
            shape = struct.unpack(
                "<{}Q".format(ndim), _read_exact(fp, 8 * ndim)
            )
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            buffer = _read_exact(fp, size)
            arrays[name] = (
                np.frombuffer(buffer, dtype=dtype).reshape(shape).copy()
            )
        if fp.read(1):
            raise CheckpointError("trailing bytes in {}".format(path))
    return arrays


def write_json(path, content):
    """Write JSON with sorted keys so that reruns produce identical files."""
    with open(str(path), "w") as fp:
        json.dump(content, fp, indent=2, sort_keys=True)
        fp.write("\n")


def checkpoint_paths(prefix):
    return str(prefix) + ".bin", str(prefix) + ".json"


def save_checkpoint(prefix, checkpoint, params):
    """Write a checkpoint manifest and its parameter arrays."""
    bin_path, json_path = checkpoint_paths(prefix)
    save_arrays(bin_path, params)
    write_json(json_path, CheckpointSchema().dump(checkpoint))


def load_checkpoint(prefix, kind=None):
    """Read a checkpoint.

    Parameters
    ----------
    prefix : str or pathlib.Path
    kind : NetworkKind, optional
        When given, a checkpoint of another kind is rejected.

    Returns
    -------
    Tuple[Checkpoint, Dict[str, numpy.ndarray]]
    """
    bin_path, json_path = checkpoint_paths(prefix)
    try:
        with open(json_path) as fp:
            checkpoint = CheckpointSchema().load(json.load(fp))
    except (OSError, ValueError, ValidationError) as err:
        raise CheckpointError(
            "cannot read checkpoint manifest {}: {}".format(json_path, err)
        )
    if kind is not None and checkpoint.kind != kind:
        raise CheckpointError(
            "expected a {} checkpoint, found {}".format(
                kind.value, checkpoint.kind.value
            )
        )
    try:
        params = load_arrays(bin_path)
    except OSError as err:
        raise CheckpointError(str(err))
    return checkpoint, dict(params)


def write_history(path, records, columns):
    """Write training history records as CSV.

    Parameters
    ----------
    path : str or pathlib.Path
    records : Sequence
        attrs instances or mappings.
    columns : Sequence[str]
        The fields to write, in order.
    """
    with open(str(path), "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(columns)
        for record in records:
            if not isinstance(record, dict):
                record = {c: getattr(record, c) for c in columns}
            writer.writerow([_format_cell(record[c]) for c in columns])


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def read_history(path):
    """Read a CSV written by :func:`write_history` into lists of floats."""
    with open(str(path), newline="") as fp:
        reader = csv.DictReader(fp)
        columns = OrderedDict((name, []) for name in reader.fieldnames)
        for row in reader:
            for name in columns:
                cell = row[name]
                columns[name].append(float(cell) if cell != "" else None)
    return columns


def local_values(log_amplitude, samples, operator):
    """Local estimator ``O_loc(s) = sum_s' <s|O|s'> psi(s') / psi(s)``.

    Parameters
    ----------
    log_amplitude : Callable[[numpy.ndarray], numpy.ndarray]
        Maps configurations of shape ``(M, N)`` to ``log psi``, real or
        complex.
    samples : numpy.ndarray
        Configurations of shape ``(M, N)``.
    operator : rydnqs.lattice.RydbergModel or PauliSumHamiltonian

    Returns
    -------
    numpy.ndarray
        Complex local values of shape ``(M,)``.
    """
    samples = np.atleast_2d(samples)
    connections = lattice.connections(samples, operator)
    log_psi = np.asarray(log_amplitude(samples))
    total = np.zeros(samples.shape[0], dtype=complex)
    for connected, elements in connections:
        if not np.any(elements):
            continue
        ratio = np.exp(np.asarray(log_amplitude(connected)) - log_psi)
        total += elements * ratio
    return total
