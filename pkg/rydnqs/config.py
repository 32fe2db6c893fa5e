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
Load run configuration from files, environment variables or code.
"""


import json
import os
import warnings
import zlib
from configparser import ConfigParser, Error as ConfigParserError

import numpy as np
from attr import attrs, attrib
from marshmallow import fields, post_load, ValidationError
from marshmallow_enum import EnumField

from rydnqs import lattice
from rydnqs.optim import OptimizerName
from rydnqs.util import BaseSchema, RydnqsError


DEFAULT_SEED = 1234
DEFAULT_THREADS = 1
DEFAULT_OUT = "rydnqs-output"
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class ConfigError(RydnqsError):
    """An error was encountered when loading run configuration."""

    category = "config"


@attrs(frozen=True)
class ModelConfig(object):
    lx = attrib(default=3)
    ly = attrib(default=3)
    omega = attrib(default=1.0)
    delta = attrib(default=0.0)
    v0 = attrib(default=3.0)
    cutoff = attrib(default=3)

    @property
    def geometry(self):
        return lattice.LatticeGeometry(self.lx, self.ly)

    def to_model(self, delta=None):
        """The Rydberg model, optionally at another detuning."""
        try:
            return lattice.RydbergModel(
                self.geometry,
                omega=self.omega,
                delta=self.delta if delta is None else delta,
                v0=self.v0,
                cutoff=self.cutoff,
            )
        except (ValueError, lattice.LatticeError) as err:
            raise ConfigError("invalid model: {}".format(err))


@attrs(frozen=True)
class EdConfig(object):
    delta_min = attrib(default=-5.0)
    delta_max = attrib(default=5.0)
    delta_step = attrib(default=0.5)
    n_states = attrib(default=2)

    def deltas(self):
        """The detuning grid, endpoints included."""
        span = self.delta_max - self.delta_min
        n_points = int(round(span / self.delta_step))
        return [
            round(self.delta_min + i * self.delta_step, 12)
            for i in range(n_points + 1)
        ]


@attrs(frozen=True)
class DataConfig(object):
    """Dataset generation.

    ``bases`` of None measures in the occupation basis only. ``delta_c`` of
    None places the phase boundary where the gap of the ED sweep closes.
    ``hamiltonian`` names a model description or Pauli-sum file; when set,
    mixed-basis shots of its ground state replace the detuning sweep.
    """

    deltas = attrib(default=(-2.0, 0.0, 2.0, 4.0), converter=tuple)
    bases = attrib(default=None)
    shots = attrib(default=1000)
    test_fraction = attrib(default=0.2)
    delta_c = attrib(default=None)
    exclusion_window = attrib(default=0.2)
    hamiltonian = attrib(default=None)


@attrs(frozen=True)
class CnnConfig(object):
    epochs = attrib(default=5)
    batch_size = attrib(default=32)
    learning_rate = attrib(default=1e-3)
    n_conv = attrib(default=None)


@attrs(frozen=True)
class RbmConfig(object):
    alpha = attrib(default=1.0)
    epochs = attrib(default=500)
    n_samples_data = attrib(default=1000)
    n_samples = attrib(default=2000)
    optimizer = attrib(default=OptimizerName.ADADELTA)
    rho = attrib(default=0.95)
    eps = attrib(default=None)
    learning_rate = attrib(default=None)
    n_chains = attrib(default=10)
    burn_in = attrib(default=1000)

    def optimizer_hyperparameters(self):
        if self.optimizer == OptimizerName.ADADELTA:
            values = {
                "rho": self.rho,
                "eps": self.eps,
                "lr": self.learning_rate,
            }
        elif self.optimizer == OptimizerName.ADAM:
            values = {"lr": self.learning_rate, "eps": self.eps}
        else:
            values = {"lr": self.learning_rate}
        return {k: v for k, v in values.items() if v is not None}


@attrs(frozen=True)
class RnnConfig(object):
    """VMC settings. ``deltas`` of None trains at the model detuning only."""

    n_hidden = attrib(default=32)
    n_samples = attrib(default=500)
    learning_rate = attrib(default=1e-3)
    epochs = attrib(default=1000)
    deltas = attrib(default=None)


@attrs(frozen=True)
class RunConfig(object):
    seed = attrib(default=DEFAULT_SEED)
    threads = attrib(default=DEFAULT_THREADS)
    out = attrib(default=DEFAULT_OUT)


@attrs(frozen=True)
class Config(object):
    model = attrib(factory=ModelConfig)
    ed = attrib(factory=EdConfig)
    data = attrib(factory=DataConfig)
    cnn = attrib(factory=CnnConfig)
    rbm = attrib(factory=RbmConfig)
    rnn = attrib(factory=RnnConfig)
    run = attrib(factory=RunConfig)


class _CommaList(fields.Field):
    """A list written as comma separated values in a configuration file."""

    def __init__(self, item, **kwargs):
        super(_CommaList, self).__init__(**kwargs)
        self.item = item

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return [self.item._serialize(v, attr, obj) for v in value]

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ValidationError("Not a valid list.")
        return tuple(self.item.deserialize(v) for v in value)


class _ModelConfigSchema(BaseSchema):
    lx = fields.Integer(load_default=3)
    ly = fields.Integer(load_default=3)
    omega = fields.Float(load_default=1.0)
    delta = fields.Float(load_default=0.0)
    v0 = fields.Float(load_default=3.0)
    cutoff = fields.Integer(load_default=3)

    @post_load
    def make_config(self, data, **kwargs):
        return ModelConfig(**data)


class _EdConfigSchema(BaseSchema):
    delta_min = fields.Float(load_default=-5.0)
    delta_max = fields.Float(load_default=5.0)
    delta_step = fields.Float(load_default=0.5)
    n_states = fields.Integer(load_default=2)

    @post_load
    def make_config(self, data, **kwargs):
        if data["delta_step"] <= 0 or data["delta_max"] < data["delta_min"]:
            raise ValidationError("the detuning grid is empty")
        return EdConfig(**data)


class _DataConfigSchema(BaseSchema):
    deltas = _CommaList(fields.Float(), load_default=(-2.0, 0.0, 2.0, 4.0))
    bases = _CommaList(fields.String(), load_default=None, allow_none=True)
    shots = fields.Integer(load_default=1000)
    test_fraction = fields.Float(load_default=0.2)
    delta_c = fields.Float(load_default=None, allow_none=True)
    exclusion_window = fields.Float(load_default=0.2)
    hamiltonian = fields.String(load_default=None, allow_none=True)

    @post_load
    def make_config(self, data, **kwargs):
        return DataConfig(**data)


class _CnnConfigSchema(BaseSchema):
    epochs = fields.Integer(load_default=5)
    batch_size = fields.Integer(load_default=32)
    learning_rate = fields.Float(load_default=1e-3)
    n_conv = fields.Integer(load_default=None, allow_none=True)

    @post_load
    def make_config(self, data, **kwargs):
        return CnnConfig(**data)


class _RbmConfigSchema(BaseSchema):
    alpha = fields.Float(load_default=1.0)
    epochs = fields.Integer(load_default=500)
    n_samples_data = fields.Integer(load_default=1000)
    n_samples = fields.Integer(load_default=2000)
    optimizer = EnumField(
        OptimizerName, by_value=True, load_default=OptimizerName.ADADELTA
    )
    rho = fields.Float(load_default=0.95)
    eps = fields.Float(load_default=None, allow_none=True)
    learning_rate = fields.Float(load_default=None, allow_none=True)
    n_chains = fields.Integer(load_default=10)
    burn_in = fields.Integer(load_default=1000)

    @post_load
    def make_config(self, data, **kwargs):
        return RbmConfig(**data)


class _RnnConfigSchema(BaseSchema):
    n_hidden = fields.Integer(load_default=32)
    n_samples = fields.Integer(load_default=500)
    learning_rate = fields.Float(load_default=1e-3)
    epochs = fields.Integer(load_default=1000)
    deltas = _CommaList(fields.Float(), load_default=None, allow_none=True)

    @post_load
    def make_config(self, data, **kwargs):
        return RnnConfig(**data)


class _RunConfigSchema(BaseSchema):
    seed = fields.Integer(load_default=DEFAULT_SEED)
    threads = fields.Integer(load_default=DEFAULT_THREADS)
    out = fields.String(load_default=DEFAULT_OUT)

    @post_load
    def make_config(self, data, **kwargs):
        if data["threads"] < 1:
            raise ValidationError("threads must be at least 1")
        return RunConfig(**data)


SCHEMA_FOR_SECTION = {
    "model": _ModelConfigSchema,
    "ed": _EdConfigSchema,
    "data": _DataConfigSchema,
    "cnn": _CnnConfigSchema,
    "rbm": _RbmConfigSchema,
    "rnn": _RnnConfigSchema,
    "run": _RunConfigSchema,
}


def load(path):
    """Read the sections of a configuration file.

    Both INI files and the ``manifest.json`` written by a previous run are
    accepted. Options with empty values are left out.

    Parameters
    ----------
    path : str or pathlib.Path
        The path of the file to load configuration from.

    Returns
    -------
    Dict[str, Dict[str, str]]
        The options of each section. A missing file gives an empty dict.
    """
    path = str(path)
    if not os.path.exists(path):
        return {}
    if path.endswith(".json"):
        return _load_manifest_sections(path)

    parser = ConfigParser()
    try:
        parser.read(path)
    except ConfigParserError as err:
        raise ConfigError("cannot parse {}: {}".format(path, err))

    sections = {}
    for section in parser.sections():
        sections[section] = {
            option: value
            for option, value in parser.items(section)
            if value.strip() != ""
        }
    return sections


def _load_manifest_sections(path):
    try:
        with open(path) as fp:
            manifest = json.load(fp)
        config = manifest["config"]
    except (ValueError, KeyError, TypeError) as err:
        raise ConfigError("cannot read manifest {}: {}".format(path, err))
    return {
        section: {k: v for k, v in options.items() if v is not None}
        for section, options in config.items()
    }


def parse(sections):
    """Validate and type the sections read by :func:`load`.

    Returns
    -------
    Config
    """
    unknown = set(sections) - set(SCHEMA_FOR_SECTION)
    if unknown:
        warnings.warn(
            "ignoring unknown configuration sections {}".format(
                ", ".join(sorted(unknown))
            )
        )
    parsed = {}
    for section, schema in SCHEMA_FOR_SECTION.items():
        try:
            parsed[section] = schema().load(sections.get(section, {}))
        except ValidationError as err:
            raise ConfigError(
                "invalid [{}] section: {}".format(section, err.messages)
            )
    return Config(**parsed)


def to_mapping(config):
    """Serialise a configuration, e.g. for a run manifest."""
    return {
        section: schema().dump(getattr(config, section))
        for section, schema in SCHEMA_FOR_SECTION.items()
    }


def _first(*values):
    for value in values:
        if value is not None:
            return value
    return None


def resolve_config_path(config_path=None):
    """Determine which configuration file to load.

    The order of precedence is (highest priority first):

    * The path passed to this function
    * The environment variable ``RYDNQS_CONFIG``

    Without either, only built-in defaults are used.
    """
    return config_path or os.getenv("RYDNQS_CONFIG")


def resolve_run_config(config_path=None, seed=None, threads=None, out=None):
    """Resolve all sources of configuration for a run.

    Run settings are determined in this order of priority (highest first):

    * The value passed to this function
    * The value set in an environment variable (``RYDNQS_SEED``,
      ``RYDNQS_THREADS`` or ``RYDNQS_OUT``)
    * The value read from the ``[run]`` section of the configuration file
    * The built-in default

    Parameters
    ----------
    config_path : str or pathlib.Path, optional
        The configuration file or run manifest to load. Can also be set with
        the environment variable ``RYDNQS_CONFIG``.
    seed : int, optional
        The master seed of the run.
    threads : int, optional
        The number of worker threads.
    out : str or pathlib.Path, optional
        The output directory.

    Returns
    -------
    Config
    """
    path = resolve_config_path(config_path)
    sections = load(path) if path else {}
    if path and not sections and not os.path.exists(str(path)):
        raise ConfigError("configuration file {} not found".format(path))
    file_run = sections.get("run", {})
    run = {
        "seed": _first(seed, os.getenv("RYDNQS_SEED"), file_run.get("seed")),
        "threads": _first(
            threads, os.getenv("RYDNQS_THREADS"), file_run.get("threads")
        ),
        "out": _first(
            None if out is None else str(out),
            os.getenv("RYDNQS_OUT"),
            file_run.get("out"),
        ),
    }
    sections = dict(sections)
    sections["run"] = {k: v for k, v in run.items() if v is not None}
    return parse(sections)


def derive_seed(master_seed, name):
    """An independent seed for one named stage of a run.

    The master seed is expanded with ``numpy.random.SeedSequence`` using the
    CRC-32 of ``name`` as spawn key, so every stage draws from its own
    reproducible stream.
    """
    sequence = np.random.SeedSequence(
        master_seed, spawn_key=(zlib.crc32(name.encode("utf-8")),)
    )
    return int(sequence.generate_state(1)[0])
