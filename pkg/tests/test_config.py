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
import json
import os

import pytest

from rydnqs import config
from rydnqs.config import ConfigError
from rydnqs.optim import OptimizerName


SAMPLE_CONFIG_CONTENT = """
[model]
lx = 4
ly = 2
delta = 1.5

[data]
deltas = -1, 0.5, 2
bases = ZZZZZZZZ, XXXXXXXX
delta_c =

[rbm]
optimizer = adam
learning_rate = 0.01

[run]
seed = 7
out = from-file
"""

SAMPLE_SECTIONS = {
    "model": {"lx": "4", "ly": "2", "delta": "1.5"},
    "data": {"deltas": "-1, 0.5, 2", "bases": "ZZZZZZZZ, XXXXXXXX"},
    "rbm": {"optimizer": "adam", "learning_rate": "0.01"},
    "run": {"seed": "7", "out": "from-file"},
}


@pytest.fixture
def config_file(tmpdir):
    file = tmpdir.join("rydnqs.ini")
    file.write(SAMPLE_CONFIG_CONTENT)
    return file


@pytest.fixture
def clean_env(mocker):
    environ = {
        k: v for k, v in os.environ.items() if not k.startswith("RYDNQS_")
    }
    mocker.patch.dict(os.environ, environ, clear=True)


def test_load(config_file):
    assert config.load(config_file) == SAMPLE_SECTIONS


def test_load_missing():
    assert config.load("does-not-exist") == {}


def test_parse():
    parsed = config.parse(SAMPLE_SECTIONS)
    assert parsed.model == config.ModelConfig(lx=4, ly=2, delta=1.5)
    assert parsed.data.deltas == (-1.0, 0.5, 2.0)
    assert parsed.data.bases == ("ZZZZZZZZ", "XXXXXXXX")
    assert parsed.data.delta_c is None
    assert parsed.rbm.optimizer == OptimizerName.ADAM
    assert parsed.rbm.optimizer_hyperparameters() == {"lr": 0.01}
    assert parsed.cnn == config.CnnConfig()
    assert parsed.run == config.RunConfig(seed=7, out="from-file")


def test_parse_defaults():
    assert config.parse({}) == config.Config()


@pytest.mark.parametrize(
    "sections",
    [
        {"model": {"lx": "three"}},
        {"rbm": {"optimizer": "lbfgs"}},
        {"ed": {"delta_step": "0"}},
        {"run": {"threads": "0"}},
        {"data": {"deltas": "1, x"}},
    ],
)
def test_parse_invalid(sections):
    with pytest.raises(ConfigError):
        config.parse(sections)


def test_parse_warns_on_unknown_section():
    with pytest.warns(UserWarning, match="unknown configuration sections"):
        config.parse({"modle": {"lx": "3"}})


def test_invalid_model():
    with pytest.raises(ConfigError):
        config.ModelConfig(cutoff=5).to_model()


def test_model_at_other_detuning():
    model = config.ModelConfig(lx=2, ly=2, delta=1.0).to_model(delta=-3.0)
    assert model.delta == -3.0
    assert model.n_sites == 4


def test_ed_detuning_grid():
    deltas = config.EdConfig().deltas()
    assert len(deltas) == 21
    assert deltas[0] == -5.0
    assert deltas[-1] == 5.0
    assert 0.0 in deltas


@pytest.mark.parametrize(
    "name, expected",
    [
        (OptimizerName.ADADELTA, {"rho": 0.95}),
        (OptimizerName.SGD, {}),
    ],
)
def test_optimizer_hyperparameters(name, expected):
    rbm_config = config.RbmConfig(optimizer=name)
    assert rbm_config.optimizer_hyperparameters() == expected


def test_manifest_round_trip(tmpdir):
    original = config.parse(SAMPLE_SECTIONS)
    path = tmpdir.join("manifest.json")
    path.write(json.dumps({"config": config.to_mapping(original)}))
    assert config.parse(config.load(path)) == original


def test_load_invalid_manifest(tmpdir):
    path = tmpdir.join("manifest.json")
    path.write("{}")
    with pytest.raises(ConfigError):
        config.load(path)


def test_resolve_config_path(mocker):
    mocker.patch.dict(os.environ, {"RYDNQS_CONFIG": "from-env"})
    assert config.resolve_config_path() == "from-env"
    assert config.resolve_config_path("explicit") == "explicit"


def test_resolve_defaults(clean_env):
    resolved = config.resolve_run_config()
    assert resolved == config.Config()


def test_resolve_from_file(clean_env, config_file):
    resolved = config.resolve_run_config(str(config_file))
    assert resolved.run == config.RunConfig(seed=7, out="from-file")
    assert resolved.model.lx == 4


def test_resolve_env_overrides_file(clean_env, mocker, config_file):
    mocker.patch.dict(
        os.environ,
        {
            "RYDNQS_CONFIG": str(config_file),
            "RYDNQS_SEED": "11",
            "RYDNQS_THREADS": "3",
        },
    )
    resolved = config.resolve_run_config()
    assert resolved.run == config.RunConfig(
        seed=11, threads=3, out="from-file"
    )


def test_resolve_arguments_override_env(clean_env, mocker, config_file):
    mocker.patch.dict(
        os.environ, {"RYDNQS_SEED": "11", "RYDNQS_OUT": "from-env"}
    )
    resolved = config.resolve_run_config(
        str(config_file), seed=0, threads=2, out="explicit"
    )
    assert resolved.run == config.RunConfig(seed=0, threads=2, out="explicit")


def test_resolve_missing_file(clean_env):
    with pytest.raises(ConfigError, match="not found"):
        config.resolve_run_config("does-not-exist.ini")


def test_derive_seed():
    first = config.derive_seed(1234, "train-rbm")
    assert first == config.derive_seed(1234, "train-rbm")
    assert first != config.derive_seed(1234, "train-rnn")
    assert first != config.derive_seed(1235, "train-rbm")
    assert first >= 0
