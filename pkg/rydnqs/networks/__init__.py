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

from marshmallow import ValidationError

from rydnqs.networks import cnn, rbm, rnn
from rydnqs.networks.base import (
    CheckpointError,
    CheckpointSchema,
    NetworkKind,
    checkpoint_paths,
)


LOADER_FOR_KIND = {
    NetworkKind.CNN: cnn.load_cnn,
    NetworkKind.RBM: rbm.load_rbm,
    NetworkKind.RNN: rnn.load_rnn,
}


def for_kind(kind):
    try:
        return LOADER_FOR_KIND[NetworkKind(kind)]
    except ValueError:
        raise ValueError(
            "unsupported network {}, choose one of {}".format(
                kind, set(k.value for k in LOADER_FOR_KIND)
            )
        )


def checkpoint_kind(prefix):
    """Read the kind of network stored in a checkpoint manifest."""
    _, json_path = checkpoint_paths(prefix)
    try:
        with open(json_path) as fp:
            return CheckpointSchema().load(json.load(fp)).kind
    except (OSError, ValueError, ValidationError) as err:
        raise CheckpointError(
            "cannot read checkpoint manifest {}: {}".format(json_path, err)
        )


def load_network(prefix):
    """Load a checkpoint of any kind.

    Returns
    -------
    Tuple[NetworkKind, object]
        The kind and the loaded model, parameters or wavefunction.
    """
    kind = checkpoint_kind(prefix)
    return kind, for_kind(kind)(prefix)
