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
import rydnqs.networks


def load_network(prefix):
    """Load a trained network from a checkpoint of any kind.

    Parameters
    ----------
    prefix : str or pathlib.Path
        The checkpoint path without its ``.bin`` or ``.json`` suffix.

    Returns
    -------
    object
        A :class:`rydnqs.networks.cnn.CnnModel`,
        :class:`rydnqs.networks.rbm.RbmParams` or
        :class:`rydnqs.networks.rnn.RnnWavefunction`.

    Examples
    --------
    Load the RBM reconstructed at one detuning by ``rydnqs train-rbm``:

    >>> rydnqs.load_network("rydnqs-output/train-rbm/rbm_delta+2")
    <rydnqs.networks.rbm.RbmParams object at 0x10d4b7fd0>
    """
    _, network = rydnqs.networks.load_network(prefix)
    return network
