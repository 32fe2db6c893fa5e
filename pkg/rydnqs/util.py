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

"""Common components shared by all rydnqs modules."""


import numpy as np
from marshmallow import Schema, EXCLUDE


class RydnqsError(Exception):
    """An error occurred in a rydnqs pipeline.

    Subclasses set ``category``, a short machine-parsable identifier that the
    command line front end prints on failure.

    Parameters
    ----------
    message : str
        A descriptive error message.
    """

    category = "internal"

    def __init__(self, message):
        super(RydnqsError, self).__init__(message)
        self.message = message


def rng_for(seed):
    """Build a numpy random generator from a seed or pass one through.

    Parameters
    ----------
    seed : int, numpy.random.Generator or None
        The seed of the stream. Generators are returned unchanged so that
        callers can thread a single stream through several calls.

    Returns
    -------
    numpy.random.Generator
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class BaseSchema(Schema):
    """Base class for marshmallow schemas in this library."""

    class Meta:
        unknown = EXCLUDE
