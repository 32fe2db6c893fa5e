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

"""Common components for rydnqs datasets."""


from rydnqs.util import RydnqsError


MEASUREMENT_BASES = "XYZ"


class DataError(RydnqsError):
    """An error occurred when building, reading or writing a dataset."""

    category = "data"


def validate_basis(basis, n_sites):
    """Check a measurement basis string and return it upper-cased.

    Parameters
    ----------
    basis : str
        One of ``X``, ``Y`` or ``Z`` per site. ``Z`` is the occupation basis.
    n_sites : int
        The expected number of sites.
    """
    basis = str(basis).upper()
    if len(basis) != n_sites:
        raise DataError(
            "basis {!r} does not have {} sites".format(basis, n_sites)
        )
    invalid = set(basis) - set(MEASUREMENT_BASES)
    if invalid:
        raise DataError(
            "invalid basis letter(s) {} in {!r}".format(
                "".join(sorted(invalid)), basis
            )
        )
    return basis
