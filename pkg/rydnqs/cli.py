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
Command line front end running the rydnqs pipelines.

Each command writes its outputs and a ``manifest.json`` into
``<out>/<command>/``. A manifest can be passed back with ``--config`` to
replay the run.
"""


import argparse
import contextlib
import logging
import os
import sys
import warnings
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from rydnqs import config as rydnqs_config, data, exact, lattice
from rydnqs.config import ConfigError, derive_seed
from rydnqs.data import io as data_io
from rydnqs.data.util import DataError
from rydnqs.networks import base, cnn, rbm, rnn
from rydnqs.optim import Adam, for_name
from rydnqs.util import RydnqsError


logger = logging.getLogger(__name__)

ED_COLUMNS = (
    "delta",
    "energy_per_site",
    "staggered_magnetization",
    "momentum_pi_pi",
    "gap",
)
SIGNAL_COLUMNS = ("delta", "disordered", "ordered", "accuracy")
RBM_SUMMARY_COLUMNS = (
    "delta",
    "energy_per_site",
    "sz",
    "sx",
    "fidelity",
    "ed_energy_per_site",
    "ed_sz",
    "ed_sx",
)
RNN_SUMMARY_COLUMNS = (
    "delta",
    "energy_per_site",
    "energy_stderr",
    "ed_energy_per_site",
    "relative_error",
)
FINAL_EPOCH_FRACTION = 0.1
HAMILTONIAN_TAG = "hamiltonian"

ERROR_CATEGORIES = OrderedDict(
    (cls, cls.category)
    for cls in (
        ConfigError,
        lattice.LatticeError,
        DataError,
        exact.SizeLimitError,
        exact.ConvergenceError,
        base.CheckpointError,
        cnn.ShapeError,
        cnn.CriticalPointError,
        rbm.RotationLimitError,
    )
)
EXIT_CODES = {
    "internal": 1,
    "config": 2,
    "lattice": 3,
    "data": 4,
    "size-limit": 5,
    "convergence": 6,
    "checkpoint": 7,
    "shape": 8,
    "critical-point": 9,
    "rotation-limit": 10,
}


def error_category(error):
    for cls, category in ERROR_CATEGORIES.items():
        if isinstance(error, cls):
            return category
    return getattr(error, "category", "internal")


@contextlib.contextmanager
def _settings(section):
    """Report invalid values of a configuration section as ConfigError."""
    try:
        yield
    except (ValueError, TypeError) as err:
        raise ConfigError("invalid [{}] settings: {}".format(section, err))


def _command_dir(config, command):
    path = os.path.join(config.run.out, command)
    os.makedirs(path, exist_ok=True)
    return path


def _delta_tag(delta):
    return "delta{:+g}".format(delta)


def _map(config, function, items):
    """Apply ``function`` to ``items`` on up to ``threads`` workers."""
    items = list(items)
    if config.run.threads == 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=config.run.threads) as executor:
        return list(executor.map(function, items))


def _solve(config, delta, n_states=1):
    model = config.model.to_model(delta)
    return model, exact.solve_spectrum(model, n_states=n_states)


def write_manifest(config, command, directory, outputs):
    manifest = {
        "version": rydnqs_config.MANIFEST_VERSION,
        "command": command,
        "config": rydnqs_config.to_mapping(config),
        "outputs": sorted(
            os.path.relpath(path, directory) for path in outputs
        ),
    }
    path = os.path.join(directory, rydnqs_config.MANIFEST_NAME)
    base.write_json(path, manifest)
    return path


def cmd_ed(config):
    """Sweep the detuning and tabulate ground state properties."""
    directory = _command_dir(config, "ed")
    geometry = config.model.geometry
    n_states = max(2, config.ed.n_states)

    def row(delta):
        _, spectrum = _solve(config, delta, n_states)
        ground = spectrum.ground
        _, _, momentum = exact.momentum_scan(ground, geometry)
        return OrderedDict(
            [
                ("delta", float(delta)),
                ("energy_per_site", spectrum.e0 / geometry.n_sites),
                (
                    "staggered_magnetization",
                    exact.staggered_magnetization(ground, geometry),
                ),
                ("momentum_pi_pi", float(momentum[-1, -1])),
                ("gap", spectrum.gap),
            ]
        )

    rows = _map(config, row, config.ed.deltas())
    csv_path = os.path.join(directory, "ed.csv")
    base.write_history(csv_path, rows, ED_COLUMNS)
    gaps = [r["gap"] for r in rows]
    critical = exact.gap_closing_delta(
        [r["delta"] for r in rows], gaps, _gap_scale(config, gaps)
    )
    minimum = min(rows, key=lambda r: r["gap"])
    summary_path = os.path.join(directory, "summary.json")
    base.write_json(
        summary_path,
        {
            "critical_delta": critical,
            "gap_minimum_delta": minimum["delta"],
            "gap_minimum": minimum["gap"],
        },
    )
    logger.info("gap closes at delta %g", critical)
    return [csv_path, summary_path]


def _gap_scale(config, gaps):
    return config.model.omega or max(gaps)


def critical_delta(config):
    """The detuning on the ED grid where the gap closes."""
    deltas = config.ed.deltas()

    def gap(delta):
        return _solve(config, delta, 2)[1].gap

    gaps = _map(config, gap, deltas)
    return exact.gap_closing_delta(deltas, gaps, _gap_scale(config, gaps))


def _measurement_path(directory, tag):
    return os.path.join(directory, "measurements_{}.txt".format(tag))


def _state_path(directory, tag):
    return os.path.join(directory, "ground_{}.bin".format(tag))


def _data_outputs(directory, tag):
    state_path = _state_path(directory, tag)
    return [
        _measurement_path(directory, tag),
        state_path,
        exact.sidecar_path(state_path),
    ]


def _load_hamiltonian(config):
    path = config.data.hamiltonian
    try:
        return lattice.load_hamiltonian(path)
    except OSError as err:
        raise ConfigError("cannot read hamiltonian {}: {}".format(path, err))


def _hamiltonian_ground(operator):
    if isinstance(operator, lattice.RydbergModel):
        return exact.solve_spectrum(operator, n_states=1).ground
    return exact.solve_pauli_spectrum(operator, n_states=1).ground


def _hamiltonian_delta(operator):
    if isinstance(operator, lattice.RydbergModel):
        return operator.delta
    return None


def hamiltonian_measurement_bases(config, operator):
    """The occupation basis followed by the bases of the operator's terms."""
    if config.data.bases:
        return list(config.data.bases)
    if isinstance(operator, lattice.RydbergModel):
        operator = lattice.rydberg_as_pauli_sum(operator)
    reference = "Z" * operator.n_sites
    return [reference] + [
        basis
        for basis in exact.hamiltonian_bases(operator)
        if basis != reference
    ]


def _gen_hamiltonian_data(config, directory):
    operator = _load_hamiltonian(config)
    ground = _hamiltonian_ground(operator)
    geometry = getattr(operator, "geometry", None)
    dataset = exact.sample_mixed_measurements(
        ground,
        hamiltonian_measurement_bases(config, operator),
        config.data.shots,
        seed=derive_seed(config.run.seed, "gen-data:" + HAMILTONIAN_TAG),
        geometry=geometry,
        delta=_hamiltonian_delta(operator),
    )
    data_io.save_measurements(
        _measurement_path(directory, HAMILTONIAN_TAG), dataset
    )
    exact.save_state(_state_path(directory, HAMILTONIAN_TAG), ground)
    return _data_outputs(directory, HAMILTONIAN_TAG)


def cmd_gen_data(config):
    """Sample measurement datasets from exact ground states.

    With ``[data] hamiltonian`` set, one mixed-basis dataset of that
    Hamiltonian's ground state is written instead of the detuning sweep.
    """
    directory = _command_dir(config, "gen-data")
    if config.data.hamiltonian:
        return _gen_hamiltonian_data(config, directory)

    geometry = config.model.geometry
    bases = config.data.bases or ("Z" * geometry.n_sites,)

    def generate(delta):
        _, spectrum = _solve(config, delta)
        seed = derive_seed(config.run.seed, "gen-data:{!r}".format(delta))
        dataset = exact.sample_measurements(
            spectrum.ground,
            bases,
            config.data.shots,
            seed=seed,
            geometry=geometry,
            delta=delta,
        )
        tag = _delta_tag(delta)
        data_io.save_measurements(_measurement_path(directory, tag), dataset)
        exact.save_state(_state_path(directory, tag), spectrum.ground)
        return delta, dataset

    datasets = OrderedDict(_map(config, generate, config.data.deltas))
    outputs = []
    for delta in datasets:
        outputs.extend(_data_outputs(directory, _delta_tag(delta)))

    if all(d.is_reference_basis for d in datasets.values()):
        delta_c = config.data.delta_c
        if delta_c is None:
            delta_c = critical_delta(config)
        labeled = data.label_by_detuning(
            datasets, delta_c, config.data.exclusion_window
        )
        train_set, test_set = data.split(
            labeled,
            config.data.test_fraction,
            seed=derive_seed(config.run.seed, "gen-data:split"),
        )
        for name, dataset in (("train", train_set), ("test", test_set)):
            prefix = os.path.join(directory, name)
            data_io.save_labeled(prefix, dataset)
            outputs.extend(data_io.labeled_paths(prefix))
        labels_path = os.path.join(directory, "labels.json")
        base.write_json(labels_path, {"delta_c": delta_c})
        outputs.append(labels_path)
    return outputs


def _require(path, command="gen-data"):
    if not os.path.exists(path):
        raise DataError(
            "{} not found; run the {} command first".format(path, command)
        )
    return path


def cmd_train_cnn(config):
    """Train the phase classifier on the labeled datasets."""
    data_dir = os.path.join(config.run.out, "gen-data")
    train_prefix = os.path.join(data_dir, "train")
    test_prefix = os.path.join(data_dir, "test")
    for prefix in (train_prefix, test_prefix):
        _require(data_io.labeled_paths(prefix)[0])
    train_set = data_io.load_labeled(train_prefix)
    test_set = data_io.load_labeled(test_prefix)

    directory = _command_dir(config, "train-cnn")
    architecture = cnn.build_architecture(
        config.model.geometry, n_conv=config.cnn.n_conv
    )
    seed = derive_seed(config.run.seed, "train-cnn")
    model = cnn.init_cnn(architecture, seed=seed)
    model, history = cnn.train(
        model,
        train_set,
        test_set,
        epochs=config.cnn.epochs,
        batch_size=config.cnn.batch_size,
        optimizer=Adam(lr=config.cnn.learning_rate),
        seed=seed,
    )
    prefix = os.path.join(directory, "cnn")
    cnn.save_cnn(
        prefix,
        model,
        seed=seed,
        hyperparameters={
            "epochs": config.cnn.epochs,
            "batch_size": config.cnn.batch_size,
            "learning_rate": config.cnn.learning_rate,
        },
    )
    history_path = os.path.join(directory, "history.csv")
    base.write_history(history_path, history, cnn.HISTORY_COLUMNS)

    curve = cnn.accuracy_curve(model, test_set)
    curve_path = os.path.join(directory, "signal.csv")
    base.write_history(curve_path, curve, SIGNAL_COLUMNS)
    try:
        critical = cnn.critical_point_estimate(curve)
    except cnn.CriticalPointError as err:
        warnings.warn(str(err))
        critical = None
    critical_path = os.path.join(directory, "critical_point.json")
    base.write_json(critical_path, {"delta_c_estimate": critical})
    return list(base.checkpoint_paths(prefix)) + [
        history_path,
        curve_path,
        critical_path,
    ]


def _rbm_optimizer(config):
    with _settings("rbm"):
        return for_name(
            config.rbm.optimizer.value,
            **config.rbm.optimizer_hyperparameters(),
        )


def _operator_expectation(state, operator):
    if isinstance(operator, lattice.RydbergModel):
        return exact.expectation_rydberg(state, operator)
    return exact.expectation_pauli(state, operator)


def _reconstruct(config, directory, tag, operator, delta, seed_name):
    """Train one RBM on the dataset written by gen-data under ``tag``."""
    data_dir = os.path.join(config.run.out, "gen-data")
    dataset = data_io.load_measurements(
        _require(_measurement_path(data_dir, tag))
    )
    target = exact.load_state(_require(_state_path(data_dir, tag)))
    n_sites = dataset.n_sites
    observables = OrderedDict(
        [
            ("energy", operator),
            ("sz", lattice.magnetization_z(n_sites)),
            ("sx", lattice.magnetization_x(n_sites)),
        ]
    )
    seed = derive_seed(config.run.seed, seed_name)
    rng = np.random.default_rng(seed)
    with _settings("rbm"):
        params = rbm.init_rbm(
            n_sites,
            alpha=config.rbm.alpha,
            complex_params=not dataset.is_reference_basis,
            seed=rng,
        )
    params, history = rbm.train_tomography(
        params,
        dataset,
        optimizer=_rbm_optimizer(config),
        n_samples_data=config.rbm.n_samples_data,
        n_samples=config.rbm.n_samples,
        epochs=config.rbm.epochs,
        seed=rng,
        n_chains=config.rbm.n_chains,
        burn_in=config.rbm.burn_in,
        observables=observables,
        target=target,
    )
    prefix = os.path.join(directory, "rbm_{}".format(tag))
    rbm.save_rbm(
        prefix,
        params,
        seed=seed,
        hyperparameters={
            "alpha": config.rbm.alpha,
            "optimizer": config.rbm.optimizer.value,
            "epochs": config.rbm.epochs,
        },
    )
    history_path = os.path.join(directory, "history_{}.csv".format(tag))
    base.write_history(
        history_path, rbm.history_rows(history), rbm.history_columns(history)
    )
    averages = rbm.final_observable_averages(history)
    summary = OrderedDict(
        [
            ("delta", None if delta is None else float(delta)),
            ("energy_per_site", averages["energy"] / n_sites),
            ("sz", averages["sz"]),
            ("sx", averages["sx"]),
            ("fidelity", history[-1].fidelity),
            (
                "ed_energy_per_site",
                _operator_expectation(target, operator) / n_sites,
            ),
            ("ed_sz", exact.expectation_pauli(target, observables["sz"])),
            ("ed_sx", exact.expectation_pauli(target, observables["sx"])),
        ]
    )
    return summary, list(base.checkpoint_paths(prefix)) + [history_path]


def cmd_train_rbm(config):
    """Reconstruct ground states from the measurements of gen-data.

    One RBM is trained per detuning, or a single one on the mixed-basis
    shots when ``[data] hamiltonian`` is set.
    """
    directory = _command_dir(config, "train-rbm")
    if config.data.hamiltonian:
        operator = _load_hamiltonian(config)
        results = [
            _reconstruct(
                config,
                directory,
                HAMILTONIAN_TAG,
                operator,
                _hamiltonian_delta(operator),
                "train-rbm:" + HAMILTONIAN_TAG,
            )
        ]
    else:

        def reconstruct(delta):
            return _reconstruct(
                config,
                directory,
                _delta_tag(delta),
                config.model.to_model(delta),
                delta,
                "train-rbm:{!r}".format(delta),
            )

        results = _map(config, reconstruct, config.data.deltas)

    summary_path = os.path.join(directory, "summary.csv")
    base.write_history(
        summary_path, [r[0] for r in results], RBM_SUMMARY_COLUMNS
    )
    outputs = [summary_path]
    for _, paths in results:
        outputs.extend(paths)
    return outputs


def _ed_energy(model):
    if model.n_sites > exact.SPARSE_SITE_LIMIT:
        return None
    return exact.solve_spectrum(model, n_states=1).e0


def cmd_train_rnn(config):
    """Variational ground state search at one or more detunings."""
    directory = _command_dir(config, "train-rnn")
    geometry = config.model.geometry
    n_sites = geometry.n_sites
    deltas = config.rnn.deltas or (config.model.delta,)

    def optimise(delta):
        model = config.model.to_model(delta)
        seed = derive_seed(config.run.seed, "train-rnn:{!r}".format(delta))
        with _settings("rnn"):
            run = rnn.VmcRun(
                model,
                rnn.init_rnn(geometry, config.rnn.n_hidden, seed=seed),
                optimizer=Adam(lr=config.rnn.learning_rate),
                n_samples=config.rnn.n_samples,
                epochs=config.rnn.epochs,
                seed=seed,
            )
        history = rnn.train(run)
        tag = _delta_tag(delta)
        prefix = os.path.join(directory, "rnn_{}".format(tag))
        rnn.save_rnn(
            prefix,
            run.wavefunction,
            seed=seed,
            hyperparameters={
                "n_hidden": config.rnn.n_hidden,
                "n_samples": config.rnn.n_samples,
                "learning_rate": config.rnn.learning_rate,
                "epochs": config.rnn.epochs,
            },
        )
        history_path = os.path.join(directory, "history_{}.csv".format(tag))
        base.write_history(history_path, history, rnn.HISTORY_COLUMNS)

        tail = history[-max(1, int(len(history) * FINAL_EPOCH_FRACTION)):]
        energy = float(np.mean([r.energy for r in tail]))
        stderr = float(np.std([r.energy for r in tail]) / np.sqrt(len(tail)))
        e0 = _ed_energy(model)
        summary = OrderedDict(
            [
                ("delta", float(delta)),
                ("energy_per_site", energy / n_sites),
                ("energy_stderr", stderr / n_sites),
                ("ed_energy_per_site", None if e0 is None else e0 / n_sites),
                (
                    "relative_error",
                    None if e0 is None else abs((energy - e0) / e0),
                ),
            ]
        )
        return summary, list(base.checkpoint_paths(prefix)) + [history_path]

    results = _map(config, optimise, deltas)
    summary_path = os.path.join(directory, "summary.csv")
    base.write_history(
        summary_path, [r[0] for r in results], RNN_SUMMARY_COLUMNS
    )
    outputs = [summary_path]
    for _, paths in results:
        outputs.extend(paths)
    return outputs


def _read_if_present(path):
    if not os.path.exists(path):
        return None
    return base.read_history(path)


def cmd_report(config):
    """Collect the tables written by the other commands into one file."""
    out = config.run.out
    directory = _command_dir(config, "report")
    report = OrderedDict()
    report["ed"] = _read_if_present(os.path.join(out, "ed", "ed.csv"))
    report["cnn_signal"] = _read_if_present(
        os.path.join(out, "train-cnn", "signal.csv")
    )
    report["rbm"] = _read_if_present(
        os.path.join(out, "train-rbm", "summary.csv")
    )
    report["rnn"] = _read_if_present(
        os.path.join(out, "train-rnn", "summary.csv")
    )

    fidelity = OrderedDict()
    energy = OrderedDict()
    if config.data.hamiltonian:
        rbm_tags = [HAMILTONIAN_TAG]
    else:
        rbm_tags = [_delta_tag(delta) for delta in config.data.deltas]
    for tag in rbm_tags:
        history = _read_if_present(
            os.path.join(out, "train-rbm", "history_{}.csv".format(tag))
        )
        if history is not None and None not in history["fidelity"]:
            fidelity[tag] = rbm.moving_average(history["fidelity"]).tolist()
    for delta in config.rnn.deltas or (config.model.delta,):
        tag = _delta_tag(delta)
        history = _read_if_present(
            os.path.join(out, "train-rnn", "history_{}.csv".format(tag))
        )
        if history is not None:
            energy[tag] = history["energy"]
    report["rbm_fidelity_smoothed"] = fidelity or None
    report["rnn_energy"] = energy or None

    if all(value is None for value in report.values()):
        raise DataError("no results found under {}".format(out))
    path = os.path.join(directory, "report.json")
    base.write_json(path, report)
    return [path]


COMMANDS = OrderedDict(
    [
        ("ed", cmd_ed),
        ("gen-data", cmd_gen_data),
        ("train-cnn", cmd_train_cnn),
        ("train-rbm", cmd_train_rbm),
        ("train-rnn", cmd_train_rnn),
        ("report", cmd_report),
    ]
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rydnqs",
        description="Neural quantum states for Rydberg atom arrays.",
    )
    parser.add_argument("command", choices=list(COMMANDS))
    parser.add_argument(
        "--config", help="configuration file or manifest.json to replay"
    )
    parser.add_argument("--seed", type=int, help="master seed of the run")
    parser.add_argument(
        "--threads", type=int, help="worker threads for per-detuning work"
    )
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="log progress; repeat for debug output",
    )
    return parser


def run(command, config):
    """Run one command and write its manifest.

    Returns
    -------
    List[str]
        The paths written, manifest last.
    """
    outputs = COMMANDS[command](config)
    directory = _command_dir(config, command)
    manifest = write_manifest(config, command, directory, outputs)
    return list(outputs) + [manifest]


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][
        min(args.verbose, 2)
    ]
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    try:
        config = rydnqs_config.resolve_run_config(
            args.config, seed=args.seed, threads=args.threads, out=args.out
        )
        outputs = run(args.command, config)
    except RydnqsError as err:
        category = error_category(err)
        print("error: {}: {}".format(category, err.message), file=sys.stderr)
        return EXIT_CODES.get(category, 1)
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
