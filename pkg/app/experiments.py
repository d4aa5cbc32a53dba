#  SPDX-License-Identifier: Apache-2.0
import dataclasses
import json
import logging
import os
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np
import pandas as pd
from aria.ops.timer import Timer

import constants
import he_core
import logreg_protocol
import revmul_attack
import revsum_attack
import secureboost_protocol
import vertical_data
from errors import ConfigError
from experiment_config import DatasetSettings
from experiment_config import ExperimentConfig
from revmul_attack import CorruptionView
from revmul_attack import LeakageReport
from revsum_attack import BinBounds
from revsum_attack import RevsumResult
from seeding import derive_seed
from vertical_data import DistributionSpec
from vertical_data import PartitionSpec
from vertical_data import VerticalDataset

logger = logging.getLogger(__name__)


def sub_seed(seed: int, *labels) -> int:
    return derive_seed(seed, *labels) % constants.SUB_SEED_MODULUS


def build_dataset(settings: DatasetSettings, seed: int) -> VerticalDataset:
    if settings.preset:
        spec = PartitionSpec.preset(settings.preset)
    else:
        spec = PartitionSpec.from_counts(settings.features_A, settings.features_B)
    d = len(spec.features_A) + len(spec.features_B)
    if settings.source == "csv":
        dataset = vertical_data.load_csv(settings.csv_path, settings.id_column, settings.label_column)
    elif settings.source == "sparse":
        dataset = vertical_data.gen_sparse(settings.samples, d, settings.density, seed)
    else:
        columns = [DistributionSpec.parse(settings.distribution, settings.samples, derive_seed(seed, "feature", j))
                   for j in range(d)]
        dataset = vertical_data.gen_synthetic(columns, seed, noise=settings.noise)
    return vertical_data.partition(dataset, spec)


def distribution_dataset(name: str, n: int, seed: int) -> VerticalDataset:
    """
    One feature per party: B holds a column of the named distribution, A a normal noise column.
    """
    text = constants.SYNTHETIC_DISTRIBUTIONS.get(name, name)
    columns = [DistributionSpec.parse("normal(0,1)", n, derive_seed(seed, "noise")),
               DistributionSpec.parse(text, n, derive_seed(seed, "target"))]
    dataset = vertical_data.gen_synthetic(columns, seed, weights=constants.SYNTHETIC_WEIGHTS)
    return vertical_data.partition(dataset, PartitionSpec.from_counts(1, 1))


def split(config: ExperimentConfig, data: VerticalDataset, seed: int) -> Tuple[VerticalDataset, VerticalDataset]:
    return vertical_data.train_test_split(data, config.dataset.train_fraction, seed)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_metrics(rows: List[Dict[str, Any]], path: str) -> str:
    frame = pd.DataFrame(rows)
    frame.insert(0, "schema_version", constants.SCHEMA_VERSION)
    frame.to_csv(path, index=False, float_format=constants.METRICS_FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} metric row(s) to {path}")
    return path


def write_json(record: Dict[str, Any], path: str) -> str:
    record = dict(record)
    record.setdefault("schema_version", constants.SCHEMA_VERSION)
    with open(path, "w", encoding="utf-8") as out:
        json.dump(record, out, indent=2, sort_keys=True, default=_json_default)
        out.write("\n")
    return path


def _out(config: ExperimentConfig, name: str) -> str:
    os.makedirs(config.out, exist_ok=True)
    return os.path.join(config.out, name)


# single runs

def revmul_cell(config: ExperimentConfig, data: VerticalDataset, seed: int
                ) -> Tuple[LeakageReport, logreg_protocol.Transcript, he_core.Keypair]:
    lr_config = config.logreg_config(seed)
    keypair = he_core.keygen(lr_config.key_bits, derive_seed(seed, "coordinator", "keygen"))
    _, _, transcript = logreg_protocol.train(data, lr_config, keypair)
    view = CorruptionView.from_run(transcript, keypair, config.attack_settings.corrupt_coordinator)
    return revmul_attack.attack(view, data.X_B), transcript, keypair


def revsum_cell(config: ExperimentConfig, data: VerticalDataset, seed: int) -> RevsumResult:
    boost_config = config.boost_config(seed)
    keypair = he_core.keygen(boost_config.key_bits, derive_seed(seed, "active", "keygen"))
    return revsum_attack.run_revsum_attack(data, boost_config, config.revsum_config(seed), keypair)


def bin_bounds(result: RevsumResult, data: VerticalDataset, aux_size: int, seed: int) -> Dict[int, BinBounds]:
    aux = revsum_attack.sample_aux(data.n, aux_size, seed)
    return {j: revsum_attack.infer_bin_bounds(result.orders[j], aux, data.X_B[:, j], bins.bin_count)
            for j, bins in result.recovered.items()}


def generate(config: ExperimentConfig) -> Dict[str, str]:
    data = build_dataset(config.dataset, config.seed)
    frame = pd.DataFrame(data.concatenate(), columns=data.columns_A + data.columns_B)
    frame.insert(0, config.dataset.id_column, data.ids)
    frame[config.dataset.label_column] = data.Y.astype(int)
    path = _out(config, "dataset.csv")
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Generated {data.n} samples (d_A={data.d_A}, d_B={data.d_B}) into {path}")
    return {"dataset": path}


def train_logreg_run(config: ExperimentConfig) -> Dict[str, str]:
    train, test = split(config, build_dataset(config.dataset, config.seed), config.seed)
    lr_config = config.logreg_config()
    keypair = he_core.keygen(lr_config.key_bits, derive_seed(config.seed, "coordinator", "keygen"))
    theta_A, theta_B, transcript = logreg_protocol.train(train, lr_config, keypair)
    paths = {"transcript": _out(config, "logreg_transcript.jsonl"),
             "coordinator_key": write_json(he_core.keypair_to_json(keypair), _out(config, "coordinator_key.json"))}
    transcript.save_jsonl(paths["transcript"])
    paths["metrics"] = write_metrics([{
        "rounds": len(transcript),
        "train_accuracy": logreg_protocol.accuracy(theta_A, theta_B, train),
        "test_accuracy": logreg_protocol.accuracy(theta_A, theta_B, test),
    }], _out(config, "logreg_metrics.csv"))
    return paths


def attack_revmul_run(config: ExperimentConfig, transcript_path: Optional[str] = None,
                      key_path: Optional[str] = None) -> Dict[str, str]:
    """
    Attacks a saved transcript with the coordinator's key, or trains a fresh run first.
    """
    train, _ = split(config, build_dataset(config.dataset, config.seed), config.seed)
    if transcript_path:
        if not key_path:
            raise ConfigError("attacking a saved transcript needs the coordinator key file")
        with open(key_path, "r", encoding="utf-8") as src:
            keypair = he_core.keypair_from_json(json.load(src))
        transcript = logreg_protocol.Transcript.load_jsonl(transcript_path)
        view = CorruptionView.from_run(transcript, keypair, config.attack_settings.corrupt_coordinator)
        report = revmul_attack.attack(view, train.X_B if train.d_B == transcript.d_B else None)
    else:
        report, _, _ = revmul_cell(config, train, config.seed)
    return {
        "report": write_json(report.to_json(), _out(config, "revmul_report.json")),
        "batches": write_metrics([b.to_json() for b in report.batches], _out(config, "revmul_batches.csv")),
    }


def train_sboost_run(config: ExperimentConfig) -> Dict[str, str]:
    train, test = split(config, build_dataset(config.dataset, config.seed), config.seed)
    boost_config = config.boost_config()
    keypair = he_core.keygen(boost_config.key_bits, derive_seed(config.seed, "active", "keygen"))
    model, transcript = secureboost_protocol.train_ensemble(train, boost_config, keypair=keypair)
    paths = {"model": _out(config, "sboost_model.json"), "histograms": _out(config, "sboost_histograms.jsonl")}
    model.save(paths["model"])
    transcript.save(paths["histograms"])
    paths["metrics"] = write_metrics([{
        "trees": len(model.trees),
        "train_accuracy": secureboost_protocol.accuracy(model, train),
        "test_accuracy": secureboost_protocol.accuracy(model, test),
    }], _out(config, "sboost_metrics.csv"))
    return paths


def attack_revsum_run(config: ExperimentConfig) -> Dict[str, str]:
    train, _ = split(config, build_dataset(config.dataset, config.seed), config.seed)
    result = revsum_cell(config, train, config.seed)
    paths = {
        "report": write_json(result.to_json(), _out(config, "revsum_report.json")),
        "features": write_metrics(result.report.to_rows(), _out(config, "revsum_features.csv")),
    }
    if config.attack_settings.aux_size:
        paths.update(_write_bounds(config, result, train))
    return paths


def binmap_run(config: ExperimentConfig) -> Dict[str, str]:
    train, _ = split(config, build_dataset(config.dataset, config.seed), config.seed)
    return _write_bounds(config, revsum_cell(config, train, config.seed), train)


def _write_bounds(config: ExperimentConfig, result: RevsumResult, train: VerticalDataset) -> Dict[str, str]:
    bounds = bin_bounds(result, train, config.attack_settings.aux_size, config.seed)
    rows = [row for j in sorted(bounds) for row in bounds[j].to_rows()]
    fractions = revsum_attack.bin_mapping_fraction(bounds)
    return {
        "bounds": write_metrics(rows, _out(config, "bin_bounds.csv")),
        "coverage": write_metrics([{"feature": j, "aux_size": config.attack_settings.aux_size,
                                    "inferred_fraction": f} for j, f in sorted(fractions.items())],
                                  _out(config, "bin_mapping.csv")),
    }


def alt_model_run(config: ExperimentConfig) -> Dict[str, str]:
    train, test = split(config, build_dataset(config.dataset, config.seed), config.seed)
    result = revsum_cell(config, train, config.seed)
    aux_size = config.attack_settings.aux_size or train.n
    bounds = bin_bounds(result, train, aux_size, config.seed)
    report = revsum_attack.evaluate_alternative(train, test, result.orders, bounds, config.boost_config())
    row = dict(report.to_row(), aux_size=aux_size, success_rate=result.report.success_rate)
    return {"metrics": write_metrics([row], _out(config, "alt_model.csv"))}


# sweeps: each cell function maps (config, value, data seed, cell seed, cache) to a metrics row

def _batch_size_cell(config: ExperimentConfig, value: str, data_seed: int, seed: int, cache: Dict) -> Dict[str, Any]:
    train, _ = split(config, build_dataset(config.dataset, data_seed), data_seed)
    batch_size = train.n if value == "n" else int(value)
    cell = config.replace(logreg=dataclasses.replace(config.logreg, batch_size=batch_size))
    report, _, _ = revmul_cell(cell, train, seed)
    return dict(report.to_row(), batch_size=batch_size)


def _learning_rate_cell(config: ExperimentConfig, value: str, data_seed: int, seed: int,
                        cache: Dict) -> Dict[str, Any]:
    train, _ = split(config, build_dataset(config.dataset, data_seed), data_seed)
    cell = config.replace(logreg=dataclasses.replace(config.logreg, learning_rate=float(value)))
    report, _, _ = revmul_cell(cell, train, seed)
    return dict(report.to_row(), learning_rate=float(value))


def _revsum_row(result: RevsumResult) -> Dict[str, Any]:
    return {"k": result.plan.k, "b": result.plan.b, "encoded": result.plan.encoded, "cracked": result.report.cracked,
            "success_rate": result.report.success_rate}


def _distribution_cell(config: ExperimentConfig, value: str, data_seed: int, seed: int,
                       cache: Dict) -> Dict[str, Any]:
    data = distribution_dataset(value, config.dataset.samples, data_seed)
    train, _ = split(config, data, data_seed)
    return dict(_revsum_row(revsum_cell(config, train, seed)), distribution=value)


def _bins_cell(config: ExperimentConfig, value: str, data_seed: int, seed: int, cache: Dict) -> Dict[str, Any]:
    train, _ = split(config, build_dataset(config.dataset, data_seed), data_seed)
    cell = config.replace(boost=dataclasses.replace(config.boost, bins=int(value)))
    return dict(_revsum_row(revsum_cell(cell, train, seed)), bins=int(value))


def _kb_cell(config: ExperimentConfig, value: str, data_seed: int, seed: int, cache: Dict) -> Dict[str, Any]:
    k, sep, b = value.partition("x")
    if not sep:
        raise ConfigError(f"kb sweep values look like 2x16, got '{value}'")
    train, _ = split(config, build_dataset(config.dataset, data_seed), data_seed)
    cell = config.replace(attack_settings=dataclasses.replace(config.attack_settings, supergroups=int(k), base=int(b)))
    return _revsum_row(revsum_cell(cell, train, seed))


def _cached_attack(config: ExperimentConfig, data_seed: int, seed: int,
                   cache: Dict) -> Tuple[RevsumResult, VerticalDataset, VerticalDataset]:
    # every value of an aux-size sweep reuses the attack run of its repetition
    if data_seed not in cache:
        train, test = split(config, build_dataset(config.dataset, data_seed), data_seed)
        cache[data_seed] = (revsum_cell(config, train, seed), train, test)
    return cache[data_seed]


def _aux_size_cell(config: ExperimentConfig, value: str, data_seed: int, seed: int, cache: Dict) -> Dict[str, Any]:
    result, train, _ = _cached_attack(config, data_seed, data_seed, cache)
    bounds = bin_bounds(result, train, int(value), seed)
    fractions = revsum_attack.bin_mapping_fraction(bounds)
    return {"aux_size": int(value), "inferred_fraction": float(np.mean(list(fractions.values()))),
            "min_inferred_fraction": float(min(fractions.values())), "success_rate": result.report.success_rate}


def _alt_model_cell(config: ExperimentConfig, value: str, data_seed: int, seed: int, cache: Dict) -> Dict[str, Any]:
    result, train, test = _cached_attack(config, data_seed, data_seed, cache)
    aux_size = train.n if value == "n" else int(value)
    bounds = bin_bounds(result, train, aux_size, seed)
    report = revsum_attack.evaluate_alternative(train, test, result.orders, bounds, config.boost_config(data_seed))
    return dict(report.to_row(), aux_size=aux_size)


SWEEP_CELLS: Dict[str, Callable[..., Dict[str, Any]]] = {
    "batch_size": _batch_size_cell,
    "learning_rate": _learning_rate_cell,
    "distribution": _distribution_cell,
    "bins": _bins_cell,
    "kb": _kb_cell,
    "aux_size": _aux_size_cell,
    "alt_model": _alt_model_cell,
}


def run_sweep(config: ExperimentConfig) -> pd.DataFrame:
    """
    Runs every (value, repetition) cell of the configured sweep. A failing cell is recorded with
    status 'failed' and the sweep continues.
    """
    family = config.sweep.family
    if family not in SWEEP_CELLS:
        raise ConfigError(f"no sweep configured (sweep.family = '{family}')")
    if not config.sweep.values:
        raise ConfigError(f"sweep '{family}' has no values")
    cell_fn = SWEEP_CELLS[family]
    cache: Dict = {}
    rows = []
    cell = 0
    with Timer(logger, f"Sweep {family}"):
        for rep in range(config.sweep.seeds):
            # the dataset is shared by all values of a repetition
            data_seed = sub_seed(config.seed, "sweep", rep)
            for value in config.sweep.values:
                seed = sub_seed(config.seed, "sweep", family, value, rep)
                row = {"cell": cell, "value": value, "rep": rep, "sub_seed": seed, "status": "ok", "error": ""}
                try:
                    with Timer(logger, f"Sweep {family} cell {cell} ({value}, rep {rep})"):
                        row.update(cell_fn(config, value, data_seed, seed, cache))
                except Exception as e:
                    logger.error(f'Exception occured while running sweep {family} cell {cell}. '
                                 f'Exception Type: {type(e).__name__}')
                    logger.exception(f'Exception Message: {e}')
                    row.update(status="failed", error=f"{type(e).__name__}: {e}")
                rows.append(row)
                cell += 1
    return pd.DataFrame(rows)


def run_experiment(config: ExperimentConfig) -> Dict[str, str]:
    """
    Executes the configured protocol, attack or sweep and writes its metrics under config.out.
    :return: name -> path of every file written
    """
    logger.info(f"Running experiment protocol={config.protocol} attack={config.attack} "
                f"sweep={config.sweep.family or '-'} seed={config.seed}")
    if config.sweep.family:
        frame = run_sweep(config)
        path = write_metrics(frame.to_dict("records"), _out(config, f"sweep_{config.sweep.family}.csv"))
        return {"sweep": path}
    if config.protocol == "logreg":
        return attack_revmul_run(config) if config.attack == "revmul" else train_logreg_run(config)
    if config.attack == "revsum":
        return attack_revsum_run(config)
    return train_sboost_run(config)
