# ============================================================
# bench.py
#
# Benchmark sweeps over a labelled corpus.
#
# Features:
#   - success rate (%) and mean queries at success per (model, value)
#     for a sweep over k, edge count or restart count
#   - the defense table: clean accuracy, robustness (100 - success rate)
#     and mean queries at success, plain vs shadow-trained model
#   - CSV tables with a header row and one row per model
#   - attacks on distinct images run concurrently up to `jobs`
# ============================================================

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from .attack import AttackConfig, run_attack
from .shadow import K_MEAN

logger = logging.getLogger(__name__)

AXES = ("k", "edges", "restarts")


@dataclass
class Cell:
    """Tally of one (model, value) cell."""
    attempts: int = 0
    successes: int = 0
    queries: list = field(default_factory=list)

    def add(self, report):
        self.attempts += 1
        if report.success:
            self.successes += 1
            self.queries.append(report.queries_used)

    @property
    def success_rate(self) -> float:
        return 100.0 * self.successes / self.attempts if self.attempts else 0.0

    @property
    def mean_queries(self) -> float:
        """Mean query count over successful attacks; NaN without any."""
        return float(np.mean(self.queries)) if self.queries else math.nan


@dataclass
class SweepTable:
    """
    Results of :func:`sweep`.

    Attributes:
        axis (str): ``k``, ``edges`` or ``restarts``.
        values (tuple): Swept values, in column order.
        models (tuple): Model names, in row order.
        cells (dict): (model, value) -> :class:`Cell`.
    """
    axis: str
    values: tuple
    models: tuple
    cells: dict = field(default_factory=dict)

    def cell(self, model: str, value) -> Cell:
        return self.cells[(model, value)]

    def _table(self, metric) -> tuple:
        header = ["model"] + [f"{self.axis}={v:g}" if isinstance(v, float) else f"{self.axis}={v}"
                              for v in self.values]
        rows = [[name] + [metric(self.cells[(name, v)]) for v in self.values] for name in self.models]
        return header, rows

    def success_table(self) -> tuple:
        return self._table(lambda c: round(c.success_rate, 2))

    def query_table(self) -> tuple:
        return self._table(lambda c: "" if math.isnan(c.mean_queries) else round(c.mean_queries, 2))


def configure(cfg: AttackConfig, axis: str, value) -> AttackConfig:
    """``cfg`` with the swept setting replaced by ``value``."""
    if axis == "k":
        return cfg.with_k(float(value))
    if axis == "edges":
        return replace(cfg, edges=int(value))
    if axis == "restarts":
        return replace(cfg, swarm=replace(cfg.swarm, restarts=int(value)))
    raise ValueError(f"unknown sweep axis {axis!r}; choose one of {AXES}")


def _attack_all(samples, models: dict, configs: list, seed: int, jobs: int, progress: bool) -> list:
    """Attack every sample with every (model, config); returns [(model, config index, report)]."""
    tasks = [(name, ci, index) for name in models for ci in range(len(configs)) for index in range(len(samples))]

    def run(task):
        name, ci, index = task
        sample = samples[index]
        cfg = configs[ci]
        cfg = replace(cfg, stabilize=False, swarm=replace(cfg.swarm, seed=seed + index))
        report = run_attack(sample.image, sample.label, sample.mask, models[name], cfg, plan_seed=seed + index)
        return name, ci, report

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(tqdm(pool.map(run, tasks), total=len(tasks), desc="attacks", disable=not progress))
    return results


def sweep(samples, models: dict, axis: str, values, cfg: AttackConfig, seed: int = 0,
          jobs: int = 1, progress: bool = False) -> SweepTable:
    """
    Attack every sample with every model at every swept value.

    Sample i is attacked with swarm and plan seed ``seed + i`` at every value,
    so columns differ only in the swept setting.

    Raises:
        ValueError: On an empty corpus, no models or an unknown axis.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("cannot benchmark an empty corpus")
    if not models:
        raise ValueError("no models to benchmark")
    values = tuple(values)
    configs = [configure(cfg, axis, v) for v in values]
    table = SweepTable(axis, values, tuple(models), {(m, v): Cell() for m in models for v in values})
    logger.info("sweeping %s over %s: %d samples x %d models", axis, values, len(samples), len(models))
    for name, ci, report in _attack_all(samples, models, configs, seed, jobs, progress):
        table.cells[(name, values[ci])].add(report)
    for name in table.models:
        logger.info("%s: %s", name, ", ".join(f"{v}: {table.cell(name, v).success_rate:.1f}%" for v in values))
    return table


@dataclass(frozen=True)
class DefenseRow:
    model: str
    accuracy: float
    robustness: float
    mean_queries: float


def clean_accuracy(model, samples) -> float:
    """Percentage of samples classified correctly, without counting queries when possible."""
    if hasattr(model, "accuracy"):
        return 100.0 * model.accuracy(samples)
    return 100.0 * float(np.mean([model.predict(s.image).label == s.label for s in samples]))


def defense_table(samples, plain, robust, cfg: AttackConfig, seed: int = 0, jobs: int = 1,
                  progress: bool = False) -> list:
    """Plain vs shadow-trained model at k = 0.43: accuracy, robustness, mean queries."""
    models = {getattr(plain, "name", "plain"): plain, getattr(robust, "name", "robust"): robust}
    if len(models) < 2:
        models = {"plain": plain, "robust": robust}
    table = sweep(samples, models, "k", (K_MEAN,), cfg, seed, jobs, progress)
    rows = []
    for name, model in models.items():
        cell = table.cell(name, K_MEAN)
        rows.append(DefenseRow(name, clean_accuracy(model, samples), 100.0 - cell.success_rate, cell.mean_queries))
    return rows


def defense_rows(rows) -> tuple:
    header = ["model", "accuracy", "robustness", "mean_queries"]
    body = [[r.model, round(r.accuracy, 2), round(r.robustness, 2),
             "" if math.isnan(r.mean_queries) else round(r.mean_queries, 2)] for r in rows]
    return header, body


def write_table(header, rows, path) -> Path:
    """Write a CSV with ``header`` and then ``rows``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path
