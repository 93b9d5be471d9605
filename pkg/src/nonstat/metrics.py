"""Clustering agreement and replicate-study aggregation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, NonstatError

log = logging.getLogger(__name__)


def rand_index(truth, estimate) -> float:
    """Fraction of site pairs on which two labelings agree (same or different group)."""
    a = np.asarray(truth).reshape(-1)
    b = np.asarray(estimate).reshape(-1)
    if len(a) != len(b):
        raise InvalidArgumentError(f"labelings have lengths {len(a)} and {len(b)}")
    n = len(a)
    if n < 2:
        raise InvalidArgumentError("need at least two points")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    def pairs(x):
        return int(np.sum(x * (x - 1) // 2))

    total = n * (n - 1) // 2
    same_both = pairs(table)
    same_a = pairs(table.sum(axis=1))
    same_b = pairs(table.sum(axis=0))
    agree = total + 2 * same_both - same_a - same_b
    return agree / total


def proportion_se(p: float, r: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / r) if r > 0 else math.nan


@dataclass
class CellResult:
    name: str
    params: dict
    metric: str  # "rejection", "p_value", "correct_K" or "rand"
    values: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def R(self) -> int:
        return len(self.values)

    @property
    def estimate(self) -> float:
        return float(np.mean(self.values)) if self.values else math.nan

    @property
    def se(self) -> float:
        if not self.values:
            return math.nan
        if self.metric == "rand":
            return float(np.std(self.values, ddof=1) / math.sqrt(self.R)) if self.R > 1 else math.nan
        return proportion_se(self.estimate, self.R)

    def row(self) -> dict:
        return {"cell": self.name, **self.params, "metric": self.metric, "R": self.R,
                "estimate": self.estimate, "se": self.se}


def replicate_study(cells, R: int, seed: int = 0, n_jobs: int = 1) -> list[CellResult]:
    """Run every cell of an experiment grid for ``R`` replicates.

    Each cell is a dict with ``name``, ``task`` (``"test"``, ``"pvalue"``, ``"select_K"`` or
    ``"segment"``), ``scenario`` (a :class:`~nonstat.simulate.Scenario` or its
    dict form) and optional task settings (``M``, ``level``, ``K_max``,
    ``true_K``).  Replicate ``r`` of cell ``c`` uses the scenario seed spawned
    from ``(seed, c, r)``, so results do not depend on scheduling.
    """
    from .simulate import Scenario

    if R < 1:
        raise InvalidArgumentError("R must be >= 1")
    out = []
    root = np.random.SeedSequence(seed)
    cell_seqs = root.spawn(len(cells))
    for ci, (cell, cseq) in enumerate(zip(cells, cell_seqs)):
        cell = dict(cell)
        name = cell.pop("name", f"cell{ci}")
        task = cell.pop("task")
        sc = cell.pop("scenario")
        sc = sc if isinstance(sc, Scenario) else Scenario.from_dict(sc)
        metric = {"test": "rejection", "pvalue": "p_value", "select_K": "correct_K", "segment": "rand"}.get(task)
        if metric is None:
            raise InvalidArgumentError(f"cell {name!r}: unknown task {task!r}")
        res = CellResult(name, {"n": sc.n, "covariance": sc.covariance, "design": sc.design, "tau2": sc.tau2}, metric)
        for r, rseq in enumerate(cseq.spawn(R)):
            rep_seed = int(rseq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
            try:
                res.values.append(run_replicate(task, sc.with_seed(rep_seed), cell, n_jobs=n_jobs))
            except NonstatError as exc:
                raise type(exc)(f"cell {name!r}, replicate {r}: {exc}") from exc
        log.info("%s: %s=%.4f (se %.4f, R=%d)", name, metric, res.estimate, res.se, res.R)
        out.append(res)
    return out


def run_replicate(task: str, scenario, settings: dict, n_jobs: int = 1) -> float:
    from .indices import local_indices
    from .segmentation import greedy_seed_search, select_K_by_bic
    from .statest import stationarity_test

    data = scenario.simulate()
    if task == "test":
        rep = stationarity_test(data, M=settings.get("M", 99), seed=scenario.seed, level=settings.get("level", 0.05), n_jobs=n_jobs)
        return float(rep.reject)
    if task == "pvalue":
        return stationarity_test(data, M=settings.get("M", 99), seed=scenario.seed, n_jobs=n_jobs).p_value
    xi = local_indices(data)
    if task == "select_K":
        res = select_K_by_bic(xi, settings.get("K_max", 4))
        return float(res.K_star == settings.get("true_K", 2))
    if "K" in settings:
        stats = greedy_seed_search(xi, settings["K"]).stats
    else:
        sel = select_K_by_bic(xi, settings.get("K_max", 4))
        stats = sel.results[sel.K_star].stats
    truth = scenario.true_labels(data.sites)
    if truth is None:
        raise InvalidArgumentError("segment task needs a scenario with true regions")
    return rand_index(truth[xi.active], stats.labels)


def write_table_csv(path, results: list[CellResult]) -> None:
    rows = [r.row() for r in results]
    keys = list(dict.fromkeys(k for row in rows for k in row))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, keys)
        w.writeheader()
        w.writerows(rows)


def table_markdown(results: list[CellResult]) -> str:
    lines = ["| cell | n | covariance | design | metric | R | estimate | se |", "|---|---|---|---|---|---|---|---|"]
    for r in results:
        p = r.params
        lines.append(f"| {r.name} | {p['n']} | {p['covariance']} | {p['design']} | {r.metric} | {r.R} | {r.estimate:.3f} | {r.se:.3f} |")
    return "\n".join(lines) + "\n"


def write_raw_json(path, results: list[CellResult]) -> None:
    payload = [{"cell": r.name, "params": r.params, "metric": r.metric, "values": r.values} for r in results]
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
