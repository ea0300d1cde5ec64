"""Month x country split structure of the federated protocol.

For each (month, country) cell the records are split three times:

1. a global-test holdout (``gt``),
2. a global-train shard (``gtr``) taken from what is left,
3. the rest into local test (``lt``) and local train (``ltr``).

Every split uses its own RNG stream derived from ``(seed, month, country,
stage)``, so cells can be built in any order with the same result.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoding import SequenceRecord
from .seeding import derive_rng

STAGES = ("global_test", "global_train", "local_test")


@dataclass(frozen=True)
class SplitConfig:
    global_test_fraction: float = 0.30
    global_train_fraction: float = 0.20
    local_test_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self):
        for name in ("global_test_fraction", "global_train_fraction", "local_test_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly between 0 and 1, got {v}")


@dataclass(frozen=True)
class Cell:
    month: int
    country: str
    gt: np.ndarray
    gtr: np.ndarray
    ltr: np.ndarray
    lt: np.ndarray

    @property
    def size(self) -> int:
        return len(self.gt) + len(self.gtr) + len(self.ltr) + len(self.lt)


@dataclass
class PartitionPlan:
    months: tuple[int, ...]
    countries: tuple[str, ...]
    cells: dict[tuple[int, str], Cell]
    config: SplitConfig
    global_test: np.ndarray = field(init=False)
    local_test: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.global_test = _concat([self.cells[m, c].gt for m in self.months for c in self.countries])
        self.local_test = {
            c: _concat([self.cells[m, c].lt for m in self.months]) for c in self.countries
        }

    def cell(self, month: int, country: str) -> Cell:
        return self.cells[month, country]

    def global_test_through(self, month: int) -> np.ndarray:
        """Accumulated global-test indices after processing ``month``."""
        return _concat([self.cells[m, c].gt for m in self.months if m <= month for c in self.countries])

    def global_train(self, month: int) -> np.ndarray:
        """Pooled global-train shard of one month, in country order."""
        return _concat([self.cells[month, c].gtr for c in self.countries])

    def train_indices(self) -> np.ndarray:
        return _concat([np.concatenate([cell.ltr, cell.gtr]) for cell in self._ordered()])

    def test_indices(self) -> np.ndarray:
        return _concat([np.concatenate([cell.gt, cell.lt]) for cell in self._ordered()])

    def _ordered(self):
        return [self.cells[m, c] for m in self.months for c in self.countries]

    def to_dict(self) -> dict:
        return {
            "config": {
                "global_test_fraction": self.config.global_test_fraction,
                "global_train_fraction": self.config.global_train_fraction,
                "local_test_fraction": self.config.local_test_fraction,
                "seed": self.config.seed,
                "seeding": "independent stream per (seed, month, country, stage); stratified when every class has >= 2 members",
                "rounding": "round-half-up, single-element sets stay in the remainder",
            },
            "months": list(self.months),
            "countries": list(self.countries),
            "cells": [
                {
                    "month": cell.month,
                    "country": cell.country,
                    **{k: getattr(cell, k).tolist() for k in ("gt", "gtr", "ltr", "lt")},
                }
                for cell in self._ordered()
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionPlan":
        cfg = SplitConfig(**{k: d["config"][k] for k in ("global_test_fraction", "global_train_fraction", "local_test_fraction", "seed")})
        cells = {}
        for c in d["cells"]:
            arrs = {k: np.asarray(c[k], dtype=np.intp) for k in ("gt", "gtr", "ltr", "lt")}
            cells[c["month"], c["country"]] = Cell(c["month"], c["country"], **arrs)
        return cls(tuple(d["months"]), tuple(d["countries"]), cells, cfg)


def _concat(parts) -> np.ndarray:
    parts = list(parts)
    if not parts:
        return np.zeros(0, dtype=np.intp)
    return np.concatenate(parts).astype(np.intp)


def filter_month(records: Sequence[SequenceRecord], month: int, index=None) -> np.ndarray:
    idx = range(len(records)) if index is None else index
    return np.array([i for i in idx if records[i].month == month], dtype=np.intp)


def filter_country(records: Sequence[SequenceRecord], index, country: str) -> np.ndarray:
    return np.array([i for i in index if records[i].country == country], dtype=np.intp)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def held_out_count(n: int, fraction: float) -> int:
    if n <= 1:
        return 0
    return min(round_half_up(fraction * n), n - 1)


def split(index, fraction: float, rng: np.random.Generator, labels=None):
    """Seeded (optionally stratified) split into ``(held_out, remainder)``, both sorted.

    ``labels`` gives a class per element of ``index``; stratification is used
    only when every class present has at least two members.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    index = np.asarray(index, dtype=np.intp)
    n = len(index)
    k = held_out_count(n, fraction)
    empty = np.zeros(0, dtype=np.intp)
    if n == 0:
        return empty, empty
    order = rng.permutation(n)
    if labels is not None:
        labels = np.asarray(labels)
        classes, counts = np.unique(labels, return_counts=True)
        if len(classes) > 1 and counts.min() >= 2:
            chosen = _stratified_pick(order, labels, classes, counts, k, fraction)
            mask = np.zeros(n, dtype=bool)
            mask[chosen] = True
            return np.sort(index[mask]), np.sort(index[~mask])
    return np.sort(index[order[:k]]), np.sort(index[order[k:]])


def _stratified_pick(order, labels, classes, counts, k, fraction):
    # largest-remainder apportionment of k across classes; ties go to the lower class
    exact = fraction * counts
    quota = np.floor(exact).astype(int)
    short = k - quota.sum()
    if short > 0:
        rem = exact - quota
        for j in sorted(range(len(classes)), key=lambda j: (-rem[j], j)):
            if short == 0:
                break
            if quota[j] < counts[j]:
                quota[j] += 1
                short -= 1
    elif short < 0:
        for j in sorted(range(len(classes)), key=lambda j: (exact[j] - quota[j], j)):
            while short < 0 and quota[j] > 0:
                quota[j] -= 1
                short += 1
    picked = []
    shuffled_labels = labels[order]
    for j, cls in enumerate(classes):
        members = order[shuffled_labels == cls]
        picked.extend(members[: quota[j]].tolist())
    return np.asarray(picked, dtype=np.intp)


def build_plan(records: Sequence[SequenceRecord], country_list, months, cfg: SplitConfig) -> PartitionPlan:
    country_list = tuple(country_list)
    months = tuple(int(m) for m in months)
    if not country_list or not months:
        raise ValueError("country_list and months must be non-empty")
    by_cell: dict[tuple[int, str], list[int]] = {}
    for i, r in enumerate(records):
        by_cell.setdefault((r.month, r.country), []).append(i)
    lineages = np.array([r.lineage for r in records], dtype=object)
    cells = {}
    for m in months:
        for c in country_list:
            idx = np.asarray(by_cell.get((m, c), []), dtype=np.intp)
            cells[m, c] = _split_cell(idx, lineages, m, c, cfg)
    return PartitionPlan(months, country_list, cells, cfg)


def _split_cell(idx, lineages, month, country, cfg: SplitConfig) -> Cell:
    fractions = (cfg.global_test_fraction, cfg.global_train_fraction, cfg.local_test_fraction)
    rest = idx
    out = []
    for stage, frac in zip(STAGES, fractions):
        rng = derive_rng(cfg.seed, month, country, stage)
        held, rest = split(rest, frac, rng, lineages[rest] if len(rest) else None)
        out.append(held)
    gt, gtr, lt = out
    return Cell(month, country, gt=gt, gtr=gtr, ltr=rest, lt=lt)
