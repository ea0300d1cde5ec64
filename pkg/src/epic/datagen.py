"""Synthetic spike-like corpora with lineage-defining substitutions.

A random ancestral protein is drawn once. Each lineage owns a disjoint set of
signature positions carrying fixed substitutions; every sample copies its
lineage's sequence and adds a few random substitutions elsewhere. Because the
signature sets are disjoint and noise never touches them, the class of every
sample is recoverable exactly, which keeps the learning task solvable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import CANONICAL_AMINO_ACIDS, SequenceRecord
from .exceptions import SpecInfeasible
from .seeding import derive_rng, derive_seed

# signature counts (S-gene) and sequence counts per lineage
PAPER_LINEAGES = (
    ("Alpha", 8, 593236),
    ("Beta", 9, 7746),
    ("Delta", 8, 69886),
    ("Gamma", 10, 16471),
    ("Epsilon", 3, 11993),
)
PAPER_COUNTRIES = (
    ("England", 245695),
    ("USA", 190851),
    ("Germany", 72149),
    ("Denmark", 59353),
    ("Sweden", 39536),
    ("Scotland", 38054),
    ("Netherlands", 27504),
    ("France", 26185),
)


@dataclass(frozen=True)
class LineageSpec:
    name: str
    signature_mutations: int
    frequency: float


@dataclass(frozen=True)
class CountrySpec:
    name: str
    frequency: float


@dataclass(frozen=True)
class SyntheticSpec:
    lineages: tuple[LineageSpec, ...] = field(
        default_factory=lambda: tuple(LineageSpec(*row) for row in PAPER_LINEAGES)
    )
    countries: tuple[CountrySpec, ...] = field(
        default_factory=lambda: tuple(CountrySpec(*row) for row in PAPER_COUNTRIES)
    )
    ancestral_length: int = 1274
    months: int = 6
    total_samples: int = 8000
    noise_mutations_per_sample: int = 2
    month_ramp: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lineages", tuple(self.lineages))
        object.__setattr__(self, "countries", tuple(self.countries))
        if not self.lineages or not self.countries:
            raise ValueError("need at least one lineage and one country")
        if len({l.name for l in self.lineages}) != len(self.lineages):
            raise ValueError("lineage names must be unique")
        if len({c.name for c in self.countries}) != len(self.countries):
            raise ValueError("country names must be unique")
        if any(l.frequency <= 0 for l in self.lineages) or any(c.frequency <= 0 for c in self.countries):
            raise ValueError("relative frequencies must be positive")
        if any(l.signature_mutations < 0 for l in self.lineages):
            raise ValueError("signature mutation counts must be nonnegative")
        if self.ancestral_length < 1 or self.months < 1 or self.total_samples < 1:
            raise ValueError("ancestral_length, months and total_samples must be positive")
        if self.noise_mutations_per_sample < 0:
            raise ValueError("noise_mutations_per_sample must be nonnegative")

    @property
    def lineage_names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.lineages)

    @property
    def country_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.countries)

    def lineage_proportions(self) -> np.ndarray:
        f = np.array([l.frequency for l in self.lineages], dtype=np.float64)
        return f / f.sum()

    def country_proportions(self) -> np.ndarray:
        f = np.array([c.frequency for c in self.countries], dtype=np.float64)
        return f / f.sum()


def _substitute(rng, residue: str) -> str:
    choices = [a for a in CANONICAL_AMINO_ACIDS if a != residue]
    return choices[rng.integers(len(choices))]


@dataclass(frozen=True)
class LineageLayout:
    ancestral: str
    signatures: dict[str, dict[int, str]]  # lineage -> {position: residue}

    def lineage_sequence(self, name: str) -> str:
        seq = list(self.ancestral)
        for pos, aa in self.signatures[name].items():
            seq[pos] = aa
        return "".join(seq)

    def classify(self, sequence: str) -> str:
        """Nearest-signature rule: the lineage whose signature residues match best."""
        best, best_score = None, -1.0
        for name, sig in self.signatures.items():
            if not sig:
                score = 0.0
            else:
                score = sum(sequence[p] == aa for p, aa in sig.items()) / len(sig)
            if score > best_score:
                best, best_score = name, score
        return best


def lineage_layout(spec: SyntheticSpec) -> LineageLayout:
    total_sig = sum(l.signature_mutations for l in spec.lineages)
    if total_sig > spec.ancestral_length:
        raise SpecInfeasible(
            f"{total_sig} signature positions do not fit in an ancestral sequence of length {spec.ancestral_length}"
        )
    rng = derive_rng(spec.seed, "ancestral")
    ancestral = "".join(CANONICAL_AMINO_ACIDS[i] for i in rng.integers(20, size=spec.ancestral_length))
    pos_rng = derive_rng(spec.seed, "signature-positions")
    positions = pos_rng.permutation(spec.ancestral_length)[:total_sig]
    signatures = {}
    offset = 0
    for lin in spec.lineages:
        own = sorted(int(p) for p in positions[offset : offset + lin.signature_mutations])
        offset += lin.signature_mutations
        sub_rng = derive_rng(spec.seed, "signature-residues", lin.name)
        signatures[lin.name] = {p: _substitute(sub_rng, ancestral[p]) for p in own}
    return LineageLayout(ancestral, signatures)


def _month_weights(spec: SyntheticSpec, lineage_idx: int) -> np.ndarray:
    w = np.ones(spec.months)
    if spec.month_ramp:
        first = (lineage_idx * spec.months) // (len(spec.lineages) + 1)
        w[:first] = 0.0
    return w / w.sum()


def generate(spec: SyntheticSpec) -> list[SequenceRecord]:
    layout = lineage_layout(spec)
    n = spec.total_samples
    draw = derive_rng(spec.seed, "assignments")
    lineage_idx = draw.choice(len(spec.lineages), size=n, p=spec.lineage_proportions())
    country_idx = draw.choice(len(spec.countries), size=n, p=spec.country_proportions())
    month_cdfs = [np.cumsum(_month_weights(spec, j)) for j in range(len(spec.lineages))]

    signature_positions = np.zeros(spec.ancestral_length, dtype=bool)
    for sig in layout.signatures.values():
        signature_positions[list(sig)] = True
    free_positions = np.flatnonzero(~signature_positions)
    if spec.noise_mutations_per_sample > len(free_positions):
        raise SpecInfeasible("not enough non-signature positions for the requested noise")
    base = {name: layout.lineage_sequence(name) for name in spec.lineage_names}

    sample_seed = derive_seed(spec.seed, "samples")
    records = []
    for i in range(n):
        rng = np.random.default_rng([sample_seed, i])
        j = int(lineage_idx[i])
        name = spec.lineages[j].name
        month = int(np.searchsorted(month_cdfs[j], rng.random(), side="right"))
        month = min(month, spec.months - 1)
        seq = list(base[name])
        if spec.noise_mutations_per_sample:
            for p in rng.choice(free_positions, size=spec.noise_mutations_per_sample, replace=False):
                seq[p] = _substitute(rng, seq[p])
        records.append(
            SequenceRecord(
                id=f"syn{i:06d}",
                sequence="".join(seq),
                country=spec.countries[int(country_idx[i])].name,
                month=month,
                lineage=name,
            )
        )
    return records
