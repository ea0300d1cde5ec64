"""Weight-level aggregation between clients and the server.

Only :class:`~epic.nn.WeightSet` values enter these functions; raw feature rows
have no way in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyContributionList, IncompatibleShapes
from .nn import WeightSet

SCHEMES = ("uniform", "sample_weighted")
GLOBAL_WEIGHTINGS = ("member", "half")


@dataclass(frozen=True)
class WeightedContribution:
    weights: WeightSet
    sample_count: int

    def __post_init__(self):
        if not isinstance(self.weights, WeightSet):
            raise TypeError(f"contributions carry WeightSet values only, got {type(self.weights).__name__}")
        if int(self.sample_count) < 0:
            raise ValueError("sample_count must be nonnegative")


@dataclass(frozen=True)
class FedConfig:
    """Aggregation settings.

    ``global_weighting`` controls how the previous global weights enter the
    cross-client aggregation: ``"member"`` treats them as one more
    contribution (with the number of samples the global model last trained
    on), ``"half"`` gives them half of the total mass and the clients share
    the other half.
    """

    scheme: str = "sample_weighted"
    local_fraction: float = 0.5
    global_weighting: str = "member"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0.0 <= self.local_fraction <= 1.0:
            raise ValueError("local_fraction must lie in [0, 1]")
        if self.global_weighting not in GLOBAL_WEIGHTINGS:
            raise ValueError(f"global_weighting must be one of {GLOBAL_WEIGHTINGS}")


def _check_compatible(sets: list[WeightSet]) -> None:
    for ws in sets:
        if not isinstance(ws, WeightSet):
            raise TypeError(f"expected WeightSet, got {type(ws).__name__}")
    ref = sets[0]
    for other in sets[1:]:
        if not ref.compatible_with(other):
            raise IncompatibleShapes("weight sets differ in names, shapes or fingerprint")


def _compensated_sum(terms):
    # Neumaier summation, elementwise
    total = np.zeros_like(terms[0])
    comp = np.zeros_like(terms[0])
    for x in terms:
        t = total + x
        comp += np.where(np.abs(total) >= np.abs(x), (total - t) + x, (x - t) + total)
        total = t
    return total + comp


def weighted_mean(sets: list[WeightSet], coefficients) -> WeightSet:
    """Elementwise ``sum(c_k * w_k) / sum(c_k)`` for every tensor.

    Computed as the first set plus the weighted mean deviation from it, in
    double precision with compensated summation, so identical inputs come back
    unchanged and input order only moves the result at rounding level.
    """
    coeffs = np.asarray(coefficients, dtype=np.float64)
    if coeffs.ndim != 1 or len(coeffs) != len(sets):
        raise ValueError("one coefficient per weight set required")
    if (coeffs <= 0).any():
        raise ValueError("aggregation coefficients must be positive")
    total = _compensated_sum([np.array([c]) for c in coeffs])[0]
    ref = sets[0]
    out = []
    for j, base in enumerate(ref.values):
        base64 = base.astype(np.float64)
        deviation = _compensated_sum([c * (ws.values[j].astype(np.float64) - base64) for c, ws in zip(coeffs, sets)])
        out.append((base64 + deviation / total).astype(base.dtype))
    return ref.replace(out)


def aggregate(contributions: list[WeightedContribution], scheme: str = "sample_weighted") -> WeightSet:
    """FedAvg-style mean over contributions, running batchnorm statistics included."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not contributions:
        raise EmptyContributionList("nothing to aggregate")
    for c in contributions:
        if not isinstance(c, WeightedContribution):
            raise TypeError(f"aggregate takes WeightedContribution values, got {type(c).__name__}")
    sets = [c.weights for c in contributions]
    _check_compatible(sets)
    if len(sets) == 1:
        return sets[0]
    if scheme == "uniform":
        coeffs = [1.0] * len(sets)
    else:
        coeffs = [float(c.sample_count) for c in contributions]
        if min(coeffs) <= 0:
            raise ValueError("sample_weighted aggregation needs positive sample counts")
    return weighted_mean(sets, coeffs)


def merge_local_global(local: WeightSet, global_w: WeightSet, local_fraction: float = 0.5) -> WeightSet:
    """Convex combination ``f * local + (1 - f) * global_w``."""
    if not 0.0 <= local_fraction <= 1.0:
        raise ValueError("local_fraction must lie in [0, 1]")
    _check_compatible([local, global_w])
    if local_fraction == 1.0:
        return local
    if local_fraction == 0.0:
        return global_w
    f = np.float64(local_fraction)
    out = []
    for l, g in zip(local.values, global_w.values):
        g64 = g.astype(np.float64)
        out.append((g64 + f * (l.astype(np.float64) - g64)).astype(g.dtype))
    return local.replace(out)


def aggregate_round(
    locals_: list[WeightedContribution],
    global_contribution: WeightedContribution,
    cfg: FedConfig,
) -> WeightSet:
    """Server step: combine every client's latest weights with the previous global weights."""
    if not locals_:
        return global_contribution.weights
    if cfg.global_weighting == "member":
        return aggregate([*locals_, global_contribution], cfg.scheme)
    client_mean = aggregate(locals_, cfg.scheme)
    return merge_local_global(client_mean, global_contribution.weights, 0.5)
