"""Monthly federated rounds between per-country clients and a global server.

Each month every client trains on its local-train shard (starting from the
merge of its previous weights with the current global weights once both
exist), then the server aggregates all client weights with the previous global
weights and trains the global model on the month's pooled global-train shard.
After the last month each local model is scored on its country's accumulated
local test set and the global model on the accumulated global test set.

Clients keep their rows private: the only value a client hands to the server
is a :class:`~epic.federated.WeightedContribution`.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .encoding import EncodedDataset, EncodingContext, SequenceRecord, encode_dataset
from .exceptions import EmptyTestSet, NoData, ShapeMismatch
from .federated import FedConfig, WeightedContribution, aggregate, aggregate_round, merge_local_global
from .nn import ModelSpec, TrainConfig, TrainHistory, WeightSet, init_model, predict, train
from .partition import PartitionPlan, SplitConfig, build_plan
from .seeding import derive_seed

GLOBAL = "global"
CENTRALIZED = "centralized"

CheckpointHook = Callable[[int, str, WeightSet], None]


def round_config(base: TrainConfig, role: str, month: int | None = None, epochs: int | None = None) -> TrainConfig:
    """Training config for one model-round; the shuffle stream depends only on (role, month)."""
    return TrainConfig(
        epochs=base.epochs if epochs is None else epochs,
        batch_size=base.batch_size,
        learning_rate=base.learning_rate,
        adam_beta1=base.adam_beta1,
        adam_beta2=base.adam_beta2,
        adam_epsilon=base.adam_epsilon,
        shuffle_seed=derive_seed(base.shuffle_seed, role, month),
    )


def evaluate(weights: WeightSet, spec: ModelSpec, test_indices, dataset: EncodedDataset) -> metrics.MetricsReport:
    test_indices = np.asarray(test_indices, dtype=np.intp)
    if len(test_indices) == 0:
        raise EmptyTestSet("no test examples")
    subset = dataset.subset(test_indices)
    pred, probs = predict(weights, spec, subset)
    return metrics.compute(subset.class_indices, pred, probs.astype(np.float64), spec.num_classes)


@dataclass
class RoundOutcome:
    contribution: WeightedContribution | None
    history: TrainHistory | None
    seconds: float


class Client:
    """One country's site. Holds its rows privately and exports weights only."""

    def __init__(self, name: str, rows: np.ndarray, data: EncodedDataset, spec: ModelSpec):
        self.name = name
        self._rows = np.asarray(rows, dtype=np.intp)  # sorted global indices of this country's records
        self._data = data
        self._spec = spec
        self._weights: WeightSet | None = None
        self._sample_count = 0

    def _local(self, global_idx) -> EncodedDataset:
        global_idx = np.asarray(global_idx, dtype=np.intp)
        pos = np.searchsorted(self._rows, global_idx)
        if len(global_idx) and (pos.max() >= len(self._rows) or (self._rows[pos] != global_idx).any()):
            raise KeyError(f"client {self.name!r} asked for rows it does not own")
        return self._data.subset(pos)

    @property
    def weights(self) -> WeightSet | None:
        return self._weights

    def contribution(self) -> WeightedContribution | None:
        if self._weights is None:
            return None
        return WeightedContribution(self._weights, self._sample_count)

    def local_round(self, month: int, train_idx, global_weights: WeightSet | None,
                    train_cfg: TrainConfig, fed_cfg: FedConfig) -> RoundOutcome:
        if len(train_idx) == 0:
            # empty shard: previous weights carry forward unchanged
            return RoundOutcome(self.contribution(), None, 0.0)
        if self._weights is None:
            start = init_model(self._spec)
        else:
            start = merge_local_global(self._weights, global_weights, fed_cfg.local_fraction)
        t0 = time.perf_counter()
        self._weights, history = train(start, self._spec, self._local(train_idx), round_config(train_cfg, "local", month))
        self._sample_count = len(train_idx)
        return RoundOutcome(self.contribution(), history, time.perf_counter() - t0)

    def evaluate(self, test_idx) -> metrics.MetricsReport:
        if self._weights is None:
            raise EmptyTestSet(f"client {self.name!r} never trained")
        local = self._local(test_idx)
        return evaluate(self._weights, self._spec, np.arange(len(local)), local)


@dataclass
class RoundState:
    month: int | None = None
    local_weights: dict[str, WeightSet] = field(default_factory=dict)
    global_weights: WeightSet | None = None
    global_sample_count: int = 0
    histories: dict[str, list[tuple[int, TrainHistory]]] = field(default_factory=dict)


@dataclass
class ExperimentReport:
    class_names: tuple[str, ...]
    countries: tuple[str, ...]
    local: dict[str, metrics.MetricsReport | None]
    global_: metrics.MetricsReport | None
    histories: dict[str, list[tuple[int, TrainHistory]]]
    train_seconds: dict[str, float]
    local_weights: dict[str, WeightSet]
    global_weights: WeightSet
    centralized: metrics.MetricsReport | None = None

    def history_rows(self):
        """``(model, month, epoch, accuracy, loss)`` rows; epochs count from 1 within a month."""
        for model in [*self.countries, GLOBAL, CENTRALIZED]:
            for month, hist in self.histories.get(model, []):
                for e, (acc, loss) in enumerate(zip(hist.accuracy, hist.loss), 1):
                    yield model, month, e, acc, loss

    def to_dict(self) -> dict:
        """Deterministic report content (wall-clock times are kept out)."""
        def dump(rep):
            return None if rep is None else rep.to_dict(self.class_names)

        return {
            "classes": list(self.class_names),
            "global": dump(self.global_),
            "local": {c: dump(self.local.get(c)) for c in self.countries},
            "centralized": dump(self.centralized),
        }


def model_spec_for(ctx: EncodingContext, **arch) -> ModelSpec:
    return ModelSpec(input_dim=ctx.feature_width, num_classes=ctx.num_classes, **arch)


def _prepare(records, ctx, spec):
    if not records:
        raise NoData("empty record list")
    ctx = ctx or EncodingContext.from_records(records)
    if spec.input_dim != ctx.feature_width or spec.num_classes != ctx.num_classes:
        raise ShapeMismatch(
            f"model spec ({spec.input_dim} inputs, {spec.num_classes} classes) does not match "
            f"encoding ({ctx.feature_width} features, {ctx.num_classes} classes)"
        )
    return ctx, encode_dataset(records, ctx)


def run_epic(
    records: Sequence[SequenceRecord],
    country_list,
    months,
    split_cfg: SplitConfig,
    model_spec: ModelSpec,
    train_cfg: TrainConfig,
    fed_cfg: FedConfig = FedConfig(),
    *,
    ctx: EncodingContext | None = None,
    plan: PartitionPlan | None = None,
    parallel: int = 1,
    checkpoint_hook: CheckpointHook | None = None,
) -> ExperimentReport:
    ctx, data = _prepare(records, ctx, model_spec)
    country_list = tuple(country_list)
    months = tuple(months)
    plan = plan or build_plan(records, country_list, months, split_cfg)

    clients = {}
    for c in country_list:
        rows = np.flatnonzero(data.countries == c)
        clients[c] = Client(c, rows, data.subset(rows), model_spec)
    state = RoundState(histories={name: [] for name in [*country_list, GLOBAL]})
    seconds = {name: 0.0 for name in [*country_list, GLOBAL]}

    pool = ThreadPoolExecutor(max_workers=parallel) if parallel > 1 else None
    try:
        for m in months:
            state.month = m
            gw = state.global_weights

            def step(c, m=m, gw=gw):
                return clients[c].local_round(m, plan.cell(m, c).ltr, gw, train_cfg, fed_cfg)

            # clients are independent within a month; results are consumed in country order
            outcomes = list(pool.map(step, country_list)) if pool else [step(c) for c in country_list]
            contributions = []
            for c, out in zip(country_list, outcomes):
                if out.history is not None:
                    state.histories[c].append((m, out.history))
                    seconds[c] += out.seconds
                if out.contribution is not None:
                    state.local_weights[c] = out.contribution.weights
                    contributions.append(out.contribution)

            # The global model trains on the gtr shards of all countries for this
            # month, pooled (the server step runs after the country loop).
            gtr = plan.global_train(m)
            if state.global_weights is None and not contributions and len(gtr) == 0:
                if m == months[0]:
                    raise NoData(f"every shard of the first month ({m}) is empty")
                continue
            if state.global_weights is None:
                start = init_model(model_spec) if len(gtr) else aggregate(contributions, fed_cfg.scheme)
            else:
                prev = WeightedContribution(state.global_weights, max(state.global_sample_count, 1))
                start = aggregate_round(contributions, prev, fed_cfg)
            if len(gtr):
                t0 = time.perf_counter()
                new_gw, hist = train(start, model_spec, data.subset(gtr), round_config(train_cfg, GLOBAL, m))
                seconds[GLOBAL] += time.perf_counter() - t0
                state.histories[GLOBAL].append((m, hist))
                state.global_sample_count = len(gtr)
            else:
                new_gw = start
            state.global_weights = new_gw

            if checkpoint_hook is not None:
                for c in country_list:
                    if c in state.local_weights:
                        checkpoint_hook(m, c, state.local_weights[c])
                checkpoint_hook(m, GLOBAL, state.global_weights)
    finally:
        if pool:
            pool.shutdown()

    local_reports = {}
    for c in country_list:
        try:
            local_reports[c] = clients[c].evaluate(plan.local_test[c])
        except EmptyTestSet:
            local_reports[c] = None
    try:
        global_report = evaluate(state.global_weights, model_spec, plan.global_test, data)
    except EmptyTestSet:
        global_report = None
    return ExperimentReport(
        class_names=ctx.label_set,
        countries=country_list,
        local=local_reports,
        global_=global_report,
        histories=state.histories,
        train_seconds=seconds,
        local_weights=dict(state.local_weights),
        global_weights=state.global_weights,
    )


@dataclass
class CentralizedResult:
    report: metrics.MetricsReport
    weights: WeightSet
    history: TrainHistory
    seconds: float


def train_centralized(records, split_cfg, model_spec, train_cfg, *, ctx=None, plan=None,
                      country_list=None, months=None) -> CentralizedResult:
    """Pool every training shard (ltr and gtr of all cells) and train one model.

    Trains for ``len(months) * epochs`` epochs and evaluates on the same
    accumulated global test set as :func:`run_epic`.
    """
    ctx, data = _prepare(records, ctx, model_spec)
    if plan is None:
        country_list = country_list or sorted({r.country for r in records})
        months = months or sorted({r.month for r in records})
        plan = build_plan(records, country_list, months, split_cfg)
    train_idx = plan.train_indices()
    if len(train_idx) == 0:
        raise NoData("no training examples in any shard")
    cfg = round_config(train_cfg, CENTRALIZED, None, epochs=train_cfg.epochs * len(plan.months))
    t0 = time.perf_counter()
    weights, history = train(init_model(model_spec), model_spec, data.subset(train_idx), cfg)
    seconds = time.perf_counter() - t0
    report = evaluate(weights, model_spec, plan.global_test, data)
    return CentralizedResult(report, weights, history, seconds)


def run_centralized(records, split_cfg, model_spec, train_cfg, **kwargs) -> metrics.MetricsReport:
    return train_centralized(records, split_cfg, model_spec, train_cfg, **kwargs).report
