import ast
import inspect

import numpy as np
import pytest

from epic import orchestrator
from epic.encoding import encode_dataset
from epic.exceptions import EmptyTestSet, NoData
from epic.federated import FedConfig, WeightedContribution, aggregate
from epic.nn import ModelSpec, TrainConfig, init_model, train
from epic.orchestrator import (
    GLOBAL,
    evaluate,
    model_spec_for,
    round_config,
    run_centralized,
    run_epic,
    train_centralized,
)
from epic.partition import Cell, PartitionPlan, SplitConfig, build_plan

TRAIN = TrainConfig(epochs=2, batch_size=16, shuffle_seed=4)
ARCH = dict(hidden_dims=(16, 8), seed=11)


def test_report_shape(tiny_corpus):
    spec, records, ctx = tiny_corpus
    report = run_epic(records, spec.country_names, range(spec.months), SplitConfig(seed=1),
                      model_spec_for(ctx, **ARCH), TRAIN, ctx=ctx)
    assert set(report.local) == {"North", "South"}
    assert report.global_ is not None and report.global_.n > 0
    assert [m for m, _ in report.histories[GLOBAL]] == [0, 1]
    assert all(len(h) == TRAIN.epochs for _, h in report.histories["North"])
    d = report.to_dict()
    assert set(d) == {"classes", "global", "local", "centralized"}
    rows = list(report.history_rows())
    assert len(rows) == 3 * 2 * TRAIN.epochs


def test_single_country_single_month_degenerates_to_plain_training(tiny_corpus):
    _, records, ctx = tiny_corpus
    records = [r for r in records if r.month == 0 and r.country == "North"]
    mspec = model_spec_for(ctx, **ARCH)
    split = SplitConfig(seed=2)
    report = run_epic(records, ["North"], [0], split, mspec, TRAIN, ctx=ctx)
    plan = build_plan(records, ["North"], [0], split)
    data = encode_dataset(records, ctx)
    expected, _ = train(init_model(mspec), mspec, data.subset(plan.cell(0, "North").ltr),
                        round_config(TRAIN, "local", 0))
    assert report.local_weights["North"].bitwise_equal(expected)


def _mirrored_plan(records_a, n, months):
    """Plan in which country B's cells are country A's cells shifted by n."""
    base = build_plan(records_a, ["A"], months, SplitConfig(seed=8))
    cells = {}
    for m in months:
        a = base.cell(m, "A")
        cells[m, "A"] = a
        cells[m, "B"] = Cell(m, "B", a.gt + n, a.gtr + n, a.ltr + n, a.lt + n)
    return PartitionPlan(tuple(months), ("A", "B"), cells, base.config)


def test_identical_countries_produce_identical_weights(tiny_corpus):
    _, records, ctx = tiny_corpus
    a = [r.__class__(r.id, r.sequence, "A", r.month, r.lineage) for r in records]
    b = [r.__class__(r.id + "b", r.sequence, "B", r.month, r.lineage) for r in records]
    plan = _mirrored_plan(a, len(a), [0])
    mspec = model_spec_for(ctx, **ARCH)
    report = run_epic(a + b, ["A", "B"], [0], plan.config, mspec, TRAIN, ctx=ctx, plan=plan)
    wa, wb = report.local_weights["A"], report.local_weights["B"]
    assert wa.bitwise_equal(wb)
    assert aggregate([WeightedContribution(wa, 5), WeightedContribution(wb, 5)]).bitwise_equal(wa)


def test_empty_shard_carries_weights_forward(tiny_corpus):
    _, records, ctx = tiny_corpus
    # South has no records in month 1
    records = [r for r in records if not (r.country == "South" and r.month == 1)]
    seen = {}
    run_epic(records, ["North", "South"], [0, 1], SplitConfig(seed=3), model_spec_for(ctx, **ARCH), TRAIN,
             ctx=ctx, checkpoint_hook=lambda m, name, w: seen.__setitem__((m, name), w))
    assert seen[1, "South"].bitwise_equal(seen[0, "South"])
    assert not seen[1, "North"].bitwise_equal(seen[0, "North"])


def test_parallel_matches_serial(tiny_corpus):
    spec, records, ctx = tiny_corpus
    args = (records, spec.country_names, range(spec.months), SplitConfig(seed=1), model_spec_for(ctx, **ARCH), TRAIN)
    serial = run_epic(*args, ctx=ctx)
    threaded = run_epic(*args, ctx=ctx, parallel=4)
    assert serial.to_dict() == threaded.to_dict()
    assert serial.global_weights.bitwise_equal(threaded.global_weights)
    assert all(serial.local_weights[c].bitwise_equal(threaded.local_weights[c]) for c in spec.country_names)
    assert list(serial.history_rows()) == list(threaded.history_rows())


def test_no_data_in_first_month(tiny_corpus):
    _, records, ctx = tiny_corpus
    records = [r for r in records if r.month == 1]
    with pytest.raises(NoData):
        run_epic(records, ["North", "South"], [0, 1], SplitConfig(), model_spec_for(ctx, **ARCH), TRAIN, ctx=ctx)
    with pytest.raises(NoData):
        run_epic([], ["North"], [0], SplitConfig(), model_spec_for(ctx, **ARCH), TRAIN, ctx=ctx)


def test_evaluate_perfect_and_empty(tiny_corpus):
    _, records, ctx = tiny_corpus
    data = encode_dataset(records[:30], ctx)
    mspec = ModelSpec(ctx.feature_width, ctx.num_classes, hidden_dims=())
    w, _ = train(init_model(mspec), mspec, data, TrainConfig(epochs=60, learning_rate=0.05))
    rep = evaluate(w, mspec, np.arange(30), data)
    assert rep.accuracy == 1.0 and rep.f1_macro == 1.0 and rep.roc_auc_macro == 1.0
    with pytest.raises(EmptyTestSet):
        evaluate(w, mspec, [], data)


def test_centralized_uses_the_same_global_test_set(tiny_corpus):
    spec, records, ctx = tiny_corpus
    split = SplitConfig(seed=1)
    mspec = model_spec_for(ctx, **ARCH)
    plan = build_plan(records, spec.country_names, range(spec.months), split)
    central = train_centralized(records, split, mspec, TRAIN, ctx=ctx, plan=plan)
    epic = run_epic(records, spec.country_names, range(spec.months), split, mspec, TRAIN, ctx=ctx, plan=plan)
    assert central.report.n == epic.global_.n == len(plan.global_test)
    assert len(central.history) == TRAIN.epochs * spec.months
    assert run_centralized(records, split, mspec, TRAIN, ctx=ctx, plan=plan).accuracy == central.report.accuracy
    with pytest.raises(NoData):
        run_centralized([], split, mspec, TRAIN, ctx=ctx)


def test_centralized_on_separable_data_is_perfect(tiny_corpus):
    spec, records, ctx = tiny_corpus
    rep = run_centralized(records, SplitConfig(seed=1), model_spec_for(ctx, **ARCH),
                          TrainConfig(epochs=40, shuffle_seed=1), ctx=ctx,
                          country_list=spec.country_names, months=range(spec.months))
    assert rep.accuracy == 1.0


def test_round_config_seeds_depend_on_role_and_month():
    a = round_config(TRAIN, "local", 0)
    assert a.shuffle_seed == round_config(TRAIN, "local", 0).shuffle_seed
    assert a.shuffle_seed != round_config(TRAIN, "local", 1).shuffle_seed
    assert a.shuffle_seed != round_config(TRAIN, GLOBAL, 0).shuffle_seed
    assert round_config(TRAIN, "x", epochs=7).epochs == 7


def test_client_refuses_foreign_rows(tiny_corpus):
    _, records, ctx = tiny_corpus
    data = encode_dataset(records, ctx)
    rows = np.flatnonzero(data.countries == "North")
    client = orchestrator.Client("North", rows, data.subset(rows), model_spec_for(ctx, **ARCH))
    foreign = np.flatnonzero(data.countries == "South")[:3]
    with pytest.raises(KeyError):
        client.local_round(0, foreign, None, TRAIN, FedConfig())


def test_clients_expose_no_row_accessor():
    public = [n for n in dir(orchestrator.Client) if not n.startswith("_")]
    assert sorted(public) == ["contribution", "evaluate", "local_round", "weights"]
    # server side of run_epic hands aggregation nothing but contributions / weight sets
    tree = ast.parse(inspect.getsource(orchestrator.run_epic))
    calls = [n for n in ast.walk(tree) if isinstance(n, ast.Call) and getattr(n.func, "id", "") in
             ("aggregate", "aggregate_round", "merge_local_global")]
    assert calls
    for call in calls:
        for arg in ast.walk(call):
            assert not (isinstance(arg, ast.Name) and arg.id in ("data", "records", "gtr"))
