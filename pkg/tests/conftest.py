import numpy as np
import pytest

from epic.datagen import CountrySpec, LineageSpec, SyntheticSpec, generate
from epic.encoding import EncodingContext, SequenceRecord

_ACCEPTANCE = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    _ACCEPTANCE[number] = (title, passed, str(call.excinfo.value).splitlines()[0] if call.excinfo else "")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, why = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}"
        if why:
            line += f"  -- {why[:160]}"
        terminalreporter.write_line(line)


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(
        lineages=(LineageSpec("A", 3, 3.0), LineageSpec("B", 3, 2.0), LineageSpec("C", 4, 1.0)),
        countries=(CountrySpec("North", 2.0), CountrySpec("South", 1.0)),
        ancestral_length=12,
        months=2,
        total_samples=240,
        noise_mutations_per_sample=1,
        seed=5,
    )


@pytest.fixture
def tiny_corpus(tiny_spec):
    records = generate(tiny_spec)
    ctx = EncodingContext.from_records(records, label_set=tiny_spec.lineage_names)
    return tiny_spec, records, ctx


def make_records(months, countries, lineages, seqs=None):
    seqs = seqs or ["AC"] * len(months)
    return [
        SequenceRecord(f"r{i}", s, c, m, l)
        for i, (m, c, l, s) in enumerate(zip(months, countries, lineages, seqs))
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
