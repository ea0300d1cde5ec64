import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from epic.encoding import (
    CANONICAL_AMINO_ACIDS,
    Alphabet,
    EncodingContext,
    OneHotSequenceEncoder,
    SequenceRecord,
    decode_sequence,
    default_alphabet,
    encode_dataset,
    encode_label,
    encode_sequence,
    month_index,
    month_label,
    read_records,
    write_records,
)
from epic.exceptions import SequenceTooLong, UnknownLabel

LINEAGES = ("Alpha", "Beta", "Delta", "Gamma", "Epsilon")


def ctx_ac(max_len, labels=("x",)):
    return EncodingContext(Alphabet(("A", "C")), max_len, labels)


def test_alphabet_invariants():
    a = default_alphabet()
    assert len(a) == 21
    assert a.symbols[-1] == "X"
    assert all(a.index_of[s] == i for i, s in enumerate(a.symbols))
    with pytest.raises(ValueError):
        Alphabet(("A", "A"))


def test_encode_sequence_examples():
    np.testing.assert_array_equal(encode_sequence("AC", ctx_ac(3)), [1, 0, 0, 1, 0, 0])
    np.testing.assert_array_equal(encode_sequence("", ctx_ac(2)), [0, 0, 0, 0])
    full = EncodingContext(default_alphabet(), 1, ("x",))
    v = encode_sequence("B", full)
    assert v.sum() == 1 and v[20] == 1
    assert v.dtype == np.float32


@pytest.mark.parametrize("code", list("BZJUO*-.") + ["a"])
def test_out_of_alphabet_characters_map_to_unknown(code):
    ctx = EncodingContext(default_alphabet(), 1, ("x",))
    assert encode_sequence(code, ctx).argmax() == 20


def test_sequence_too_long():
    with pytest.raises(SequenceTooLong):
        encode_sequence("ACA", ctx_ac(2))


def test_encode_label():
    ctx = EncodingContext(default_alphabet(), 1, LINEAGES)
    np.testing.assert_array_equal(encode_label("Alpha", ctx), [1, 0, 0, 0, 0])
    np.testing.assert_array_equal(encode_label("Epsilon", ctx), [0, 0, 0, 0, 1])
    with pytest.raises(UnknownLabel, match="Omicron"):
        encode_label("Omicron", ctx)


def test_encode_dataset_shapes():
    ctx = ctx_ac(2, ("p", "q", "r"))
    recs = [SequenceRecord("a", "AC", "UK", 0, "q"), SequenceRecord("b", "C", "US", 1, "r")]
    ds = encode_dataset(recs, ctx)
    assert ds.features.shape == (2, 4) and ds.labels.shape == (2, 3)
    np.testing.assert_array_equal(ds.features, [[1, 0, 0, 1], [0, 1, 0, 0]])
    np.testing.assert_array_equal(ds.class_indices, [1, 2])
    assert list(ds.countries) == ["UK", "US"] and list(ds.months) == [0, 1]

    empty = encode_dataset([], ctx)
    assert empty.features.shape == (0, 4) and len(empty) == 0


def test_spike_length_feature_width():
    ctx = EncodingContext(default_alphabet(), 1274, LINEAGES)
    assert ctx.feature_width == 1274 * 21 == 26754
    rec = SequenceRecord("s", "A" * 1274, "UK", 0, "Alpha")
    assert encode_dataset([rec], ctx).features.shape == (1, 26754)


def test_encode_dataset_reports_offending_record():
    ctx = ctx_ac(2, ("p",))
    with pytest.raises(SequenceTooLong, match="'long'"):
        encode_dataset([SequenceRecord("long", "ACA", "UK", 0, "p")], ctx)
    with pytest.raises(UnknownLabel, match="'bad'"):
        encode_dataset([SequenceRecord("bad", "AC", "UK", 0, "zz")], ctx)


canonical = st.text(alphabet=CANONICAL_AMINO_ACIDS, max_size=30)


@given(canonical)
def test_round_trip_and_row_sparsity(seq):
    ctx = EncodingContext(default_alphabet(), 30, ("x",))
    v = encode_sequence(seq, ctx)
    assert decode_sequence(v, ctx) == seq
    assert v.sum() == len(seq)
    assert not v[len(seq) * 21 :].any()


@settings(max_examples=50)
@given(st.text(max_size=20))
def test_encoding_is_pure(seq):
    ctx = EncodingContext(default_alphabet(), 20, ("x",))
    a, b = encode_sequence(seq, ctx), encode_sequence(seq, ctx)
    assert a.tobytes() == b.tobytes()
    # every position of any string gets exactly one column (unknowns fold into X)
    assert a.sum() == len(seq)


def test_transformer_estimator_api():
    enc = OneHotSequenceEncoder()
    X = enc.fit_transform(["AC", "ACDE"])
    assert enc.max_len_ == 4 and X.shape == (2, 84)
    assert list(enc.inverse_transform(X)) == ["AC", "ACDE"]
    assert clone(enc).get_params() == {"max_len": None}
    with pytest.raises(SequenceTooLong):
        OneHotSequenceEncoder(max_len=2).fit(["ACD"])


def test_month_labels():
    assert month_index("2021-03", "2020-12") == 3
    assert month_label(3, "2020-12") == "2021-03"
    with pytest.raises(ValueError):
        month_index("2021-13", "2021-01")


def test_tsv_round_trip(tmp_path):
    recs = [SequenceRecord("a", "ACD", "UK", 0, "Alpha"), SequenceRecord("b", "WY", "USA", 2, "Beta")]
    path = tmp_path / "d.tsv"
    assert write_records(path, recs, "2021-01", comments=["hello"]) == 2
    back, start = read_records(path)
    assert start == "2021-01" and back == recs
    text = path.read_text()
    assert text.count("\n") == 4 and "2021-03" in text


def test_tsv_rejects_bad_lines(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("a\tACD\tUK\n")
    with pytest.raises(ValueError, match="5 tab-separated"):
        read_records(path)
