"""One-hot encoding of amino-acid sequences and lineage labels.

Sequences are encoded position by position as unit vectors over a 21-symbol
alphabet (20 canonical amino acids plus ``X``), concatenated, and padded with
trailing zeros up to a shared ``max_len``.  Anything outside the canonical
alphabet (ambiguity codes, gaps, stop ``*``) is folded into ``X``.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import SequenceTooLong, UnknownLabel

CANONICAL_AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
UNKNOWN_SYMBOL = "X"
FEATURE_DTYPE = np.float32


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[str, ...]
    index_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")
        if any(len(s) != 1 for s in self.symbols):
            raise ValueError("alphabet symbols must be single characters")
        object.__setattr__(self, "index_of", {s: i for i, s in enumerate(self.symbols)})
        # byte -> column lookup; unmapped bytes go to the last symbol (the unknown slot)
        lut = np.full(256, len(self.symbols) - 1, dtype=np.intp)
        for i, s in enumerate(self.symbols):
            if ord(s) < 256:
                lut[ord(s)] = i
        object.__setattr__(self, "_lut", lut)

    def __len__(self) -> int:
        return len(self.symbols)

    def indices(self, seq: str) -> np.ndarray:
        """Column index of every character; out-of-alphabet characters map to the last symbol."""
        raw = np.frombuffer(seq.encode("latin-1", errors="replace"), dtype=np.uint8)
        return self._lut[raw]


def default_alphabet() -> Alphabet:
    return Alphabet(tuple(CANONICAL_AMINO_ACIDS + UNKNOWN_SYMBOL))


@dataclass(frozen=True)
class SequenceRecord:
    id: str
    sequence: str
    country: str
    month: int
    lineage: str


@dataclass(frozen=True)
class EncodingContext:
    """Encoding parameters shared by every client and the server."""

    alphabet: Alphabet
    max_len: int
    label_set: tuple[str, ...]

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be positive")
        if len(set(self.label_set)) != len(self.label_set) or not self.label_set:
            raise ValueError("label_set must be non-empty with unique entries")
        object.__setattr__(self, "label_set", tuple(self.label_set))

    @property
    def feature_width(self) -> int:
        return self.max_len * len(self.alphabet)

    @property
    def num_classes(self) -> int:
        return len(self.label_set)

    def label_index(self, lineage: str) -> int:
        try:
            return self.label_set.index(lineage)
        except ValueError:
            raise UnknownLabel(lineage) from None

    @classmethod
    def from_records(cls, records: Sequence[SequenceRecord], label_set=None, max_len=None):
        """Build a context whose max_len is the corpus maximum (unless given)."""
        if max_len is None:
            max_len = max((len(r.sequence) for r in records), default=1)
        if label_set is None:
            label_set = sorted({r.lineage for r in records})
        return cls(default_alphabet(), int(max_len), tuple(label_set))


@dataclass
class EncodedDataset:
    features: np.ndarray  # (N, max_len * |alphabet|), float32 0/1
    labels: np.ndarray  # (N, K), float32 one-hot
    countries: np.ndarray  # (N,) object
    months: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def class_indices(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return EncodedDataset(
            self.features[idx], self.labels[idx], self.countries[idx], self.months[idx]
        )


def encode_sequence(seq: str, ctx: EncodingContext) -> np.ndarray:
    if len(seq) > ctx.max_len:
        raise SequenceTooLong(f"sequence of length {len(seq)} exceeds max_len {ctx.max_len}")
    k = len(ctx.alphabet)
    out = np.zeros(ctx.max_len * k, dtype=FEATURE_DTYPE)
    if seq:
        out[np.arange(len(seq)) * k + ctx.alphabet.indices(seq)] = 1.0
    return out


def encode_label(lineage: str, ctx: EncodingContext) -> np.ndarray:
    out = np.zeros(ctx.num_classes, dtype=FEATURE_DTYPE)
    out[ctx.label_index(lineage)] = 1.0
    return out


def decode_sequence(vector: np.ndarray, ctx: EncodingContext) -> str:
    """Inverse of :func:`encode_sequence` up to the first all-zero (padding) block."""
    blocks = np.asarray(vector).reshape(ctx.max_len, len(ctx.alphabet))
    chars = []
    for block in blocks:
        if not block.any():
            break
        chars.append(ctx.alphabet.symbols[int(block.argmax())])
    return "".join(chars)


def encode_dataset(records: Sequence[SequenceRecord], ctx: EncodingContext) -> EncodedDataset:
    n, k = len(records), len(ctx.alphabet)
    features = np.zeros((n, ctx.feature_width), dtype=FEATURE_DTYPE)
    labels = np.zeros((n, ctx.num_classes), dtype=FEATURE_DTYPE)
    for row, rec in enumerate(records):
        if len(rec.sequence) > ctx.max_len:
            raise SequenceTooLong(
                f"record {rec.id!r}: sequence of length {len(rec.sequence)} "
                f"exceeds max_len {ctx.max_len}"
            )
        if rec.lineage not in ctx.label_set:
            raise UnknownLabel(rec.lineage, rec.id)
        if rec.sequence:
            cols = np.arange(len(rec.sequence)) * k + ctx.alphabet.indices(rec.sequence)
            features[row, cols] = 1.0
        labels[row, ctx.label_set.index(rec.lineage)] = 1.0
    countries = np.array([r.country for r in records], dtype=object)
    months = np.array([r.month for r in records], dtype=np.int64)
    return EncodedDataset(features, labels, countries, months)


class OneHotSequenceEncoder(TransformerMixin, BaseEstimator):
    """Transformer turning raw sequences into flattened, zero-padded one-hot rows.

    Parameters
    ----------
    max_len : int, optional
        Padding target. When omitted, ``fit`` takes the longest training sequence.
    """

    def __init__(self, max_len=None):
        self.max_len = max_len

    def fit(self, X, y=None):
        seqs = _as_sequences(X)
        longest = max((len(s) for s in seqs), default=1)
        if self.max_len is not None and longest > self.max_len:
            raise SequenceTooLong(f"sequence of length {longest} exceeds max_len {self.max_len}")
        self.max_len_ = int(self.max_len if self.max_len is not None else max(longest, 1))
        self.alphabet_ = default_alphabet()
        self.n_features_out_ = self.max_len_ * len(self.alphabet_)
        return self

    def transform(self, X):
        check_is_fitted(self, "max_len_")
        ctx = EncodingContext(self.alphabet_, self.max_len_, ("_",))
        seqs = _as_sequences(X)
        out = np.zeros((len(seqs), self.n_features_out_), dtype=FEATURE_DTYPE)
        for i, s in enumerate(seqs):
            out[i] = encode_sequence(s, ctx)
        return out

    def inverse_transform(self, X):
        check_is_fitted(self, "max_len_")
        ctx = EncodingContext(self.alphabet_, self.max_len_, ("_",))
        return np.array([decode_sequence(row, ctx) for row in np.asarray(X)], dtype=object)


def _as_sequences(X) -> list[str]:
    if isinstance(X, str):
        raise TypeError("expected an iterable of sequences, got a single string")
    arr = np.asarray(X, dtype=object).ravel()
    return [str(s) for s in arr]


# --- dataset TSV --------------------------------------------------------------

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def parse_month(text: str) -> tuple[int, int]:
    m = _MONTH_RE.match(text.strip())
    if not m or not 1 <= int(m.group(2)) <= 12:
        raise ValueError(f"bad month {text!r}, expected YYYY-MM")
    return int(m.group(1)), int(m.group(2))


def month_index(text: str, study_start: str) -> int:
    y, m = parse_month(text)
    y0, m0 = parse_month(study_start)
    return (y - y0) * 12 + (m - m0)


def month_label(index: int, study_start: str) -> str:
    y0, m0 = parse_month(study_start)
    total = y0 * 12 + (m0 - 1) + index
    return f"{total // 12:04d}-{total % 12 + 1:02d}"


def read_records(path, study_start: str | None = None) -> tuple[list[SequenceRecord], str]:
    """Read a dataset TSV.

    Returns the records and the study start month used to index them (the
    earliest month in the file unless ``study_start`` is given).
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 tab-separated columns, got {len(parts)}")
            parse_month(parts[3])
            rows.append(parts)
    if study_start is None:
        study_start = min((r[3] for r in rows), default="2000-01")
    records = []
    for rid, seq, country, month, lineage in rows:
        idx = month_index(month, study_start)
        if idx < 0:
            raise ValueError(f"record {rid!r}: month {month} precedes study start {study_start}")
        if not seq:
            raise ValueError(f"record {rid!r}: empty sequence")
        records.append(SequenceRecord(rid, seq, country, idx, lineage))
    return records, study_start


def write_records(path, records: Iterable[SequenceRecord], study_start: str, comments=()) -> int:
    buf = io.StringIO()
    buf.write("# id\tsequence\tcountry\tmonth\tlineage\n")
    for c in comments:
        buf.write(f"# {c}\n")
    n = 0
    for r in records:
        buf.write(f"{r.id}\t{r.sequence}\t{r.country}\t{month_label(r.month, study_start)}\t{r.lineage}\n")
        n += 1
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return n
