"""Batch feature engineering and dataset analytics.

One-hot encodes the five categorical transaction fields against
deterministic schemas (vocabularies sorted lexicographically), splits
datasets 60/20/20 by seeded shuffle, balances training data by random
oversampling, and computes the tabular/plot datasets the report command
writes (payment-type table, daily seasonality, alerts-per-month grid,
correlation matrix).

Schema identity: schema_hash is the first 8 bytes (hex) of BLAKE2b over
the canonical JSON of the ordered vocabularies. Models remember the
hash of the schema they were trained against; scoring paths compare
hashes before trusting a vector's layout.

Unknown categories at encode time map to an all-zero block for that
feature and bump a warning counter instead of failing: the speed layer
must keep scoring even when live traffic drifts away from the training
vocabulary.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DegenerateClassError, SchemaMismatchError
from .txgen import Transaction

FEATURE_FIELDS = (
    "payment_currency",
    "received_currency",
    "sender_bank_location",
    "receiver_bank_location",
    "payment_type",
)

LABEL_COLUMN = "is_laundering"

TRAIN_FRACTION = 0.6
VALIDATION_FRACTION = 0.2

# non-leap simulated year
_MONTH_LENGTHS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_MONTH_STARTS = tuple(
    sum(_MONTH_LENGTHS[:i]) + 1 for i in range(12)
)  # day-of-year each month begins


def month_of_day(day: int) -> int:
    """Calendar month (1..12) for a simulated day index; wraps at 365."""
    d = (day - 1) % 365 + 1
    month = 12
    for i, start in enumerate(_MONTH_STARTS):
        if d < start:
            month = i
            break
    return month


@dataclass(frozen=True)
class EncodingSchema:
    vocabularies: dict[str, tuple[str, ...]]
    total_width: int
    schema_hash: str
    offsets: dict[str, int] = field(repr=False)

    def column_names(self) -> list[str]:
        names = []
        for feature in FEATURE_FIELDS:
            for code in self.vocabularies[feature]:
                names.append(f"{feature}={code}")
        return names

    def to_json(self) -> str:
        return json.dumps(
            {
                "vocabularies": {f: list(v) for f, v in self.vocabularies.items()},
                "total_width": self.total_width,
                "schema_hash": self.schema_hash,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "EncodingSchema":
        data = json.loads(text)
        vocabs = {f: tuple(v) for f, v in data["vocabularies"].items()}
        schema = _schema_from_vocabularies(vocabs)
        if schema.schema_hash != data.get("schema_hash"):
            raise SchemaMismatchError(
                "schema file hash does not match its vocabularies"
            )
        return schema


@dataclass
class EncodeCounters:
    unseen: int = 0


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: bool


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int


def _canonical_vocab_json(vocabs: dict[str, tuple[str, ...]]) -> str:
    return json.dumps(
        [[f, list(vocabs[f])] for f in FEATURE_FIELDS], separators=(",", ":")
    )


def _schema_from_vocabularies(vocabs: dict[str, tuple[str, ...]]) -> EncodingSchema:
    for feature in FEATURE_FIELDS:
        if feature not in vocabs:
            raise DataError(f"schema is missing feature {feature!r}")
    offsets = {}
    width = 0
    for feature in FEATURE_FIELDS:
        offsets[feature] = width
        width += len(vocabs[feature])
    digest = hashlib.blake2b(
        _canonical_vocab_json(vocabs).encode(), digest_size=8
    ).hexdigest()
    return EncodingSchema(
        vocabularies={f: tuple(vocabs[f]) for f in FEATURE_FIELDS},
        total_width=width,
        schema_hash=digest,
        offsets=offsets,
    )


def build_schema(transactions: Sequence[Transaction]) -> EncodingSchema:
    """Sorted distinct vocabulary per categorical feature.

    Input order never matters: vocabularies are sorted, so shuffled
    copies of the same dataset produce identical schemas and hashes.
    """
    if not transactions:
        raise DataError("cannot build a schema from an empty dataset")
    seen: dict[str, set] = {f: set() for f in FEATURE_FIELDS}
    for t in transactions:
        for f in FEATURE_FIELDS:
            seen[f].add(getattr(t, f))
    vocabs = {f: tuple(sorted(seen[f])) for f in FEATURE_FIELDS}
    return _schema_from_vocabularies(vocabs)


def encode(
    t: Transaction, schema: EncodingSchema, counters: EncodeCounters | None = None
) -> FeatureVector:
    """One-hot encode a single transaction.

    In-vocabulary records produce exactly one 1 per feature block; an
    unseen category leaves its block all-zero and increments the warning
    counter. Never raises on data values.
    """
    values = np.zeros(schema.total_width, dtype=np.float64)
    for feature in FEATURE_FIELDS:
        vocab = schema.vocabularies[feature]
        code = getattr(t, feature)
        # vocab is sorted: binary search
        lo = _vocab_index(vocab, code)
        if lo is None:
            if counters is not None:
                counters.unseen += 1
        else:
            values[schema.offsets[feature] + lo] = 1.0
    return FeatureVector(values=values, label=bool(t.is_laundering))


def _vocab_index(vocab: tuple[str, ...], code: str) -> int | None:
    i = bisect.bisect_left(vocab, code)
    if i < len(vocab) and vocab[i] == code:
        return i
    return None


def decode(vector: FeatureVector, schema: EncodingSchema) -> dict[str, str | None]:
    """Inverse of encode for in-vocabulary blocks; None for zero blocks."""
    if vector.values.shape[0] != schema.total_width:
        raise SchemaMismatchError(
            f"vector width {vector.values.shape[0]} != schema width {schema.total_width}"
        )
    out: dict[str, str | None] = {}
    for feature in FEATURE_FIELDS:
        vocab = schema.vocabularies[feature]
        start = schema.offsets[feature]
        block = vector.values[start : start + len(vocab)]
        hits = np.flatnonzero(block == 1.0)
        out[feature] = vocab[int(hits[0])] if hits.size else None
    return out


def encode_matrix(
    transactions: Sequence[Transaction], schema: EncodingSchema
) -> tuple[np.ndarray, np.ndarray, int]:
    """Vectorized encode: returns (X, labels, unseen_count).

    Row i of X equals encode(transactions[i]).values exactly.
    """
    n = len(transactions)
    X = np.zeros((n, schema.total_width), dtype=np.float64)
    y = np.zeros(n, dtype=bool)
    unseen = 0
    lookups = {
        f: {code: i for i, code in enumerate(schema.vocabularies[f])}
        for f in FEATURE_FIELDS
    }
    rows = np.arange(n)
    for feature in FEATURE_FIELDS:
        table = lookups[feature]
        offset = schema.offsets[feature]
        cols = np.full(n, -1, dtype=np.int64)
        for i, t in enumerate(transactions):
            cols[i] = table.get(getattr(t, feature), -1)
        hit = cols >= 0
        unseen += int(n - hit.sum())
        X[rows[hit], offset + cols[hit]] = 1.0
    for i, t in enumerate(transactions):
        y[i] = t.is_laundering
    return X, y, unseen


# ---------------------------------------------------------------------------
# splitting and balancing
# ---------------------------------------------------------------------------

def split_sizes(n: int) -> tuple[int, int, int]:
    train = math.floor(n * TRAIN_FRACTION)
    validation = math.floor(n * VALIDATION_FRACTION)
    return train, validation, n - train - validation


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle then contiguous 60/20/20 slices over range(n)."""
    if n < 5:
        raise DataError(f"dataset of {n} rows is too small to split 60/20/20")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    n_train, n_val, _ = split_sizes(n)
    return (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )


def split(vectors: Sequence, seed: int) -> DatasetSplit:
    idx_train, idx_val, idx_test = split_indices(len(vectors), seed)
    return DatasetSplit(
        train=[vectors[i] for i in idx_train],
        validation=[vectors[i] for i in idx_val],
        test=[vectors[i] for i in idx_test],
        seed=seed,
    )


def oversample_indices(labels: np.ndarray, seed: int) -> np.ndarray:
    """Index array balancing classes: all originals plus sampled minority.

    The minority class is resampled with replacement until both classes
    have equal counts. Already-balanced input comes back as the identity
    (range(n)): no draws at all.
    """
    labels = np.asarray(labels, dtype=bool)
    n = labels.shape[0]
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    if pos.size == 0 or neg.size == 0:
        raise DegenerateClassError(
            "oversampling requires both classes in the training set"
        )
    if pos.size == neg.size:
        return np.arange(n)
    minority = pos if pos.size < neg.size else neg
    deficit = abs(int(neg.size) - int(pos.size))
    rng = np.random.Generator(np.random.PCG64(seed))
    extra = minority[rng.integers(0, minority.size, size=deficit)]
    return np.concatenate([np.arange(n), extra])


def oversample(vectors: Sequence[FeatureVector], seed: int) -> list[FeatureVector]:
    labels = np.array([v.label for v in vectors], dtype=bool)
    idx = oversample_indices(labels, seed)
    return [vectors[i] for i in idx]


# ---------------------------------------------------------------------------
# correlation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationResult:
    matrix: np.ndarray  # (width+1) x (width+1); label is the last column
    constant_columns: tuple[int, ...]


def correlation_from_arrays(X: np.ndarray, labels: np.ndarray) -> CorrelationResult:
    """Pearson correlation over encoded columns plus the label column.

    Zero-variance columns contribute 0 everywhere (flagged), including
    their own diagonal entry; all other diagonal entries are exactly 1.
    """
    if X.ndim != 2 or X.shape[0] != np.asarray(labels).shape[0]:
        raise DataError("feature matrix and labels must align")
    if X.shape[0] < 2:
        raise DataError("correlation requires at least 2 rows")
    M = np.column_stack([X.astype(np.float64), np.asarray(labels, dtype=np.float64)])
    centered = M - M.mean(axis=0)
    cov = centered.T @ centered
    var = np.diag(cov).copy()
    constant = np.flatnonzero(var == 0.0)
    scale = np.sqrt(var)
    scale[var == 0.0] = 1.0  # avoid 0/0; rows get zeroed below
    corr = cov / np.outer(scale, scale)
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    keep = np.setdiff1d(np.arange(M.shape[1]), constant)
    corr[keep, keep] = 1.0
    return CorrelationResult(matrix=corr, constant_columns=tuple(int(c) for c in constant))


def correlation_matrix(vectors: Sequence[FeatureVector]) -> CorrelationResult:
    if len(vectors) < 2:
        raise DataError("correlation requires at least 2 rows")
    X = np.stack([v.values for v in vectors])
    labels = np.array([v.label for v in vectors], dtype=bool)
    return correlation_from_arrays(X, labels)


# ---------------------------------------------------------------------------
# report datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PaymentTypeRow:
    payment_type: str
    count: int
    fraud_count: int
    fraud_percent: float  # 100 * fraud/count, half-up to 2 decimals


def payment_type_table(transactions: Iterable[Transaction]) -> list[PaymentTypeRow]:
    """Per-type counts, fraud counts, and fraud percent, sorted by count desc."""
    counts: dict[str, int] = {}
    frauds: dict[str, int] = {}
    for t in transactions:
        counts[t.payment_type] = counts.get(t.payment_type, 0) + 1
        if t.is_laundering:
            frauds[t.payment_type] = frauds.get(t.payment_type, 0) + 1
    rows = []
    for ptype in counts:
        c = counts[ptype]
        f = frauds.get(ptype, 0)
        percent = float(
            (Decimal(100 * f) / Decimal(c)).quantize(
                Decimal("0.01"), rounding=ROUND_HALF_UP
            )
        )
        rows.append(PaymentTypeRow(ptype, c, f, percent))
    rows.sort(key=lambda r: (-r.count, r.payment_type))
    return rows


@dataclass(frozen=True)
class DayAmounts:
    day: int
    avg_amount_all: float
    avg_amount_fraud: float | None  # None marks fraud-free days


def seasonality_series(transactions: Iterable[Transaction]) -> list[DayAmounts]:
    sums: dict[int, list[float]] = {}
    for t in transactions:
        entry = sums.setdefault(t.day, [0.0, 0, 0.0, 0])
        entry[0] += t.amount
        entry[1] += 1
        if t.is_laundering:
            entry[2] += t.amount
            entry[3] += 1
    out = []
    for day in sorted(sums):
        total, n, fraud_total, fraud_n = sums[day]
        out.append(
            DayAmounts(
                day=day,
                avg_amount_all=total / n,
                avg_amount_fraud=(fraud_total / fraud_n) if fraud_n else None,
            )
        )
    return out


@dataclass(frozen=True)
class AlertGrid:
    payment_types: tuple[str, ...]
    counts: np.ndarray  # shape (12, len(payment_types)); row i = month i+1

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def alerts_per_month(alerts: Iterable, transactions: Iterable[Transaction]) -> AlertGrid:
    """12 x payment-type counts; alerts join transactions on transaction_id.

    Every alert must reference a known transaction. Each alert row counts
    once, so the grand total always equals the number of alerts.
    """
    tx_by_id: dict[int, Transaction] = {t.id: t for t in transactions}
    types = tuple(sorted({t.payment_type for t in tx_by_id.values()}))
    col = {ptype: i for i, ptype in enumerate(types)}
    counts = np.zeros((12, max(len(types), 1)), dtype=np.int64)
    for alert in alerts:
        tx_id = alert.transaction_id if hasattr(alert, "transaction_id") else alert["transaction_id"]
        t = tx_by_id.get(tx_id)
        if t is None:
            raise DataError(f"alert references unknown transaction id {tx_id}")
        counts[month_of_day(t.day) - 1, col[t.payment_type]] += 1
    if not types:
        counts = np.zeros((12, 0), dtype=np.int64)
    return AlertGrid(payment_types=types, counts=counts)
