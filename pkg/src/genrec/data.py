"""Interaction logs, fixed-length windows, chronological splits, synthetic data.

Raw logs are tab-separated `user_id<TAB>item_id<TAB>timestamp` lines
(`#` comments ignored; malformed lines are counted, reported and skipped).
Sequencing keeps items with at least `min_item_count` interactions (counted
once on the raw log, not iterated), drops users left with fewer than
`min_seq_len` interactions, and emits one example per usable target position:
the target's preceding items, truncated to the last `window_length` and
left-padded with index 0.

Examples are ordered by their last-interaction timestamp (stable), assigned a
stable uid equal to their position in that order, and split 8:1:1 with floor
boundaries (remainder goes to the test split). Vocabulary indices are dense,
start at 1 (0 is padding) and are assigned by sorted external id.

The synthetic generator plants a next-item law: each sequence starts uniform,
then follows the law's row of the current item with probability
(1 - noise_rate) and a uniform item otherwise. Timestamps interleave
sequences round-robin so the chronological split cuts across all of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import ContractViolation, DataError, EmptyInputError, FormatError

CACHE_FORMAT_VERSION = 1
PADDING_INDEX = 0


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    item: str
    timestamp: int


@dataclass
class IngestResult:
    records: list[InteractionRecord]
    malformed: int


@dataclass(frozen=True)
class SequenceExample:
    history: tuple[int, ...]   # window_length ids, left-padded with 0
    target: int                # dense index >= 1
    last_ts: int               # timestamp of the target interaction
    uid: int                   # stable id: position in chronological order


@dataclass
class SequenceDataset:
    train: list[SequenceExample]
    validation: list[SequenceExample]
    test: list[SequenceExample]
    vocab: dict[str, int]
    window_length: int = 10

    @property
    def num_items(self) -> int:
        return len(self.vocab)

    def all_examples(self) -> list[SequenceExample]:
        return self.train + self.validation + self.test


def ingest_interactions(path) -> IngestResult:
    """Parse a raw interaction log; lenient about malformed lines."""
    records: list[InteractionRecord] = []
    malformed = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0] or not parts[1]:
                malformed += 1
                continue
            try:
                ts = int(parts[2])
            except ValueError:
                malformed += 1
                continue
            records.append(InteractionRecord(parts[0], parts[1], ts))
    if not records:
        raise EmptyInputError(f"no valid interaction records in {path}")
    return IngestResult(records, malformed)


def build_sequences(records: list[InteractionRecord], min_item_count: int = 5,
                    min_seq_len: int = 3, window_length: int = 10
                    ) -> tuple[list[tuple[tuple[int, ...], int, int]], dict[str, int]]:
    """Per-user windows -> (pre-split drafts as (history, target, last_ts), vocab)."""
    if not records:
        raise EmptyInputError("empty interaction log")
    counts: dict[str, int] = {}
    for r in records:
        counts[r.item] = counts.get(r.item, 0) + 1
    kept_items = {it for it, c in counts.items() if c >= min_item_count}

    per_user: dict[str, list[InteractionRecord]] = {}
    for r in records:
        if r.item in kept_items:
            per_user.setdefault(r.user, []).append(r)
    per_user = {u: rs for u, rs in per_user.items() if len(rs) >= min_seq_len}
    if not per_user:
        raise DataError("all data filtered out by item/sequence thresholds")

    used_items = {r.item for rs in per_user.values() for r in rs}
    vocab = {item: i + 1 for i, item in enumerate(sorted(used_items))}

    drafts: list[tuple[tuple[int, ...], int, int]] = []
    for user in sorted(per_user):
        rs = sorted(per_user[user], key=lambda r: r.timestamp)
        seq = [vocab[r.item] for r in rs]
        stamps = [r.timestamp for r in rs]
        for n in range(1, len(seq)):
            hist = seq[max(0, n - window_length):n]
            hist = [PADDING_INDEX] * (window_length - len(hist)) + hist
            drafts.append((tuple(hist), seq[n], stamps[n]))
    return drafts, vocab


def split_chronological(drafts, vocab: dict[str, int],
                        window_length: int = 10) -> SequenceDataset:
    """Stable-sort by last timestamp, assign uids, slice 8:1:1 (floor)."""
    if len(drafts) < 10:
        raise ContractViolation("need at least 10 examples for an 8:1:1 split")
    ordered = sorted(drafts, key=lambda d: d[2])
    examples = [SequenceExample(h, t, ts, uid)
                for uid, (h, t, ts) in enumerate(ordered)]
    n = len(examples)
    n_train = int(np.floor(0.8 * n))
    n_val = int(np.floor(0.1 * n))
    return SequenceDataset(examples[:n_train],
                           examples[n_train:n_train + n_val],
                           examples[n_train + n_val:],
                           vocab, window_length)


# ---------------------------------------------------------------------------
# Synthetic data with a planted next-item law
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    num_items: int = 100
    num_sequences: int = 500
    seq_len: int = 11
    noise_rate: float = 0.1
    seed: int = 0
    transition: np.ndarray | None = None  # None -> seeded permutation law

    def validate(self) -> None:
        if self.num_items < 1 or self.num_sequences < 1 or self.seq_len < 3:
            raise ContractViolation("num_items, num_sequences >= 1 and seq_len >= 3")
        if not (0.0 <= self.noise_rate <= 1.0):
            raise ContractViolation("noise_rate must lie in [0, 1]")
        if self.transition is not None:
            m = np.asarray(self.transition, dtype=np.float64)
            if m.shape != (self.num_items, self.num_items):
                raise ContractViolation("transition matrix shape mismatch")
            if not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
                raise ContractViolation("transition rows must sum to 1")


def planted_permutation(spec: SyntheticSpec) -> np.ndarray:
    """The permutation law used when no explicit transition is given."""
    return rng.stream(spec.seed, rng.SYNTH_LAW).permutation(spec.num_items)


def synth_interactions(spec: SyntheticSpec) -> list[InteractionRecord]:
    """Raw records for the planted-law generator (round-trips through ingest)."""
    spec.validate()
    perm = planted_permutation(spec) if spec.transition is None else None
    matrix = None if perm is not None else np.asarray(spec.transition, dtype=np.float64)
    records: list[InteractionRecord] = []
    for k in range(spec.num_sequences):
        g = rng.stream(spec.seed, rng.SYNTH, k)
        cur = int(g.integers(spec.num_items))
        items = [cur]
        for _ in range(spec.seq_len - 1):
            if g.random() < spec.noise_rate:
                cur = int(g.integers(spec.num_items))
            elif perm is not None:
                cur = int(perm[cur])
            else:
                cur = int(g.choice(spec.num_items, p=matrix[cur]))
            items.append(cur)
        user = f"u{k:05d}"
        for j, it in enumerate(items):
            records.append(InteractionRecord(user, f"i{it + 1:05d}",
                                             j * spec.num_sequences + k))
    return records


def synth_generate(spec: SyntheticSpec, min_item_count: int = 5,
                   min_seq_len: int = 3, window_length: int = 10) -> SequenceDataset:
    drafts, vocab = build_sequences(synth_interactions(spec), min_item_count,
                                    min_seq_len, window_length)
    return split_chronological(drafts, vocab, window_length)


def write_log(records: list[InteractionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.user}\t{r.item}\t{r.timestamp}\n")


# ---------------------------------------------------------------------------
# Dataset cache (versioned, round-trip exact)
# ---------------------------------------------------------------------------

def _pack(examples: list[SequenceExample]) -> list:
    return [[list(e.history), e.target, e.last_ts, e.uid] for e in examples]


def _unpack(rows) -> list[SequenceExample]:
    return [SequenceExample(tuple(h), t, ts, uid) for h, t, ts, uid in rows]


def save_dataset(ds: SequenceDataset, path) -> None:
    doc = {
        "format_version": CACHE_FORMAT_VERSION,
        "window_length": ds.window_length,
        "vocab": ds.vocab,
        "train": _pack(ds.train),
        "validation": _pack(ds.validation),
        "test": _pack(ds.test),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_dataset(path) -> SequenceDataset:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"corrupt dataset cache {path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("format_version") != CACHE_FORMAT_VERSION:
        raise FormatError(f"unsupported dataset cache version in {path}")
    return SequenceDataset(_unpack(doc["train"]), _unpack(doc["validation"]),
                           _unpack(doc["test"]), dict(doc["vocab"]),
                           int(doc["window_length"]))
