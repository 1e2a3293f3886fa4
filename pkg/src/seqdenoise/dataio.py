"""Interaction-log ingestion, sequence building, splits, and synthetic noise."""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD_INDEX = 0  # dense index 0 is reserved for padding everywhere

DEFAULT_COLUMNS = ("user", "item", "timestamp", "rating")


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int
    rating: Optional[float] = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("user_id and item_id must be non-empty")
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")


@dataclass
class UserSequence:
    """One user's chronologically ordered item indices (dense, 1-based)."""

    user_index: int
    items: list[int]

    @property
    def length(self) -> int:
        return len(self.items)


@dataclass
class SequenceCorpus:
    """Filtered sequences plus the dense index maps that produced them."""

    sequences: list[UserSequence]
    num_users: int
    num_items: int
    user_index: dict[str, int] = field(repr=False)
    item_index: dict[str, int] = field(repr=False)


@dataclass
class SplitTriplet:
    """Leave-one-out split: test = last item, valid = second-to-last."""

    train_prefix: UserSequence
    valid_target: int
    test_target: int


@dataclass
class NoisyDatasetView:
    """Sequences with synthetic insertions; mask entry True = inserted."""

    sequences: list[UserSequence]
    injected_masks: list[np.ndarray]

    def clean_sequence(self, i: int) -> list[int]:
        seq, mask = self.sequences[i], self.injected_masks[i]
        return [v for v, m in zip(seq.items, mask) if not m]


class DataError(Exception):
    """Fatal ingestion/filtering problem (unreadable file, empty result)."""


def load_interactions(
    path: str,
    delimiter: str = "\t",
    columns: Sequence[str] = DEFAULT_COLUMNS,
) -> list[InteractionRecord]:
    """Parse a delimiter-separated interaction log into records, in file order.

    Malformed lines are skipped; the skip count is logged as one warning.
    ``columns`` names the file's column order (must contain user, item,
    timestamp; rating optional).
    """
    columns = list(columns)
    for required in ("user", "item", "timestamp"):
        if required not in columns:
            raise ValueError(f"columns must include {required!r}, got {columns}")
    u_col = columns.index("user")
    i_col = columns.index("item")
    t_col = columns.index("timestamp")
    r_col = columns.index("rating") if "rating" in columns else None
    min_cols = max(u_col, i_col, t_col) + 1

    records: list[InteractionRecord] = []
    skipped = 0
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read interaction file {path}: {e}") from e
    with fh:
        for line in fh:
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(delimiter)
            if len(parts) < min_cols:
                skipped += 1
                continue
            rating = None
            if r_col is not None and len(parts) > r_col and parts[r_col] != "":
                try:
                    rating = float(parts[r_col])
                except ValueError:
                    skipped += 1
                    continue
            try:
                rec = InteractionRecord(
                    user_id=parts[u_col].strip(),
                    item_id=parts[i_col].strip(),
                    timestamp=int(parts[t_col]),
                    rating=rating,
                )
            except ValueError:
                skipped += 1
                continue
            records.append(rec)
    if skipped:
        logger.warning("load_interactions: skipped %d malformed lines in %s", skipped, path)
    logger.info("load_interactions: %d records from %s", len(records), path)
    return records


def build_sequences(
    records: list[InteractionRecord],
    min_seq_len: int = 5,
    min_item_freq: int = 5,
    max_len: int = 50,
    min_rating: Optional[float] = None,
) -> SequenceCorpus:
    """Build per-user chronological sequences with fixed-point filtering.

    Items below ``min_item_freq`` and users below ``min_seq_len`` are removed
    alternately until neither rule fires, then each sequence keeps its most
    recent ``max_len`` items. Dense indices are 1-based (0 = padding).
    ``min_rating`` optionally drops low-rated interactions up front (used by
    the noise-injection experiment protocol on rated datasets).
    """
    if min_seq_len < 2:
        raise ValueError("min_seq_len must be >= 2 (leave-one-out needs >= 3 positions)")
    if min_rating is not None:
        records = [r for r in records if r.rating is None or r.rating >= min_rating]

    # Stable sort by timestamp keeps input order for ties.
    per_user: dict[str, list[tuple[int, int, str]]] = defaultdict(list)
    for order, rec in enumerate(records):
        per_user[rec.user_id].append((rec.timestamp, order, rec.item_id))
    user_items: dict[str, list[str]] = {}
    for uid, rows in per_user.items():
        rows.sort(key=lambda r: (r[0], r[1]))
        user_items[uid] = [item for _, _, item in rows]

    # Iterate item-frequency then user-length filtering to a fixed point.
    while True:
        freq = Counter(item for items in user_items.values() for item in items)
        keep_items = {item for item, c in freq.items() if c >= min_item_freq}
        items_removed = False
        pruned: dict[str, list[str]] = {}
        for uid, items in user_items.items():
            kept = [it for it in items if it in keep_items]
            if len(kept) != len(items):
                items_removed = True
            if len(kept) >= min_seq_len:
                pruned[uid] = kept
        if not pruned:
            raise DataError(
                f"no data left after filtering (min_seq_len={min_seq_len}, "
                f"min_item_freq={min_item_freq})"
            )
        users_removed = pruned.keys() != user_items.keys()
        user_items = pruned
        if not items_removed and not users_removed:
            break

    # Dense maps: deterministic order = first appearance in sorted user id order.
    user_ids = sorted(user_items.keys())
    user_index = {uid: k + 1 for k, uid in enumerate(user_ids)}
    item_ids = sorted({item for items in user_items.values() for item in items})
    item_index = {iid: k + 1 for k, iid in enumerate(item_ids)}

    sequences = []
    for uid in user_ids:
        items = user_items[uid][-max_len:]
        sequences.append(UserSequence(user_index[uid], [item_index[i] for i in items]))
    logger.info(
        "build_sequences: %d users, %d items, %d actions",
        len(user_ids), len(item_ids), sum(s.length for s in sequences),
    )
    return SequenceCorpus(
        sequences=sequences,
        num_users=len(user_ids),
        num_items=len(item_ids),
        user_index=user_index,
        item_index=item_index,
    )


def leave_one_out_split(sequences: list[UserSequence]) -> list[SplitTriplet]:
    """Per user: test = last item, valid = second-to-last, train = the rest."""
    triplets = []
    excluded = 0
    for seq in sequences:
        if seq.length < 3:
            excluded += 1
            continue
        triplets.append(
            SplitTriplet(
                train_prefix=UserSequence(seq.user_index, seq.items[:-2]),
                valid_target=seq.items[-2],
                test_target=seq.items[-1],
            )
        )
    if excluded:
        logger.warning("leave_one_out_split: excluded %d sequences shorter than 3", excluded)
    return triplets


def inject_noise(
    sequences: list[UserSequence],
    noise_ratio: float,
    rng_seed: int,
    num_items: int,
) -> NoisyDatasetView:
    """Insert ceil(noise_ratio * n) unobserved items at random positions.

    Deterministic under ``rng_seed``. Users who interacted with every item
    are skipped with a warning.
    """
    if not (0 < noise_ratio <= 1):
        raise ValueError(f"noise_ratio must be in (0, 1], got {noise_ratio}")
    rng = np.random.default_rng(rng_seed)
    out_seqs: list[UserSequence] = []
    out_masks: list[np.ndarray] = []
    skipped = 0
    all_items = np.arange(1, num_items + 1)
    for seq in sequences:
        observed = set(seq.items)
        candidates = all_items[~np.isin(all_items, list(observed))]
        k = math.ceil(noise_ratio * seq.length)
        if candidates.size == 0:
            skipped += 1
            continue
        inserts = rng.choice(candidates, size=k, replace=True)
        items = list(seq.items)
        mask = [False] * len(items)
        for item in inserts:
            pos = int(rng.integers(0, len(items) + 1))
            items.insert(pos, int(item))
            mask.insert(pos, True)
        out_seqs.append(UserSequence(seq.user_index, items))
        out_masks.append(np.array(mask, dtype=bool))
    if skipped:
        logger.warning("inject_noise: skipped %d users with exhausted item universe", skipped)
    return NoisyDatasetView(sequences=out_seqs, injected_masks=out_masks)


def write_sequences(sequences: list[UserSequence], path: str) -> None:
    """Serialize as ``user_index<TAB>space-separated item indices`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(f"{seq.user_index}\t{' '.join(str(i) for i in seq.items)}\n")


def read_sequences(path: str) -> list[UserSequence]:
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            user_part, items_part = line.split("\t")
            items = [int(t) for t in items_part.split()] if items_part.strip() else []
            sequences.append(UserSequence(int(user_part), items))
    return sequences
