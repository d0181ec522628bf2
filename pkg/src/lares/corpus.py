"""Interaction-log ingestion and dataset construction.

Raw logs are (user, item, timestamp) lines. Preprocessing applies
iterated k-core filtering, maps keys to dense indices in first-appearance
order, sorts each user's items chronologically (file order breaks
timestamp ties, so rebuilds are deterministic), and derives
leave-one-out train/valid/test instances.
"""

import hashlib
import json
import os
from collections import Counter
from dataclasses import dataclass, field

from .ioutil import atomic_write_json, atomic_write_text


class ParseError(ValueError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SequenceTooShortError(ValueError):
    """A user sequence too short to split (cannot occur after 5-core)."""


@dataclass(frozen=True)
class InteractionEvent:
    user_key: str
    item_key: str
    timestamp: int


@dataclass
class InteractionDataset:
    num_users: int
    num_items: int
    sequences: dict  # user_index -> [item_index, ...], untruncated
    user_id_map: dict  # opaque key -> dense index
    item_id_map: dict
    max_len: int = 20
    source_checksum: str | None = None

    def stats(self):
        lens = [len(s) for s in self.sequences.values()]
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_actions": int(sum(lens)),
            "avg_len": float(sum(lens) / len(lens)) if lens else 0.0,
        }


@dataclass(frozen=True)
class SplitInstance:
    user_index: int
    input: tuple  # item indices, already truncated to max_len
    target: int
    split: str  # train | valid | test


def _parse_timestamp(text):
    try:
        return int(text)
    except ValueError:
        try:
            f = float(text)
        except ValueError:
            return None
        if f.is_integer():
            return int(f)
        return None


def ingest_events(path, delimiter="\t"):
    """Parse a delimited interaction log into events, file order kept.

    Lines need at least user, item, timestamp fields; extras are
    ignored. A leading header line is skipped when its timestamp field
    is non-numeric. Duplicates are retained.
    """
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split(delimiter)
            if len(fields) < 3:
                raise ParseError(line_no, f"expected >= 3 fields, found {len(fields)}")
            ts = _parse_timestamp(fields[2])
            if ts is None:
                if line_no == 1 and not events:
                    continue  # header
                raise ParseError(line_no, f"non-integer timestamp {fields[2]!r}")
            if ts < 0:
                raise ParseError(line_no, f"negative timestamp {ts}")
            if not fields[0] or not fields[1]:
                raise ParseError(line_no, "empty user or item key")
            events.append(InteractionEvent(fields[0], fields[1], ts))
    return events


def kcore_filter(events, k=5):
    """Alternately drop users and items with fewer than k events until
    the fixpoint: in the result every user and item has >= k events."""
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = list(events)
    while True:
        users = Counter(e.user_key for e in kept)
        items = Counter(e.item_key for e in kept)
        filtered = [e for e in kept if users[e.user_key] >= k and items[e.item_key] >= k]
        if len(filtered) == len(kept):
            return kept
        kept = filtered


def build_dataset(events, max_len=20, source_checksum=None):
    """Dense-index dataset from (filtered) events.

    Indices follow first appearance in file order; per-user sequences
    sort by (timestamp, file order). Full sequences are stored; max_len
    truncation happens at instance construction.
    """
    user_id_map = {}
    item_id_map = {}
    per_user = {}
    for order, e in enumerate(events):
        u = user_id_map.setdefault(e.user_key, len(user_id_map))
        v = item_id_map.setdefault(e.item_key, len(item_id_map))
        per_user.setdefault(u, []).append((e.timestamp, order, v))
    sequences = {}
    for u, rows in per_user.items():
        rows.sort(key=lambda r: (r[0], r[1]))
        sequences[u] = [v for _, _, v in rows]
    return InteractionDataset(
        num_users=len(user_id_map),
        num_items=len(item_id_map),
        sequences=sequences,
        user_id_map=user_id_map,
        item_id_map=item_id_map,
        max_len=max_len,
        source_checksum=source_checksum,
    )


def _tail(items, max_len):
    return tuple(items[-max_len:])


def split_leave_one_out(dataset):
    """Per user: last item is the test target, second-to-last the valid
    target, and every earlier prefix becomes one training instance.
    Inputs keep only the most recent max_len items."""
    out = []
    ml = dataset.max_len
    for u in range(dataset.num_users):
        seq = dataset.sequences[u]
        if len(seq) < 3:
            raise SequenceTooShortError(
                f"user index {u} has sequence length {len(seq)} < 3, cannot split"
            )
        for i in range(1, len(seq) - 1):
            out.append(SplitInstance(u, _tail(seq[:i], ml), seq[i], "train"))
        out.append(SplitInstance(u, _tail(seq[:-2], ml), seq[-2], "valid"))
        out.append(SplitInstance(u, _tail(seq[:-1], ml), seq[-1], "test"))
    return out


def split_by_name(instances, name):
    return [inst for inst in instances if inst.split == name]


def file_checksum(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


SEQUENCES_FILE = "sequences.txt"
META_FILE = "meta.json"


def save_dataset(dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for u in range(dataset.num_users):
        items = " ".join(str(v) for v in dataset.sequences[u])
        lines.append(f"{u}\t{items}")
    atomic_write_text(os.path.join(out_dir, SEQUENCES_FILE), "\n".join(lines) + "\n")
    meta = {
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
        "max_len": dataset.max_len,
        "user_id_map": dataset.user_id_map,
        "item_id_map": dataset.item_id_map,
        "source_checksum": dataset.source_checksum,
    }
    atomic_write_json(os.path.join(out_dir, META_FILE), meta)


def load_dataset(data_dir):
    with open(os.path.join(data_dir, META_FILE), "r", encoding="utf-8") as f:
        meta = json.load(f)
    sequences = {}
    with open(os.path.join(data_dir, SEQUENCES_FILE), "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            u_str, items = line.split("\t")
            sequences[int(u_str)] = [int(v) for v in items.split(" ")]
    return InteractionDataset(
        num_users=meta["num_users"],
        num_items=meta["num_items"],
        sequences=sequences,
        user_id_map=meta["user_id_map"],
        item_id_map=meta["item_id_map"],
        max_len=meta["max_len"],
        source_checksum=meta.get("source_checksum"),
    )
