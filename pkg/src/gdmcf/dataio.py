"""Interaction files, temporal splits, planted-block synthetic data and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .corruption import ContinuousSchedule, DiscreteSchedule, as_generator
from .denoiser import ModelParams
from .graph import InteractionMatrix

MIN_INTERACTIONS = 4
CHECKPOINT_MAGIC = "GDMCF-CHECKPOINT"
CHECKPOINT_VERSION = 1


class DataError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class InteractionEvent(NamedTuple):
    user_id: str
    item_id: str
    timestamp: int
    rating: float | None = None


def _detect_separator(line: str) -> str:
    if "\t" in line:
        return "\t"
    if "::" in line:
        return "::"
    if "," in line:
        return ","
    raise DataError("cannot detect a separator (tab, comma or '::')")


def load_interactions(path) -> list[InteractionEvent]:
    """Read ``user<sep>item[<sep>rating]<sep>timestamp`` lines.

    A first line whose timestamp column is not an integer is treated as a
    header. Any recorded rating counts as an interaction.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh]
    content = [(no, ln) for no, ln in enumerate(lines, start=1) if ln.strip()]
    if not content:
        raise DataError(f"{path}: no interactions")
    sep = _detect_separator(content[0][1])
    events = []
    for idx, (lineno, line) in enumerate(content):
        parts = [p.strip() for p in line.split(sep)]
        if len(parts) not in (3, 4):
            if idx == 0 and len(parts) > 4:
                continue
            raise DataError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(parts)}")
        try:
            ts = int(float(parts[-1]))
        except ValueError:
            if idx == 0:
                continue  # header
            raise DataError(f"{path}:{lineno}: timestamp {parts[-1]!r} is not a number") from None
        if ts < 0:
            raise DataError(f"{path}:{lineno}: negative timestamp")
        rating = None
        if len(parts) == 4:
            try:
                rating = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: rating {parts[2]!r} is not a number") from None
        if not parts[0] or not parts[1]:
            raise DataError(f"{path}:{lineno}: empty user or item id")
        events.append(InteractionEvent(parts[0], parts[1], ts, rating))
    if not events:
        raise DataError(f"{path}: no interactions")
    return events


@dataclass
class DatasetSplit:
    train: InteractionMatrix
    val: InteractionMatrix
    test: InteractionMatrix
    user_ids: list = field(default_factory=list)  # internal index -> external id
    item_ids: list = field(default_factory=list)
    # (user, item, timestamp) triples behind each matrix, for manifests
    events: dict = field(default_factory=dict, repr=False)

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items


def _sort_key(x):
    # numeric ids sort numerically, everything else lexically after them
    s = str(x)
    try:
        return (0, int(s), s)
    except ValueError:
        return (1, 0, s)


def split_counts(n: int) -> tuple[int, int, int]:
    """Per-user 7:1:2 sizes: floor(0.7n) train, floor(0.1n) (at least 1) val, rest test."""
    n_train = int(np.floor(0.7 * n + 1e-9))
    n_val = max(1, int(np.floor(0.1 * n + 1e-9)))
    return n_train, n_val, n - n_train - n_val


def prepare_splits(events, min_interactions: int = MIN_INTERACTIONS) -> DatasetSplit:
    """Dedupe, drop users with too few interactions, re-index, split each user by time."""
    if not events:
        raise DataError("no events")
    first = {}
    for ev in events:
        key = (str(ev.user_id), str(ev.item_id))
        ts = int(ev.timestamp)
        if key not in first or ts < first[key]:
            first[key] = ts
    per_user: dict[str, list] = {}
    for (u, i), ts in first.items():
        per_user.setdefault(u, []).append((ts, _sort_key(i), i))
    kept = {u: rows for u, rows in per_user.items() if len(rows) >= min_interactions}
    if not kept:
        raise DataError(f"every user has fewer than {min_interactions} interactions")
    user_ids = sorted(kept, key=_sort_key)
    item_ids = sorted({i for rows in kept.values() for _, _, i in rows}, key=_sort_key)
    uidx = {u: k for k, u in enumerate(user_ids)}
    iidx = {i: k for k, i in enumerate(item_ids)}
    parts = {"train": [], "val": [], "test": []}
    for u in user_ids:
        rows = sorted(kept[u])
        n_tr, n_va, _ = split_counts(len(rows))
        for pos, (ts, _, i) in enumerate(rows):
            name = "train" if pos < n_tr else "val" if pos < n_tr + n_va else "test"
            parts[name].append((uidx[u], iidx[i], ts))
    m, n = len(user_ids), len(item_ids)
    mats = {}
    for name, triples in parts.items():
        arr = np.array(triples, dtype=np.int64).reshape(-1, 3)
        mats[name] = InteractionMatrix.from_pairs(arr[:, 0], arr[:, 1], m, n)
    return DatasetSplit(mats["train"], mats["val"], mats["test"], user_ids, item_ids, parts)


def synthetic_blocks(
    num_users: int,
    num_items: int,
    groups: int,
    p_in: float,
    p_out: float,
    seed=0,
) -> DatasetSplit:
    """Planted block model: users and items in ``groups`` matched blocks.

    Users are assigned to group ``u * groups // num_users`` (items likewise);
    an edge appears with probability ``p_in`` inside the matched block and
    ``p_out`` elsewhere. Timestamps are random, then the usual split runs.
    """
    if groups < 1 or num_users % groups or num_items % groups:
        raise DataError("groups must divide both the user and item counts")
    if not 0 <= p_out <= p_in <= 1:
        raise DataError("need 0 <= p_out <= p_in <= 1")
    rng = as_generator(seed)
    ug = np.arange(num_users) * groups // num_users
    ig = np.arange(num_items) * groups // num_items
    probs = np.where(ug[:, None] == ig[None, :], p_in, p_out)
    present = rng.random((num_users, num_items)) < probs
    us, its = np.nonzero(present)
    stamps = rng.integers(0, 10**9, size=us.size)
    events = [InteractionEvent(str(u), str(i), int(s)) for u, i, s in zip(us, its, stamps)]
    return prepare_splits(events)


def block_membership(num: int, groups: int) -> np.ndarray:
    return np.arange(num) * groups // num


def write_split(split: DatasetSplit, out_dir) -> list[str]:
    """Write train/val/test manifests (internal ids) plus the two id maps."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in ("train", "val", "test"):
        path = os.path.join(out_dir, f"{name}.csv")
        triples = split.events.get(name)
        if triples is None:
            rows, cols = getattr(split, name).pairs()
            triples = [(int(u), int(i), 0) for u, i in zip(rows, cols)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "item", "timestamp"])
            w.writerows(sorted(triples))
        written.append(path)
    for name, ids in (("user_map", split.user_ids), ("item_map", split.item_ids)):
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["internal", "external"])
            w.writerows(enumerate(ids))
        written.append(path)
    return written


def read_split(split_dir) -> DatasetSplit:
    def read_map(name):
        with open(os.path.join(split_dir, f"{name}.csv"), newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [r["external"] for r in sorted(rows, key=lambda r: int(r["internal"]))]

    user_ids, item_ids = read_map("user_map"), read_map("item_map")
    m, n = len(user_ids), len(item_ids)
    mats, events = {}, {}
    for name in ("train", "val", "test"):
        with open(os.path.join(split_dir, f"{name}.csv"), newline="") as fh:
            triples = [(int(r["user"]), int(r["item"]), int(r["timestamp"])) for r in csv.DictReader(fh)]
        arr = np.array(triples, dtype=np.int64).reshape(-1, 3)
        mats[name] = InteractionMatrix.from_pairs(arr[:, 0], arr[:, 1], m, n)
        events[name] = triples
    return DatasetSplit(mats["train"], mats["val"], mats["test"], user_ids, item_ids, events)


@dataclass
class Checkpoint:
    params: ModelParams
    schedules: tuple[DiscreteSchedule, ContinuousSchedule]
    config: dict  # flat TrainConfig values
    seed: int
    version: int = CHECKPOINT_VERSION


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Text header of ``key=value`` lines, a blank line, then raw little-endian float64 arrays.

    The header lists each array's name and shape in payload order, plus the
    payload's byte length and SHA-256 so truncation is detected on load.
    """
    disc, cont = ckpt.schedules
    arrays = {f"param.{k}": v for k, v in ckpt.params.arrays().items()}
    arrays["schedule.alpha"] = disc.alpha
    arrays["schedule.marginal"] = disc.marginal
    arrays["schedule.beta"] = cont.beta
    payload = io.BytesIO()
    specs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        payload.write(arr.tobytes())
        specs.append(f"{name}:{'x'.join(str(s) for s in arr.shape)}")
    body = payload.getvalue()
    header = [f"{CHECKPOINT_MAGIC} {ckpt.version}", f"seed={ckpt.seed}"]
    header += [f"config.{k}={v}" for k, v in sorted(ckpt.config.items())]
    header += [f"arrays={','.join(specs)}", f"payload_bytes={len(body)}", f"sha256={hashlib.sha256(body).hexdigest()}"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n\n").encode("utf-8"))
        fh.write(body)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise CheckpointError(f"{path}: missing header terminator (truncated or not a checkpoint)")
    try:
        lines = blob[:sep].decode("utf-8").split("\n")
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: header is not text") from None
    magic = lines[0].split(" ")
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a GDMCF checkpoint")
    try:
        version = int(magic[1])
    except ValueError:
        raise CheckpointError(f"{path}: unreadable format version {magic[1]!r}") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {version} is incompatible with this build (expects {CHECKPOINT_VERSION})"
        )
    meta, config = {}, {}
    for line in lines[1:]:
        key, _, val = line.partition("=")
        if key.startswith("config."):
            config[key[len("config.") :]] = val
        else:
            meta[key] = val
    body = blob[sep + 2 :]
    try:
        expected = int(meta["payload_bytes"])
        digest = meta["sha256"]
        specs = meta["arrays"].split(",")
    except KeyError as exc:
        raise CheckpointError(f"{path}: header lacks {exc.args[0]!r}") from None
    if len(body) != expected:
        raise CheckpointError(f"{path}: payload is {len(body)} bytes, header says {expected} (truncated?)")
    if hashlib.sha256(body).hexdigest() != digest:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    arrays, offset = {}, 0
    for spec in specs:
        name, _, dims = spec.partition(":")
        shape = tuple(int(s) for s in dims.split("x")) if dims else ()
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    params = ModelParams(**{k[len("param.") :]: v for k, v in arrays.items() if k.startswith("param.")})
    schedules = (
        DiscreteSchedule(arrays["schedule.alpha"], arrays["schedule.marginal"]),
        ContinuousSchedule(arrays["schedule.beta"]),
    )
    return Checkpoint(params, schedules, config, int(meta.get("seed", 0)), version)
