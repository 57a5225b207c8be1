"""Synthetic video-QA task generators.

Two task families, both built from orthonormal prototype vectors planted into
Gaussian noise frames:

planted_event
    2-3 event prototypes are planted into distinct frames; each planted frame
    also carries an attribute prototype. The question names one planted event
    type; the gold option is the attribute type found in that event's frame.
    Answering requires locating the queried frame, so the task isolates
    question-guided frame selection.

event_order
    Two event prototypes are planted at distinct frames; the question asks
    whether the first named event precedes the second. Samples come in pairs
    whose frame blocks are swapped (labels flipped), so the unordered frame
    multiset carries zero label information: any order-invariant aggregator
    sits at chance by construction.

Prototype sets are orthonormal (QR of a per-seed Gaussian draw), which makes
the noise-free nearest-prototype oracle exact and keeps the tasks linearly
separable at the frame level.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .rng import SeededRng

TASK_KINDS = ("planted_event", "event_order")
SPLITS = ("train", "val", "test")

# Fixed vocabulary prefix; event-type tokens follow.
TOK_Q_EVENT = 0
TOK_Q_ORDER = 1
TOK_YES = 2
TOK_NO = 3
TYPE_TOKEN_BASE = 4


def vocab_tokens(num_event_types: int) -> list[str]:
    return ["<q_event>", "<q_order>", "<yes>", "<no>"] + [
        f"type_{i}" for i in range(num_event_types)]


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    n: int
    t_f: int
    d: int
    num_event_types: int
    num_options: int
    noise_sigma: float
    train_size: int
    val_size: int
    test_size: int
    seed: int

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; options: {TASK_KINDS}")
        if min(self.n, self.t_f, self.d, self.num_event_types) < 1:
            raise ValueError("n, t_f, d, num_event_types must be positive")
        if min(self.train_size, self.val_size, self.test_size) < 1:
            raise ValueError("split sizes must be positive")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.kind == "planted_event":
            if self.num_options < 2 or self.num_options > self.num_event_types:
                raise ValueError(
                    f"need 2 <= num_options <= num_event_types, got "
                    f"{self.num_options} vs {self.num_event_types}")
            if self.n < 3 or self.num_event_types < 3:
                raise ValueError("planted_event needs n >= 3 and >= 3 event types")
            if 2 * self.num_event_types > self.d:
                raise ValueError(
                    f"planted_event needs d >= 2*num_event_types for orthonormal "
                    f"prototypes, got d={self.d}, E={self.num_event_types}")
            for name in SPLITS:
                if getattr(self, name + "_size") % self.num_options:
                    raise ValueError(
                        f"{name}_size must be divisible by num_options for exact "
                        f"label balance")
        else:
            if self.num_options != 2:
                raise ValueError("event_order is a yes/no task: num_options must be 2")
            if self.n < 2 or self.num_event_types < 2:
                raise ValueError("event_order needs n >= 2 and >= 2 event types")
            if self.num_event_types > self.d:
                raise ValueError(
                    f"event_order needs d >= num_event_types, got d={self.d}, "
                    f"E={self.num_event_types}")
            for name in SPLITS:
                if getattr(self, name + "_size") % 2:
                    raise ValueError(f"{name}_size must be even (paired samples)")


@dataclass
class Split:
    frames: np.ndarray          # [N, n, t_f, d]
    question_ids: np.ndarray    # [N, l_q]
    options: np.ndarray         # [N, num_options, 1] token ids
    gold: np.ndarray            # [N]
    queried_frame: np.ndarray   # [N] frame index answering the question, -1 if n/a
    planted_frames: np.ndarray  # [N, 3], -1 padded
    planted_types: np.ndarray   # [N, 3], -1 padded

    @property
    def size(self) -> int:
        return self.frames.shape[0]


@dataclass
class Dataset:
    spec: TaskSpec
    vocab: list[str]
    event_protos: np.ndarray
    attr_protos: np.ndarray
    splits: dict[str, Split] = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)


def _orthonormal_rows(count: int, d: int, rng: SeededRng) -> np.ndarray:
    """`count` exactly orthonormal d-vectors via QR with a canonical sign fix."""
    gauss = rng.normal((d, count))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q.T)


def _gen_planted_split(spec: TaskSpec, size: int, event_protos, attr_protos,
                       rng: SeededRng) -> Split:
    n, t_f, d = spec.n, spec.t_f, spec.d
    num_e, num_a = spec.num_event_types, spec.num_options
    frames = rng.normal((size, n, t_f, d), scale=spec.noise_sigma)
    question_ids = np.empty((size, 2), dtype=np.int64)
    options = np.empty((size, num_a, 1), dtype=np.int64)
    gold = np.empty(size, dtype=np.int64)
    queried_frame = np.empty(size, dtype=np.int64)
    planted_frames = np.full((size, 3), -1, dtype=np.int64)
    planted_types = np.full((size, 3), -1, dtype=np.int64)

    for s in range(size):
        m = 2 + rng.integers(2)  # 2 or 3 planted events
        types = rng.choice_without_replacement(num_e, m)
        slots = rng.choice_without_replacement(n, m)
        attrs = np.array([rng.integers(num_e) for _ in range(m)], dtype=np.int64)
        for etype, slot, attr in zip(types, slots, attrs):
            frames[s, slot] += event_protos[etype] + attr_protos[attr]
        pick = rng.integers(m)
        queried_type = int(types[pick])
        gold_type = int(attrs[pick])

        distract = [t for t in rng.shuffled(range(num_e)) if t != gold_type]
        opts = [gold_type] + distract[:num_a - 1]
        # Exact label balance: the gold option occupies position s mod |A|;
        # the distractors fill the remaining slots in shuffled order.
        gold_pos = s % num_a
        arranged = opts[1:]
        arranged.insert(gold_pos, gold_type)
        options[s, :, 0] = [TYPE_TOKEN_BASE + t for t in arranged]
        gold[s] = gold_pos
        question_ids[s] = (TOK_Q_EVENT, TYPE_TOKEN_BASE + queried_type)
        queried_frame[s] = slots[pick]
        planted_frames[s, :m] = slots
        planted_types[s, :m] = types

    return Split(frames, question_ids, options, gold, queried_frame,
                 planted_frames, planted_types)


def _gen_order_split(spec: TaskSpec, size: int, event_protos,
                     rng: SeededRng) -> Split:
    n, t_f, d = spec.n, spec.t_f, spec.d
    num_e = spec.num_event_types
    pairs = size // 2
    frames = rng.normal((size, n, t_f, d), scale=spec.noise_sigma)
    question_ids = np.empty((size, 3), dtype=np.int64)
    options = np.empty((size, 2, 1), dtype=np.int64)
    gold = np.empty(size, dtype=np.int64)
    queried_frame = np.full(size, -1, dtype=np.int64)
    planted_frames = np.full((size, 3), -1, dtype=np.int64)
    planted_types = np.full((size, 3), -1, dtype=np.int64)

    for p in range(pairs):
        s = 2 * p
        type_a, type_b = (int(t) for t in rng.choice_without_replacement(num_e, 2))
        slot_a, slot_b = (int(i) for i in rng.choice_without_replacement(n, 2))
        frames[s, slot_a] += event_protos[type_a]
        frames[s, slot_b] += event_protos[type_b]
        # Partner sample: identical frame blocks with the two planted frames
        # exchanged, so the pair's unordered frame multisets are equal and the
        # label flips.
        frames[s + 1] = frames[s]
        frames[s + 1, slot_a] = frames[s, slot_b]
        frames[s + 1, slot_b] = frames[s, slot_a]
        for member, (fa, fb) in ((s, (slot_a, slot_b)), (s + 1, (slot_b, slot_a))):
            question_ids[member] = (TOK_Q_ORDER, TYPE_TOKEN_BASE + type_a,
                                    TYPE_TOKEN_BASE + type_b)
            options[member, :, 0] = (TOK_YES, TOK_NO)
            gold[member] = 0 if fa < fb else 1
            planted_frames[member, :2] = (fa, fb)
            planted_types[member, :2] = (type_a, type_b)

    return Split(frames, question_ids, options, gold, queried_frame,
                 planted_frames, planted_types)


def gen_planted_event(spec: TaskSpec, rng: SeededRng) -> Dataset:
    if spec.kind != "planted_event":
        raise ValueError(f"spec kind is {spec.kind!r}, expected planted_event")
    protos = _orthonormal_rows(2 * spec.num_event_types, spec.d, rng.child("protos"))
    event_protos = protos[:spec.num_event_types]
    attr_protos = protos[spec.num_event_types:]
    ds = Dataset(spec, vocab_tokens(spec.num_event_types), event_protos, attr_protos)
    for split in SPLITS:
        ds.splits[split] = _gen_planted_split(
            spec, getattr(spec, split + "_size"), event_protos, attr_protos,
            rng.child(split))
    return ds


def gen_order_task(spec: TaskSpec, rng: SeededRng) -> Dataset:
    if spec.kind != "event_order":
        raise ValueError(f"spec kind is {spec.kind!r}, expected event_order")
    event_protos = _orthonormal_rows(spec.num_event_types, spec.d, rng.child("protos"))
    attr_protos = np.zeros((0, spec.d))
    ds = Dataset(spec, vocab_tokens(spec.num_event_types), event_protos, attr_protos)
    for split in SPLITS:
        ds.splits[split] = _gen_order_split(
            spec, getattr(spec, split + "_size"), event_protos, rng.child(split))
    return ds


def generate(spec: TaskSpec) -> Dataset:
    """Generate the dataset named by the spec from its own seed."""
    rng = SeededRng(spec.seed)
    if spec.kind == "planted_event":
        return gen_planted_event(spec, rng)
    return gen_order_task(spec, rng)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_SPLIT_FIELDS = ("frames", "question_ids", "options", "gold", "queried_frame",
                 "planted_frames", "planted_types")


def save_dataset(ds: Dataset, path):
    meta = {"spec": asdict(ds.spec), "vocab": ds.vocab}
    arrays = {"event_protos": ds.event_protos, "attr_protos": ds.attr_protos}
    for split, data in ds.splits.items():
        for name in _SPLIT_FIELDS:
            arrays[f"{split}.{name}"] = getattr(data, name)
    write_container(path, "dataset", meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = read_container(path, expect_kind="dataset")
    spec = TaskSpec(**meta["spec"])
    ds = Dataset(spec, list(meta["vocab"]), arrays["event_protos"],
                 arrays["attr_protos"])
    for split in SPLITS:
        ds.splits[split] = Split(*[arrays[f"{split}.{name}"] for name in _SPLIT_FIELDS])
    return ds


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
