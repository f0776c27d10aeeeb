"""DNA encoding, dataset files, dinucleotide shuffling and synthetic data."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .motif import Pwm, default_planted_pwm, load_bundled_motifs, pwm_from_dict

ALPHABET = "ACGT"
_INDEX = {c: i for i, c in enumerate(ALPHABET)}


class DataError(ValueError):
    """Malformed sequence, label or dataset file."""


def validate_sequence(seq: str) -> str:
    if not isinstance(seq, str):
        raise DataError(f"expected a DNA string, got {type(seq).__name__}")
    if not seq:
        raise DataError("empty sequence")
    for pos, ch in enumerate(seq, start=1):
        if ch not in _INDEX:
            raise DataError(f"invalid character {ch!r} at position {pos} (alphabet is ACGT)")
    return seq


def one_hot_encode(seq: str) -> np.ndarray:
    """Encode ``seq`` as a ``T x 4`` float matrix with columns A, C, G, T."""
    validate_sequence(seq)
    idx = np.frombuffer(seq.encode("ascii"), dtype=np.uint8)
    lut = np.zeros(256, dtype=np.intp)
    for ch, i in _INDEX.items():
        lut[ord(ch)] = i
    out = np.zeros((len(seq), 4))
    out[np.arange(len(seq)), lut[idx]] = 1.0
    return out


def one_hot_decode(matrix) -> str:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[1] != 4:
        raise DataError(f"one-hot matrix must be T x 4, got {m.shape}")
    ok = (m.sum(axis=1) == 1) & ((m == 0) | (m == 1)).all(axis=1)
    if not ok.all():
        bad = int(np.argmin(ok)) + 1
        raise DataError(f"row {bad} is not a one-hot vector")
    return "".join(ALPHABET[i] for i in m.argmax(axis=1))


def encode_batch(seqs) -> np.ndarray:
    """Stack equal-length sequences into a ``(B, T, 4)`` array."""
    mats = [one_hot_encode(s) for s in seqs]
    lengths = {m.shape[0] for m in mats}
    if len(lengths) > 1:
        raise DataError(f"batch mixes sequence lengths {sorted(lengths)}")
    return np.stack(mats)


def dinucleotide_counts(seq: str) -> Counter:
    return Counter(seq[i:i + 2] for i in range(len(seq) - 1))


def reverse_complement_seq(seq: str) -> str:
    return seq.translate(str.maketrans("ACGT", "TGCA"))[::-1]


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Record:
    id: str
    sequence: str
    label: int


@dataclass
class LabeledDataset:
    records: list[Record]
    split: str = "train"
    # 0-based start of the planted motif for synthetic positives
    planted: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.label not in (1, -1):
                raise DataError(f"record {r.id!r}: label must be +1 or -1, got {r.label}")
            if r.id in seen:
                raise DataError(f"duplicate id {r.id!r}")
            seen.add(r.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def sequences(self) -> list[str]:
        return [r.sequence for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def get(self, record_id: str) -> Record:
        for r in self.records:
            if r.id == record_id:
                return r
        raise KeyError(record_id)

    def positives(self) -> list[Record]:
        return [r for r in self.records if r.label == 1]


def _parse_label(text, lineno):
    if text not in ("+1", "-1"):
        raise DataError(f"line {lineno}: label must be +1 or -1, got {text!r}")
    return 1 if text == "+1" else -1


def load_dataset(path, split: str = "train") -> LabeledDataset:
    """Read ``id<TAB>sequence<TAB>label`` lines."""
    records = []
    seen = set()
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            rid, seq, label = parts
            try:
                validate_sequence(seq)
            except DataError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if rid in seen:
                raise DataError(f"line {lineno}: duplicate id {rid!r}")
            seen.add(rid)
            records.append(Record(rid, seq, _parse_label(label, lineno)))
    return LabeledDataset(records, split)


def write_dataset(ds: LabeledDataset, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for r in ds.records:
            fh.write(f"{r.id}\t{r.sequence}\t{'+1' if r.label == 1 else '-1'}\n")


# ---------------------------------------------------------------------------
# shuffling


def dinucleotide_shuffle(seq: str, rng: np.random.Generator) -> str:
    """Random sequence with the same overlapping dinucleotide counts.

    Uniform over Eulerian paths of the dinucleotide multigraph: a random
    spanning arborescence of last-exit edges rooted at the final character
    is drawn first, then the remaining exits of every vertex are permuted.
    """
    validate_sequence(seq)
    if len(seq) < 2:
        raise DataError("dinucleotide shuffle needs at least 2 characters")
    exits: dict[str, list[str]] = {}
    for a, b in zip(seq, seq[1:]):
        exits.setdefault(a, []).append(b)
    last = seq[-1]
    vertices = sorted(exits)

    while True:
        last_exit = {v: int(rng.integers(len(exits[v]))) for v in vertices if v != last}
        if _reaches_root(last_exit, exits, last):
            break

    order: dict[str, list[str]] = {}
    for v in vertices:
        succ = exits[v]
        if v == last:
            order[v] = [succ[i] for i in rng.permutation(len(succ))]
            continue
        keep = last_exit[v]
        rest = succ[:keep] + succ[keep + 1:]
        order[v] = [rest[i] for i in rng.permutation(len(rest))] + [succ[keep]]

    out = [seq[0]]
    ptr = dict.fromkeys(vertices, 0)
    for _ in range(len(seq) - 1):
        v = out[-1]
        out.append(order[v][ptr[v]])
        ptr[v] += 1
    return "".join(out)


def _reaches_root(last_exit, exits, root):
    for start in last_exit:
        v, seen = start, set()
        while v != root:
            if v in seen:
                return False
            seen.add(v)
            v = exits[v][last_exit[v]]
    return True


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    sequence_length: int = 101
    train_count: int = 2000
    test_count: int = 1000
    planted_pwm: Pwm = field(default_factory=default_planted_pwm)
    planting_position: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.sequence_length < 1:
            raise DataError("sequence_length must be >= 1")
        if self.planted_pwm.width > self.sequence_length:
            raise DataError(f"planted motif width {self.planted_pwm.width} exceeds "
                            f"sequence length {self.sequence_length}")
        if self.planting_position not in ("center", "uniform"):
            raise DataError("planting_position must be 'center' or 'uniform'")
        for name in ("train_count", "test_count"):
            n = getattr(self, name)
            if n < 0 or n % 2:
                raise DataError(f"{name} must be a non-negative even number, got {n}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        doc = dict(doc)
        known = {"sequence_length", "train_count", "test_count", "planted_pwm",
                 "planting_position", "seed"}
        unknown = set(doc) - known
        if unknown:
            raise DataError(f"unknown synthetic spec fields: {sorted(unknown)}")
        pwm = doc.get("planted_pwm")
        if isinstance(pwm, str):
            bundled = {p.name: p for p in load_bundled_motifs()}
            if pwm not in bundled:
                raise DataError(f"unknown bundled motif {pwm!r}; have {sorted(bundled)}")
            doc["planted_pwm"] = bundled[pwm]
        elif isinstance(pwm, dict):
            try:
                doc["planted_pwm"] = pwm_from_dict(pwm)
            except ValueError as exc:
                raise DataError(f"planted_pwm: {exc}") from None
        elif pwm is None:
            doc.pop("planted_pwm", None)
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise DataError(f"{path}: expected a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "sequence_length": self.sequence_length,
            "train_count": self.train_count,
            "test_count": self.test_count,
            "planted_pwm": self.planted_pwm.to_dict(),
            "planting_position": self.planting_position,
            "seed": self.seed,
        }


def sample_from_pwm(pwm: Pwm, rng: np.random.Generator) -> str:
    return "".join(ALPHABET[rng.choice(4, p=col)] for col in pwm.columns)


def _generate_split(spec, n, split, rng):
    t, w = spec.sequence_length, spec.planted_pwm.width
    records, planted = [], {}
    for i in range(n // 2):
        background = "".join(ALPHABET[j] for j in rng.integers(0, 4, size=t))
        if spec.planting_position == "center":
            start = (t - w) // 2
        else:
            start = int(rng.integers(0, t - w + 1))
        site = sample_from_pwm(spec.planted_pwm, rng)
        pos = background[:start] + site + background[start + w:]
        pid, nid = f"{split}_pos_{i:05d}", f"{split}_neg_{i:05d}"
        records.append(Record(pid, pos, 1))
        neg = dinucleotide_shuffle(pos, rng) if t >= 2 else pos
        records.append(Record(nid, neg, -1))
        planted[pid] = start
    return LabeledDataset(records, split, planted)


def generate_synthetic(spec: SyntheticSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Planted-motif positives and their dinucleotide-shuffled negatives."""
    rng = np.random.default_rng(spec.seed)
    train = _generate_split(spec, spec.train_count, "train", rng)
    test = _generate_split(spec, spec.test_count, "test", rng)
    return train, test
