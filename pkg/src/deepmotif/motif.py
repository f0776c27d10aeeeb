"""Position weight matrices, motif extraction and motif-motif comparison."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

ALPHABET = "ACGT"
MOTIF_WIDTH = 9
DEFAULT_PSEUDOCOUNT = 0.01


class MotifError(ValueError):
    pass


class MemeFormatError(MotifError):
    pass


@dataclass(eq=False)
class Pwm:
    """Per-position probabilities over A, C, G, T (``width x 4``)."""

    columns: np.ndarray
    name: str = "motif"
    pseudocount: float = 0.0

    def __post_init__(self):
        cols = np.array(self.columns, dtype=np.float64)
        if cols.ndim != 2 or cols.shape[1] != 4 or cols.shape[0] < 1:
            raise MotifError(f"PWM {self.name!r}: expected width x 4 columns, got {cols.shape}")
        if (cols < 0).any():
            raise MotifError(f"PWM {self.name!r}: negative probability")
        sums = cols.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-9:
            bad = int(np.argmax(np.abs(sums - 1.0))) + 1
            raise MotifError(f"PWM {self.name!r}: column {bad} sums to {sums[bad - 1]!r}")
        self.columns = cols

    @property
    def width(self) -> int:
        return self.columns.shape[0]

    def consensus(self) -> str:
        return "".join(ALPHABET[i] for i in self.columns.argmax(axis=1))

    def information_content(self) -> np.ndarray:
        """Bits per column: ``2 + sum p log2 p``."""
        p = self.columns
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0, p * np.log2(p), 0.0)
        return 2.0 + plogp.sum(axis=1)

    def to_dict(self) -> dict:
        return {"name": self.name, "pseudocount": self.pseudocount,
                "columns": self.columns.tolist()}

    def __eq__(self, other):
        return (isinstance(other, Pwm) and self.name == other.name
                and np.array_equal(self.columns, other.columns))


def pwm_from_dict(doc: dict) -> Pwm:
    if "columns" not in doc:
        raise MotifError("PWM document needs 'columns'")
    return Pwm(np.asarray(doc["columns"], dtype=np.float64), doc.get("name", "motif"),
               float(doc.get("pseudocount", 0.0)))


def pwm_from_consensus(consensus: str, strength: float = 0.85, name: str | None = None) -> Pwm:
    """PWM placing ``strength`` on each consensus base, the rest spread evenly."""
    cols = np.full((len(consensus), 4), (1.0 - strength) / 3.0)
    for i, ch in enumerate(consensus):
        cols[i] = (1.0 - strength) / 3.0
        cols[i, ALPHABET.index(ch)] = strength
    cols /= cols.sum(axis=1, keepdims=True)
    return Pwm(cols, name or consensus)


def default_planted_pwm() -> Pwm:
    return pwm_from_consensus("TGACTCAGT", 0.85, "SYNTH_TGACTCAGT")


def build_pwm(subsequences, pseudocount: float = DEFAULT_PSEUDOCOUNT, name: str = "motif") -> Pwm:
    """Column frequencies of aligned equal-length subsequences."""
    subs = list(subsequences)
    if not subs:
        raise MotifError("need at least one subsequence")
    width = len(subs[0])
    for s in subs:
        if len(s) != width:
            raise MotifError(f"subsequence {s!r} has length {len(s)}, expected {width}")
        bad = set(s) - set(ALPHABET)
        if bad:
            raise MotifError(f"subsequence {s!r} has non-ACGT characters {sorted(bad)}")
    if pseudocount < 0:
        raise MotifError("pseudocount must be >= 0")
    counts = np.zeros((width, 4))
    for s in subs:
        for j, ch in enumerate(s):
            counts[j, ALPHABET.index(ch)] += 1
    cols = (counts + pseudocount) / (len(subs) + 4 * pseudocount)
    return Pwm(cols, name, pseudocount)


def reverse_complement(p: Pwm) -> Pwm:
    # column order A,C,G,T reversed is T,G,C,A: exactly the complement swap
    return Pwm(p.columns[::-1, ::-1].copy(), p.name, p.pseudocount)


# ---------------------------------------------------------------------------
# extraction


@dataclass(frozen=True)
class ExtractedMotif:
    start: int  # 0-based
    sequence: str
    fallback: bool = False

    @property
    def end(self) -> int:
        return self.start + len(self.sequence)


def _window_sums(values, width):
    # sequential accumulation over offsets keeps the summation order fixed
    total = values[0:len(values) - width + 1].copy()
    for z in range(1, width):
        total = total + values[z:len(values) - width + 1 + z]
    return total


def extract_saliency_motif(saliency, sequence: str, width: int = MOTIF_WIDTH) -> ExtractedMotif:
    """Window with the largest summed saliency; ties go to the leftmost."""
    mags = np.asarray(getattr(saliency, "magnitudes", saliency), dtype=np.float64)
    if len(sequence) < width or len(mags) < width:
        raise MotifError(f"sequence length {len(sequence)} is shorter than motif width {width}")
    if len(mags) != len(sequence):
        raise MotifError("saliency and sequence lengths differ")
    sums = _window_sums(mags, width)
    start = int(np.argmax(sums))
    return ExtractedMotif(start, sequence[start:start + width])


def extract_temporal_motif(scores, sequence: str, width: int = MOTIF_WIDTH) -> ExtractedMotif:
    """Window ending where the forward score rises most across 0.5.

    With 1-based ``t``, candidates are ``t`` in ``width+1..T`` where
    ``forward[t-width] < 0.5 <= forward[t]``; the score is the rise
    ``forward[t] - forward[t-width]`` and the window covers ``t-width+1..t``.
    Without any crossing the largest rise overall is used and flagged.
    """
    fwd = np.asarray(getattr(scores, "forward", scores), dtype=np.float64)
    t_len = len(sequence)
    if t_len < width or len(fwd) < width:
        raise MotifError(f"sequence length {t_len} is shorter than motif width {width}")
    if len(fwd) != t_len:
        raise MotifError("score and sequence lengths differ")
    if t_len == width:
        return ExtractedMotif(0, sequence, fallback=True)
    after, before = fwd[width:], fwd[:-width]
    rise = after - before
    crossing = (before < 0.5) & (after >= 0.5)
    fallback = not crossing.any()
    masked = rise if fallback else np.where(crossing, rise, -np.inf)
    k = int(np.argmax(masked))
    # after[k] is forward at 0-based index k + width; window is the 9 ending there
    start = k + 1
    return ExtractedMotif(start, sequence[start:start + width], fallback)


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class MotifMatch:
    query: str
    target: str
    offset: int
    orientation: str
    similarity: float
    p_value: float
    is_match: bool

    def to_json(self) -> str:
        return json.dumps({"query": self.query, "target": self.target, "offset": self.offset,
                           "orientation": self.orientation, "similarity": self.similarity,
                           "p": self.p_value, "match": self.is_match})


MIN_OVERLAP = 4


def _column_pearson(a, b):
    """Row-wise Pearson correlation of two ``n x 4`` arrays; constant rows give 0."""
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    num = (ac * bc).sum(axis=1)
    den = np.sqrt((ac * ac).sum(axis=1) * (bc * bc).sum(axis=1))
    out = np.zeros(len(a))
    ok = den > 1e-12
    out[ok] = num[ok] / den[ok]
    return out


def _best_alignment(q, t):
    """Best (similarity, offset) of query columns ``q`` against target ``t``.

    ``offset`` is the target column aligned with query column 0. Column
    correlations are averaged over the width of the shorter motif, so
    columns hanging off either end contribute 0.
    """
    wq, wt = len(q), len(t)
    denom = min(wq, wt)
    best, best_off = -np.inf, 0
    for off in range(-(wq - MIN_OVERLAP), wt - MIN_OVERLAP + 1):
        qi = max(0, -off)
        qj = min(wq, wt - off)
        if qj - qi < MIN_OVERLAP:
            continue
        sim = float(_column_pearson(q[qi:qj], t[qi + off:qj + off]).sum()) / denom
        if sim > best:
            best, best_off = sim, off
    return best, best_off


def _similarity(q, t):
    fwd, off_f = _best_alignment(q, t)
    rev, off_r = _best_alignment(q, t[::-1, ::-1])
    if rev > fwd:
        return rev, off_r, "reverse-complement"
    return fwd, off_f, "forward"


def compare_motifs(query: Pwm, target: Pwm, null_samples: int = 500, threshold: float = 0.05,
                   rng: np.random.Generator | None = None) -> MotifMatch:
    """Similarity of two PWMs with a column-permutation null for the p-value."""
    if query.width < MIN_OVERLAP or target.width < MIN_OVERLAP:
        raise MotifError(f"both motifs need width >= {MIN_OVERLAP} "
                         f"(got {query.width} and {target.width})")
    if null_samples < 0:
        raise MotifError("null_samples must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    sim, off, orient = _similarity(query.columns, target.columns)
    hits = 0
    for _ in range(null_samples):
        shuffled = target.columns[rng.permutation(target.width)]
        if _similarity(query.columns, shuffled)[0] >= sim - 1e-12:
            hits += 1
    p = (hits + 1) / (null_samples + 1)
    return MotifMatch(query.name, target.name, off, orient, sim, p, p <= threshold)


# ---------------------------------------------------------------------------
# MEME minimal format


def write_meme_minimal(pwms, path) -> None:
    lines = ["MEME version 4", "", "ALPHABET= ACGT", "", "strands: + -", "",
             "Background letter frequencies", "A 0.25 C 0.25 G 0.25 T 0.25", ""]
    for p in pwms:
        name = re.sub(r"\s+", "_", p.name) or "motif"
        lines.append(f"MOTIF {name}")
        lines.append(f"letter-probability matrix: alength= 4 w= {p.width} nsites= 20 E= 0")
        for col in p.columns:
            lines.append(" " + " ".join(f"{v:.8f}" for v in col))
        lines.append("")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines))


_MATRIX_RE = re.compile(r"letter-probability matrix:.*?alength=\s*(\d+)\s+w=\s*(\d+)")


def _parse_meme(lines, source):
    pwms = []
    alphabet_seen = False
    i, n = 0, len(lines)
    name = None
    while i < n:
        line = lines[i].strip()
        i += 1
        if line.startswith("ALPHABET"):
            if line.replace(" ", "") != "ALPHABET=ACGT":
                raise MemeFormatError(f"{source}:{i}: unsupported alphabet line {line!r}")
            alphabet_seen = True
        elif line.startswith("MOTIF"):
            parts = line.split()
            if len(parts) < 2:
                raise MemeFormatError(f"{source}:{i}: MOTIF line without a name")
            name = parts[1]
        elif line.startswith("letter-probability matrix"):
            if not alphabet_seen:
                raise MemeFormatError(f"{source}:{i}: matrix before an 'ALPHABET= ACGT' line")
            if name is None:
                raise MemeFormatError(f"{source}:{i}: matrix without a MOTIF line")
            m = _MATRIX_RE.search(line)
            if not m or int(m.group(1)) != 4:
                raise MemeFormatError(f"{source}:{i}: malformed matrix header {line!r}")
            width = int(m.group(2))
            rows = []
            while len(rows) < width:
                if i >= n:
                    raise MemeFormatError(f"{source}:{i}: motif {name!r} ends after "
                                          f"{len(rows)} of {width} rows")
                row = lines[i].strip()
                i += 1
                if not row:
                    continue
                try:
                    vals = [float(v) for v in row.split()]
                except ValueError:
                    raise MemeFormatError(f"{source}:{i}: non-numeric matrix row {row!r}") from None
                if len(vals) != 4 or any(v < 0 for v in vals) or sum(vals) <= 0:
                    raise MemeFormatError(f"{source}:{i}: bad matrix row {row!r}")
                rows.append(vals)
            cols = np.array(rows)
            cols /= cols.sum(axis=1, keepdims=True)
            pwms.append(Pwm(cols, name))
            name = None
    if not alphabet_seen:
        raise MemeFormatError(f"{source}: missing 'ALPHABET= ACGT' line")
    return pwms


def read_meme_minimal(path) -> list[Pwm]:
    with open(path, encoding="ascii") as fh:
        return _parse_meme(fh.read().splitlines(), str(path))


def load_bundled_motifs() -> list[Pwm]:
    """Small demo set of consensus-derived motifs shipped with the package."""
    text = resources.files("deepmotif").joinpath("known_motifs.meme").read_text()
    return _parse_meme(text.splitlines(), "known_motifs.meme")
