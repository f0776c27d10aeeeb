"""Static HTML dashboard: class-optimization logos, saliency rows and
temporal score tracks for one sequence, with known motifs outlined."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .data import ALPHABET
from .motif import Pwm

CELL = 9  # pixel width of one sequence position
ROW = 18
LOGO_COL = 14
LOGO_HEIGHT = 60  # pixels for 2 bits
LETTER_COLORS = {"A": "#109648", "C": "#255c99", "G": "#f7b32b", "T": "#d62839"}
BOX_COLOR = "#ff69b4"


class DashboardError(ValueError):
    pass


@dataclass
class Annotation:
    name: str
    start: int  # 0-based
    width: int


@dataclass
class ModelPanel:
    """Everything the dashboard shows for one model."""

    name: str
    architecture: str
    score: float  # P(+) on the sequence
    saliency: np.ndarray | None = None
    temporal_forward: np.ndarray | None = None
    temporal_backward: np.ndarray | None = None
    optimized: Pwm | None = None

    @property
    def has_temporal(self) -> bool:
        return self.architecture != "CNN" and self.temporal_forward is not None


@dataclass
class DashboardSpec:
    title: str
    sequence_id: str
    sequence: str
    models: list[ModelPanel] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)

    def validate(self):
        n = len(self.sequence)
        if n == 0:
            raise DashboardError("dashboard sequence is empty")
        for m in self.models:
            for label, arr in (("saliency", m.saliency), ("forward", m.temporal_forward),
                               ("backward", m.temporal_backward)):
                if arr is not None and len(arr) != n:
                    raise DashboardError(
                        f"model {m.name!r}: {label} has length {len(arr)}, sequence has {n}")
        for a in self.annotations:
            if a.width < 1 or a.start < 0 or a.start + a.width > n:
                raise DashboardError(
                    f"annotation {a.name!r} [{a.start}, {a.start + a.width}) outside 0..{n}")


def _f(v: float) -> str:
    """Fixed formatting keeps the output byte-stable."""
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def saliency_color(value: float, vmax: float) -> str:
    """White at zero, pure red at ``vmax``."""
    a = 0.0 if vmax <= 0 else min(max(value / vmax, 0.0), 1.0)
    c = int(round(255 * (1.0 - a)))
    return f"#ff{c:02x}{c:02x}"


def temporal_color(p: float) -> str:
    """Blue below 0.5, white at 0.5, red above."""
    p = min(max(float(p), 0.0), 1.0)
    if p >= 0.5:
        c = int(round(255 * (1.0 - 2.0 * (p - 0.5))))
        return f"#ff{c:02x}{c:02x}"
    c = int(round(255 * (2.0 * p)))
    return f"#{c:02x}{c:02x}ff"


def logo_stacks(p: Pwm) -> list[list[tuple[str, float]]]:
    """Per column, ``(letter, bits)`` pairs bottom to top; zero-height letters omitted."""
    ic = p.information_content()
    out = []
    for col, bits in zip(p.columns, ic):
        heights = [(ALPHABET[j], float(col[j] * bits)) for j in range(4)]
        stack = sorted((h for h in heights if h[1] > 1e-9), key=lambda h: (h[1], h[0]))
        out.append(stack)
    return out


def render_logo(p: Pwm) -> str:
    """Inline SVG logo; letter heights follow information content."""
    stacks = logo_stacks(p)
    width = LOGO_COL * len(stacks)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" class="logo" width="{width}" '
             f'height="{LOGO_HEIGHT}" viewBox="0 0 {width} {LOGO_HEIGHT}" '
             f'data-name={quoteattr(p.name)}>']
    for i, stack in enumerate(stacks):
        x = i * LOGO_COL
        y = float(LOGO_HEIGHT)
        parts.append(f'<g class="column" data-index="{i}" data-bits="{_f(sum(h for _, h in stack))}">')
        for letter, bits in stack:
            h = bits / 2.0 * LOGO_HEIGHT
            # glyph cap height is about 0.72 of the font size; scale that box to h
            parts.append(
                f'<text class="letter" data-letter="{letter}" data-height="{_f(bits)}" '
                f'fill="{LETTER_COLORS[letter]}" font-family="monospace" font-weight="bold" '
                f'font-size="20" transform="translate({_f(x)},{_f(y)}) scale(0.8,{_f(h / 14.4)})">'
                f'{letter}</text>')
            y -= h
        parts.append("</g>")
    parts.append("</svg>")
    return "".join(parts)


def _boxes(annotations, height):
    return "".join(
        f'<rect class="known-motif" data-name={quoteattr(a.name)} x="{a.start * CELL}" y="0" '
        f'width="{a.width * CELL}" height="{height}" fill="none" stroke="{BOX_COLOR}" '
        f'stroke-width="2"/>' for a in annotations)


def _saliency_row(panel: ModelPanel, seq: str, vmax: float, annotations) -> str:
    width = CELL * len(seq)
    cells = []
    for i, (ch, v) in enumerate(zip(seq, panel.saliency)):
        cells.append(f'<rect class="cell" x="{i * CELL}" y="0" width="{CELL}" height="{ROW}" '
                     f'fill="{saliency_color(float(v), vmax)}" data-value="{_f(float(v))}"/>'
                     f'<text x="{i * CELL + CELL / 2:g}" y="13" font-family="monospace" '
                     f'font-size="10" text-anchor="middle">{ch}</text>')
    return (f'<div class="saliency-row" data-model={quoteattr(panel.name)}>'
            f'<span class="model-label">{escape(panel.name)} '
            f'<span class="score">{panel.score:.3f}</span></span>'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{ROW}">'
            f'{"".join(cells)}{_boxes(annotations, ROW)}</svg></div>')


def _track(label, values, annotations):
    width = CELL * len(values)
    cells = "".join(
        f'<rect x="{i * CELL}" y="0" width="{CELL}" height="{ROW}" fill="{temporal_color(v)}" '
        f'data-value="{_f(float(v))}"/>' for i, v in enumerate(values))
    return (f'<div class="track" data-direction="{label}"><span class="track-label">{label}</span>'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{ROW}">'
            f'{cells}{_boxes(annotations, ROW)}</svg></div>')


def _temporal_block(panel: ModelPanel, annotations) -> str:
    back = panel.temporal_backward if panel.temporal_backward is not None else []
    return (f'<div class="temporal-block" data-model={quoteattr(panel.name)}>'
            f'<h3>{escape(panel.name)}</h3>'
            f'{_track("forward", panel.temporal_forward, annotations)}'
            f'{_track("backward", back, annotations)}</div>')


STYLE = ("body{font-family:sans-serif;margin:1em}section{margin-bottom:1.5em}"
         ".model-label{display:inline-block;width:14em}.track-label{display:inline-block;"
         "width:6em}.placeholder,.unavailable{color:#777;font-style:italic}"
         ".logo-block{display:inline-block;margin-right:1em}")


def render_html(spec: DashboardSpec) -> str:
    spec.validate()
    seq = spec.sequence
    out = ['<?xml version="1.0" encoding="UTF-8"?>\n<!DOCTYPE html>\n',
           '<html xmlns="http://www.w3.org/1999/xhtml" lang="en"><head><meta charset="UTF-8"/>',
           f'<title>{escape(spec.title)}</title><style>{STYLE}</style></head><body>',
           f'<h1>{escape(spec.title)}</h1>',
           f'<p class="sequence-id">Sequence {escape(spec.sequence_id)} ({len(seq)} nt)</p>']

    out.append('<section id="class-optimization"><h2>Class optimization</h2>')
    logos = [m for m in spec.models if m.optimized is not None]
    if logos:
        for m in logos:
            out.append(f'<div class="logo-block" data-model={quoteattr(m.name)}>'
                       f'<h3>{escape(m.name)}</h3>{render_logo(m.optimized)}</div>')
    else:
        out.append('<p class="placeholder">No class-optimized inputs.</p>')
    out.append("</section>")

    out.append('<section id="saliency"><h2>Saliency maps</h2>')
    rows = [m for m in spec.models if m.saliency is not None]
    if rows:
        vmax = max(float(np.max(m.saliency)) for m in rows)
        out.extend(_saliency_row(m, seq, vmax, spec.annotations) for m in rows)
    else:
        out.append('<p class="placeholder">No saliency maps.</p>')
    out.append("</section>")

    out.append('<section id="temporal"><h2>Temporal output scores</h2>')
    blocks = [m for m in spec.models if m.has_temporal]
    if blocks:
        out.extend(_temporal_block(m, spec.annotations) for m in blocks)
    for m in spec.models:
        if m.architecture == "CNN":
            out.append(f'<p class="unavailable" data-model={quoteattr(m.name)}>'
                       f'{escape(m.name)}: temporal scores are not defined for CNN models.</p>')
    if not blocks and not any(m.architecture == "CNN" for m in spec.models):
        out.append('<p class="placeholder">No temporal output scores.</p>')
    out.append("</section>")

    if spec.annotations:
        out.append('<section id="known-motifs"><h2>Known motifs</h2><ul>')
        out.extend(f'<li>{escape(a.name)}: positions {a.start + 1}-{a.start + a.width}</li>'
                   for a in spec.annotations)
        out.append("</ul></section>")
    out.append("</body></html>\n")
    return "".join(out)


def render_dashboard(spec: DashboardSpec, path) -> Path:
    """Write the dashboard as one self-contained file."""
    html = render_html(spec)
    path = Path(path)
    try:
        path.write_text(html, encoding="utf-8")
    except OSError as exc:
        raise DashboardError(f"cannot write dashboard to {path}: {exc}") from exc
    return path
