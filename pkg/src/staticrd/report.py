"""Side-by-side comparison of two reuse profiles: bin table, hit rates, CSV and SVG."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from html import escape

from .cache import PAPER_CACHES, CacheConfig, hit_rate
from .errors import EmptyHistogram
from .oracle import COLD, ReuseHistogram

DEFAULT_MIN_FREQ = 800


@dataclass(frozen=True)
class BinRow:
    distance: int
    freq_a: int
    freq_b: int

    @property
    def abs_error(self) -> int:
        return abs(self.freq_a - self.freq_b)

    @property
    def rel_error(self) -> float:
        # relative to the larger side so that it stays in [0, 1] and is defined for empty bins
        top = max(self.freq_a, self.freq_b)
        return self.abs_error / top if top else 0.0


def _rate(hist: ReuseHistogram, cfg: CacheConfig):
    try:
        return hit_rate(hist, cfg)
    except EmptyHistogram:
        return None


@dataclass
class ComparisonReport:
    label_a: str
    label_b: str
    rows: list[BinRow]
    total_a: int
    total_b: int
    cold_a: int
    cold_b: int
    hit_rates: dict[str, tuple]  # cache label -> (rate_a, rate_b)
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, a: ReuseHistogram, b: ReuseHistogram, caches=PAPER_CACHES, *, label_a="static",
              label_b="oracle", timings=None, warnings=()) -> ComparisonReport:
        dists = sorted(set(a.bins) | set(b.bins))
        rows = [BinRow(d, a.bins.get(d, 0), b.bins.get(d, 0)) for d in dists]
        notes = list(warnings)
        if a.total != b.total:
            notes.append(f"totals differ: {label_a} {a.total} vs {label_b} {b.total}")
        rates = {cfg.label: (_rate(a, cfg), _rate(b, cfg)) for cfg in caches}
        return cls(label_a, label_b, rows, a.total, b.total, a.cold, b.cold, rates, dict(timings or {}), notes)

    @property
    def matched_mass(self) -> float:
        """Share of ``b``'s references that ``a`` puts in exactly the same bin."""
        if not self.total_b:
            return 1.0 if not self.total_a else 0.0
        return sum(min(r.freq_a, r.freq_b) for r in self.rows) / self.total_b

    @property
    def max_hit_rate_gap(self) -> float:
        gaps = [abs(x - y) for x, y in self.hit_rates.values() if x is not None and y is not None]
        return max(gaps, default=0.0)

    def to_json(self) -> dict:
        return {
            "labels": [self.label_a, self.label_b],
            "totals": [self.total_a, self.total_b],
            "cold": [self.cold_a, self.cold_b],
            "matched_mass": self.matched_mass,
            "hit_rates": {k: list(v) for k, v in self.hit_rates.items()},
            "max_hit_rate_gap": self.max_hit_rate_gap,
            "bins": [[r.distance, r.freq_a, r.freq_b, r.abs_error, r.rel_error] for r in self.rows],
            "timings": self.timings,
            "warnings": self.warnings,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["distance", f"freq_{self.label_a}", f"freq_{self.label_b}", "abs_error", "rel_error"])
        for r in self.rows:
            w.writerow([r.distance, r.freq_a, r.freq_b, r.abs_error, f"{r.rel_error:.6g}"])
        return buf.getvalue()

    def summary(self) -> str:
        a, b = self.label_a, self.label_b
        lines = [
            f"total refs   {a} {self.total_a}  {b} {self.total_b}",
            f"cold misses  {a} {self.cold_a}  {b} {self.cold_b}",
            f"bins         {len(self.rows)}  matched mass {self.matched_mass:.4f}",
        ]
        for label, (x, y) in self.hit_rates.items():
            fx = "n/a" if x is None else f"{x:.4f}"
            fy = "n/a" if y is None else f"{y:.4f}"
            gap = "" if x is None or y is None else f"  gap {abs(x - y) * 100:.2f} pts"
            lines.append(f"hit rate {label:>5}  {a} {fx}  {b} {fy}{gap}")
        for k, v in self.timings.items():
            lines.append(f"time {k} {v:.3f}s")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines) + "\n"

    def to_svg(self, min_freq: int = DEFAULT_MIN_FREQ, width: int = 900, height: int = 360) -> str:
        """Grouped bar chart of the bins where either side exceeds ``min_freq``."""
        rows = [r for r in self.rows if max(r.freq_a, r.freq_b) > min_freq]
        pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 70
        plot_w, plot_h = width - pad_l - pad_r, height - pad_t - pad_b
        top = max((max(r.freq_a, r.freq_b) for r in rows), default=1)
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{pad_l}" y="18" font-size="12">reuse distance histogram, freq &gt; {min_freq}</text>',
            f'<line x1="{pad_l}" y1="{pad_t + plot_h}" x2="{pad_l + plot_w}" y2="{pad_t + plot_h}" stroke="black"/>',
            f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + plot_h}" stroke="black"/>',
            f'<text x="{pad_l - 6}" y="{pad_t + 4}" text-anchor="end">{top}</text>',
            f'<text x="{pad_l - 6}" y="{pad_t + plot_h}" text-anchor="end">0</text>',
        ]
        if rows:
            slot = plot_w / len(rows)
            bar = max(slot * 0.4, 0.5)
            for n, r in enumerate(rows):
                x0 = pad_l + n * slot + slot * 0.1
                for k, (freq, colour) in enumerate(((r.freq_a, "#3b6ea5"), (r.freq_b, "#e07b39"))):
                    h = plot_h * freq / top
                    out.append(f'<rect x="{x0 + k * bar:.2f}" y="{pad_t + plot_h - h:.2f}" '
                               f'width="{bar:.2f}" height="{h:.2f}" fill="{colour}"/>')
                if len(rows) <= 60 or n % max(1, len(rows) // 30) == 0:
                    lx = x0 + bar
                    label = "cold" if r.distance == COLD else str(r.distance)
                    out.append(f'<text x="{lx:.2f}" y="{pad_t + plot_h + 12}" text-anchor="end" '
                               f'transform="rotate(-60 {lx:.2f} {pad_t + plot_h + 12})">{label}</text>')
        else:
            out.append(f'<text x="{pad_l + 10}" y="{pad_t + plot_h / 2}">no bin above threshold</text>')
        lx = pad_l + plot_w - 150
        for k, (name, colour) in enumerate(((self.label_a, "#3b6ea5"), (self.label_b, "#e07b39"))):
            y = pad_t + 4 + 14 * k
            out.append(f'<rect x="{lx}" y="{y}" width="10" height="10" fill="{colour}"/>')
            out.append(f'<text x="{lx + 14}" y="{y + 9}">{escape(name)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
