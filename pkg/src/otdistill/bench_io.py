"""Dataset ingestion, synthetic benchmarks, result records and reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .distributions import LabeledMeasure, MultiDomainDataset, balanced_labels
from .errors import (
    InconsistentDim,
    MultipleUnlabeledDomains,
    NoUnlabeledDomain,
    ParseError,
    RecordsCorrupt,
    SchemaVersionMismatch,
)

SCHEMA_VERSION = 1
RECORDS_HEADER = f"# otdistill run records, schema {SCHEMA_VERSION}\n"


class BenchmarkShape(NamedTuple):
    name: str
    n_samples: int
    n_domains: int
    n_classes: int
    n_features: int


# sizes of the four public MSDA benchmarks the method was evaluated on
TABLE1 = {
    "CSTR": BenchmarkShape("CSTR", 2860, 7, 13, 7),
    "TEP": BenchmarkShape("TEP", 17289, 6, 29, 128),
    "CWRU": BenchmarkShape("CWRU", 24000, 3, 10, 256),
    "Caltech-Office 10": BenchmarkShape("Caltech-Office 10", 2533, 4, 10, 4096),
}


# -- synthetic benchmark --------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_domains: int = 4
    n_classes: int = 5
    d: int = 8
    samples_per_domain: int = 2000
    rotation_max_deg: float = 15.0
    translation_scale: float = 1.0
    scale_jitter: float = 0.1
    class_sep: float = 3.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_domains < 2:
            raise ValueError("need at least two domains")
        if not self.class_sep > 0:
            raise ValueError("class_sep must be positive")
        if self.n_classes < 1 or self.d < 1 or self.samples_per_domain < self.n_classes:
            raise ValueError("need n_classes >= 1, d >= 1 and at least one sample per class")
        if not 0 <= self.scale_jitter < 1:
            raise ValueError("scale_jitter must lie in [0, 1)")


def _plane_rotation(rng, d, max_deg):
    angle = np.deg2rad(rng.uniform(-max_deg, max_deg))
    if d < 2 or angle == 0:
        return np.eye(d)
    q, _ = np.linalg.qr(rng.normal(size=(d, 2)))
    u, v = q[:, 0], q[:, 1]
    return (
        np.eye(d)
        + (np.cos(angle) - 1) * (np.outer(u, u) + np.outer(v, v))
        + np.sin(angle) * (np.outer(v, u) - np.outer(u, v))
    )


def gen_synth(spec: SynthSpec) -> tuple[MultiDomainDataset, np.ndarray]:
    """Gaussian class blobs under per-domain rotation, translation and scaling.

    The last domain is the target; its labels are returned separately.
    """
    rng = np.random.default_rng(spec.seed)
    d, nc = spec.d, spec.n_classes
    if nc <= d:
        frame, _ = np.linalg.qr(rng.normal(size=(d, d)))
        means = spec.class_sep * frame[:, :nc].T
    else:
        dirs = rng.normal(size=(nc, d))
        means = spec.class_sep * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    domains = {}
    hidden = None
    width = len(str(spec.n_domains - 1))
    for k in range(spec.n_domains):
        R = _plane_rotation(rng, d, spec.rotation_max_deg)
        direction = rng.normal(size=d)
        t = spec.translation_scale * direction / np.linalg.norm(direction)
        s = rng.uniform(1 - spec.scale_jitter, 1 + spec.scale_jitter, size=d)
        y = rng.permutation(balanced_labels(spec.samples_per_domain, nc))
        z = means[y] + spec.noise * rng.normal(size=(y.size, d))
        x = (z * s) @ R.T + t
        name = f"domain{k:0{width}d}"
        if k == spec.n_domains - 1:
            hidden = y
            domains[name] = LabeledMeasure(x, None, nc)
        else:
            domains[name] = LabeledMeasure(x, y, nc)
    return MultiDomainDataset(domains, name, nc, d), hidden


# -- CSV ------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_rows(path, rows: Iterable[tuple[str, str, np.ndarray]], d: int) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain", "label"] + [f"f{j}" for j in range(d)])
    for domain, label, x in rows:
        w.writerow([domain, label] + [_fmt(v) for v in x])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def save_csv(path, dataset: MultiDomainDataset) -> None:
    def rows():
        for name, m in dataset.domains.items():
            for i in range(m.n):
                label = "" if m.labels is None else dataset.class_names[m.labels[i]]
                yield name, label, m.support[i]

    write_rows(path, rows(), dataset.feature_dim)


def read_rows(path) -> tuple[dict[str, tuple[np.ndarray, list[str]]], int]:
    """Parse a dataset CSV into ``{domain: (features, label strings)}``."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file") from None
        if header[:2] != ["domain", "label"] or len(header) < 3:
            raise ParseError(1, "header must start with domain,label followed by feature columns")
        d = len(header) - 2
        if header[2:] != [f"f{j}" for j in range(d)]:
            raise ParseError(1, "feature columns must be named f0..f{d-1}")
        feats: dict[str, list] = defaultdict(list)
        labels: dict[str, list] = defaultdict(list)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise InconsistentDim(f"line {lineno}: expected {d} features, got {len(row) - 2}")
            try:
                x = [float(v) for v in row[2:]]
            except ValueError:
                raise ParseError(lineno, "non-numeric feature value") from None
            if not all(math.isfinite(v) for v in x):
                raise ParseError(lineno, "non-finite feature value")
            feats[row[0]].append(x)
            labels[row[0]].append(row[1])
    return {k: (np.array(feats[k], dtype=float), labels[k]) for k in feats}, d


def load_csv(path) -> MultiDomainDataset:
    domains, d = read_rows(path)
    vocab = sorted({lab for _, labs in domains.values() for lab in labs if lab != ""})
    index = {lab: i for i, lab in enumerate(vocab)}
    unlabeled = [k for k, (_, labs) in domains.items() if all(lab == "" for lab in labs)]
    if not unlabeled:
        raise NoUnlabeledDomain("no domain has all labels empty")
    if len(unlabeled) > 1:
        raise MultipleUnlabeledDomains(f"unlabeled domains: {unlabeled}")
    if not vocab:
        raise NoUnlabeledDomain("no labeled source domain")
    out = {}
    for k, (x, labs) in domains.items():
        if k == unlabeled[0]:
            out[k] = LabeledMeasure(x, None, len(vocab))
        else:
            if any(lab == "" for lab in labs):
                raise ParseError(0, f"domain {k!r} mixes labeled and unlabeled rows")
            out[k] = LabeledMeasure(x, np.array([index[lab] for lab in labs]), len(vocab))
    return MultiDomainDataset(out, unlabeled[0], len(vocab), d, tuple(vocab))


def save_labels(path, labels: Sequence[int], class_names: Sequence[str]) -> None:
    Path(path).write_text("label\n" + "".join(f"{class_names[int(y)]}\n" for y in labels), encoding="utf-8")


def load_labels(path, class_names: Sequence[str]) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "label":
        raise ParseError(1, "label file must start with a 'label' header")
    index = {c: i for i, c in enumerate(class_names)}
    out = []
    for lineno, lab in enumerate(lines[1:], start=2):
        if lab not in index:
            raise ParseError(lineno, f"unknown label {lab!r}")
        out.append(index[lab])
    return np.array(out, dtype=np.int64)


# -- run records ------------------------------------------------------------------

@dataclass
class RunRecord:
    benchmark: str
    target: str
    method: str
    spc: int
    seed: int
    accuracy: float | None
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None
    train_time: float | None = None
    eval_time: float | None = None

    def to_json(self, timing: bool = False) -> str:
        d = asdict(self)
        if not timing:
            d.pop("train_time")
            d.pop("eval_time")
        d["schema"] = SCHEMA_VERSION
        return json.dumps(d, sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        version = d.pop("schema", None)
        if version != SCHEMA_VERSION:
            raise SchemaVersionMismatch(f"record schema {version!r}, expected {SCHEMA_VERSION}")
        acc = d.get("accuracy")
        if acc is not None and not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        return cls(**d)


def write_records(path, records: Iterable[RunRecord], append: bool = False, timing: bool = False) -> None:
    """JSON-lines, one record per line; each line goes out in a single write."""
    path = Path(path)
    fresh = not append or not path.exists() or path.stat().st_size == 0
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        if fresh:
            fh.write(RECORDS_HEADER)
        for r in records:
            fh.write(r.to_json(timing) + "\n")
            fh.flush()


def read_records(path) -> list[RunRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordsCorrupt(lineno, f"invalid JSON ({e.msg})") from None
            if not isinstance(d, dict):
                raise RecordsCorrupt(lineno, "record is not an object")
            try:
                out.append(RunRecord.from_dict(d))
            except SchemaVersionMismatch:
                raise
            except (TypeError, ValueError) as e:
                raise RecordsCorrupt(lineno, str(e)) from None
    return out


# -- aggregation and reports ------------------------------------------------------

@dataclass(frozen=True)
class AggregateRow:
    benchmark: str
    method: str
    spc: int
    mean_acc: float
    ci95: float
    n_seeds: int


def aggregate(records: Iterable[RunRecord]) -> list[AggregateRow]:
    """Mean accuracy and normal-approximation 95% CI over seeds, per cell."""
    cells: dict[tuple, list[float]] = defaultdict(list)
    for r in records:
        if r.error is None and r.accuracy is not None:
            cells[(r.benchmark, r.method, r.spc)].append(r.accuracy)
    rows = []
    for (bench, method, spc), accs in sorted(cells.items()):
        a = np.asarray(accs)
        ci = 1.96 * a.std(ddof=1) / np.sqrt(a.size) if a.size > 1 else 0.0
        rows.append(AggregateRow(bench, method, spc, float(a.mean()), float(ci), int(a.size)))
    return rows


def write_aggregate(path, rows: Sequence[AggregateRow]) -> None:
    lines = ["method,spc,mean_acc,ci95,n_seeds"]
    lines += [f"{r.method},{r.spc},{_fmt(r.mean_acc)},{_fmt(r.ci95)},{r.n_seeds}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"]


def _svg_chart(title: str, rows: Sequence[AggregateRow]) -> str:
    W, H = 640, 400
    left, right, top, bottom = 60, 170, 40, 50
    pw, ph = W - left - right, H - top - bottom
    spcs = sorted({r.spc for r in rows})
    lo, hi = math.log10(min(spcs)), math.log10(max(spcs))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5

    def px(spc):
        return left + pw * (math.log10(spc) - lo) / (hi - lo)

    def py(acc):
        return top + ph * (1.0 - min(max(acc, 0.0), 1.0))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = py(tick)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{tick:.2f}</text>')
    for s in spcs:
        x = px(s)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{s}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">samples per class (log scale)</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {top + ph / 2:.1f})">target accuracy</text>')

    methods = sorted({r.method for r in rows})
    for i, method in enumerate(methods):
        color = _PALETTE[i % len(_PALETTE)]
        pts = sorted((r for r in rows if r.method == method), key=lambda r: r.spc)
        coords = " ".join(f"{px(r.spc):.2f},{py(r.mean_acc):.2f}" for r in pts)
        out.append(f'<polyline class="series" data-method={quoteattr(method)} fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for r in pts:
            x = px(r.spc)
            y0, y1 = py(r.mean_acc - r.ci95), py(r.mean_acc + r.ci95)
            out.append(f'<line class="whisker" x1="{x:.2f}" y1="{y0:.2f}" x2="{x:.2f}" y2="{y1:.2f}" stroke="{color}"/>')
            out.append(f'<circle cx="{x:.2f}" cy="{py(r.mean_acc):.2f}" r="3" fill="{color}"/>')
        ly = top + 10 + 18 * i
        lx = left + pw + 15
        out.append(f'<g class="legend-entry"><line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>'
                   f'<text x="{lx + 26}" y="{ly + 4}" font-family="sans-serif" font-size="12">{escape(method)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name) or "benchmark"


def emit_report(records: Iterable[RunRecord], out_dir) -> list[Path]:
    rows = aggregate(records)
    if not rows:
        raise ValueError("no successful records to report")
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    written = [out_dir / "aggregate.csv"]
    write_aggregate(written[0], rows)
    for bench in sorted({r.benchmark for r in rows}):
        path = out_dir / f"{_slug(bench)}.svg"
        path.write_text(_svg_chart(bench, [r for r in rows if r.benchmark == bench]), encoding="utf-8")
        written.append(path)
    return written
