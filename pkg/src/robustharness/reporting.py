"""Report artifacts: score tables, sweep curves, delta matrices, galleries.

Everything written here is a pure function of the results: canonical JSON
(sorted keys, 6-significant-digit floats, LF endings), CSV with a header
row, hand-emitted SVG 1.1. No timestamps, hostnames, or absolute paths
appear in any output, so identical runs produce byte-identical trees.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .classifier import open_connection
from .dataset import DatasetManifest
from .errors import ConfigError, ReportError
from .evaluator import (
    Candidate,
    PropertyResult,
    PropertySpec,
    _model_view,
    apply_candidate,
    combination_delta,
    resolve_transforms,
)
from .imaging import RandomStream, decode_png, encode_png
from .transforms import identity_theta

REPORT_FORMATS = ("json", "csv", "svg")


@dataclass
class SweepCurve:
    property_id: str
    dim_name: str
    points: list[dict]  # {theta_value, robustness_fraction, evaluated_samples}


@dataclass
class FailureGroup:
    class_label: int
    property_id: str
    members: list[dict]


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "+-_." else "_" for c in text)


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def _canon(value) -> str:
    if isinstance(value, dict):
        items = sorted(value.items(), key=lambda kv: kv[0])
        return "{" + ",".join(f"{json.dumps(k)}:{_canon(v)}" for k, v in items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_canon(v) for v in value) + "]"
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return "null"
        return format(value, ".6g")
    if isinstance(value, (int, str)):
        return json.dumps(value)
    raise ReportError(f"cannot serialize {type(value).__name__}")


def canonical_json(value) -> str:
    """Deterministic JSON document text, newline-terminated."""
    return _canon(value) + "\n"


def result_record(result: PropertyResult) -> dict:
    verdicts = []
    for v in result.verdicts:
        verdicts.append(
            {
                "sample_id": v.sample_id,
                "original_label": v.original_prediction.label,
                "original_scores": list(v.original_prediction.scores),
                "correct": v.correct,
                "robust": v.robust,
                "counterexample": v.counterexample,
                "candidates_evaluated": v.candidates_evaluated,
            }
        )
    return {
        "property_id": result.property_id,
        "accuracy": result.accuracy,
        "robustness_score": result.robustness_score,
        "total": len(result.verdicts),
        "correct_count": result.correct_count,
        "robust_count": result.robust_count,
        "non_robust_count": result.non_robust_count,
        "verdicts": verdicts,
    }


# ---------------------------------------------------------------------------
# Parameter-space sweeps
# ---------------------------------------------------------------------------


def _locate_free_dim(spec: PropertySpec, dim_name: str):
    """Find the swept dim; 'kind.name' disambiguates compositions."""
    kind = None
    name = dim_name
    if "." in dim_name:
        kind, name = dim_name.split(".", 1)
    hits = []
    for ti, t in enumerate(spec.transforms):
        if kind is not None and t.kind != kind:
            continue
        for d in t.domain.dims:
            if d.name == name:
                hits.append((ti, d))
    if not hits:
        raise ConfigError(f"{spec.property_id}: no dim named {dim_name!r}")
    if len(hits) > 1:
        raise ConfigError(
            f"{spec.property_id}: dim {dim_name!r} is ambiguous; qualify as kind.name"
        )
    return hits[0]


def _pinned_thetas(spec: PropertySpec, free_ti: int, free_name: str) -> list[dict]:
    thetas = []
    for ti, t in enumerate(spec.transforms):
        base = identity_theta(t)
        if base is None:
            base = {}
        theta = dict(base)
        needed = [d.name for d in t.domain.dims if not (ti == free_ti and d.name == free_name)]
        missing = [n for n in needed if n not in theta]
        if missing:
            raise ConfigError(
                f"{spec.property_id}: cannot pin {t.kind} dims {missing} (no identity value)"
            )
        thetas.append(theta)
    return thetas


def _sweep_values(dim, steps: int) -> list:
    if dim.kind == "continuous":
        lo, hi = float(dim.low), float(dim.high)
        return [lo + (hi - lo) * i / (steps - 1) if steps > 1 else lo for i in range(steps)]
    if dim.kind == "integer":
        if dim.high is None:
            raise ConfigError(f"dim {dim.name!r} has no fixed upper bound; override it to sweep")
        lo, hi = dim.low, dim.high
        values = []
        for i in range(steps):
            v = lo + (hi - lo) * i / (steps - 1) if steps > 1 else lo
            r = int(math.floor(v + 0.5))
            if not values or r > values[-1]:  # rounding can collide; keep strictly increasing
                values.append(r)
        return values
    raise ConfigError(f"dim {dim.name!r} is {dim.kind}; sweeps need a numeric dim")


def sweep(
    dataset: DatasetManifest,
    spec: PropertySpec,
    dim_name: str,
    endpoint,
    steps: int,
    *,
    split: str = "test",
    run_seed: int = 0,
) -> SweepCurve:
    """Fraction of originally-correct samples still correct at each value
    of one dim, all other dims held at their identity values. Every
    sample is evaluated at every step (no early stop)."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    free_ti, free_dim = _locate_free_dim(spec, dim_name)
    values = _sweep_values(free_dim, steps)
    pinned = _pinned_thetas(spec, free_ti, free_dim.name)
    seed = spec.seed if spec.seed is not None else run_seed

    samples = dataset.split(split)
    iw = getattr(endpoint, "input_width", 0)
    ih = getattr(endpoint, "input_height", 0)
    still_correct = [0] * len(values)
    evaluated = 0

    conn = open_connection(endpoint)
    try:
        for sample in samples:
            native = sample.load()
            original = conn.predict([_model_view(native, iw, ih)])[0]
            if original.label != sample.label:
                continue
            evaluated += 1
            h, w = native.shape[:2]
            resolved = resolve_transforms(spec, w, h)
            skip_flip = sample.label not in dataset.flip_invariant_classes
            for k, value in enumerate(values):
                thetas = [dict(t) for t in pinned]
                thetas[free_ti][free_dim.name] = value
                stream = RandomStream.derive(seed, sample.sample_id, spec.property_id, k)
                cand = Candidate(k, thetas, 0, stream)
                perturbed = apply_candidate(resolved.transforms, native, cand, skip_flip)
                pred = conn.predict([_model_view(perturbed, iw, ih)])[0]
                if pred.label == sample.label:
                    still_correct[k] += 1
    finally:
        if conn is not endpoint:
            conn.close()

    points = [
        {
            "theta_value": value,
            # vacuously 1.0 when nothing was correct to begin with
            "robustness_fraction": (still_correct[k] / evaluated) if evaluated else 1.0,
            "evaluated_samples": evaluated,
        }
        for k, value in enumerate(values)
    ]
    return SweepCurve(spec.property_id, dim_name, points)


def write_sweep(curve: SweepCurve, out_dir) -> list:
    """CSV table plus an SVG line plot for one curve."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"sweep_{_slug(curve.property_id)}_{_slug(curve.dim_name)}"
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["theta_value", "robustness_fraction", "evaluated_samples"])
        for p in curve.points:
            writer.writerow(
                [
                    format(float(p["theta_value"]), ".6g"),
                    "%.6f" % p["robustness_fraction"],
                    p["evaluated_samples"],
                ]
            )
    svg_path = out_dir / f"{stem}.svg"
    svg_path.write_text(_sweep_svg(curve), newline="\n")
    return [csv_path, svg_path]


# ---------------------------------------------------------------------------
# Combination delta matrix
# ---------------------------------------------------------------------------


def delta_matrix(results: list[PropertyResult]) -> list[dict]:
    """Signed robustness deltas for every pair result in the input.

    A pair is any property whose id contains '+'; its parts are located
    by id among the other results. Entries appear in input order."""
    by_id = {r.property_id: r for r in results}
    entries = []
    for r in results:
        if "+" not in r.property_id:
            continue
        pieces = r.property_id.split("+")
        parts = None
        for cut in range(1, len(pieces)):
            left = "+".join(pieces[:cut])
            right = "+".join(pieces[cut:])
            if left in by_id and right in by_id:
                parts = (by_id[left], by_id[right])
                break
        if parts is None:
            raise ReportError(f"pair {r.property_id!r}: part results not found")
        entries.append(
            {
                "pair_id": r.property_id,
                "part_ids": [parts[0].property_id, parts[1].property_id],
                "delta": combination_delta(r, list(parts)),
            }
        )
    return entries


def write_delta_matrix(entries: list[dict], out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "deltas.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair_id", "part_a", "part_b", "delta_pp"])
        for e in entries:
            delta = "" if e["delta"] is None else "%.6f" % e["delta"]
            writer.writerow([e["pair_id"], e["part_ids"][0], e["part_ids"][1], delta])
    svg_path = out_dir / "deltas.svg"
    svg_path.write_text(_delta_svg(entries), newline="\n")
    return [csv_path, svg_path]


# ---------------------------------------------------------------------------
# Failure galleries
# ---------------------------------------------------------------------------


def failure_report(
    results: list[PropertyResult],
    specs: dict[str, PropertySpec],
    dataset: DatasetManifest,
    endpoint,
    out_dir,
    *,
    run_seed: int = 0,
) -> list[FailureGroup]:
    """Per-(class, property) gallery of non-robust samples.

    Each counterexample is replayed from its recorded parameter point,
    round-tripped through PNG, and re-fed to the endpoint. Members that
    still fool the model get original/perturbed image pairs; members that
    do not survive 8-bit quantization keep their JSON record with
    reproduced=false but no images. index.json and index.csv summarize
    the groups."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_sample = {s.sample_id: s for s in dataset.samples}
    iw = getattr(endpoint, "input_width", 0)
    ih = getattr(endpoint, "input_height", 0)

    grouped: dict[tuple[int, str], FailureGroup] = {}
    conn = open_connection(endpoint)
    try:
        for result in results:
            spec = specs.get(result.property_id)
            if spec is None:
                raise ReportError(f"no spec given for property {result.property_id!r}")
            seed = spec.seed if spec.seed is not None else run_seed
            for verdict in result.verdicts:
                if verdict.robust is not False:
                    continue
                sample = by_sample.get(verdict.sample_id)
                if sample is None:
                    raise ReportError(f"verdict for unknown sample {verdict.sample_id!r}")
                cx = verdict.counterexample
                native = sample.load()
                h, w = native.shape[:2]
                resolved = resolve_transforms(spec, w, h)
                stream = RandomStream.derive(
                    seed, sample.sample_id, spec.property_id, cx["candidate_index"]
                )
                if cx["theta_draws"]:
                    stream.uniforms(cx["theta_draws"])  # skip past the parameter draws
                cand = Candidate(cx["candidate_index"], cx["thetas"], cx["theta_draws"], stream)
                skip_flip = sample.label not in dataset.flip_invariant_classes
                perturbed = apply_candidate(resolved.transforms, native, cand, skip_flip)
                png_bytes = encode_png(perturbed)
                requantized = decode_png(png_bytes)
                pred = conn.predict([_model_view(requantized, iw, ih)])[0]
                reproduced = pred.label != sample.label

                key = (sample.label, result.property_id)
                group = grouped.get(key)
                if group is None:
                    group = FailureGroup(sample.label, result.property_id, [])
                    grouped[key] = group
                member = {
                    "sample_id": sample.sample_id,
                    "class_label": sample.label,
                    "property_id": result.property_id,
                    "candidate_index": cx["candidate_index"],
                    "theta_draws": cx["theta_draws"],
                    "thetas": cx["thetas"],
                    "predicted_label": cx["predicted_label"],
                    "requantized_label": pred.label,
                    "reproduced": reproduced,
                    "original_image": None,
                    "perturbed_image": None,
                }
                rel = f"failures/class_{sample.label:02d}/{_slug(result.property_id)}"
                gdir = out_dir / rel
                gdir.mkdir(parents=True, exist_ok=True)
                sid = _slug(sample.sample_id)
                if reproduced:
                    (gdir / f"{sid}_original.png").write_bytes(encode_png(native))
                    (gdir / f"{sid}_perturbed.png").write_bytes(png_bytes)
                    member["original_image"] = f"{rel}/{sid}_original.png"
                    member["perturbed_image"] = f"{rel}/{sid}_perturbed.png"
                (gdir / f"{sid}_theta.json").write_text(canonical_json(member), newline="\n")
                group.members.append(member)
    finally:
        if conn is not endpoint:
            conn.close()

    groups = [grouped[key] for key in sorted(grouped)]
    index = {
        "groups": [
            {
                "class_label": g.class_label,
                "property_id": g.property_id,
                "directory": f"failures/class_{g.class_label:02d}/{_slug(g.property_id)}",
                "members": g.members,
            }
            for g in groups
        ],
        "totals": {
            "non_robust": sum(len(g.members) for g in groups),
            "reproduced": sum(1 for g in groups for m in g.members if m["reproduced"]),
            "flagged": sum(1 for g in groups for m in g.members if not m["reproduced"]),
        },
    }
    (out_dir / "index.json").write_text(canonical_json(index), newline="\n")
    with open(out_dir / "index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class_label", "property_id", "non_robust", "reproduced"])
        for g in groups:
            writer.writerow(
                [
                    g.class_label,
                    g.property_id,
                    len(g.members),
                    sum(1 for m in g.members if m["reproduced"]),
                ]
            )
    return groups


# ---------------------------------------------------------------------------
# Score tables and charts
# ---------------------------------------------------------------------------


def emit_report(results: list[PropertyResult], out_dir, formats=REPORT_FORMATS) -> list:
    """report.json / scores.csv / scores.svg for the selected formats."""
    for fmt in formats:
        if fmt not in REPORT_FORMATS:
            raise ConfigError(f"unknown report format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        doc = {"properties": [result_record(r) for r in results]}
        path = out_dir / "report.json"
        path.write_text(canonical_json(doc), newline="\n")
        written.append(path)
    if "csv" in formats:
        path = out_dir / "scores.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["property_id", "accuracy", "robustness_score", "non_robust_count"])
            for r in results:
                score = "" if r.robustness_score is None else "%.6f" % r.robustness_score
                writer.writerow([r.property_id, "%.6f" % r.accuracy, score, r.non_robust_count])
        written.append(path)
    if "svg" in formats:
        path = out_dir / "scores.svg"
        path.write_text(_scores_svg(results), newline="\n")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# SVG emitters (1.1, hand-written, fully deterministic)
# ---------------------------------------------------------------------------

_SVG_OPEN = (
    '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
    'width="{w}" height="{h}" viewBox="0 0 {w} {h}">'
)
_FONT = 'font-family="monospace" font-size="11"'


def _scores_svg(results: list[PropertyResult]) -> str:
    bar_w, gap, plot_h, label_h, left = 48, 16, 180, 70, 40
    width = left + gap + max(1, len(results)) * (bar_w + gap)
    height = 20 + plot_h + label_h
    lines = [_SVG_OPEN.format(w=width, h=height)]
    lines.append(
        f'<line x1="{left}" y1="20" x2="{left}" y2="{20 + plot_h}" stroke="#333"/>'
    )
    for frac in (0.0, 0.5, 1.0):
        y = 20 + plot_h - frac * plot_h
        lines.append(
            f'<text x="{left - 6}" y="{y:.1f}" text-anchor="end" {_FONT}>{frac:.1f}</text>'
        )
    x = left + gap
    for r in results:
        score = r.robustness_score
        h = 0.0 if score is None else score * plot_h
        y = 20 + plot_h - h
        fill = "#bbb" if score is None else "#4878a8"
        lines.append(
            f'<rect x="{x}" y="{y:.1f}" width="{bar_w}" height="{h:.1f}" fill="{fill}"/>'
        )
        text = "n/a" if score is None else f"{score:.3f}"
        lines.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" text-anchor="middle" {_FONT}>{text}</text>'
        )
        lines.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{20 + plot_h + 14}" text-anchor="middle" '
            f'{_FONT} transform="rotate(30 {x + bar_w / 2:.1f} {20 + plot_h + 14})">'
            f"{_xml_escape(r.property_id)}</text>"
        )
        x += bar_w + gap
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _sweep_svg(curve: SweepCurve) -> str:
    width, height, pad = 420, 220, 44
    xs = [float(p["theta_value"]) for p in curve.points]
    lo, hi = min(xs), max(xs)
    span = (hi - lo) or 1.0
    pts = []
    for p in curve.points:
        px = pad + (float(p["theta_value"]) - lo) / span * (width - 2 * pad)
        py = height - pad - p["robustness_fraction"] * (height - 2 * pad)
        pts.append(f"{px:.1f},{py:.1f}")
    lines = [_SVG_OPEN.format(w=width, h=height)]
    lines.append(
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#333"/>'
    )
    lines.append(
        f'<polyline points="{" ".join(pts)}" fill="none" stroke="#4878a8" stroke-width="2"/>'
    )
    for frac in (0.0, 1.0):
        y = height - pad - frac * (height - 2 * pad)
        lines.append(f'<text x="{pad - 6}" y="{y:.1f}" text-anchor="end" {_FONT}>{frac:.0f}</text>')
    for value, anchor in ((lo, "start"), (hi, "end")):
        x = pad if anchor == "start" else width - pad
        lines.append(
            f'<text x="{x}" y="{height - pad + 16}" text-anchor="{anchor}" {_FONT}>'
            f"{value:.6g}</text>"
        )
    lines.append(
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" {_FONT}>'
        f"{_xml_escape(curve.property_id)} / {_xml_escape(curve.dim_name)}</text>"
    )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _delta_svg(entries: list[dict]) -> str:
    width, row_h, pad = 460, 22, 44
    height = 2 * pad + max(1, len(entries)) * row_h
    deltas = [e["delta"] for e in entries if e["delta"] is not None]
    extent = max([abs(d) for d in deltas] + [1.0])
    mid = width / 2

    def x_of(delta):
        return mid + (delta / extent) * (width / 2 - pad)

    lines = [_SVG_OPEN.format(w=width, h=height)]
    lines.append(f'<line x1="{mid:.1f}" y1="{pad}" x2="{mid:.1f}" y2="{height - pad}" stroke="#333"/>')
    lines.append(f'<text x="{mid:.1f}" y="{pad - 8}" text-anchor="middle" {_FONT}>0 pp</text>')
    for i, e in enumerate(entries):
        y = pad + i * row_h + row_h / 2
        label = _xml_escape(e["pair_id"])
        if e["delta"] is None:
            lines.append(f'<text x="8" y="{y:.1f}" {_FONT} fill="#999">{label} (n/a)</text>')
            continue
        x = x_of(e["delta"])
        color = "#a84848" if e["delta"] < 0 else "#48a860"
        lines.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="5" fill="{color}"/>')
        lines.append(f'<text x="8" y="{y + 4:.1f}" {_FONT}>{label} ({e["delta"]:+.1f})</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _xml_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
