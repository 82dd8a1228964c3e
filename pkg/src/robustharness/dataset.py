"""Dataset ingestion: generic CSV manifests, GTSRB-layout import, and a
deterministic synthetic generator used by the metric oracle tests.

A manifest row references an image file; decoding is deferred until the
evaluator asks for pixels. Relative image paths resolve against the
manifest's directory.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .imaging import RandomStream, encode_ppm, load_image

SPLITS = ("train", "test")
MANIFEST_HEADER = ["sample_id", "image_path", "label", "split"]
CLASSES_SIDECAR = "classes.txt"
FLIP_SIDECAR = "flip_invariant.txt"


@dataclass(frozen=True)
class LabeledSample:
    sample_id: str
    image_path: Path
    label: int
    split: str

    def load(self) -> np.ndarray:
        try:
            return load_image(self.image_path)
        except FileNotFoundError as exc:
            raise DatasetError(f"sample {self.sample_id}: missing file {self.image_path}") from exc


@dataclass
class DatasetManifest:
    num_classes: int
    class_names: list[str]
    flip_invariant_classes: frozenset[int]
    samples: list[LabeledSample] = field(default_factory=list)

    def split(self, name: str) -> list[LabeledSample]:
        return [s for s in self.samples if s.split == name]

    def validate(self) -> None:
        if self.num_classes < 2:
            raise DatasetError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.class_names) != self.num_classes:
            raise DatasetError(
                f"{len(self.class_names)} class names for {self.num_classes} classes"
            )
        if not self.samples:
            raise DatasetError("manifest has no samples")
        bad = [c for c in self.flip_invariant_classes if not 0 <= c < self.num_classes]
        if bad:
            raise DatasetError(f"flip-invariant class indices out of range: {sorted(bad)}")
        seen: set[str] = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise DatasetError(f"duplicate sample_id {s.sample_id!r}")
            seen.add(s.sample_id)
            if not 0 <= s.label < self.num_classes:
                raise DatasetError(
                    f"sample {s.sample_id}: label {s.label} outside [0, {self.num_classes})"
                )
            if s.split not in SPLITS:
                raise DatasetError(f"sample {s.sample_id}: unknown split {s.split!r}")


def _read_lines(path: Path) -> list[str]:
    return [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


def load_manifest(path) -> DatasetManifest:
    """Read a manifest CSV plus its classes sidecar (same directory)."""
    path = Path(path)
    root = path.parent
    classes_path = root / CLASSES_SIDECAR
    if not classes_path.is_file():
        raise DatasetError(f"missing classes sidecar {classes_path}")
    class_names = _read_lines(classes_path)
    flip_path = root / FLIP_SIDECAR
    flip: frozenset[int] = frozenset()
    if flip_path.is_file():
        try:
            flip = frozenset(int(v) for v in _read_lines(flip_path))
        except ValueError as exc:
            raise DatasetError(f"{flip_path}: non-integer class index") from exc

    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise DatasetError(f"{path}: header {header} != {MANIFEST_HEADER}")
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DatasetError(f"{path} row {rownum}: expected 4 fields, got {len(row)}")
            sample_id, image_path, label_s, split = row
            try:
                label = int(label_s)
            except ValueError:
                raise DatasetError(f"{path} row {rownum}: non-integer label {label_s!r}") from None
            img_path = Path(image_path)
            if not img_path.is_absolute():
                img_path = root / img_path
            if not img_path.is_file():
                raise DatasetError(f"{path} row {rownum}: image file not found: {img_path}")
            samples.append(LabeledSample(sample_id, img_path, label, split))

    manifest = DatasetManifest(
        num_classes=len(class_names),
        class_names=class_names,
        flip_invariant_classes=flip,
        samples=samples,
    )
    try:
        manifest.validate()
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    return manifest


def import_gtsrb(root, split: str = "train") -> DatasetManifest:
    """Walk a GTSRB-style tree: per-class dirs with semicolon annotation CSVs.

    Region-of-interest columns are ignored; the class count is inferred
    from the highest class id present.
    """
    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir()) if root.is_dir() else []
    if not class_dirs:
        raise DatasetError(f"{root}: no class subdirectories found")
    samples = []
    max_label = -1
    for d in class_dirs:
        annotations = sorted(d.glob("GT-*.csv"))
        if not annotations:
            raise DatasetError(f"{d}: missing GT-*.csv annotation file")
        for ann in annotations:
            with open(ann, newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh, delimiter=";")
                if reader.fieldnames is None or "Filename" not in reader.fieldnames or "ClassId" not in reader.fieldnames:
                    raise DatasetError(f"{ann}: expected Filename;...;ClassId header")
                for rownum, row in enumerate(reader, start=2):
                    try:
                        label = int(row["ClassId"])
                    except (TypeError, ValueError):
                        raise DatasetError(f"{ann} row {rownum}: bad ClassId") from None
                    fname = row["Filename"]
                    samples.append(
                        LabeledSample(f"{d.name}/{fname}", d / fname, label, split)
                    )
                    max_label = max(max_label, label)
    num_classes = max_label + 1
    manifest = DatasetManifest(
        num_classes=num_classes,
        class_names=[f"class_{k:02d}" for k in range(num_classes)],
        flip_invariant_classes=frozenset(),
        samples=samples,
    )
    manifest.validate()
    return manifest


def write_manifest(manifest: DatasetManifest, out_dir) -> Path:
    """Write manifest.csv plus sidecars; image paths stay where they are,
    stored relative to out_dir when possible."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for s in manifest.samples:
            try:
                shown = os.path.relpath(s.image_path, out_dir)
            except ValueError:  # different drive on Windows
                shown = str(Path(s.image_path).resolve())
            writer.writerow([s.sample_id, shown, str(s.label), s.split])
    (out_dir / CLASSES_SIDECAR).write_text(
        "\n".join(manifest.class_names) + "\n", encoding="utf-8"
    )
    flips = sorted(manifest.flip_invariant_classes)
    text = "\n".join(str(k) for k in flips) + "\n" if flips else ""
    (out_dir / FLIP_SIDECAR).write_text(text, encoding="utf-8")
    return manifest_path


def generate_synthetic(
    out_dir,
    num_classes: int,
    per_class: int,
    width: int,
    height: int,
    seed: int,
) -> DatasetManifest:
    """Write a dataset whose classes are separable by mean intensity.

    Class k images are the constant (k + 0.5) / num_classes plus seeded
    uniform noise within +/-0.02, so an intensity-threshold rule
    classifies them perfectly and metric tests have an analytic oracle.
    """
    if num_classes < 2 or per_class < 1 or width < 1 or height < 1:
        raise DatasetError(
            f"bad synthetic shape: {num_classes} classes x {per_class}, {width}x{height}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    samples = []
    for k in range(num_classes):
        base = (k + 0.5) / num_classes
        for i in range(per_class):
            sample_id = f"c{k:02d}_s{i:03d}"
            stream = RandomStream.derive(seed, sample_id, "synth", 0)
            u = stream.uniforms(height * width * 3).reshape(height, width, 3)
            img = np.clip(base + 0.02 * (2.0 * u - 1.0), 0.0, 1.0).astype(np.float32)
            fname = f"{sample_id}.ppm"
            (out_dir / fname).write_bytes(encode_ppm(img))
            rows.append([sample_id, fname, str(k), "test"])
            samples.append(LabeledSample(sample_id, out_dir / fname, k, "test"))
    with open(out_dir / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    names = [f"class_{k}" for k in range(num_classes)]
    (out_dir / CLASSES_SIDECAR).write_text("\n".join(names) + "\n", encoding="utf-8")
    # noisy constants have no orientation, so every class tolerates mirroring
    (out_dir / FLIP_SIDECAR).write_text(
        "\n".join(str(k) for k in range(num_classes)) + "\n", encoding="utf-8"
    )
    manifest = DatasetManifest(
        num_classes=num_classes,
        class_names=names,
        flip_invariant_classes=frozenset(range(num_classes)),
        samples=samples,
    )
    manifest.validate()
    return manifest
