"""Dataset manifests: seeded ingestion, checksummed CSV, exact round-trips.

A manifest is a CSV with header ``path,label,width,height,split`` followed by
one row per image (paths relative to the manifest's directory, POSIX
separators) and a final ``# sha256 <hex>`` line over everything before it.
Loading re-verifies the checksum and, by default, that every file still has
the recorded dimensions.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ImageFormatError, IngestError
from .image import ImageBuffer, probe_size, read_image, write_image
from .synth import SynthForamSpec, render_foram

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")
MANIFEST_HEADER = ("path", "label", "width", "height", "split")


@dataclass(frozen=True)
class ManifestRecord:
    path: str          # POSIX-style, relative to the manifest directory
    label: str
    width: int
    height: int
    split: str         # "train" or "test"


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    records: tuple[ManifestRecord, ...]

    def split(self, which: str | None) -> list[ManifestRecord]:
        if which is None:
            return list(self.records)
        if which not in ("train", "test"):
            raise ContractError(f"unknown split {which!r}")
        return [r for r in self.records if r.split == which]

    def resolve(self, record: ManifestRecord) -> Path:
        return self.root / Path(record.path)

    def label_names(self) -> list[str]:
        return sorted({r.label for r in self.records})

    def label_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.label_names())}


def split_sizes(n: int, test_fraction: float) -> tuple[int, int]:
    """(train, test) counts; the test side rounds half away from zero."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(
            f"test fraction must lie strictly between 0 and 1, got {test_fraction}")
    n_test = int(np.floor(n * test_fraction + 0.5))
    return n - n_test, n_test


def _assign_splits(count: int, test_fraction: float, seed) -> list[str]:
    _, n_test = split_sizes(count, test_fraction)
    order = np.random.default_rng(seed).permutation(count)
    test = set(order[:n_test].tolist())
    return ["test" if i in test else "train" for i in range(count)]


def ingest_dataset(directory: str | Path, min_side: int, test_fraction: float,
                   seed: int, stratify: bool = False
                   ) -> tuple[DatasetManifest, list[str]]:
    """Scan a class-per-directory tree; returns (manifest, warning lines).

    With stratify the seeded split runs per class label (test counts round
    half away from zero within each class); the default splits the pool as a
    whole.
    """
    split_sizes(1, test_fraction)   # validate the fraction up front
    root = Path(directory)
    if not root.is_dir():
        raise IngestError(f"{root} is not a readable directory")
    warnings: list[str] = []
    accepted: list[tuple[str, str, int, int]] = []
    files = sorted(p for p in root.rglob("*")
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    for path in files:
        rel = path.relative_to(root).as_posix()
        try:
            width, height, _ = probe_size(path)
        except (ImageFormatError, OSError) as exc:
            warnings.append(f"{rel}: {exc}")
            continue
        if min(width, height) < min_side:
            continue
        accepted.append((rel, path.parent.name, width, height))
    if not accepted:
        raise IngestError(
            f"no image in {root} has both sides >= {min_side}")
    if stratify:
        splits = [""] * len(accepted)
        by_label: dict[str, list[int]] = {}
        for i, (_, label, _, _) in enumerate(accepted):
            by_label.setdefault(label, []).append(i)
        for k, label in enumerate(sorted(by_label)):
            members = by_label[label]
            for i, s in zip(members, _assign_splits(len(members), test_fraction,
                                                    np.random.SeedSequence([seed, k]))):
                splits[i] = s
    else:
        splits = _assign_splits(len(accepted), test_fraction, seed)
    records = tuple(ManifestRecord(rel, label, w, h, s)
                    for (rel, label, w, h), s in zip(accepted, splits))
    return DatasetManifest(root=root, records=records), warnings


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for rec in manifest.records:
        rel = os.path.relpath(manifest.resolve(rec), start=path.parent)
        writer.writerow([Path(rel).as_posix(), rec.label,
                         rec.width, rec.height, rec.split])
    body = buf.getvalue()
    digest = hashlib.sha256(body.encode()).hexdigest()
    path.write_bytes(f"{body}# sha256 {digest}\n".encode())


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    text = path.read_bytes().decode()
    head, _, tail = text.rpartition("# sha256 ")
    if not head:
        raise IngestError(f"{path}: missing checksum line")
    if hashlib.sha256(head.encode()).hexdigest() != tail.strip():
        raise IngestError(f"{path}: checksum mismatch, file was altered")
    rows = list(csv.reader(io.StringIO(head)))
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        raise IngestError(f"{path}: bad or missing header")
    records = []
    seen = set()
    for row in rows[1:]:
        if len(row) != 5:
            raise IngestError(f"{path}: malformed row {row!r}")
        rel, label, width, height, split = row
        if split not in ("train", "test"):
            raise IngestError(f"{path}: unknown split {split!r}")
        if rel in seen:
            raise IngestError(f"{path}: duplicate path {rel}")
        seen.add(rel)
        records.append(ManifestRecord(rel, label, int(width), int(height), split))
    manifest = DatasetManifest(root=path.parent, records=tuple(records))
    if check_files:
        for rec in manifest.records:
            target = manifest.resolve(rec)
            try:
                width, height, _ = probe_size(target)
            except (ImageFormatError, OSError) as exc:
                raise IngestError(f"{rec.path}: unreadable ({exc})") from exc
            if (width, height) != (rec.width, rec.height):
                raise IngestError(
                    f"{rec.path}: file is {width}x{height} but manifest "
                    f"says {rec.width}x{rec.height}")
    return manifest


def load_images(manifest: DatasetManifest, which: str | None = None
                ) -> tuple[list[ImageBuffer], np.ndarray]:
    """Images plus integer labels (indices into sorted label names)."""
    index = manifest.label_index()
    records = manifest.split(which)
    images = [read_image(manifest.resolve(r)) for r in records]
    labels = np.array([index[r.label] for r in records], dtype=np.int64)
    return images, labels


def mask_path_for(manifest: DatasetManifest, record: ManifestRecord) -> Path:
    """Companion ground-truth mask written by the corpus synthesizer."""
    rel = Path(record.path)
    return manifest.root / "masks" / rel.parent.name / (rel.stem + ".pgm")


def write_corpus(root: str | Path, spec: SynthForamSpec, per_class: int,
                 test_fraction: float = 0.2, split_seed: int = 0) -> DatasetManifest:
    """Render the corpus to <root>/images and <root>/masks plus a manifest."""
    if per_class < 1:
        raise ContractError(f"need at least one image per class, got {per_class}")
    from .fewshot_seg import mask_to_image   # local import: avoids a cycle
    root = Path(root)
    rows: list[tuple[str, str]] = []
    for cls in range(spec.class_count):
        label = f"class_{cls:02d}"
        img_dir = root / "images" / label
        mask_dir = root / "masks" / label
        img_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            img, mask = render_foram(spec, cls, i)
            name = f"foram_{i:04d}"
            write_image(img_dir / f"{name}.png", img)
            write_image(mask_dir / f"{name}.pgm", mask_to_image(mask))
            rows.append((f"images/{label}/{name}.png", label))
    splits = _assign_splits(len(rows), test_fraction, split_seed)
    records = tuple(
        ManifestRecord(rel, label, spec.resolution, spec.resolution, split)
        for (rel, label), split in zip(rows, splits))
    manifest = DatasetManifest(root=root, records=records)
    save_manifest(manifest, root / "manifest.csv")
    return manifest