"""Corpus generator invariants (determinism, mask containment, class
separation), the classical labelers, and manifest ingestion/round-trips."""

import numpy as np
import pytest
from scipy import ndimage

from forambench.dataset import (DatasetManifest, ManifestRecord, ingest_dataset,
                                load_images, load_manifest, mask_path_for,
                                save_manifest, split_sizes, write_corpus)
from forambench.errors import ContractError, IngestError
from forambench.fewshot_seg import image_to_mask, mean_iou
from forambench.image import ImageBuffer, read_image, write_image
from forambench.synth import (SynthForamSpec, class_geometry, render_foram,
                              rule_based_mask, synth_corpus,
                              threshold_baseline_mask)


# ------------------------------------------------------------------- synth

def test_spec_validation():
    with pytest.raises(ContractError):
        SynthForamSpec(resolution=15)
    with pytest.raises(ContractError):
        SynthForamSpec(class_count=0)
    with pytest.raises(ContractError):
        synth_corpus(SynthForamSpec(), 0)
    with pytest.raises(ContractError):
        class_geometry(SynthForamSpec(), 9)


def test_render_is_bit_deterministic():
    spec = SynthForamSpec(resolution=32, seed=5)
    img1, mask1 = render_foram(spec, 3, 11)
    img2, mask2 = render_foram(spec, 3, 11)
    assert img1 == img2
    assert np.array_equal(mask1, mask2)
    other_seed, _ = render_foram(SynthForamSpec(resolution=32, seed=6), 3, 11)
    assert img1 != other_seed


def test_corpus_is_balanced_and_deterministic():
    spec = SynthForamSpec(resolution=32, seed=1)
    corpus = synth_corpus(spec, 4)
    assert len(corpus) == 9 * 4
    labels = [cls for _, _, cls in corpus]
    assert all(labels.count(c) == 4 for c in range(9))
    again = synth_corpus(spec, 4)
    assert all(a == b and np.array_equal(m, n)
               for (a, m, _), (b, n, _) in zip(corpus, again))


def test_every_mask_keeps_aperture_inside_shell_region():
    spec = SynthForamSpec(resolution=32, seed=2)
    for cls in range(9):
        for i in range(5):
            _, mask = render_foram(spec, cls, i)
            assert set(np.unique(mask)) == {0, 1, 2}
            region = ndimage.binary_fill_holes(mask >= 1)
            assert np.all(region[mask == 2])


def test_intensity_layers_are_ordered():
    img, mask = render_foram(SynthForamSpec(seed=0), 4, 0)
    plane = img.samples[:, :, 0].astype(float)
    assert plane[mask == 2].mean() < plane[mask == 0].mean() \
        < plane[mask == 1].mean()


def test_classes_have_distinct_geometry():
    spec = SynthForamSpec()
    geoms = [class_geometry(spec, c) for c in range(9)]
    assert len({(g.chambers, g.growth) for g in geoms}) == 9


def test_rule_based_labeler_beats_threshold_baseline():
    spec = SynthForamSpec(resolution=32, seed=3)
    oracle_scores, baseline_scores = [], []
    for cls in range(9):
        for i in range(3):
            img, mask = render_foram(spec, cls, i)
            oracle_scores.append(mean_iou(rule_based_mask(img), mask))
            baseline_scores.append(mean_iou(threshold_baseline_mask(img), mask))
    assert np.mean(oracle_scores) > 0.65
    assert np.mean(oracle_scores) > np.mean(baseline_scores) + 0.1


def test_labelers_cope_with_flat_images():
    flat = ImageBuffer(np.full((32, 32), 7, dtype=np.uint8))
    assert set(np.unique(rule_based_mask(flat))) <= {0, 1, 2}
    assert set(np.unique(threshold_baseline_mask(flat))) <= {0, 1, 2}


# ----------------------------------------------------------------- ingest

def _flat_image(w, h, value=90):
    return ImageBuffer(np.full((h, w), value, dtype=np.uint8))


def _make_tree(root):
    (root / "spec_a").mkdir(parents=True)
    (root / "spec_b").mkdir()
    write_image(root / "spec_a" / "big.png", _flat_image(800, 800))
    write_image(root / "spec_a" / "tall.png", _flat_image(900, 1000))
    write_image(root / "spec_a" / "narrow.png", _flat_image(799, 900))
    write_image(root / "spec_b" / "wide.pgm", _flat_image(1000, 850))
    (root / "spec_b" / "broken.png").write_bytes(b"not an image at all")


def test_ingest_filters_by_min_side(tmp_path):
    _make_tree(tmp_path)
    manifest, warnings = ingest_dataset(tmp_path, 800, 0.25, seed=0)
    kept = {r.path for r in manifest.records}
    assert kept == {"spec_a/big.png", "spec_a/tall.png", "spec_b/wide.pgm"}
    assert len(warnings) == 1 and "broken.png" in warnings[0]
    rec = next(r for r in manifest.records if r.path == "spec_a/big.png")
    assert (rec.label, rec.width, rec.height) == ("spec_a", 800, 800)


def test_ingest_split_is_seed_deterministic(tmp_path):
    root = tmp_path / "data"
    root.mkdir()
    (root / "only").mkdir()
    for i in range(30):
        write_image(root / "only" / f"im_{i:02d}.png", _flat_image(20, 20))
    a, _ = ingest_dataset(root, 16, 0.3, seed=4)
    b, _ = ingest_dataset(root, 16, 0.3, seed=4)
    assert a.records == b.records
    assert sum(r.split == "test" for r in a.records) == 9
    c, _ = ingest_dataset(root, 16, 0.3, seed=5)
    assert [r.split for r in a.records] != [r.split for r in c.records]


def test_ingest_stratified_split_balances_classes(tmp_path):
    root = tmp_path / "data"
    root.mkdir()
    for name, count in (("spec_a", 10), ("spec_b", 20)):
        (root / name).mkdir()
        for i in range(count):
            write_image(root / name / f"im_{i:02d}.png", _flat_image(20, 20))
    # pooled split may land unevenly; stratified pins per-class test counts
    manifest, _ = ingest_dataset(root, 16, 0.2, seed=0, stratify=True)
    per_class = {"spec_a": 0, "spec_b": 0}
    for r in manifest.records:
        per_class[r.label] += r.split == "test"
    assert per_class == {"spec_a": 2, "spec_b": 4}
    again, _ = ingest_dataset(root, 16, 0.2, seed=0, stratify=True)
    assert manifest.records == again.records


def test_ingest_rejects_when_nothing_survives(tmp_path):
    (tmp_path / "c").mkdir()
    write_image(tmp_path / "c" / "small.png", _flat_image(10, 10))
    with pytest.raises(IngestError):
        ingest_dataset(tmp_path, 800, 0.5, seed=0)
    with pytest.raises(ContractError):
        ingest_dataset(tmp_path, 8, 1.5, seed=0)


def test_split_sizes_matches_published_counts():
    assert split_sizes(3563, 0.0842) == (3263, 300)
    with pytest.raises(ContractError):
        split_sizes(10, 0.0)


# --------------------------------------------------------------- manifests

def test_manifest_roundtrip_is_byte_identical(tmp_path):
    root = tmp_path / "ds"
    (root / "k").mkdir(parents=True)
    for i in range(4):
        write_image(root / "k" / f"x{i}.png", _flat_image(20, 24))
    manifest, _ = ingest_dataset(root, 16, 0.5, seed=1)
    p1, p2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
    save_manifest(manifest, p1)
    save_manifest(load_manifest(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_manifest_checksum_catches_tampering(tmp_path):
    root = tmp_path / "ds"
    (root / "k").mkdir(parents=True)
    write_image(root / "k" / "a.png", _flat_image(20, 20))
    write_image(root / "k" / "b.png", _flat_image(20, 20))
    manifest, _ = ingest_dataset(root, 16, 0.5, seed=0)
    path = tmp_path / "m.csv"
    save_manifest(manifest, path)
    body = path.read_bytes()
    path.write_bytes(body.replace(b"k/a.png", b"k/z.png"))
    with pytest.raises(IngestError):
        load_manifest(path)
    path.write_bytes(body.rsplit(b"# sha256", 1)[0])
    with pytest.raises(IngestError):
        load_manifest(path)


def test_manifest_revalidates_dimensions_on_load(tmp_path):
    root = tmp_path / "ds"
    (root / "k").mkdir(parents=True)
    write_image(root / "k" / "a.png", _flat_image(20, 20))
    write_image(root / "k" / "b.png", _flat_image(20, 20))
    manifest, _ = ingest_dataset(root, 16, 0.5, seed=0)
    path = root / "manifest.csv"
    save_manifest(manifest, path)
    write_image(root / "k" / "a.png", _flat_image(18, 20))
    with pytest.raises(IngestError, match="a.png"):
        load_manifest(path)
    (root / "k" / "a.png").unlink()
    with pytest.raises(IngestError, match="a.png"):
        load_manifest(path)
    assert len(load_manifest(path, check_files=False).records) == 2


def test_manifest_rejects_duplicates_and_bad_rows(tmp_path):
    path = tmp_path / "m.csv"
    body = ("path,label,width,height,split\n"
            "a.png,k,8,8,train\n"
            "a.png,k,8,8,test\n")
    import hashlib
    path.write_bytes(
        f"{body}# sha256 {hashlib.sha256(body.encode()).hexdigest()}\n".encode())
    with pytest.raises(IngestError, match="duplicate"):
        load_manifest(path, check_files=False)
    body = "path,label,width,height,split\na.png,k,8,8,maybe\n"
    path.write_bytes(
        f"{body}# sha256 {hashlib.sha256(body.encode()).hexdigest()}\n".encode())
    with pytest.raises(IngestError, match="split"):
        load_manifest(path, check_files=False)


# ------------------------------------------------------------- corpus I/O

def test_write_corpus_layout_and_determinism(tmp_path):
    spec = SynthForamSpec(resolution=32, class_count=3, seed=9)
    m1 = write_corpus(tmp_path / "one", spec, per_class=2, split_seed=0)
    m2 = write_corpus(tmp_path / "two", spec, per_class=2, split_seed=0)
    assert len(m1.records) == 6
    assert (tmp_path / "one" / "manifest.csv").read_bytes() == \
        (tmp_path / "two" / "manifest.csv").read_bytes()
    for rec in m1.records:
        img_path = m1.resolve(rec)
        twin = (tmp_path / "two") / rec.path
        assert img_path.read_bytes() == twin.read_bytes()
        mask = image_to_mask(read_image(mask_path_for(m1, rec)))
        assert mask.shape == (32, 32)
    reloaded = load_manifest(tmp_path / "one" / "manifest.csv")
    assert reloaded.records == m1.records


def test_load_images_maps_labels_by_sorted_name(tmp_path):
    spec = SynthForamSpec(resolution=32, class_count=3, seed=0)
    manifest = write_corpus(tmp_path, spec, per_class=2, split_seed=0)
    images, labels = load_images(manifest)
    assert len(images) == 6
    assert manifest.label_names() == ["class_00", "class_01", "class_02"]
    assert sorted(labels.tolist()) == [0, 0, 1, 1, 2, 2]
    train_imgs, train_labels = load_images(manifest, "train")
    assert len(train_imgs) == len(train_labels) == \
        sum(r.split == "train" for r in manifest.records)