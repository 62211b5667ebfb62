import numpy as np
import pytest

from sfanet.core import Category, ImageSample, Label
from sfanet.datapipe import (
    ClusterAssignment,
    CropKind,
    EMOTION_GROUPS,
    FailingAttributePredictor,
    HashAttributePredictor,
    Manifest,
    MappingAttributePredictor,
    PixelEmbedder,
    build_folds,
    categorize,
    categorize_all,
    cluster_fakes,
    extract_crops,
    load_manifest,
    save_manifest,
)
from sfanet.ensemble import PART_NAMES, FacePartsReport
from sfanet.errors import ConfigurationError, ConsistencyError, IngestionError


def _sample(i: int, label: Label, origin: str = "test") -> ImageSample:
    return ImageSample(id=f"s{i:03d}", path=None, label=label, origin=origin)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def _write_manifest_text(tmp_path, text: str):
    path = tmp_path / "m.csv"
    path.write_text(text)
    return path


def test_load_two_row_manifest(tmp_path):
    path = _write_manifest_text(
        tmp_path,
        "id,path,label,origin,category\n"
        "a,imgs/a.png,real,celeb,\n"
        "b,imgs/b.png,fake,celeb,white_happy\n",
    )
    manifest = load_manifest(path)
    assert manifest.counts == {"real": 1, "fake": 1}
    assert manifest.samples[1].category == Category.parse("white_happy")


def test_unknown_label_names_the_row(tmp_path):
    path = _write_manifest_text(
        tmp_path,
        "id,path,label,origin,category\na,x,real,o,\nb,y,reall,o,\n",
    )
    with pytest.raises(IngestionError, match="row 3"):
        load_manifest(path)


def test_header_only_manifest_is_empty(tmp_path):
    path = _write_manifest_text(tmp_path, "id,path,label,origin,category\n")
    with pytest.raises(IngestionError, match="empty manifest"):
        load_manifest(path)


def test_missing_manifest_file(tmp_path):
    with pytest.raises(IngestionError, match="not found"):
        load_manifest(tmp_path / "nope.csv")


def test_wrong_field_count_names_the_row(tmp_path):
    path = _write_manifest_text(
        tmp_path, "id,path,label,origin,category\na,x,real,o\n"
    )
    with pytest.raises(IngestionError, match="row 2"):
        load_manifest(path)


def test_wrong_header_rejected(tmp_path):
    path = _write_manifest_text(tmp_path, "id,file,label\n")
    with pytest.raises(IngestionError, match="header"):
        load_manifest(path)


def test_empty_label_means_unlabeled(tmp_path):
    path = _write_manifest_text(
        tmp_path, "id,path,label,origin,category\na,x,,o,\n"
    )
    manifest = load_manifest(path)
    assert manifest.counts == {"real": 0, "fake": 0, "unlabeled": 1}


def test_manifest_round_trip_preserves_order_labels_checksum(tmp_path):
    samples = [_sample(i, Label.REAL if i % 3 else Label.FAKE) for i in range(9)]
    manifest = Manifest.from_samples(samples)
    path = tmp_path / "round.csv"
    save_manifest(manifest, path)
    again = load_manifest(path)
    assert [s.id for s in again.samples] == [s.id for s in manifest.samples]
    assert [s.label for s in again.samples] == [s.label for s in manifest.samples]
    assert again.checksum == manifest.checksum
    assert again.counts == manifest.counts


def test_manifest_counts_must_match_samples():
    samples = (_sample(0, Label.REAL),)
    with pytest.raises(ConsistencyError):
        Manifest(samples, {"real": 2, "fake": 0}, "deadbeef")


# ---------------------------------------------------------------------------
# Categorization
# ---------------------------------------------------------------------------


def test_categorize_maps_raw_attributes():
    cases = {
        "a": (("white", "happy"), "white_happy"),
        "b": (("asian", "sad"), "other_negative"),
        "c": (("white", "surprise"), "white_scared"),
        "d": (("black", "neutral"), "other_neutral"),
        "e": (("White", "Fear"), "white_scared"),  # case-insensitive
    }
    predictor = MappingAttributePredictor({k: raw for k, (raw, _) in cases.items()})
    for sid, (_, expected) in cases.items():
        category = categorize(predictor, ImageSample(id=sid))
        assert category is not None and category.name == expected


def test_emotion_grouping_table_is_total_over_the_raw_vocabulary():
    raw = {"happy", "neutral", "angry", "sad", "disgust", "fear", "surprise"}
    assert set(EMOTION_GROUPS) == raw
    grouped = {g.value for g in EMOTION_GROUPS.values()}
    assert grouped == {"happy", "neutral", "negative", "scared"}


def test_predictor_failure_yields_uncategorized_marker():
    assert categorize(FailingAttributePredictor(), ImageSample(id="x")) is None


def test_unknown_emotion_yields_uncategorized_marker():
    predictor = MappingAttributePredictor({"x": ("white", "confused")})
    assert categorize(predictor, ImageSample(id="x")) is None


def test_categorize_all_counts_and_partitions():
    samples = [ImageSample(id=f"s{i}") for i in range(64)]
    assignment, report = categorize_all(HashAttributePredictor(), samples)
    assert report.uncategorized == 0
    assert sum(report.counts.values()) == 64
    valid_names = {
        f"{r}_{e}"
        for r in ("white", "other")
        for e in ("happy", "negative", "neutral", "scared")
    }
    assert set(report.counts) <= valid_names
    # deterministic per id
    again, _ = categorize_all(HashAttributePredictor(), samples)
    assert assignment == again


def test_categorize_all_counts_failures():
    samples = [ImageSample(id=f"s{i}") for i in range(5)]
    _, report = categorize_all(FailingAttributePredictor(), samples)
    assert report.uncategorized == 5
    assert report.counts == {}


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------


def test_single_cluster_centroid_is_the_mean():
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(12, 3))
    embeddings = [(f"s{i}", vectors[i]) for i in range(12)]
    result = cluster_fakes(embeddings, k=1, seed=7)
    assert set(result.assignment.values()) == {0}
    np.testing.assert_allclose(result.centroids[0], vectors.mean(axis=0), rtol=1e-12)


def _all_two_partitions(n):
    for bits in range(1, 2**n - 1):
        left = [i for i in range(n) if bits & (1 << i)]
        right = [i for i in range(n) if not bits & (1 << i)]
        yield left, right


def test_two_separated_blobs_match_enumeration_oracle():
    rng = np.random.default_rng(5)
    blob_a = rng.normal(loc=0.0, scale=0.5, size=(4, 2))
    blob_b = rng.normal(loc=100.0, scale=0.5, size=(4, 2))
    points = np.vstack([blob_a, blob_b])
    embeddings = [(f"p{i}", points[i]) for i in range(8)]

    # oracle: exhaustively minimize the k-means objective over 2-partitions
    best_cost, best_partition = None, None
    for left, right in _all_two_partitions(8):
        cost = 0.0
        for side in (left, right):
            centroid = points[side].mean(axis=0)
            cost += float(((points[side] - centroid) ** 2).sum())
        if best_cost is None or cost < best_cost:
            best_cost, best_partition = cost, (frozenset(left), frozenset(right))
    assert best_partition == (frozenset(range(4)), frozenset(range(4, 8)))

    for seed in range(5):
        result = cluster_fakes(embeddings, k=2, seed=seed)
        groups = {}
        for i in range(8):
            groups.setdefault(result.assignment[f"p{i}"], set()).add(i)
        assert frozenset(frozenset(g) for g in groups.values()) == frozenset(
            best_partition
        )
        assert result.inertia == pytest.approx(best_cost, rel=1e-9)


def test_five_way_partition_covers_every_sample():
    rng = np.random.default_rng(9)
    embeddings = [(f"f{i}", rng.normal(size=4)) for i in range(50)]
    result = cluster_fakes(embeddings, k=5, seed=1)
    assert len(result.assignment) == 50
    sizes = [len(result.members(c)) for c in range(5)]
    assert sum(sizes) == 50
    assert all(size >= 1 for size in sizes)


def test_cluster_objective_non_increasing():
    rng = np.random.default_rng(3)
    embeddings = [(f"f{i}", rng.normal(size=3)) for i in range(40)]
    result = cluster_fakes(embeddings, k=4, seed=2)
    history = result.inertia_history
    assert len(history) >= 1
    assert all(a >= b - 1e-9 for a, b in zip(history, history[1:]))


def test_cluster_final_assignment_is_a_fixed_point():
    rng = np.random.default_rng(29)
    points = rng.normal(size=(40, 3))
    embeddings = [(f"f{i}", points[i]) for i in range(40)]
    result = cluster_fakes(embeddings, k=4, seed=8)
    dists = ((points[:, None, :] - result.centroids[None]) ** 2).sum(axis=-1)
    reassigned = dists.argmin(axis=1)
    got = np.array([result.assignment[f"f{i}"] for i in range(40)])
    np.testing.assert_array_equal(reassigned, got)


def test_cluster_determinism_for_fixed_seed():
    rng = np.random.default_rng(13)
    embeddings = [(f"f{i}", rng.normal(size=3)) for i in range(30)]
    a = cluster_fakes(embeddings, k=3, seed=42)
    b = cluster_fakes(embeddings, k=3, seed=42)
    assert a.assignment == b.assignment
    np.testing.assert_array_equal(a.centroids, b.centroids)


def test_cluster_rejects_k_larger_than_n():
    embeddings = [("a", np.zeros(2)), ("b", np.ones(2))]
    with pytest.raises(ConfigurationError):
        cluster_fakes(embeddings, k=3, seed=0)


def test_cluster_rejects_duplicate_ids():
    embeddings = [("a", np.zeros(2)), ("a", np.ones(2))]
    with pytest.raises(ConsistencyError):
        cluster_fakes(embeddings, k=1, seed=0)


def test_cluster_assignment_round_trip(tmp_path):
    rng = np.random.default_rng(17)
    embeddings = [(f"f{i}", rng.normal(size=3)) for i in range(10)]
    result = cluster_fakes(embeddings, k=2, seed=3)
    path = tmp_path / "assignment.json"
    result.save(path)
    again = ClusterAssignment.load(path)
    assert again.assignment == result.assignment
    assert again.k == result.k and again.seed == result.seed
    np.testing.assert_allclose(again.centroids, result.centroids)


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def _manifest_with_clusters(n_real=10, n_fake=20, k=5):
    samples = [_sample(i, Label.REAL) for i in range(n_real)]
    samples += [_sample(100 + i, Label.FAKE) for i in range(n_fake)]
    manifest = Manifest.from_samples(samples)
    assignment = ClusterAssignment(
        k=k,
        assignment={f"s{100 + i:03d}": i % k for i in range(n_fake)},
        centroids=np.zeros((k, 2)),
        seed=0,
        inertia=0.0,
    )
    return manifest, assignment


def test_fold_sizes_are_real_plus_cluster():
    manifest, assignment = _manifest_with_clusters()
    folds = build_folds(manifest, assignment)
    assert len(folds) == 5
    for i, fold in enumerate(folds):
        cluster_size = len(assignment.members(i))
        assert len(fold) == 10 + cluster_size == fold.real_count + fold.fake_count
        assert len(fold) == 14


def test_folds_share_reals_and_partition_fakes():
    manifest, assignment = _manifest_with_clusters(n_real=4, n_fake=9, k=3)
    folds = build_folds(manifest, assignment)
    real_ids = {s.id for s in manifest.real_samples()}
    fake_parts = []
    for fold in folds:
        ids = {s.id for s in fold.samples}
        assert real_ids <= ids
        fake_parts.append(frozenset(ids - real_ids))
    union = set().union(*fake_parts)
    assert union == {s.id for s in manifest.fake_samples()}
    assert sum(len(p) for p in fake_parts) == len(union)  # pairwise disjoint


def test_fold_coverage_mismatch_is_rejected():
    manifest, assignment = _manifest_with_clusters()
    bad = ClusterAssignment(
        k=assignment.k,
        assignment={**assignment.assignment, "ghost": 0},
        centroids=assignment.centroids,
        seed=0,
        inertia=0.0,
    )
    with pytest.raises(ConsistencyError):
        build_folds(manifest, bad)


# ---------------------------------------------------------------------------
# Crop extraction
# ---------------------------------------------------------------------------


def _box_mask(shape, r0, r1, c0, c1):
    mask = np.zeros(shape, dtype=bool)
    mask[r0 : r1 + 1, c0 : c1 + 1] = True
    return mask


def _full_report(masks) -> FacePartsReport:
    return FacePartsReport({part: True for part in PART_NAMES}, masks, "test")


def _image(size=256) -> ImageSample:
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    return ImageSample(id="img", pixels=pixels)


def test_extract_crops_hand_computed_boxes():
    shape = (256, 256)
    masks = {
        "left_eyebrow": _box_mask(shape, 60, 70, 60, 110),
        "right_eyebrow": _box_mask(shape, 60, 70, 140, 190),
        "left_eye": _box_mask(shape, 90, 110, 60, 110),
        "right_eye": _box_mask(shape, 90, 110, 140, 190),
        "upper_lip": _box_mask(shape, 170, 185, 90, 160),
        "lower_lip": _box_mask(shape, 185, 200, 90, 160),
    }
    image = _image()
    result = extract_crops(image, _full_report(masks))
    assert result.kind == CropKind.DUAL_CROP
    # eyes: tight box rows 60..110 (h=50, pad 5), cols 60..190 (w=130, pad 13)
    np.testing.assert_array_equal(result.eyes_crop, image.pixels[55:116, 47:204])
    # lips: rows 170..200 extended by 30 to 230 (h=60, pad 6), cols 90..160
    # (w=70, pad 7)
    np.testing.assert_array_equal(result.lips_crop, image.pixels[164:237, 83:168])


def test_missing_part_yields_full_image():
    presence = {part: True for part in PART_NAMES}
    presence["right_eyebrow"] = False
    report = FacePartsReport(presence, None, "test")
    result = extract_crops(_image(), report)
    assert result.kind == CropKind.FULL_IMAGE
    assert result.eyes_crop is None and result.lips_crop is None


def test_border_masks_are_clamped_inside_the_image():
    shape = (256, 256)
    masks = {
        "left_eyebrow": _box_mask(shape, 0, 10, 0, 40),
        "right_eyebrow": _box_mask(shape, 0, 10, 215, 255),
        "left_eye": _box_mask(shape, 20, 35, 0, 40),
        "right_eye": _box_mask(shape, 20, 35, 215, 255),
        "upper_lip": _box_mask(shape, 230, 240, 80, 170),
        "lower_lip": _box_mask(shape, 240, 250, 80, 170),
    }
    result = extract_crops(_image(), _full_report(masks))
    assert result.kind == CropKind.DUAL_CROP
    for crop in (result.eyes_crop, result.lips_crop):
        assert crop.shape[0] >= 1 and crop.shape[1] >= 1
        assert crop.shape[0] <= 256 and crop.shape[1] <= 256
    # lips tight box 230..250 extends to 270 (h=40, pad 4 -> rows 226..274)
    # and must clamp to the last row
    np.testing.assert_array_equal(
        result.lips_crop, _image().pixels[226:256, 71:180]
    )


def test_random_masks_never_produce_empty_or_out_of_bounds_crops():
    rng = np.random.default_rng(99)
    image = _image(64)
    for _ in range(20):
        masks = {}
        for part in PART_NAMES:
            r0, c0 = rng.integers(0, 60, size=2)
            r1 = min(63, r0 + rng.integers(1, 8))
            c1 = min(63, c0 + rng.integers(1, 8))
            masks[part] = _box_mask((64, 64), r0, r1, c0, c1)
        result = extract_crops(image, _full_report(masks))
        for crop in (result.eyes_crop, result.lips_crop):
            assert crop.size > 0
            assert crop.shape[0] <= 64 and crop.shape[1] <= 64


def test_mask_size_mismatch_is_a_consistency_error():
    masks = {part: _box_mask((128, 128), 10, 20, 10, 20) for part in PART_NAMES}
    with pytest.raises(ConsistencyError, match="mask shape"):
        extract_crops(_image(256), _full_report(masks))


def test_gated_report_without_masks_is_inconsistent():
    report = FacePartsReport({part: True for part in PART_NAMES}, None, "test")
    with pytest.raises(ConsistencyError, match="no masks"):
        extract_crops(_image(), report)


# ---------------------------------------------------------------------------
# Embedder stub
# ---------------------------------------------------------------------------


def test_compound_cnn_embedder_contract():
    from sfanet.datapipe import CompoundCnnEmbedder, build_embedder

    embedder = build_embedder("efficientnet_b7")
    assert isinstance(embedder, CompoundCnnEmbedder)
    rng = np.random.default_rng(1)
    sample = ImageSample(
        id="e", pixels=rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    )
    vec = embedder.embed(sample)
    assert vec.shape == (2560,)
    np.testing.assert_array_equal(vec, embedder.embed(sample))


def test_pixel_embedder_fixed_dim_across_sizes():
    embedder = PixelEmbedder(grid=8)
    for size in (32, 64, 100):
        rng = np.random.default_rng(size)
        sample = ImageSample(
            id=f"s{size}",
            pixels=rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8),
        )
        vec = embedder.embed(sample)
        assert vec.shape == (64,)
        np.testing.assert_array_equal(vec, embedder.embed(sample))
