import json

import numpy as np
import pytest

from components.errors import DataError, MaskError
from models.completion_config import DataConfig
from services.data.annotation_loader import filter_records, load_image, parse_annotations
from services.data.mask_codec import (
    decode_rle,
    decode_rle_string,
    decode_segmentation,
    encode_rle,
    encode_rle_string,
    rasterize_parts,
    rasterize_polygon,
)
from services.data.sample_store import load_split, read_index, read_sample, write_sample
from services.data.synthesis import build_manifest, crop_square, synthesize_split
from corpus import square, write_fixture_corpus

ANIMAL_IDS = {1, 2}


def brute_force_inside(points, height, width):
    xs, ys = points[0::2], points[1::2]
    n = len(xs)
    out = np.zeros((height, width), dtype=bool)
    for row in range(height):
        for col in range(width):
            px, py = col + 0.5, row + 0.5
            inside = False
            for i in range(n):
                x0, y0, x1, y1 = xs[i], ys[i], xs[i - 1], ys[i - 1]
                if (y0 > py) != (y1 > py) and px < x0 + (py - y0) * (x1 - x0) / (y1 - y0):
                    inside = not inside
            out[row, col] = inside
    return out


class TestRasterize:
    def test_square_over_two_by_two_centres(self):
        mask = rasterize_polygon([1, 1, 3, 1, 3, 3, 1, 3], 4, 4)
        assert mask.sum() == 4
        assert mask[1:3, 1:3].all()

    def test_triangle_outside_frame(self):
        with pytest.raises(MaskError):
            rasterize_polygon([10, 10, 12, 10, 11, 12], 4, 4)

    def test_too_few_points(self):
        with pytest.raises(DataError):
            rasterize_polygon([0, 0, 3, 3], 4, 4)

    def test_l_shape_matches_brute_force(self):
        points = [1, 1, 7.5, 1, 7.5, 3.2, 3.4, 3.2, 3.4, 8.8, 1, 8.8]
        assert np.array_equal(rasterize_polygon(points, 10, 9), brute_force_inside(points, 10, 9))

    def test_random_polygons_match_brute_force(self, rng):
        for _ in range(10):
            points = rng.uniform(-1, 9, size=12).tolist()
            try:
                mask = rasterize_polygon(points, 8, 8)
            except MaskError:
                assert not brute_force_inside(points, 8, 8).any()
                continue
            assert np.array_equal(mask, brute_force_inside(points, 8, 8))

    def test_parts_are_unioned(self):
        left = [0, 0, 2, 0, 2, 2, 0, 2]
        right = [4, 4, 6, 4, 6, 6, 4, 6]
        outside = [20, 20, 22, 20, 21, 22]
        mask = rasterize_parts([left, right, outside], 8, 8)
        assert mask.sum() == 8
        assert np.array_equal(mask, rasterize_polygon(left, 8, 8) | rasterize_polygon(right, 8, 8))


class TestRunLength:
    def test_column_major_decode(self):
        assert decode_rle([2, 2], 2, 2).tolist() == [[False, True], [False, True]]

    def test_single_run_is_empty(self):
        assert not decode_rle([12], 3, 4).any()

    def test_sum_mismatch(self):
        with pytest.raises(DataError):
            decode_rle([2, 1], 2, 2)

    def test_leading_ones_start_with_zero_run(self):
        mask = np.ones((2, 2), dtype=bool)
        assert encode_rle(mask) == [0, 4]

    def test_round_trip_random_masks(self, rng):
        for _ in range(1000):
            h, w = rng.integers(1, 12, size=2)
            mask = rng.random((h, w)) < rng.random()
            counts = encode_rle(mask)
            assert sum(counts) == h * w
            assert np.array_equal(decode_rle(counts, h, w), mask)
            assert decode_rle_string(encode_rle_string(counts)) == counts

    @pytest.mark.parametrize("counts, text", [
        ([2, 2], "22"),
        ([5, 3, 4, 6], "5343"),
        ([1, 10, 1, 2], "1:1H"),
        ([33], "Q1"),
    ])
    def test_compressed_strings(self, counts, text):
        assert encode_rle_string(counts) == text
        assert decode_rle_string(text) == counts

    def test_truncated_string(self):
        with pytest.raises(DataError):
            decode_rle_string("Q")


class TestParseAnnotations:
    def test_two_instances(self, two_instance_corpus):
        path, images_dir = two_instance_corpus
        report = parse_annotations(path, images_dir)
        assert len(report.records) == 2 and report.total == 2 and report.skipped == 0
        assert {r.category_name for r in report.records} == {"cat", "car"}
        assert report.records[0].supercategory == "animal"

    def test_empty_segmentation_is_counted(self, tmp_path, caplog):
        path, images_dir = write_fixture_corpus(tmp_path, [(1, [square(8, 8, 16)]), (2, None)])
        report = parse_annotations(path, images_dir)
        assert len(report.records) == 1
        assert report.skipped_empty_segmentation == 1
        assert "empty segmentation" in caplog.text

    def test_missing_image_is_counted(self, two_instance_corpus):
        path, images_dir = two_instance_corpus
        (images_dir / "img_001.png").unlink()
        report = parse_annotations(path, images_dir)
        assert len(report.records) == 1 and report.skipped_missing_image == 1
        assert len(parse_annotations(path).records) == 2

    def test_segmentation_outside_frame_is_counted(self, tmp_path):
        path, images_dir = write_fixture_corpus(tmp_path, [(1, [[40, 40, 50, 40, 45, 50]]), (3, [square(2, 2, 8)])])
        report = parse_annotations(path, images_dir)
        assert len(report.records) == 1 and report.skipped_empty_mask == 1

    def test_category_filter(self, mixed_corpus):
        path, images_dir = mixed_corpus
        animals = parse_annotations(path, images_dir, ["animal"])
        assert len(animals.records) == 5 and animals.filtered_out == 7
        assert all(r.category_id in ANIMAL_IDS for r in animals.records)
        assert len(parse_annotations(path, images_dir, ["cat"]).records) == 3
        everything = parse_annotations(path, images_dir).records
        assert [r.annotation_id for r in filter_records(everything, ["Animal"])] == \
            [r.annotation_id for r in animals.records]

    def test_run_length_segmentations(self, tmp_path):
        mask = np.zeros((32, 32), dtype=bool)
        mask[4:20, 10:22] = True
        counts = encode_rle(mask)
        path, images_dir = write_fixture_corpus(tmp_path, [
            (1, {"size": [32, 32], "counts": counts}),
            (2, {"size": [32, 32], "counts": encode_rle_string(counts)}),
        ])
        records = parse_annotations(path, images_dir).records
        assert len(records) == 2
        for record in records:
            assert np.array_equal(decode_segmentation(record.segmentation, 32, 32), mask)

    @pytest.mark.parametrize("content", ["[]", "{not json", json.dumps({"images": []})])
    def test_malformed_document(self, tmp_path, content):
        path = tmp_path / "broken.json"
        path.write_text(content)
        with pytest.raises(DataError):
            parse_annotations(path)

    def test_load_image(self, two_instance_corpus):
        _, images_dir = two_instance_corpus
        pixels = load_image(images_dir / "img_000.png")
        assert pixels.shape == (3, 32, 32) and pixels.dtype == np.uint8
        with pytest.raises(DataError):
            load_image(images_dir / "absent.png")


def synthesize(corpus, out_dir, seed=0, workers=1, **settings):
    path, images_dir = corpus
    data = DataConfig(crop_size=32, **settings)
    records = parse_annotations(path, images_dir).records
    manifest = build_manifest(records, "train", data, seed)
    return synthesize_split(manifest, data, images_dir, out_dir, workers=workers)


class TestSynthesis:
    def test_two_instances_without_augmentation(self, two_instance_corpus, tmp_path):
        report = synthesize(two_instance_corpus, tmp_path / "out")
        assert report.written == 2 and report.targets == 2 and report.skipped_no_occluder == 0
        samples = load_split(tmp_path / "out")
        assert len(samples) == 2
        for sample in samples:
            sample.check_invariants()
            assert sample.extents == (32, 32)
            assert sample.occluded.any() and sample.visible.any()
            assert 0.05 <= sample.meta.ratio <= 0.70
            assert sample.meta.target_id != sample.meta.occluder_id

    def test_x4_recipe_quadruples(self, two_instance_corpus, tmp_path):
        report = synthesize(two_instance_corpus, tmp_path / "out", augment="x4")
        assert report.written == 8
        names = [name for name, _ in read_index(tmp_path / "out")]
        assert len(set(names)) == 8
        for sample in load_split(tmp_path / "out"):
            sample.check_invariants()

    def test_same_seed_is_byte_identical(self, two_instance_corpus, tmp_path):
        synthesize(two_instance_corpus, tmp_path / "a", seed=5, augment="x4")
        synthesize(two_instance_corpus, tmp_path / "b", seed=5, augment="x4", workers=2)
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_lone_instance_has_no_occluder(self, tmp_path, caplog):
        corpus = write_fixture_corpus(tmp_path / "corpus", [(1, [square(8, 8, 16)])])
        report = synthesize(corpus, tmp_path / "out")
        assert report.written == 0 and report.skipped_no_occluder == 1
        assert "no feasible occluder" in caplog.text
        assert read_index(tmp_path / "out") == []

    def test_filter_selects_targets_but_not_occluders(self, mixed_corpus, tmp_path):
        report = synthesize(mixed_corpus, tmp_path / "out", category_filter=["animal"])
        assert report.targets == 5
        animal_annotations = {100 + i for i, c in enumerate([1, 3, 2, 4, 3, 1, 4, 2, 3, 4, 1, 3]) if c in ANIMAL_IDS}
        for _, meta in read_index(tmp_path / "out"):
            assert meta.target_id in animal_annotations

    def test_empty_manifest(self, tmp_path):
        manifest = build_manifest([], "train", DataConfig(), 0)
        with pytest.raises(DataError):
            synthesize_split(manifest, DataConfig(), tmp_path, tmp_path / "out")

    def test_crop_square_pads_with_zeros(self):
        array = np.arange(16).reshape(1, 4, 4)
        out = crop_square(array, -1, 2, 3)
        assert out.shape == (1, 3, 3)
        assert out[0].tolist() == [[0, 0, 0], [2, 3, 0], [6, 7, 0]]


class TestSampleStore:
    def test_weighted_levels_survive_png(self, two_instance_corpus, tmp_path):
        synthesize(two_instance_corpus, tmp_path / "out")
        name, meta = read_index(tmp_path / "out")[0]
        sample = read_sample(tmp_path / "out", name, meta)
        assert set(np.unique(sample.weighted).tolist()) <= {0.0, 0.5, 1.0}
        write_sample(tmp_path, "copy", sample)
        again = read_sample(tmp_path, "copy")
        assert np.array_equal(again.weighted, sample.weighted)
        assert np.array_equal(again.gt_image, sample.gt_image)

    def test_missing_index(self, tmp_path):
        with pytest.raises(DataError):
            read_index(tmp_path)

    def test_corrupted_masks_fail_invariants(self, two_instance_corpus, tmp_path):
        from PIL import Image

        synthesize(two_instance_corpus, tmp_path / "out")
        name, _ = read_index(tmp_path / "out")[0]
        path = tmp_path / "out" / f"{name}_masks.png"
        with Image.open(path) as image:
            masks = np.asarray(image).copy()
        masks[..., 2] = 0
        Image.fromarray(masks).save(path)
        with pytest.raises(MaskError):
            read_sample(tmp_path / "out", name)
