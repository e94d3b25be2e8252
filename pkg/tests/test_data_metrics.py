"""Synthetic scene generators and the evaluation metrics."""

import math

import numpy as np
import pytest

from rsddpm.data import (
    KINDS,
    MIN_IMAGE,
    ShapeSceneSpec,
    decode_mask,
    encode_mask,
    gen_restoration,
    gen_segmentation,
    make_dataset,
    rest_corruption,
    seg_item,
)
from rsddpm.metrics import (
    CSV_HEADER,
    MetricReport,
    dice,
    evaluate,
    iou,
    mse,
    psnr,
    read_csv,
    write_csv,
)
from rsddpm.numeric import Rng


SPEC = ShapeSceneSpec(image_size=(16, 16), seed=99)


class TestSegmentation:
    def test_regeneration_byte_identical(self):
        a = gen_segmentation(SPEC, 8)
        b = gen_segmentation(SPEC, 8)
        for (i0a, m0a), (i0b, m0b) in zip(a, b):
            assert i0a.tobytes() == i0b.tobytes()
            assert m0a.tobytes() == m0b.tobytes()

    def test_item_is_pure_function_of_spec_and_index(self):
        # regenerating item 5 alone matches item 5 from a batch generation
        batch = gen_segmentation(SPEC, 8)
        i0, m = seg_item(SPEC, 5)
        assert i0.tobytes() == batch[5][0].tobytes()
        assert m.tobytes() == batch[5][1].tobytes()

    def test_distinct_indices_distinct_scenes(self):
        items = gen_segmentation(SPEC, 4)
        digests = {i0.tobytes() for i0, _ in items}
        assert len(digests) == 4

    def test_foreground_fraction_within_bounds(self):
        lo, hi = SPEC.fg_bounds
        for i0, m in gen_segmentation(SPEC, 64):
            frac = float(m.mean())
            assert lo <= frac <= hi, frac

    def test_mask_binary_exact(self):
        for _, m in gen_segmentation(SPEC, 16):
            vals = np.unique(m)
            assert set(vals.tolist()) <= {0.0, 1.0}

    def test_shapes_and_dtypes(self):
        i0, m = seg_item(SPEC, 0)
        assert i0.shape == (1, 16, 16) and m.shape == (1, 16, 16)
        assert i0.dtype == np.float32 and m.dtype == np.float32
        assert i0.min() >= 0.0 and i0.max() <= 1.0

    def test_different_seeds_differ(self):
        other = ShapeSceneSpec(image_size=(16, 16), seed=100)
        a, _ = seg_item(SPEC, 0)
        b, _ = seg_item(other, 0)
        assert a.tobytes() != b.tobytes()

    def test_spec_validation(self):
        with pytest.raises(ValueError, match=f"{MIN_IMAGE}px"):
            ShapeSceneSpec(image_size=(4, 4))
        with pytest.raises(ValueError, match="unknown shape kind"):
            ShapeSceneSpec(kinds=("disk", "hexagon"))
        with pytest.raises(ValueError, match="increasing pair"):
            ShapeSceneSpec(fg_bounds=(0.6, 0.1))
        assert set(SPEC.kinds) == set(KINDS)

    def test_n_validation(self):
        with pytest.raises(ValueError):
            gen_segmentation(SPEC, 0)


class TestRestoration:
    RSPEC = ShapeSceneSpec(image_size=(16, 16), corruption=0.25, seed=7)

    def test_corruption_exactly_recoverable(self):
        items = gen_restoration(self.RSPEC, 8)
        for idx, (i0, x0) in enumerate(items):
            c = rest_corruption(self.RSPEC, idx)
            np.testing.assert_array_equal(i0 - x0, c)

    def test_corruption_energy_matches_level(self):
        # RMS of the additive field ~ corruption level, within 5% on average
        items = gen_restoration(self.RSPEC, 128)
        rms = [float(np.sqrt(np.mean((i0 - x0) ** 2))) for i0, x0 in items]
        assert abs(np.mean(rms) - self.RSPEC.corruption) / self.RSPEC.corruption < 0.05

    def test_clean_limit(self):
        clean = ShapeSceneSpec(image_size=(16, 16), corruption=0.0, seed=7)
        for i0, x0 in gen_restoration(clean, 4):
            np.testing.assert_array_equal(i0, x0)

    def test_regeneration_byte_identical(self):
        a = gen_restoration(self.RSPEC, 4)
        b = gen_restoration(self.RSPEC, 4)
        for (xa, ya), (xb, yb) in zip(a, b):
            assert xa.tobytes() == xb.tobytes() and ya.tobytes() == yb.tobytes()

    def test_restoration_and_segmentation_streams_differ(self):
        seg = gen_segmentation(self.RSPEC, 2)
        rest = gen_restoration(self.RSPEC, 2)
        assert seg[0][0].tobytes() != rest[0][0].tobytes()


class TestMaskEncoding:
    def test_round_trip(self):
        m = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
        enc = encode_mask(m)
        np.testing.assert_array_equal(enc, [[-1.0, 1.0], [1.0, -1.0]])
        np.testing.assert_array_equal(decode_mask(enc), m.astype(bool))

    def test_decode_thresholds_at_zero(self):
        x = np.array([-0.2, 0.0, 0.3])
        np.testing.assert_array_equal(decode_mask(x), [False, False, True])


class TestMakeDataset:
    def test_split_sizes_and_disjointness(self):
        ds = make_dataset(SPEC, 8, 3, 2, mode="segmentation")
        assert len(ds.split("train")) == 8
        assert len(ds.split("val")) == 3
        assert len(ds.split("test")) == 2
        blobs = {i0.tobytes() for i0, _ in ds.items}
        assert len(blobs) == 13

    def test_mode_selects_generator(self):
        seg = make_dataset(SPEC, 2, 1, 1, mode="segmentation")
        rest = make_dataset(SPEC, 2, 1, 1, mode="restoration")
        assert set(np.unique(seg.items[0][1])) <= {0.0, 1.0}
        assert len(np.unique(rest.items[0][1])) > 2  # continuous clean image


class TestMaskMetrics:
    def test_identical_masks(self):
        m = np.array([[1, 0], [0, 1]], dtype=bool)
        assert iou(m, m) == 1.0
        assert dice(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.array([[1, 0], [0, 0]], dtype=bool)
        b = np.array([[0, 0], [0, 1]], dtype=bool)
        assert iou(a, b) == 0.0
        assert dice(a, b) == 0.0

    def test_half_overlap_by_hand(self):
        # pred covers the upper half of a 4x4, truth covers everything:
        # intersection 8, union 16 -> iou 1/2; dice 2*8/(8+16) = 2/3
        pred = np.zeros((4, 4))
        pred[:2] = 1.0
        true = np.ones((4, 4))
        assert iou(pred, true) == 0.5
        assert abs(dice(pred, true) - 2 / 3) < 1e-15

    def test_dice_iou_identity(self):
        rng = Rng(123).child(0)
        for _ in range(50):
            a = rng.uniform((6, 6)) > 0.5
            b = rng.uniform((6, 6)) > 0.5
            i, d = iou(a, b), dice(a, b)
            assert abs(d - 2 * i / (1 + i)) < 1e-12
            assert d >= i

    def test_empty_union_scores_one(self):
        z = np.zeros((3, 3), dtype=bool)
        assert iou(z, z) == 1.0
        assert dice(z, z) == 1.0

    def test_threshold_at_zero_in_encoded_space(self):
        pred = np.array([[-0.9, 0.1], [0.4, -0.2]])
        true = np.array([[-1.0, 1.0], [1.0, -1.0]])
        assert iou(pred, true) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            iou(np.zeros((2, 2)), np.zeros((3, 3)))


class TestSignalMetrics:
    def test_mse_example(self):
        a = np.zeros((2, 2))
        b = np.full((2, 2), 0.5)
        assert mse(a, b) == 0.25

    def test_psnr_known_value(self):
        # peak 1, mse 0.01 -> 10*log10(1/0.01) = 20 dB
        a = np.zeros((10,))
        b = np.full((10,), 0.1)
        assert abs(psnr(a, b) - 20.0) < 1e-12

    def test_psnr_peak_scaling(self):
        a = np.zeros((4,))
        b = np.full((4,), 0.1)
        assert abs(psnr(a, b, peak=2.0) - (20.0 + 20 * math.log10(2.0))) < 1e-12

    def test_psnr_identical_is_infinite(self):
        a = np.ones((3, 3))
        assert psnr(a, a) == math.inf


class TestEvaluateAndCsv:
    def test_report_aggregates(self):
        preds = [np.array([[1.0, -1.0]]), np.array([[1.0, 1.0]])]
        trues = [np.array([[1.0, -1.0]]), np.array([[1.0, -1.0]])]
        rep = evaluate("e2e", "val", preds, trues, peak=2.0)
        assert isinstance(rep, MetricReport)
        assert rep.n_images == 2
        assert rep.iou == (1.0 + 0.5) / 2
        assert rep.mse == (0.0 + 2.0) / 2
        assert rep.psnr == math.inf  # one infinite image psnr propagates

    def test_csv_round_trip(self, tmp_path):
        reps = [
            evaluate("e2e", "test", [np.array([[1.0]])], [np.array([[1.0]])]),
            evaluate("ensemble", "test", [np.array([[0.5]])], [np.array([[1.0]])]),
        ]
        path = tmp_path / "metrics.csv"
        write_csv(path, reps)
        text = path.read_text().splitlines()
        assert text[0] == CSV_HEADER
        assert len(text) == 3
        back = read_csv(path)
        assert [r["method"] for r in back] == ["e2e", "ensemble"]
        assert back[0]["psnr"] == math.inf
        assert abs(back[1]["mse"] - reps[1].mse) < 1e-12

    def test_csv_header_pinned(self):
        assert CSV_HEADER == "method,split,iou,dice,mse,psnr,n_images"

    def test_read_rejects_wrong_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("method,split,iou\nx,y,0.1\n")
        with pytest.raises(ValueError, match="header"):
            read_csv(p)

    def test_evaluate_validation(self):
        with pytest.raises(ValueError, match="empty"):
            evaluate("e2e", "test", [], [])
        with pytest.raises(ValueError, match="predictions vs"):
            evaluate("e2e", "test", [np.zeros((2, 2))], [])
