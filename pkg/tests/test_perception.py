# tests/test_perception.py
#
# Detector models, feature-map codec, RMSE harness, dataset file format
# and receptive-field arithmetic.

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from gateservo.geometry import FeatureVec
from gateservo.perception import (
    SIGMA_CNN,
    SIGMA_FCNN,
    ConvLayerSpec,
    DatasetFormatError,
    FeatureMapSet,
    Perceiver,
    PerceptionConfig,
    decode_featuremaps,
    dummy_predictions,
    encode_featuremaps,
    load_rmse_dataset,
    parse_layers,
    parse_rmse_dataset,
    perceive,
    receptive_field,
    receptive_field_trace,
    rmse_breakdown,
    rmse_eval,
    synthetic_truths,
    write_rmse_dataset,
)

SQUARE = FeatureVec.from_corners([[40, 40], [120, 40], [120, 120], [40, 120]])


def _all_at(u: float, v: float) -> FeatureVec:
    return FeatureVec.from_corners([[u, v]] * 4)


# ===========================================================================
# Config
# ===========================================================================

class TestPerceptionConfig:

    def test_profile_fills_sigma(self):
        assert PerceptionConfig(kind="gaussian_noise", profile="fcnn").sigma_px == SIGMA_FCNN
        assert PerceptionConfig(kind="gaussian_noise", profile="cnn").sigma_px == SIGMA_CNN

    def test_explicit_sigma_wins_over_profile(self):
        assert PerceptionConfig(profile="fcnn", sigma_px=3.0).sigma_px == 3.0

    def test_invalid_values_rejected(self):
        with pytest.raises(ValidationError):
            PerceptionConfig(sigma_px=-1.0)
        with pytest.raises(ValidationError):
            PerceptionConfig(kind="lidar")
        with pytest.raises(ValidationError):
            PerceptionConfig(profile="resnet")


# ===========================================================================
# Detectors
# ===========================================================================

class TestPerceive:

    def test_oracle_is_identity(self):
        rng = np.random.default_rng(0)
        assert perceive(SQUARE, PerceptionConfig(kind="oracle"), rng) is SQUARE

    def test_zero_sigma_returns_truth(self):
        rng = np.random.default_rng(0)
        out = perceive(SQUARE, PerceptionConfig(kind="gaussian_noise", sigma_px=0.0), rng)
        assert out.same_as(SQUARE)

    def test_noise_only_on_visible_corners(self):
        truth = FeatureVec(coords=SQUARE.coords, visible=[True, False, True, False])
        rng = np.random.default_rng(1)
        out = perceive(truth, PerceptionConfig(kind="gaussian_noise", sigma_px=2.0), rng)
        assert_array_equal(out.visible, truth.visible)
        assert_array_equal(out.uv[[1, 3]], truth.uv[[1, 3]])
        assert not np.array_equal(out.uv[[0, 2]], truth.uv[[0, 2]])

    def test_gaussian_noise_statistics(self):
        rng = np.random.default_rng(2)
        cfg = PerceptionConfig(kind="gaussian_noise", sigma_px=1.45)
        diffs = np.array([perceive(SQUARE, cfg, rng).coords - SQUARE.coords for _ in range(5000)])
        assert diffs.mean() == pytest.approx(0.0, abs=0.03)
        assert diffs.std() == pytest.approx(1.45, abs=0.03)

    def test_featuremap_without_map_noise_is_the_codec(self):
        rng = np.random.default_rng(3)
        truth = FeatureVec.from_corners([[83, 45], [10, 150], [159, 0], [77.2, 81.9]])
        out = perceive(truth, PerceptionConfig(kind="featuremap", map_noise=0.0), rng)
        assert out.same_as(decode_featuremaps(encode_featuremaps(truth)))

    def test_featuremap_keeps_invisible_coords_and_flags(self):
        rng = np.random.default_rng(4)
        truth = FeatureVec(coords=SQUARE.coords, visible=[True, True, False, False])
        out = perceive(truth, PerceptionConfig(kind="featuremap"), rng)
        assert_array_equal(out.visible, truth.visible)
        assert_array_equal(out.uv[2:], truth.uv[2:])


class TestPerceiver:

    def test_latency_repeats_earliest_until_fifo_fills(self):
        p = Perceiver(PerceptionConfig(kind="oracle", latency_steps=2))
        frames = [_all_at(10.0 * i, 0.0) for i in range(5)]
        seen = [p.observe(f).uv[0, 0] for f in frames]
        assert seen == [0.0, 0.0, 0.0, 10.0, 20.0]

    def test_zero_latency_passes_through(self):
        p = Perceiver(PerceptionConfig(kind="oracle", latency_steps=0))
        assert p.observe(SQUARE) is SQUARE

    def test_same_seeds_same_measurements(self):
        cfg = PerceptionConfig(kind="gaussian_noise", sigma_px=1.45, seed=5)
        a, b = Perceiver(cfg, run_seed=9), Perceiver(cfg, run_seed=9)
        for _ in range(20):
            assert a.observe(SQUARE).same_as(b.observe(SQUARE))

    def test_run_seed_changes_measurements(self):
        cfg = PerceptionConfig(kind="gaussian_noise", sigma_px=1.45, latency_steps=0)
        a, b = Perceiver(cfg, run_seed=1), Perceiver(cfg, run_seed=2)
        assert not a.observe(SQUARE).same_as(b.observe(SQUARE))


# ===========================================================================
# Feature-map codec
# ===========================================================================

class TestFeatureMaps:

    def test_corner_on_first_bin_center(self):
        fm = encode_featuremaps(_all_at(4, 4))
        assert fm.maps.shape == (4, 20, 20)
        assert fm.maps[0, 0, 0] == 1.0
        assert fm.maps.max() == 1.0

    def test_peak_bin_and_round_trip(self):
        fm = encode_featuremaps(FeatureVec.from_corners([[83, 45]] * 4))
        assert np.unravel_index(fm.maps[0].argmax(), (20, 20)) == (10, 5)
        assert_allclose(decode_featuremaps(fm).uv[0], [84, 44])

    def test_gaussian_falloff_one_bin(self):
        fm = encode_featuremaps(_all_at(4, 4), sigma_bins=1.0)
        assert fm.maps[0, 1, 0] == pytest.approx(math.exp(-0.5))

    def test_decode_first_maximum_wins(self):
        maps = np.zeros((4, 20, 20))
        maps[:, 3, 7] = 1.0
        maps[:, 12, 2] = 1.0
        assert_allclose(decode_featuremaps(FeatureMapSet(maps=maps)).uv[0], [28, 60])

    def test_endpoint_decode(self):
        maps = np.zeros((4, 20, 20))
        maps[:, 19, 0] = 1.0
        uv = decode_featuremaps(FeatureMapSet(maps=maps), mode="endpoint").uv[0]
        assert_allclose(uv, [159, 0])

    def test_quantization_error_bound_and_rmse(self):
        rng = np.random.default_rng(6)
        corners = rng.uniform(0, 159, size=(25_000, 4, 2))
        errors = np.empty_like(corners)
        for k, uv in enumerate(corners):
            decoded = decode_featuremaps(encode_featuremaps(FeatureVec.from_corners(uv)))
            errors[k] = decoded.uv - uv
        assert np.abs(errors).max() <= 4.0
        assert np.sqrt(np.mean(errors ** 2)) == pytest.approx(8 / math.sqrt(12), abs=0.05)


# ===========================================================================
# RMSE harness
# ===========================================================================

class TestRmse:

    def test_identical_predictions(self):
        assert rmse_eval([SQUARE, SQUARE], [SQUARE, SQUARE]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="differ in length"):
            rmse_eval([SQUARE], [SQUARE, SQUARE])

    def test_empty(self):
        with pytest.raises(ValueError):
            rmse_eval([], [])

    def test_nothing_visible(self):
        hidden = FeatureVec(coords=SQUARE.coords, visible=[False] * 4)
        with pytest.raises(ValueError, match="visible"):
            rmse_eval([SQUARE], [hidden])

    def test_only_truth_visible_coordinates_count(self):
        truth = FeatureVec(coords=SQUARE.coords, visible=[True, False, False, False])
        pred = FeatureVec.from_corners([[43, 44], [0, 0], [0, 0], [0, 0]])
        assert rmse_eval([pred], [truth]) == pytest.approx(math.sqrt((9 + 16) / 2))

    def test_per_corner_breakdown(self):
        truth = np.tile(SQUARE.coords, (2, 1))
        pred = truth.copy()
        pred[:, 2] += 3.0                         # TR u off by 3 px
        out = rmse_breakdown(truth, pred, np.ones((2, 4), dtype=bool))
        assert out["per_corner"]["TR"] == pytest.approx(math.sqrt(4.5))
        assert out["per_corner"]["TL"] == 0.0
        assert out["overall"] == pytest.approx(math.sqrt(9 / 8))
        assert out["n_coords"] == 16

    def test_never_visible_corner_reports_none(self):
        vis = np.array([[True, True, True, False]])
        out = rmse_breakdown(SQUARE.coords[None], SQUARE.coords[None], vis)
        assert out["per_corner"]["BL"] is None

    def test_permutation_and_scaling(self):
        rng = np.random.default_rng(9)
        truth_uv = rng.uniform(0, 159, size=(200, 4, 2))
        err = rng.normal(0.0, 2.0, size=truth_uv.shape)
        vis = rng.random((200, 4)) < 0.8
        vis[:, 0] = True
        truths = [FeatureVec.from_corners(t, v) for t, v in zip(truth_uv, vis)]
        preds = [FeatureVec.from_corners(t + e) for t, e in zip(truth_uv, err)]
        base = rmse_eval(preds, truths)

        perm = rng.permutation(200)
        assert rmse_eval([preds[i] for i in perm], [truths[i] for i in perm]) == pytest.approx(base, rel=1e-12)

        scaled = [FeatureVec.from_corners(t + 3.0 * e) for t, e in zip(truth_uv, err)]
        assert rmse_eval(scaled, truths) == pytest.approx(3.0 * base, rel=1e-12)
        assert base > 0.0

    def test_gaussian_predictions_recover_sigma(self):
        rng = np.random.default_rng(7)
        truth = rng.uniform(0, 159, size=(100_000, 8))
        pred = truth + rng.normal(0.0, 1.45, size=truth.shape)
        out = rmse_breakdown(truth, pred, np.ones((100_000, 4), dtype=bool))
        assert out["overall"] == pytest.approx(1.45, abs=0.02)

    def test_dummy_predictor_yields_pooled_std(self):
        rng = np.random.default_rng(8)
        coords = rng.uniform(0, 159, size=(2000, 8))
        truths = [FeatureVec(coords=c, visible=[True] * 4) for c in coords]
        expected = math.sqrt(np.mean(coords.var(axis=0)))
        assert rmse_eval(dummy_predictions(truths), truths) == pytest.approx(expected, rel=1e-9)


class TestSyntheticTruths:

    def test_shapes_and_visibility_mix(self):
        truths = synthetic_truths(300, np.random.default_rng(9))
        assert len(truths) == 300
        counts = np.array([t.n_visible for t in truths])
        assert (counts == 4).any()
        for t in truths:
            assert t.uv.min() >= 0 and t.uv.max() <= 159

    def test_deterministic_for_seed(self):
        a = synthetic_truths(20, np.random.default_rng(10))
        b = synthetic_truths(20, np.random.default_rng(10))
        assert all(x.same_as(y) for x, y in zip(a, b))


# ===========================================================================
# Dataset file
# ===========================================================================

class TestDatasetFile:

    def test_written_noisy_dataset_evaluates_to_sigma(self, tmp_path):
        rng = np.random.default_rng(11)
        truth = rng.uniform(0, 159, size=(20_000, 8))
        pred = truth + rng.normal(0.0, 1.45, size=truth.shape)
        path = tmp_path / "noisy.csv"
        write_rmse_dataset(path, truth, pred, np.ones((20_000, 4), dtype=bool))

        t, p, v = load_rmse_dataset(path)
        assert t.shape == (20_000, 8) and v.all()
        assert rmse_breakdown(t, p, v)["overall"] == pytest.approx(1.45, abs=0.03)

    def test_comments_header_and_flag_spellings(self, tmp_path):
        row = ",".join(["10"] * 8 + ["12"] * 8 + ["1", "true", "0", "False"])
        path = tmp_path / "ds.csv"
        path.write_text("# comment\nheader,a,b\n\n" + row + "\n", encoding="utf-8")
        truth, pred, vis = load_rmse_dataset(path)
        assert vis.tolist() == [[True, True, False, False]]
        assert rmse_breakdown(truth, pred, vis)["overall"] == pytest.approx(2.0)

    def test_malformed_row_reports_line(self, tmp_path):
        good = ",".join(["1"] * 16 + ["1"] * 4)
        path = tmp_path / "bad.csv"
        path.write_text(f"# comment\n{good}\n{good}\n1,2,3\n", encoding="utf-8")
        with pytest.raises(DatasetFormatError) as exc:
            load_rmse_dataset(path)
        assert exc.value.line == 4
        assert "line 4" in str(exc.value)

    def test_bad_number_and_flag(self, tmp_path):
        bad_num = ",".join(["1"] * 15 + ["x"] + ["1"] * 4)
        path = tmp_path / "bad.csv"
        path.write_text(",".join(["1"] * 20) + "\n" + bad_num + "\n", encoding="utf-8")
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_rmse_dataset(path)

        bad_flag = ",".join(["1"] * 16 + ["1", "1", "yes", "1"])
        path.write_text(bad_flag + "\n", encoding="utf-8")
        with pytest.raises(DatasetFormatError, match="visibility flag"):
            load_rmse_dataset(path)

    def test_bad_first_data_row_is_not_a_header(self):
        row = ",".join(["1"] * 20)
        typo = ",".join(["1.0.0"] + ["1"] * 19)
        with pytest.raises(DatasetFormatError, match="line 1"):
            parse_rmse_dataset([typo, row])

    def test_only_one_header_line(self):
        row = ",".join(["1"] * 20)
        with pytest.raises(DatasetFormatError) as exc:
            parse_rmse_dataset(["header_a,b", "oops garbage", row])
        assert exc.value.line == 2

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("# nothing\n", encoding="utf-8")
        with pytest.raises(DatasetFormatError):
            load_rmse_dataset(path)


# ===========================================================================
# Receptive field
# ===========================================================================

class TestReceptiveField:

    @pytest.mark.parametrize("spec, expected", [
        ("3,1", 3),
        ("3,1 3,1", 5),
        ("3,1 2,2 3,1", 8),
    ])
    def test_closed_form_stacks(self, spec, expected):
        assert receptive_field(parse_layers(spec)) == expected

    def test_trace(self):
        assert receptive_field_trace([(3, 1), (2, 2), (3, 1)]) == [(3, 1), (4, 2), (8, 2)]

    def test_composition(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            a = [(int(k), int(s)) for k, s in rng.integers(1, 8, size=(rng.integers(1, 5), 2))]
            b = [(int(k), int(s)) for k, s in rng.integers(1, 8, size=(rng.integers(1, 5), 2))]
            jump_a = receptive_field_trace(a)[-1][1]
            assert receptive_field(a + b) == receptive_field(a) + (receptive_field(b) - 1) * jump_a

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            receptive_field([])

    def test_parse_error_names_token(self):
        with pytest.raises(ValueError, match="'3x1'"):
            parse_layers("3,1 3x1")
        with pytest.raises(ValueError, match="'0,1'"):
            parse_layers("0,1")

    def test_layer_constraints(self):
        with pytest.raises(ValidationError):
            ConvLayerSpec(kernel=3, stride=0)
