import json

import numpy as np
import pytest

from lanepoly import data, geometry
from lanepoly.errors import ParseError, TooManyLanes


GOOD_LINE = ('{"lanes": [[-2, 410, 420]], "h_samples": [200, 210, 220], '
             '"raw_file": "clips/a.jpg"}')


class TestParse:
    def test_single_record(self):
        annos = data.parse_annotations(GOOD_LINE, image_size=(1280, 720))
        assert len(annos) == 1
        a = annos[0]
        assert a.raw_file == "clips/a.jpg"
        np.testing.assert_allclose(a.lane_points(0), [[410, 210], [420, 220]])

    def test_empty_stream(self):
        assert data.parse_annotations("") == []
        assert data.parse_annotations("\n\n") == []

    def test_length_mismatch_line_number(self):
        text = GOOD_LINE + "\n" + json.dumps(
            {"lanes": [[1, 2]], "h_samples": [10, 20, 30], "raw_file": "b"})
        with pytest.raises(ParseError) as e:
            data.parse_annotations(text)
        assert e.value.line == 2

    def test_malformed_json_line_number(self):
        with pytest.raises(ParseError) as e:
            data.parse_annotations(GOOD_LINE + "\n{not json")
        assert e.value.line == 2

    def test_missing_key(self):
        with pytest.raises(ParseError):
            data.parse_annotations('{"lanes": [], "h_samples": []}')

    def test_non_increasing_h_samples(self):
        with pytest.raises(ParseError):
            data.parse_annotations(
                '{"lanes": [], "h_samples": [10, 10], "raw_file": "x"}')

    def test_never_skips_bad_records(self):
        # a bad record surrounded by good ones must still raise
        text = "\n".join([GOOD_LINE, '{"bad": 1}', GOOD_LINE])
        with pytest.raises(ParseError) as e:
            data.parse_annotations(text)
        assert e.value.line == 2


class TestRoundTrip:
    def test_serialize_parse_identity(self):
        _, annos = data.generate_synthetic(7, 20, data.SyntheticSpec(),
                                           render=False)
        text = data.serialize_annotations(annos)
        again = data.parse_annotations(text, image_size=annos[0].image_size)
        assert again == annos
        assert data.serialize_annotations(again) == text

    def test_sentinels_survive(self):
        annos = data.parse_annotations(GOOD_LINE)
        text = data.serialize_annotations(annos)
        assert json.loads(text)["lanes"][0][0] == -2


class TestBuildTarget:
    def test_empty_image(self):
        a = data.ImageAnnotation("x", (100, 110), (), image_size=(640, 360))
        tgt = data.build_target(a, 5)
        assert tgt.n_lanes == 0
        assert tgt.h == 1.0
        assert all(t.c == 0.0 for t in tgt.lanes)

    def test_ordering_by_bottom_x(self):
        a = data.ImageAnnotation(
            "x", (600, 700),
            ((800.0, 820.0), (400.0, 380.0)), image_size=(1280, 720))
        tgt = data.build_target(a, 5)
        # lane with bottom x 380 sorts before bottom x 820
        assert tgt.lanes[0].points[-1, 0] == pytest.approx(380 / 1280)
        assert tgt.lanes[1].points[-1, 0] == pytest.approx(820 / 1280)

    def test_offsets_and_horizon(self):
        a = data.ImageAnnotation(
            "x", (410, 500, 600),
            ((-2, 300.0, 310.0), (200.0, 210.0, 230.0)), image_size=(1280, 720))
        tgt = data.build_target(a, 4)
        assert tgt.n_lanes == 2
        s_values = sorted(t.s for t in tgt.lanes[:2])
        assert s_values == pytest.approx([410 / 720, 500 / 720])
        assert tgt.h == pytest.approx(410 / 720)

    def test_confidence_prefix(self):
        a = data.ImageAnnotation(
            "x", (600, 700), ((100.0, 110.0),), image_size=(1280, 720))
        tgt = data.build_target(a, 5)
        assert [t.c for t in tgt.lanes] == [1.0, 0.0, 0.0, 0.0, 0.0]

    def test_point_counts_preserved(self):
        a = data.ImageAnnotation(
            "x", (300, 310, 320), ((-2, 100.0, 120.0),), image_size=(640, 360))
        tgt = data.build_target(a, 3)
        assert tgt.lanes[0].points.shape == (2, 2)
        assert np.all(tgt.lanes[0].points >= 0) and np.all(tgt.lanes[0].points <= 1)

    def test_too_many_lanes(self):
        a = data.ImageAnnotation(
            "x", (600, 700),
            tuple((float(i), float(i)) for i in range(6)), image_size=(1280, 720))
        with pytest.raises(TooManyLanes):
            data.build_target(a, 5)
        kept = data.build_targets([a], 5, overflow="drop")
        assert kept == []


class TestSynthetic:
    def test_deterministic(self):
        imgs1, annos1 = data.generate_synthetic(5, 3, data.SyntheticSpec())
        imgs2, annos2 = data.generate_synthetic(5, 3, data.SyntheticSpec())
        assert annos1 == annos2
        for a, b in zip(imgs1, imgs2):
            np.testing.assert_array_equal(a, b)

    def test_points_lie_on_polynomial(self):
        spec = data.SyntheticSpec(degree=3, noise_sigma_px=0.0)
        _, annos = data.generate_synthetic(9, 5, spec, render=False)
        w, h = spec.image_size
        for a in annos:
            for pts in a.usable_lanes():
                if len(pts) < spec.degree + 1:
                    continue
                poly = geometry.fit_least_squares(pts / [w, h], spec.degree)
                x_fit = geometry.eval_poly(poly, pts[:, 1] / h) * w
                np.testing.assert_allclose(x_fit, pts[:, 0], atol=1e-6)

    def test_lane_count_range(self):
        spec = data.SyntheticSpec(lane_range=(2, 3))
        _, annos = data.generate_synthetic(1, 30, spec, render=False)
        counts = {len(a.lanes) for a in annos}
        assert counts <= {2, 3}

    def test_noise_changes_points(self):
        _, clean = data.generate_synthetic(4, 2, data.SyntheticSpec(), render=False)
        _, noisy = data.generate_synthetic(
            4, 2, data.SyntheticSpec(noise_sigma_px=3.0), render=False)
        assert clean != noisy


class _FixedRng:
    """Deterministic stand-in driving augment down a chosen branch."""

    def __init__(self, randoms, uniforms=(), integers=()):
        self._r = list(randoms)
        self._u = list(uniforms)
        self._i = list(integers)

    def random(self):
        return self._r.pop(0)

    def uniform(self, lo, hi):
        return self._u.pop(0) if self._u else lo

    def integers(self, lo, hi):
        return self._i.pop(0) if self._i else lo


def _grid_annotation():
    _, annos = data.generate_synthetic(2, 1, data.SyntheticSpec(), render=False)
    return annos[0]


class TestAugment:
    def test_passthrough_branch(self):
        a = _grid_annotation()
        rng = _FixedRng(randoms=[0.999])
        out, img = data.augment(a, None, rng, data.AugmentConfig())
        assert img is None
        assert out.image_size == a.image_size
        for got, want in zip(out.lanes, a.usable_lanes()):
            np.testing.assert_allclose(got, want)

    def test_flip_only(self):
        a = _grid_annotation()
        w, h = a.image_size
        cfg = data.AugmentConfig(probability=1.0, max_rotation_deg=0.0,
                                 flip_probability=1.0, crop_size=(w, h))
        rng = _FixedRng(randoms=[0.0, 0.0], uniforms=[0.0], integers=[0, 0])
        out, _ = data.augment(a, None, rng, cfg)
        orig = a.usable_lanes()
        flipped = sorted(((w - pts[:, 0]).tolist() for pts in orig),
                         key=lambda xs: xs[-1])
        got = sorted((pts[:, 0].tolist() for pts in out.lanes),
                     key=lambda xs: xs[-1])
        for g, f in zip(got, flipped):
            np.testing.assert_allclose(g, f, atol=1e-9)

    def test_rotation_round_trip_exact(self):
        a = _grid_annotation()
        w, h = a.image_size
        cfg = data.AugmentConfig(probability=1.0, max_rotation_deg=10.0,
                                 flip_probability=0.0, crop_size=(w, h))
        rng = _FixedRng(randoms=[0.0, 0.9], uniforms=[10.0], integers=[0, 0])
        out, _ = data.augment(a, None, rng, cfg)
        inv = out.transform.inverse()
        for moved in out.lanes:
            back = inv.apply_raw(moved)
            orig = np.concatenate([pts for pts in a.usable_lanes()])
            # every mapped-back point must coincide with a source point
            for p in back:
                dist = np.min(np.linalg.norm(orig - p, axis=1))
                assert dist < 1e-6

    def test_points_stay_in_crop(self):
        a = _grid_annotation()
        rng = np.random.default_rng(0)
        cfg = data.AugmentConfig(probability=1.0)
        for _ in range(25):
            out, _ = data.augment(a, None, rng, cfg)
            cw, ch = out.image_size
            for pts in out.lanes:
                assert np.all(pts[:, 0] >= 0) and np.all(pts[:, 0] <= cw)
                assert np.all(pts[:, 1] >= 0) and np.all(pts[:, 1] <= ch)
                assert np.all(np.diff(pts[:, 1]) > 0)

    def test_image_and_points_agree(self):
        # a bright dot must land where the point transform says it does
        img = np.zeros((360, 640), dtype=np.uint8)
        img[200, 300] = 255
        a = data.ImageAnnotation("x", (190, 200, 210),
                                 ((290.0, 300.0, 310.0),), image_size=(640, 360))
        cfg = data.AugmentConfig(probability=1.0, max_rotation_deg=8.0,
                                 flip_probability=0.0, crop_size=(640, 360))
        rng = _FixedRng(randoms=[0.0, 0.9], uniforms=[8.0], integers=[0, 0])
        out, warped = data.augment(a, img, rng, cfg)
        expect = out.transform.apply_raw([[300.0, 200.0]])[0]
        peak = np.unravel_index(np.argmax(warped), warped.shape)
        assert abs(peak[1] - expect[0]) <= 1.5
        assert abs(peak[0] - expect[1]) <= 1.5
