import io
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchsplat.errors import InvalidParameterError, PreconditionError, ProtocolError
from sketchsplat.losses import (
    ALPHAS_CUMPROD,
    CommandNoiseProvider,
    EchoFreeMockProvider,
    GuidanceTargetProvider,
    MockNoiseProvider,
    SobelPyramidEncoder,
    alpha_bar,
    builtin_encoder,
    color_loss,
    edge_sketch,
    encode_request,
    encode_response,
    feature_distance,
    load_feature_file,
    read_request,
    read_response,
    sds_grad,
    seeded_noise,
    serve,
    sketch_loss,
)


class TestColorLoss:
    def test_identical_is_zero(self, rng):
        img = rng.uniform(0, 1, (5, 5, 3))
        rep = color_loss(img, img, 1.0, 3, 10)
        assert rep.value == 0.0 and not rep.d_image.any()

    def test_hand_arithmetic(self):
        rep = color_loss(np.ones((1, 1)), np.zeros((1, 1)), 1.0, 1, 1)
        assert rep.value == 1.0
        np.testing.assert_array_equal(rep.d_image, [[-2.0]])

    def test_linear_schedule_weight(self, rng):
        g, c = rng.uniform(0, 1, (2, 4, 4, 3))
        full = color_loss(g, c, 1.0, 500, 500).value
        assert color_loss(g, c, 1.0, 250, 500).value == pytest.approx(0.5 * full, rel=1e-15)

    def test_normalised_by_pixels_summed_over_channels(self):
        g = np.zeros((2, 3, 3))
        c = np.full((2, 3, 3), 0.5)
        assert color_loss(g, c, 1.0, 1, 1).value == pytest.approx(3 * 0.25)

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            color_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), 1, 1, 1)
        with pytest.raises(InvalidParameterError):
            color_loss(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), 1, 2, 1)

    @given(st.integers(0, 10_000), st.floats(0.01, 1), st.integers(1, 20))
    @settings(max_examples=25)
    def test_gradient_matches_finite_differences(self, seed, w, step):
        rng = np.random.default_rng(seed)
        g, c = rng.uniform(0, 1, (2, 3, 3, 3))
        rep = color_loss(g, c, w, step, 20)
        h = 1e-6
        num = np.zeros_like(c)
        for idx in np.ndindex(c.shape):
            p, m = c.copy(), c.copy()
            p[idx] += h
            m[idx] -= h
            num[idx] = (color_loss(g, p, w, step, 20).value - color_loss(g, m, w, step, 20).value) / (2 * h)
        assert np.abs(num - rep.d_image).max() <= 1e-6 * np.abs(rep.d_image).max() + 1e-12

    @given(st.floats(-2, 2), st.floats(0.1, 1.0))
    def test_nonnegative_and_linear_in_weight(self, a, w):
        g = np.full((2, 2, 3), 0.5)
        c = g + a
        r1 = color_loss(g, c, w, 1, 1)
        r2 = color_loss(g, c, 2 * w, 1, 1)
        assert r1.value >= 0
        np.testing.assert_allclose(r2.d_image, 2 * r1.d_image)


class TestEncoder:
    enc = builtin_encoder()

    def test_feature_length(self):
        assert self.enc.feature_length == 4096 + 1024 + 256 == 5376
        assert self.enc(np.zeros((20, 30, 3))).shape == (5376,)

    def test_constant_image_has_zero_features(self):
        np.testing.assert_allclose(self.enc(np.full((16, 16, 3), 0.4)), 0.0, atol=1e-15)

    def test_translation_sensitive(self):
        img = np.zeros((64, 64, 3))
        img[20:30, 20:30] = 1.0
        shifted = np.roll(img, 3, axis=1)
        assert not np.allclose(self.enc(img)[:4096], self.enc(shifted)[:4096])

    def test_deterministic(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        np.testing.assert_array_equal(self.enc(img), SobelPyramidEncoder()(img))

    @pytest.mark.parametrize("seed", range(3))
    def test_backward_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.uniform(0, 1, (16, 16, 3))
        d_feat = rng.standard_normal(self.enc.feature_length)
        an = self.enc.backward(img, d_feat)
        h = 1e-6
        num = np.zeros_like(img)
        for idx in np.ndindex(img.shape):
            p, m = img.copy(), img.copy()
            p[idx] += h
            m[idx] -= h
            num[idx] = d_feat @ (self.enc(p) - self.enc(m)) / (2 * h)
        assert np.abs(an - num).max() <= 1e-4 * np.abs(num).max()

    def test_backward_length_checked(self):
        with pytest.raises(InvalidParameterError):
            self.enc.backward(np.zeros((8, 8, 3)), np.zeros(10))


class TestSketchLoss:
    enc = builtin_encoder()

    def test_same_image_zero(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        assert sketch_loss(self.enc, img, img, 0.1).value == 0.0

    def test_zero_weight(self, rng):
        a, b = rng.uniform(0, 1, (2, 16, 16, 3))
        rep = sketch_loss(self.enc, a, b, 0.0)
        assert rep.value == 0.0 and not rep.d_image.any()

    def test_brightness_shift_invariance(self, rng):
        a, b = rng.uniform(0.2, 0.7, (2, 16, 16, 3))
        base = sketch_loss(self.enc, a, b, 0.1).value
        assert sketch_loss(self.enc, a + 0.2, b + 0.2, 0.1).value == pytest.approx(base, rel=1e-9)

    def test_gradient_finite_differences(self, rng):
        sketch, img = rng.uniform(0, 1, (2, 16, 16, 3))
        rep = sketch_loss(self.enc, sketch, img, 0.1)
        h = 1e-6
        num = np.zeros_like(img)
        for idx in np.ndindex(img.shape):
            p, m = img.copy(), img.copy()
            p[idx] += h
            m[idx] -= h
            num[idx] = (sketch_loss(self.enc, sketch, p, 0.1).value - sketch_loss(self.enc, sketch, m, 0.1).value) / (2 * h)
        assert np.abs(rep.d_image - num).max() <= 1e-4 * np.abs(num).max()

    def test_precomputed_features_equivalent(self, rng):
        sketch, img = rng.uniform(0, 1, (2, 16, 16, 3))
        a = sketch_loss(self.enc, sketch, img, 0.3)
        b = sketch_loss(self.enc, None, img, 0.3, self.enc(sketch))
        assert a.value == b.value
        np.testing.assert_array_equal(a.d_image, b.d_image)

    def test_linear_in_weight(self, rng):
        sketch, img = rng.uniform(0, 1, (2, 16, 16, 3))
        a = sketch_loss(self.enc, sketch, img, 0.1)
        b = sketch_loss(self.enc, sketch, img, 0.2)
        assert b.value == pytest.approx(2 * a.value)
        np.testing.assert_allclose(b.d_image, 2 * a.d_image)

    def test_edge_sketch_white_background(self):
        img = np.full((16, 16, 3), 0.3)
        img[4:12, 4:12] = 0.9
        sk = edge_sketch(img)
        assert sk.shape == (16, 16, 3)
        assert sk[0, 0, 0] == 1.0 and sk[4, 8, 0] < 1.0


def test_feature_file(tmp_path):
    feats = np.arange(6, dtype=np.float32)
    np.save(tmp_path / "f.npy", feats)
    loaded = load_feature_file(tmp_path / "f.npy")
    assert feature_distance(loaded, loaded + 1.0) == 6.0
    with pytest.raises(InvalidParameterError):
        feature_distance(np.zeros(3), np.zeros(4))


class TestSchedule:
    def test_endpoints(self):
        assert alpha_bar(1) == pytest.approx(1 - 1e-4, rel=1e-15)
        assert alpha_bar(2) == pytest.approx((1 - 1e-4) * (1 - (1e-4 + 0.0199 / 999)), rel=1e-15)
        assert alpha_bar(1000) == pytest.approx(ALPHAS_CUMPROD[-1])
        assert 0 < alpha_bar(1000) < 1e-4

    def test_monotone(self):
        assert np.all(np.diff(ALPHAS_CUMPROD) < 0)

    @pytest.mark.parametrize("t", [0, 1001])
    def test_range(self, t):
        with pytest.raises(InvalidParameterError):
            alpha_bar(t)


class EchoProvider:
    """Knows the seed and returns the exact noise."""

    def bind_seed(self, seed):
        self.seed = seed

    def __call__(self, x, t, tag=""):
        return seeded_noise(self.seed, x.shape)


class TestSDS:
    img = np.random.default_rng(1).uniform(0, 1, (4, 5, 3))
    target = np.random.default_rng(2).uniform(0, 1, (4, 5, 3))

    def test_perfect_denoiser_gives_zero(self):
        np.testing.assert_array_equal(sds_grad(EchoProvider(), self.img, 300, 7), 0.0)

    @pytest.mark.parametrize("t", [1, 50, 500, 999])
    def test_mock_k1_is_image_minus_target(self, t):
        d = sds_grad(MockNoiseProvider(self.target, 1.0), self.img, t, 11)
        np.testing.assert_allclose(d, self.img - self.target, atol=1e-9)

    def test_mock_k0_is_zero(self):
        np.testing.assert_allclose(sds_grad(MockNoiseProvider(self.target, 0.0), self.img, 100, 3), 0.0, atol=1e-12)

    def test_mock_at_target_is_zero(self):
        np.testing.assert_allclose(sds_grad(MockNoiseProvider(self.img, 2.5), self.img, 100, 3), 0.0, atol=1e-12)

    def test_mock_linear_in_k(self):
        a = sds_grad(MockNoiseProvider(self.target, 1.0), self.img, 200, 4)
        b = sds_grad(MockNoiseProvider(self.target, 3.0), self.img, 200, 4)
        np.testing.assert_allclose(b, 3 * a, atol=1e-9)

    def test_mock_needs_seed(self):
        with pytest.raises(PreconditionError):
            MockNoiseProvider(self.target)(self.img, 10, "")

    def test_deterministic(self):
        p = MockNoiseProvider(self.target, 0.5)
        np.testing.assert_array_equal(sds_grad(p, self.img, 321, 99), sds_grad(p, self.img, 321, 99))
        np.testing.assert_array_equal(seeded_noise(5, (2, 2, 3)), np.random.default_rng(5).standard_normal((2, 2, 3)))

    def test_shape_mismatch_is_protocol_error(self):
        with pytest.raises(ProtocolError):
            sds_grad(lambda x, t, tag: np.zeros((1, 1, 3)), self.img, 10, 0)

    @pytest.mark.parametrize("t", [50, 250])
    def test_echo_free_expectation(self, t):
        provider = EchoFreeMockProvider(self.target, 1.0)
        n = 100_000
        acc = np.zeros_like(self.img)
        for seed in range(n):
            acc += sds_grad(provider, self.img, t, seed)
        mean = acc / n
        expected = self.img - self.target
        assert np.linalg.norm(mean - expected) <= 0.02 * np.linalg.norm(expected)

    def test_guidance_target_provider_follows_target(self):
        p = GuidanceTargetProvider(k=1.0)
        p.set_target(self.target)
        np.testing.assert_allclose(sds_grad(p, self.img, 77, 5), self.img - self.target, atol=1e-9)
        p.set_target(self.img)
        np.testing.assert_allclose(sds_grad(p, self.img, 77, 5), 0.0, atol=1e-9)


class TestWireFormat:
    def test_request_layout(self):
        img = np.arange(2 * 3 * 3, dtype=np.float64).reshape(2, 3, 3) / 10
        raw = encode_request(img, 42, "a cat")
        assert raw[:16] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little") + (42).to_bytes(4, "little") + (5).to_bytes(4, "little")
        assert raw[16:21] == b"a cat"
        assert len(raw) == 21 + 2 * 3 * 3 * 4
        back, t, tag = read_request(io.BytesIO(raw))
        np.testing.assert_array_equal(back, img.astype(np.float32))
        assert (t, tag) == (42, "a cat")

    def test_eof(self):
        assert read_request(io.BytesIO(b"")) is None

    def test_truncated(self):
        raw = encode_request(np.zeros((2, 2, 3)), 1, "")
        with pytest.raises(ProtocolError):
            read_request(io.BytesIO(raw[:-1]))
        with pytest.raises(ProtocolError):
            read_response(io.BytesIO(encode_response(np.zeros((2, 2, 3)))[:10]))

    def test_serve_loop(self):
        frames = encode_request(np.full((2, 2, 3), 0.5), 10, "x") + encode_request(np.zeros((1, 3, 3)), 20, "")
        out = io.BytesIO()
        serve(lambda x, t, tag: x * 2 + t, io.BytesIO(frames), out)
        out.seek(0)
        np.testing.assert_array_equal(read_response(out), np.full((2, 2, 3), 11.0))
        np.testing.assert_array_equal(read_response(out), np.full((1, 3, 3), 20.0))

    def test_subprocess_provider(self, tmp_path):
        script = tmp_path / "provider.py"
        script.write_text(textwrap.dedent("""
            import sys
            import numpy as np
            from sketchsplat.losses import serve
            serve(lambda x, t, tag: x * 0.5 + len(tag), sys.stdin.buffer, sys.stdout.buffer)
        """))
        provider = CommandNoiseProvider([sys.executable, str(script)])
        try:
            img = np.random.default_rng(0).uniform(0, 1, (3, 4, 3)).astype(np.float32).astype(np.float64)
            for t in (5, 500):
                np.testing.assert_allclose(provider(img, t, "ab"), img * 0.5 + 2, rtol=1e-6)
            d = sds_grad(provider, img, 100, 3, "ab")
            assert d.shape == img.shape
        finally:
            provider.close()

    def test_subprocess_bad_shape(self, tmp_path):
        script = tmp_path / "bad.py"
        script.write_text(textwrap.dedent("""
            import sys
            import numpy as np
            from sketchsplat.losses import serve
            serve(lambda x, t, tag: np.zeros((1, 1, 3)), sys.stdin.buffer, sys.stdout.buffer)
        """))
        provider = CommandNoiseProvider([sys.executable, str(script)])
        try:
            with pytest.raises(ProtocolError):
                provider(np.zeros((2, 2, 3)), 1, "")
        finally:
            provider.close()
