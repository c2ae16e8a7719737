import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sketchsplat.camera import CameraIntrinsics, pose_schedule
from sketchsplat.errors import FormatError, InvalidParameterError, MissingEntryError
from sketchsplat.gaussians import random_scene
from sketchsplat.guidance import (
    DirectoryGuidance,
    GuidanceSet,
    SyntheticGuidance,
    distribution_transfer,
    distribution_transfer_backward,
    guidance_filename,
    load_guidance,
    save_guidance,
    synthetic_guidance,
)
from sketchsplat.images import to_bytes

images = arrays(np.float64, (6, 5, 3), elements=st.floats(0, 1))


class TestTransfer:
    def test_arithmetic_oracle(self):
        out = distribution_transfer(np.array([0.2, 0.6]), np.array([0.1, 0.9]))
        np.testing.assert_allclose(out, [0.1, 0.9], atol=1e-15)

    def test_matched_stats_is_identity(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        np.testing.assert_allclose(distribution_transfer(img, img[::-1, ::-1]), img, atol=1e-12)

    def test_constant_guide(self, rng):
        out = distribution_transfer(rng.uniform(0, 1, (8, 8, 3)), np.full((8, 8, 3), 0.3))
        np.testing.assert_allclose(out, 0.3, atol=1e-15)

    def test_constant_content_is_guarded(self, rng):
        out = distribution_transfer(np.full((4, 4, 3), 0.7), rng.uniform(0, 1, (4, 4, 3)))
        assert np.isfinite(out).all()

    def test_shape_mismatch(self):
        with pytest.raises(InvalidParameterError):
            distribution_transfer(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
        with pytest.raises(InvalidParameterError):
            distribution_transfer_backward(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.zeros((4, 3, 3)))

    @given(images, images)
    def test_unclamped_statistics_match_guide(self, content, guide):
        if content.std(axis=(0, 1)).min() < 1e-3:
            return
        out = distribution_transfer(content, guide, clamp=False)
        np.testing.assert_allclose(out.mean(axis=(0, 1)), guide.mean(axis=(0, 1)), atol=1e-6)
        np.testing.assert_allclose(out.std(axis=(0, 1)), guide.std(axis=(0, 1)), atol=1e-6)

    @given(images, images)
    def test_clamped_output_in_range(self, content, guide):
        out = distribution_transfer(content, guide)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_zero_upstream(self, rng):
        c, g = rng.uniform(0, 1, (2, 4, 4, 3))
        assert not distribution_transfer_backward(c, g, np.zeros((4, 4, 3))).any()


def fd_transfer(content, guide, d_out, clamp, h=1e-6):
    num = np.zeros_like(content)
    for idx in np.ndindex(content.shape):
        p, m = content.copy(), content.copy()
        p[idx] += h
        m[idx] -= h
        num[idx] = np.sum(d_out * (distribution_transfer(p, guide, clamp) - distribution_transfer(m, guide, clamp))) / (2 * h)
    return num


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    c, g = rng.uniform(0, 1, (2, 4, 4, 3))
    d = rng.standard_normal((4, 4, 3))
    for clamp in (False, True):
        an = distribution_transfer_backward(c, g, d, clamp)
        assert rel_err(an, fd_transfer(c, g, d, clamp)) < 1e-4


def test_backward_uniform_upstream_on_matched_stats():
    rng = np.random.default_rng(3)
    img = rng.uniform(0.3, 0.7, (4, 4, 3))
    guide = 0.5 + 0.5 * (img - img.mean(axis=(0, 1)))  # half the spread, same centre
    d = np.ones((4, 4, 3))
    an = distribution_transfer_backward(img, guide, d, clamp=False)
    np.testing.assert_allclose(an, fd_transfer(img, guide, d, False), rtol=1e-4, atol=1e-8)
    # a uniform push shifts the output mean only, which the mean subtraction cancels
    np.testing.assert_allclose(an.sum(axis=(0, 1)), 0.0, atol=1e-9)


class TestDirectoryProtocol:
    intr = CameraIntrinsics(50, 16, 16)

    def saved(self, tmp_path, size=16):
        sched = pose_schedule(30)
        rng = np.random.default_rng(0)
        gs = GuidanceSet({p: to_bytes(rng.uniform(0, 1, (size, size, 3))) / 255.0 for p in sched})
        save_guidance(gs, tmp_path)
        return sched, gs

    def test_filenames(self):
        names = [guidance_filename(p) for p in pose_schedule(30)]
        assert names[0] == "h_000.png" and names[3] == "h_090.png" and names[-1] == "v_330.png"

    def test_roundtrip_identity(self, tmp_path):
        sched, gs = self.saved(tmp_path)
        loaded = load_guidance(tmp_path, self.intr, sched)
        assert len(loaded) == 24
        for p in sched:
            np.testing.assert_array_equal(loaded[p], gs[p])

    def test_missing_entry_named(self, tmp_path):
        sched, _ = self.saved(tmp_path)
        (tmp_path / "v_090.png").unlink()
        with pytest.raises(MissingEntryError, match="v_090.png"):
            load_guidance(tmp_path, self.intr, sched)

    def test_resampled_to_render_resolution(self, tmp_path):
        sched, _ = self.saved(tmp_path, size=8)
        loaded = load_guidance(tmp_path, self.intr, sched)
        assert loaded.resolution == (16, 16)
        assert all(loaded[p].shape == (16, 16, 3) for p in sched)

    def test_undecodable(self, tmp_path):
        sched, _ = self.saved(tmp_path)
        (tmp_path / "h_030.png").write_bytes(b"not an image")
        with pytest.raises(FormatError):
            load_guidance(tmp_path, self.intr, sched)

    def test_provider_rereads_directory(self, tmp_path):
        sched, _ = self.saved(tmp_path)
        provider = DirectoryGuidance(tmp_path, self.intr, sched)
        first = provider(1, None)
        save_guidance(GuidanceSet({p: np.zeros((16, 16, 3)) for p in sched}), tmp_path)
        second = provider(31, None)
        assert second.generation_step == 31
        assert not np.array_equal(first[sched[0]], second[sched[0]])


def test_mixed_resolutions_rejected():
    sched = pose_schedule(180)
    with pytest.raises(InvalidParameterError):
        GuidanceSet({sched[0]: np.zeros((4, 4, 3)), sched[1]: np.zeros((5, 4, 3))})


def test_synthetic_guidance_renders_every_pose():
    sched = pose_schedule(90)
    truth = random_scene(6, 0)
    intr = CameraIntrinsics(50, 12, 12)
    gs = synthetic_guidance(truth, sched, intr)
    assert set(gs.entries) == set(sched)
    prov = SyntheticGuidance(truth, intr, sched)
    for p in sched:
        np.testing.assert_array_equal(prov(5, None)[p], gs[p])
