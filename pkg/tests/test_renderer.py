import math

import numpy as np
import pytest

from panosim.dataset import GridIndex, PanoRecord, synth_pano
from panosim.geometry import CameraIntrinsics, Orientation, pixel_ray_grid, ray_sphere_exit_grid
from panosim.renderer import (
    CameraPose,
    Frame,
    RenderRequest,
    composite_over,
    image_mae,
    image_psnr,
    render,
    select_panorama,
    sphere_offset,
)

from conftest import brute_force_nearest, make_manifest
from oracle import expected_synth_frame

VGA60 = CameraIntrinsics(640, 480, math.radians(60))
SMALL = CameraIntrinsics(160, 120, math.radians(60))


class TestSelectPanorama:
    def test_nearer_cell_wins(self):
        grid = GridIndex(make_manifest(nx=2, ny=1, cell=0.2))
        assert select_panorama(grid, CameraPose(0.09, 0.0)) == "c00_00"
        assert select_panorama(grid, CameraPose(0.11, 0.0)) == "c01_00"

    def test_exact_midpoint_tie_break(self):
        grid = GridIndex(make_manifest(nx=2, ny=1, cell=0.2))
        assert select_panorama(grid, CameraPose(0.1, 0.0)) == "c00_00"

    def test_random_poses_match_brute_force(self, rng):
        manifest = make_manifest(nx=5, ny=5, cell=0.2)
        grid = GridIndex(manifest)
        for _ in range(100):
            pose = CameraPose(float(rng.uniform(-0.2, 1.0)), float(rng.uniform(-0.2, 1.0)))
            assert select_panorama(grid, pose) == brute_force_nearest(
                manifest, pose.x_m, pose.y_m
            )


class TestSphereOffset:
    def test_cell_center_is_origin(self):
        o = sphere_offset(CameraPose(0.4, 0.6), (0.4, 0.6), 0.2, lam=0.5)
        assert tuple(o) == (0.0, 0.0, 0.0)

    def test_cell_edge_formula(self):
        o = sphere_offset(CameraPose(0.1, 0.0), (0.0, 0.0), 0.2, lam=0.5)
        np.testing.assert_allclose(o, [0.5, 0.0, 0.0], atol=1e-15)

    def test_norm_clamped(self):
        """lam=0.9 at full diagonal offset: 0.9*sqrt(2) = 1.27 clamps to 0.95."""
        o = sphere_offset(CameraPose(0.1, 0.1), (0.0, 0.0), 0.2, lam=0.9)
        assert np.linalg.norm(o) == pytest.approx(0.95, abs=1e-12)
        assert o[0] == o[1]  # direction preserved

    def test_z_excluded_by_default(self):
        o = sphere_offset(CameraPose(0.0, 0.0, 1.5), (0.0, 0.0), 0.2, lam=0.5)
        assert o[2] == 0.0
        o = sphere_offset(
            CameraPose(0.0, 0.0, 1.15), (0.0, 0.0), 0.2, lam=0.5, include_z=True, pano_z=1.1
        )
        assert o[2] == pytest.approx(0.25)

    def test_lambda_range(self):
        with pytest.raises(ValueError):
            sphere_offset(CameraPose(0, 0), (0, 0), 0.2, lam=1.0)


class TestRender:
    def test_interpolation_noop_at_cell_center(self, synth_2048):
        pose = CameraPose(0.0, 0.0, orientation=Orientation(yaw=0.3, pitch=-0.1))
        off = render(RenderRequest(pose, SMALL, interpolate=False), synth_2048,
                     cell_size_m=0.2)
        on = render(RenderRequest(pose, SMALL, interpolate=True), synth_2048,
                    cell_size_m=0.2)
        assert np.array_equal(off.pixels, on.pixels)

    def test_matches_closed_form_oracle_forward(self, synth_2048):
        frame = render(RenderRequest(CameraPose(0.0, 0.0), VGA60), synth_2048)
        want = expected_synth_frame(640, 480, 60.0)
        err = np.abs(frame.pixels.astype(np.float64) - want)
        assert err.max() <= 2.0

    @pytest.mark.parametrize("yaw,pitch", [(0.7, 0.0), (math.pi, 0.2), (-2.0, -0.3)])
    def test_matches_closed_form_oracle_rotated(self, synth_2048, yaw, pitch):
        pose = CameraPose(0.0, 0.0, orientation=Orientation(yaw=yaw, pitch=pitch))
        frame = render(RenderRequest(pose, SMALL), synth_2048)
        want = expected_synth_frame(160, 120, 60.0, yaw=yaw, pitch=pitch)
        assert np.abs(frame.pixels.astype(np.float64) - want).max() <= 2.0

    def test_camera_yaw_equals_opposite_pano_yaw_offset(self):
        """Turning the camera by psi samples the same pixels as correcting
        the panorama heading by -psi (the offset is subtracted in the
        texture mapping)."""
        psi = math.pi / 2
        plain = synth_pano(512, 256)
        shifted = synth_pano(
            512, 256, record=PanoRecord(id="s", file="<s>", x_m=0, y_m=0, yaw_offset=-psi)
        )
        yawed = render(
            RenderRequest(CameraPose(0, 0, orientation=Orientation(yaw=psi)), SMALL), plain
        )
        offset = render(RenderRequest(CameraPose(0, 0), SMALL), shifted)
        err = np.abs(yawed.pixels.astype(float) - offset.pixels.astype(float))
        assert err.max() <= 2.0

    def test_fused_pipeline_matches_reference_helpers(self, synth_2048):
        """The blocked render kernel agrees with the straightforward
        composition of the vectorized geometry helpers (op order differs,
        so allow one color step of rounding slack)."""
        from panosim.geometry import bilinear_sample_grid, dirs_to_tex_grid

        pose = CameraPose(0.04, -0.03, orientation=Orientation(yaw=1.1, pitch=0.2, roll=-0.4))
        frame = render(RenderRequest(pose, SMALL, interpolate=True), synth_2048,
                       cell_size_m=0.2)

        rays = pixel_ray_grid(SMALL).astype(np.float64)
        rot = pose.orientation.matrix()
        d = rot @ rays
        origin = sphere_offset(pose, (0.0, 0.0), 0.2, lam=0.5)
        qx, qy, qz = ray_sphere_exit_grid(origin, d[0].copy(), d[1].copy(), d[2].copy())
        u, v = dirs_to_tex_grid(qx, qy, qz, synth_2048.width, synth_2048.height)
        want = bilinear_sample_grid(synth_2048.pixels, u, v).reshape(120, 160, 3)
        diff = np.abs(frame.pixels.astype(int) - want.astype(int))
        assert diff.max() <= 1

    def test_deterministic_bytes(self, synth_2048):
        req = RenderRequest(
            CameraPose(0.03, -0.02, orientation=Orientation(0.5, 0.1, -0.2)),
            SMALL,
            interpolate=True,
        )
        a = render(req, synth_2048, cell_size_m=0.2)
        b = render(req, synth_2048, cell_size_m=0.2)
        assert np.array_equal(a.pixels, b.pixels)
        assert a.source_pano_id == b.source_pano_id == "synthetic"

    def test_continuity_as_pose_step_shrinks(self, synth_2048):
        """MAE between renders eps apart decreases monotonically as eps
        drops 8 -> 4 -> 2 -> 1 mm (same orientation, one cell)."""
        base = CameraPose(0.01, 0.005)
        f0 = render(RenderRequest(base, SMALL, interpolate=True), synth_2048,
                    cell_size_m=0.2)
        maes = []
        for eps_mm in (8, 4, 2, 1):
            moved = CameraPose(0.01 + eps_mm / 1000.0, 0.005)
            f1 = render(RenderRequest(moved, SMALL, interpolate=True), synth_2048,
                        cell_size_m=0.2)
            maes.append(image_mae(f0, f1))
        assert maes[0] > maes[1] > maes[2] > maes[3] > 0

    def test_offset_toward_patch_magnifies(self):
        """Moving the projection camera toward the forward patch makes the
        patch subtend a larger camera angle (zoom illusion); equivalently
        a fixed pixel block's exit points span a smaller sphere arc."""
        # fixed sphere patch at theta = +/-5 deg seen from displaced origins
        q1 = np.array([math.cos(math.radians(5)), math.sin(math.radians(5)), 0.0])
        q2 = np.array([math.cos(math.radians(5)), -math.sin(math.radians(5)), 0.0])

        def subtended(origin):
            d1, d2 = q1 - origin, q2 - origin
            cosang = d1 @ d2 / (np.linalg.norm(d1) * np.linalg.norm(d2))
            return math.acos(max(-1.0, min(1.0, cosang)))

        assert subtended(np.array([0.5, 0.0, 0.0])) > subtended(np.zeros(3))

        # same fact via the exit points of a fixed central pixel block
        rays = pixel_ray_grid(SMALL).reshape(3, 120, 160)
        block = rays[:, 58:62, 78:82].reshape(3, -1).astype(np.float64)
        qx, qy, qz = ray_sphere_exit_grid(
            np.array([0.5, 0.0, 0.0]), block[0].copy(), block[1].copy(), block[2].copy()
        )
        q_off = np.stack([qx, qy, qz], axis=-1)
        q_off /= np.linalg.norm(q_off, axis=1, keepdims=True)
        block = block.T

        def spread(qs):
            cmin = 1.0
            for i in range(len(qs)):
                for j in range(i + 1, len(qs)):
                    cmin = min(cmin, float(qs[i] @ qs[j]))
            return math.acos(cmin)

        assert spread(q_off) < spread(block)


class TestCompositeOver:
    def base(self):
        pixels = np.full((4, 6, 3), 10, dtype=np.uint8)
        return Frame(width=6, height=4, pixels=pixels, source_pano_id="x")

    def test_transparent_overlay_is_noop(self):
        base = self.base()
        overlay = np.zeros((4, 6, 4), dtype=np.uint8)
        overlay[:, :, :3] = 200
        out = composite_over(base, overlay)
        assert np.array_equal(out.pixels, base.pixels)

    def test_opaque_overlay_replaces(self):
        base = self.base()
        overlay = np.zeros((4, 6, 4), dtype=np.uint8)
        overlay[:, :, :3] = 200
        overlay[:, :, 3] = 255
        out = composite_over(base, overlay)
        assert np.all(out.pixels == 200)

    def test_half_alpha_rounds_half_up(self):
        base = self.base()
        base.pixels[:] = 0
        overlay = np.zeros((4, 6, 4), dtype=np.uint8)
        overlay[:, :, :3] = 255
        overlay[:, :, 3] = 128
        out = composite_over(base, overlay)
        assert np.all(out.pixels == 128)  # 255 * 128/255 = 128 exactly

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="overlay shape"):
            composite_over(self.base(), np.zeros((5, 6, 4), dtype=np.uint8))


class TestImageMetrics:
    def frames(self, a, b):
        fa = Frame(width=a.shape[1], height=a.shape[0], pixels=a, source_pano_id="a")
        fb = Frame(width=b.shape[1], height=b.shape[0], pixels=b, source_pano_id="b")
        return fa, fb

    def test_identical_frames(self):
        px = np.random.default_rng(1).integers(0, 256, (8, 16, 3), dtype=np.uint8)
        fa, fb = self.frames(px, px.copy())
        assert image_mae(fa, fb) == 0.0
        assert image_psnr(fa, fb) == math.inf

    def test_black_vs_white(self):
        fa, fb = self.frames(
            np.zeros((4, 8, 3), dtype=np.uint8), np.full((4, 8, 3), 255, dtype=np.uint8)
        )
        assert image_mae(fa, fb) == 255.0
        assert image_psnr(fa, fb) == pytest.approx(0.0, abs=1e-12)

    def test_random_pair_matches_double_loop(self, rng):
        a = rng.integers(0, 256, (12, 16, 3), dtype=np.uint8)
        b = rng.integers(0, 256, (12, 16, 3), dtype=np.uint8)
        total_abs = 0.0
        total_sq = 0.0
        for v in range(12):
            for u in range(16):
                for c in range(3):
                    diff = float(a[v, u, c]) - float(b[v, u, c])
                    total_abs += abs(diff)
                    total_sq += diff * diff
        n = 12 * 16 * 3
        fa, fb = self.frames(a, b)
        assert image_mae(fa, fb) == pytest.approx(total_abs / n, abs=1e-9)
        assert image_psnr(fa, fb) == pytest.approx(
            20.0 * math.log10(255.0 / math.sqrt(total_sq / n)), abs=1e-9
        )

    def test_dimension_mismatch(self):
        fa, _ = self.frames(
            np.zeros((4, 8, 3), dtype=np.uint8), np.zeros((4, 8, 3), dtype=np.uint8)
        )
        with pytest.raises(ValueError, match="dimensions differ"):
            image_mae(fa, np.zeros((5, 8, 3), dtype=np.uint8))
