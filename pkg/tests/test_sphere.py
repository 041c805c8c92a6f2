"""Spherical geometry: ERP mapping, grid, gnomonic crops, metrics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfmn.errors import ConfigError, ContractError, DomainError, FormatError
from pfmn import sphere as S


class TestErpCoords:
    def test_identity_at_origin(self):
        assert S.erp_coords(123.0, -45.0, 0.0, 0.0) == pytest.approx((123.0, -45.0))

    def test_cos_zero_parallel(self):
        assert S.erp_coords(100.0, 20.0, 40.0, 0.0) == pytest.approx((60.0, 20.0))

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            lon = float(rng.uniform(0, 360))
            lat = float(rng.uniform(-90, 90))
            lon0 = float(rng.uniform(-180, 180))
            lat1 = float(rng.uniform(-89, 89))
            x, y = S.erp_coords(lon, lat, lon0, lat1)
            lon2, lat2 = S.erp_coords_inverse(x, y, lon0, lat1)
            assert lon2 == pytest.approx(lon, abs=1e-9)
            assert lat2 == pytest.approx(lat, abs=1e-9)

    def test_degenerate_parallel(self):
        with pytest.raises(DomainError):
            S.erp_coords(0.0, 0.0, 0.0, 90.0)
        with pytest.raises(DomainError):
            S.erp_coords_inverse(0.0, 0.0, 0.0, -90.0)


class TestViewpointGrid:
    def test_size_and_bounds(self):
        grid = S.viewpoint_grid()
        assert len(grid) == 81
        assert all(0 <= g.lon < 360 for g in grid)
        assert any(g.lon == 320 and g.lat == 75 for g in grid)

    def test_first_element_ordering(self):
        grid = S.viewpoint_grid()
        assert (grid[0].lon, grid[0].lat) == (0.0, -75.0)

    def test_distinct_and_on_lattice(self):
        grid = S.viewpoint_grid()
        seen = {(g.lon, g.lat) for g in grid}
        assert len(seen) == 81
        assert all(g.lon % 40 == 0 for g in grid)
        assert all(abs(g.lat) in (0.0, 15.0, 35.0, 55.0, 75.0) for g in grid)

    def test_matches_shared_ordering_fixture(self):
        import json
        from pathlib import Path
        fixture = Path(__file__).resolve().parents[1] / "shared" / "viewpoint_grid.json"
        recorded = json.loads(fixture.read_text())["viewpoints"]
        grid = S.viewpoint_grid()
        assert len(recorded) == len(grid)
        for rec, vp in zip(recorded, grid):
            assert rec["lon"] == pytest.approx(vp.lon)
            assert rec["lat"] == pytest.approx(vp.lat)


class TestViewpoint:
    def test_lon_wrap(self):
        assert S.Viewpoint(-40.0, 0.0).lon == pytest.approx(320.0)
        assert S.Viewpoint(400.0, 0.0).lon == pytest.approx(40.0)

    def test_lat_range(self):
        with pytest.raises(ConfigError):
            S.Viewpoint(0.0, 91.0)


class TestCosineSimilarity:
    def test_identity_antipodes_orthogonal(self):
        a = S.Viewpoint(0.0, 0.0)
        assert S.frame_cosine_similarity(a, a) == pytest.approx(1.0)
        assert S.frame_cosine_similarity(a, S.Viewpoint(180.0, 0.0)) == pytest.approx(-1.0)
        assert S.frame_cosine_similarity(a, S.Viewpoint(90.0, 0.0)) == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(0, 359.9), st.floats(-90, 90), st.floats(0, 359.9), st.floats(-90, 90))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_periodic(self, lon_a, lat_a, lon_b, lat_b):
        a, b = S.Viewpoint(lon_a, lat_a), S.Viewpoint(lon_b, lat_b)
        ab = S.frame_cosine_similarity(a, b)
        assert ab == pytest.approx(S.frame_cosine_similarity(b, a), abs=1e-12)
        shifted = S.Viewpoint(lon_a + 360.0, lat_a)
        assert ab == pytest.approx(S.frame_cosine_similarity(shifted, b), abs=1e-12)


def oracle_overlap(a: S.NfovSpec, b: S.NfovSpec, samples: int, seed: int = 99) -> float:
    """Independent IoU estimate: rotate samples into each local frame."""

    def rotation_to_local(vp):
        lon, lat = math.radians(vp.lon), math.radians(vp.lat)
        fwd = np.array([math.cos(lat) * math.cos(lon),
                        math.cos(lat) * math.sin(lon), math.sin(lat)])
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(up, fwd)
        if np.linalg.norm(right) < 1e-12:
            right = np.array([0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        top = np.cross(fwd, right)
        return np.stack([fwd, right, top])

    def inside(points, spec, rot):
        local = points @ rot.T
        x, y, z = local[:, 0], local[:, 1], local[:, 2]
        ok = x > 0
        ok &= np.abs(np.divide(y, x, out=np.full_like(y, np.inf), where=x > 0)) \
            <= math.tan(math.radians(spec.h_span) / 2)
        ok &= np.abs(np.divide(z, x, out=np.full_like(z, np.inf), where=x > 0)) \
            <= math.tan(math.radians(spec.v_span) / 2)
        return ok

    rng = np.random.default_rng(seed)
    inter = union = 0
    ra, rb = rotation_to_local(a.center), rotation_to_local(b.center)
    chunk = 1_000_000
    remaining = samples
    while remaining > 0:
        n = min(chunk, remaining)
        remaining -= n
        pts = rng.standard_normal((n, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        in_a = inside(pts, a, ra)
        in_b = inside(pts, b, rb)
        inter += int(np.count_nonzero(in_a & in_b))
        union += int(np.count_nonzero(in_a | in_b))
    return inter / union if union else 0.0


class TestFrameOverlap:
    def test_identical(self):
        spec = S.NfovSpec(S.Viewpoint(40.0, 15.0))
        assert S.frame_overlap(spec, spec) == pytest.approx(1.0, abs=0.01)

    def test_antipodal_disjoint(self):
        a = S.NfovSpec(S.Viewpoint(0.0, 0.0))
        b = S.NfovSpec(S.Viewpoint(180.0, 0.0))
        assert S.frame_overlap(a, b) == 0.0

    def test_one_span_offset_matches_oracle(self):
        a = S.NfovSpec(S.Viewpoint(0.0, 0.0))
        b = S.NfovSpec(S.Viewpoint(54.0, 0.0))
        got = S.frame_overlap(a, b)
        want = oracle_overlap(a, b, samples=2_000_000)
        assert got == pytest.approx(want, abs=0.01)

    def test_symmetric(self):
        a = S.NfovSpec(S.Viewpoint(10.0, 10.0))
        b = S.NfovSpec(S.Viewpoint(30.0, 20.0))
        assert S.frame_overlap(a, b) == pytest.approx(S.frame_overlap(b, a), abs=0.01)

    def test_partial_overlap_between_zero_and_one(self):
        a = S.NfovSpec(S.Viewpoint(0.0, 0.0))
        b = S.NfovSpec(S.Viewpoint(20.0, 0.0))
        iou = S.frame_overlap(a, b)
        assert 0.0 < iou < 1.0

    def test_span_mismatch_rejected(self):
        a = S.NfovSpec(S.Viewpoint(0.0, 0.0))
        b = S.NfovSpec(S.Viewpoint(0.0, 0.0), h_span=40.0, v_span=22.5)
        with pytest.raises(ContractError):
            S.frame_overlap(a, b)


def synthetic_erp(height=180, seed=0):
    rng = np.random.default_rng(seed)
    return S.ErpImage(rng.random((height, 2 * height, 3), dtype=np.float32))


class TestGnomonicCrop:
    def test_constant_color(self):
        erp = S.ErpImage(np.full((90, 180, 3), 0.25, dtype=np.float32))
        crop = S.gnomonic_crop(erp, S.NfovSpec(S.Viewpoint(77.0, -30.0)))
        assert crop.shape == (144, 256, 3)
        np.testing.assert_allclose(crop, 0.25, atol=1e-6)

    def test_center_pixel_samples_viewpoint(self):
        erp = synthetic_erp(height=240)
        vp = S.Viewpoint(123.25, -7.75)
        crop = S.gnomonic_crop(erp, S.NfovSpec(vp))
        # the four central crop pixels straddle the exact center ray
        center_val = crop[71:73, 127:129].mean(axis=(0, 1))
        expect = S.bilinear_sample(erp, np.array(vp.lon), np.array(vp.lat))
        np.testing.assert_allclose(center_val, expect, atol=0.5 / 240 * 4 + 0.05)

    def test_marker_lands_at_crop_center(self):
        h, w = 360, 720
        data = np.zeros((h, w, 1), dtype=np.float32)
        row, col = 80, 100
        data[row, col, 0] = 1.0
        erp = S.ErpImage(data)
        lon = (col + 0.5) / w * 360.0
        lat = 90.0 - (row + 0.5) / h * 180.0
        crop = S.gnomonic_crop(erp, S.NfovSpec(S.Viewpoint(lon, lat)))
        peak = np.unravel_index(np.argmax(crop[:, :, 0]), crop.shape[:2])
        center = ((crop.shape[0] - 1) / 2, (crop.shape[1] - 1) / 2)
        assert abs(peak[0] - center[0]) <= 1.5
        assert abs(peak[1] - center[1]) <= 1.5

    def test_rotation_equivariance(self):
        erp = synthetic_erp(height=120, seed=3)
        shift_cols = 40
        shift_deg = shift_cols / erp.width * 360.0
        rolled = S.ErpImage(np.roll(erp.data, shift_cols, axis=1))
        base = S.gnomonic_crop(erp, S.NfovSpec(S.Viewpoint(50.0, 10.0)))
        moved = S.gnomonic_crop(rolled, S.NfovSpec(S.Viewpoint(50.0 + shift_deg, 10.0)))
        assert np.max(np.abs(base - moved)) <= 2.0 / 255.0

    def test_pole_crop_finite(self):
        erp = synthetic_erp(height=90, seed=5)
        crop = S.gnomonic_crop(erp, S.NfovSpec(S.Viewpoint(0.0, 90.0)))
        assert np.all(np.isfinite(crop))

    def test_erp_requires_two_to_one(self):
        with pytest.raises(ConfigError):
            S.ErpImage(np.zeros((100, 150, 3), dtype=np.float32))

    def test_aspect_ratio_validated(self):
        with pytest.raises(ConfigError):
            S.NfovSpec(S.Viewpoint(0, 0), out_width=100, out_height=100)
        with pytest.raises(ConfigError):
            S.NfovSpec(S.Viewpoint(0, 0), h_span=200.0)


class TestSmoothTrajectory:
    def test_single_step(self):
        scores = np.zeros((1, 81))
        scores[0, 17] = 1.0
        assert S.smooth_trajectory(scores) == [17]

    def test_longitude_frozen_by_default_constraint(self):
        # grid longitudes are 40 degrees apart, above the 30-degree limit
        grid = S.viewpoint_grid()
        scores = np.zeros((4, 81))
        scores[0, 0] = 5.0       # lon 0
        scores[1:, 80] = 5.0     # lon 320: unreachable
        path = S.smooth_trajectory(scores)
        lons = {grid[i].lon for i in path}
        assert len(lons) == 1

    def test_latitude_steps_within_limit(self):
        grid = S.viewpoint_grid()
        scores = np.random.default_rng(0).random((6, 81))
        path = S.smooth_trajectory(scores)
        for a, b in zip(path, path[1:]):
            dlon = abs(grid[a].lon - grid[b].lon)
            dlon = min(dlon, 360 - dlon)
            assert dlon <= 30.0
            assert abs(grid[a].lat - grid[b].lat) <= 30.0

    def test_matches_brute_force_two_steps(self):
        grid = S.viewpoint_grid()
        rng = np.random.default_rng(8)
        scores = rng.random((2, 81))
        path = S.smooth_trajectory(scores)
        best = -np.inf
        for i in range(81):
            for j in range(81):
                dlon = abs(grid[i].lon - grid[j].lon)
                dlon = min(dlon, 360 - dlon)
                if dlon > 30 or abs(grid[i].lat - grid[j].lat) > 30:
                    continue
                best = max(best, scores[0, i] + scores[1, j])
        got = scores[0, path[0]] + scores[1, path[1]]
        assert got == pytest.approx(best)

    def test_wider_limit_allows_lon_moves(self):
        grid = S.viewpoint_grid()
        scores = np.zeros((2, 81))
        scores[0, 4] = 1.0       # lon 0, lat 0
        scores[1, 9 + 4] = 1.0   # lon 40, lat 0
        path = S.smooth_trajectory(scores, max_step_deg=45.0)
        assert path == [4, 13]
        assert grid[path[0]].lon != grid[path[1]].lon


class TestRasterIo:
    def test_raw_round_trip(self, tmp_path):
        erp = synthetic_erp(height=32, seed=11)
        erp.lon0 = 12.0
        p = tmp_path / "frame.f32"
        S.save_raw_erp(erp, p)
        again = S.load_raw_erp(p)
        np.testing.assert_array_equal(erp.data, again.data)
        assert again.lon0 == 12.0

    def test_missing_sidecar(self, tmp_path):
        p = tmp_path / "frame.f32"
        p.write_bytes(b"\0" * 16)
        with pytest.raises(FormatError):
            S.load_raw_erp(p)

    def test_payload_size_checked(self, tmp_path):
        erp = synthetic_erp(height=16, seed=0)
        p = tmp_path / "frame.f32"
        S.save_raw_erp(erp, p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FormatError):
            S.load_raw_erp(p)

    def test_png_round_trip(self, tmp_path):
        erp = synthetic_erp(height=24, seed=2)
        p = tmp_path / "img.png"
        S.save_image(erp.data, p)
        back = S.load_image(p)
        assert back.shape == erp.data.shape
        assert np.max(np.abs(back - erp.data)) <= 1.0 / 255.0 + 1e-6
