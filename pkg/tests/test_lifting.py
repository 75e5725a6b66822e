"""Feature lifting and deterministic voxel pooling."""

import numpy as np
import pytest

from frustumocc.fusion import WeightVolume
from frustumocc.geometry import FrustumGrid
from frustumocc.lifting import (
    BEVGridSpec,
    FeatureMap,
    LiftedFeatureVolume,
    lift,
    voxel_pool,
    voxel_pool_grad,
)


def rng(stream=0):
    return np.random.Generator(np.random.Philox(key=np.array([404, stream], dtype=np.uint64)))


SPEC = BEVGridSpec(-8.0, 8.0, -8.0, 8.0, 1.0, -1.0, 4.0)


def grid_of(points):
    pts = np.asarray(points, dtype=np.float64).reshape(1, -1, 1, 3)
    return FrustumGrid(pts, "world")


def volume_of(features):
    feats = np.asarray(features, dtype=np.float32)  # (n, C)
    return LiftedFeatureVolume(feats.T[None, :, None, :])  # (1, C, 1, n)


class TestLift:
    def test_unit_features_copy_weights(self):
        g = rng(1)
        w = WeightVolume(g.uniform(0, 1, size=(3, 4, 5)).astype(np.float32), "occupancy")
        f = FeatureMap(np.ones((2, 3, 4), dtype=np.float32))
        lifted = lift(f, w)
        assert lifted.values.shape == (5, 2, 3, 4)
        for c in range(2):
            np.testing.assert_array_equal(lifted.values[:, c], w.values.transpose(2, 0, 1))

    def test_single_pixel_scalar_product(self):
        w = WeightVolume(np.array([[[0.1, 0.2, 0.7]]], dtype=np.float32), "occupancy")
        f = FeatureMap(np.full((1, 1, 1), 2.0, dtype=np.float32))
        lifted = lift(f, w)
        np.testing.assert_allclose(lifted.values.ravel(), [0.2, 0.4, 1.4], rtol=1e-6)

    def test_matches_triple_loop(self):
        g = rng(2)
        w = WeightVolume(g.uniform(0, 1, size=(3, 4, 5)).astype(np.float32), "occupancy")
        f = FeatureMap(g.standard_normal((2, 3, 4)).astype(np.float32))
        lifted = lift(f, w)
        for k in range(5):
            for c in range(2):
                for v in range(3):
                    for u in range(4):
                        want = float(w.values[v, u, k]) * float(f.values[c, v, u])
                        assert abs(float(lifted.values[k, c, v, u]) - want) < 1e-6

    def test_shape_mismatch(self):
        w = WeightVolume(np.zeros((3, 4, 5), dtype=np.float32), "occupancy")
        f = FeatureMap(np.zeros((2, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            lift(f, w)


class TestVoxelPool:
    def test_single_point(self):
        """One point lands in exactly the cell containing its (x, y)."""
        res = voxel_pool([(volume_of([[1.0, 2.0]]), grid_of([[-4.5, 3.5, 0.0]]))], SPEC)
        assert res.n_points == 1 and res.n_dropped == 0
        # x = -4.5 -> column 3, y = 3.5 -> row 11
        np.testing.assert_array_equal(res.grid.values[:, 11, 3], [1.0, 2.0])
        zeroed = res.grid.values.copy()
        zeroed[:, 11, 3] = 0
        assert not zeroed.any()

    def test_coincident_points_sum(self):
        vol = volume_of([[1.0, 2.0], [10.0, 20.0]])
        grid = grid_of([[0.25, 0.25, 0.0], [0.25, 0.25, 0.0]])
        res = voxel_pool([(vol, grid)], SPEC)
        np.testing.assert_array_equal(res.grid.values[:, 8, 8], [11.0, 22.0])

    def test_out_of_range_dropped_and_counted(self):
        vol = volume_of([[1.0], [2.0], [3.0], [4.0]])
        grid = grid_of(
            [[100.0, 0.0, 0.0], [0.0, 0.0, 100.0], [8.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        )
        res = voxel_pool([(vol, grid)], SPEC)
        # x == x_max is outside the half-open extent
        assert res.n_dropped == 3
        assert res.grid.values.sum() == 4.0

    @pytest.mark.parametrize("method", ["loop", "scatter", "sorted"])
    def test_methods_bitwise_equal(self, method):
        g = rng(3)
        volumes = []
        for _ in range(3):
            pts = np.stack(
                [
                    g.uniform(-10, 10, size=(4, 6, 5)),
                    g.uniform(-10, 10, size=(4, 6, 5)),
                    g.uniform(-2, 5, size=(4, 6, 5)),
                ],
                axis=-1,
            )
            vals = g.standard_normal((5, 2, 4, 6)).astype(np.float32)
            volumes.append((LiftedFeatureVolume(vals), FrustumGrid(pts, "world")))
        reference = voxel_pool(volumes, SPEC, method="loop")
        other = voxel_pool(volumes, SPEC, method=method)
        assert np.array_equal(reference.accum, other.accum)
        assert np.array_equal(reference.grid.values, other.grid.values)

    def test_mass_conservation(self):
        """Per-channel in-range mass survives pooling; exact for dyadic
        float32 inputs, 1e-12 relative for arbitrary ones."""
        g = rng(4)
        vals = g.uniform(0.25, 1.0, size=(5, 3, 4, 6)).astype(np.float32)
        pts = np.stack(
            [
                g.uniform(-10, 10, size=(4, 6, 5)),
                g.uniform(-10, 10, size=(4, 6, 5)),
                g.uniform(-2, 5, size=(4, 6, 5)),
            ],
            axis=-1,
        )
        volumes = [(LiftedFeatureVolume(vals), FrustumGrid(pts, "world"))]
        res = voxel_pool(volumes, SPEC)
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        keep = (
            (x >= SPEC.x_min) & (x < SPEC.x_max) & (y >= SPEC.y_min) & (y < SPEC.y_max)
            & (z >= SPEC.z_min) & (z <= SPEC.z_max)
        )
        for c in range(3):
            want = vals[:, c].transpose(1, 2, 0)[keep].astype(np.float64).sum()
            assert res.accum[c].sum() == want

    def test_linearity(self):
        g = rng(5)
        pts = np.stack(
            [
                g.uniform(-10, 10, size=(3, 5, 4)),
                g.uniform(-10, 10, size=(3, 5, 4)),
                g.uniform(-2, 5, size=(3, 5, 4)),
            ],
            axis=-1,
        )
        grid = FrustumGrid(pts, "world")
        a = g.standard_normal((4, 2, 3, 5))
        b = g.standard_normal((4, 2, 3, 5))
        alpha, beta = 1.75, -0.5
        combined = voxel_pool([(LiftedFeatureVolume(alpha * a + beta * b), grid)], SPEC)
        pa = voxel_pool([(LiftedFeatureVolume(a), grid)], SPEC)
        pb = voxel_pool([(LiftedFeatureVolume(b), grid)], SPEC)
        np.testing.assert_allclose(
            combined.accum, alpha * pa.accum + beta * pb.accum, rtol=1e-12, atol=1e-12
        )

    def test_one_hot_lift_equals_direct_splat(self):
        """Lifting with one-hot weights then pooling equals splatting each
        pixel's feature at its single active depth bin."""
        g = rng(6)
        h, w, k, c = 3, 4, 6, 2
        active = g.integers(0, k, size=(h, w))
        weights = np.zeros((h, w, k), dtype=np.float32)
        for v in range(h):
            for u in range(w):
                weights[v, u, active[v, u]] = 1.0
        feats = FeatureMap(g.standard_normal((c, h, w)).astype(np.float32))
        pts = np.stack(
            [
                g.uniform(-7, 7, size=(h, w, k)),
                g.uniform(-7, 7, size=(h, w, k)),
                np.zeros((h, w, k)),
            ],
            axis=-1,
        )
        grid = FrustumGrid(pts, "world")
        res = voxel_pool([(lift(feats, WeightVolume(weights, "occupancy")), grid)], SPEC)

        expected = np.zeros((c, SPEC.height_cells, SPEC.width_cells))
        for v in range(h):
            for u in range(w):
                x, y, _ = pts[v, u, active[v, u]]
                col = int(np.floor((x - SPEC.x_min) / SPEC.cell_size))
                row = int(np.floor((y - SPEC.y_min) / SPEC.cell_size))
                expected[:, row, col] += feats.values[:, v, u].astype(np.float64)
        np.testing.assert_allclose(res.accum, expected, rtol=1e-12, atol=1e-12)


class TestVoxelPoolGrad:
    def test_ones_upstream_marks_in_range(self):
        g = rng(7)
        pts = np.stack(
            [
                g.uniform(-12, 12, size=(3, 4, 5)),
                g.uniform(-12, 12, size=(3, 4, 5)),
                g.uniform(-3, 6, size=(3, 4, 5)),
            ],
            axis=-1,
        )
        vol = LiftedFeatureVolume(g.standard_normal((5, 2, 3, 4)).astype(np.float32))
        grid = FrustumGrid(pts, "world")
        up = np.ones((2, SPEC.height_cells, SPEC.width_cells))
        grad = voxel_pool_grad(up, [(vol, grid)], SPEC)[0]
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        keep = (
            (x >= SPEC.x_min) & (x < SPEC.x_max) & (y >= SPEC.y_min) & (y < SPEC.y_max)
            & (z >= SPEC.z_min) & (z <= SPEC.z_max)
        )
        for c in range(2):
            np.testing.assert_array_equal(grad[:, c].transpose(1, 2, 0), keep.astype(float))

    def test_single_point_gets_upstream_value(self):
        vol = volume_of([[1.0]])
        grid = grid_of([[0.25, 0.25, 0.0]])
        up = np.zeros((1, SPEC.height_cells, SPEC.width_cells))
        up[0, 8, 8] = 3.5
        grad = voxel_pool_grad(up, [(vol, grid)], SPEC)[0]
        assert grad.ravel()[0] == 3.5

    def test_finite_differences(self):
        g = rng(8)
        pts = np.stack(
            [
                g.uniform(-10, 10, size=(2, 5, 4)),
                g.uniform(-10, 10, size=(2, 5, 4)),
                g.uniform(-2, 5, size=(2, 5, 4)),
            ],
            axis=-1,
        )
        vol = LiftedFeatureVolume(g.uniform(0.2, 1.0, size=(4, 3, 2, 5)))
        grid = FrustumGrid(pts, "world")
        up = g.standard_normal((3, SPEC.height_cells, SPEC.width_cells))

        def loss():
            return float(np.sum(up * voxel_pool([(vol, grid)], SPEC).accum))

        grad = voxel_pool_grad(up, [(vol, grid)], SPEC)[0]
        flat = vol.values.reshape(-1)
        h = 1e-5
        for idx in rng(9).choice(flat.size, size=20, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            up_l = loss()
            flat[idx] = orig - h
            down = loss()
            flat[idx] = orig
            fd = (up_l - down) / (2 * h)
            analytic = grad.reshape(-1)[idx]
            assert abs(fd - analytic) <= 1e-5 * max(1.0, abs(analytic))


class TestBEVGridSpec:
    def test_rejects_fractional_cells(self):
        with pytest.raises(ValueError):
            BEVGridSpec(0.0, 10.0, 0.0, 10.0, 3.0, -1.0, 1.0)

    def test_rejects_bad_extents(self):
        with pytest.raises(ValueError):
            BEVGridSpec(5.0, 5.0, 0.0, 10.0, 1.0, -1.0, 1.0)
        with pytest.raises(ValueError):
            BEVGridSpec(0.0, 10.0, 0.0, 10.0, 1.0, 2.0, 1.0)

    def test_cell_counts(self):
        assert SPEC.width_cells == 16 and SPEC.height_cells == 16