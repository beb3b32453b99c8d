import numpy as np
import pytest
import scipy.linalg

from igwflow.cloud import PointCloud, apply_linear, covariance, l2_inner, moment_matrix, whiten
from igwflow.errors import SingularityError, SizeGuardError
from igwflow.mobility import (
    OperatorContext,
    apply,
    inverse,
    is_invariant,
    operator_matrix,
    predicted_spectrum,
    project_invariant,
    spectrum_check,
    sylvester_solve,
)

from .conftest import random_cloud


def _skew(rng, d):
    m = rng.standard_normal((d, d))
    return m - m.T


def _weighted_cloud(rng, n, d):
    w = rng.random(n) + 0.1
    return PointCloud(rng.standard_normal((n, d)), w / w.sum())


@pytest.fixture(params=[2, 3])
def ctx(request, rng):
    return OperatorContext(_weighted_cloud(rng, 9, request.param))


class TestApply:
    def test_skew_field_is_killed(self, ctx, rng):
        s = _skew(rng, ctx.cloud.d)
        out = apply(ctx, ctx.cloud.points @ s.T)
        assert np.max(np.abs(out)) <= 1e-12 * max(1.0, np.max(np.abs(ctx.cloud.points @ s.T)))

    def test_identity_field(self, ctx):
        x = ctx.cloud.points
        np.testing.assert_allclose(apply(ctx, x), 4 * x @ ctx.sigma, atol=1e-12)

    def test_matches_double_sum(self, rng):
        cloud = _weighted_cloud(rng, 5, 2)
        a = rng.standard_normal((2, 2))
        a = a + a.T
        c = OperatorContext(cloud, a)
        v = rng.standard_normal((5, 2))
        x, w = cloud.points, cloud.weights
        expect = np.array([2 * (a @ v[i] + sum(w[j] * x[j] * (v[j] @ x[i]) for j in range(5))) for i in range(5)])
        np.testing.assert_allclose(apply(c, v), expect, atol=1e-12)

    def test_self_adjoint_and_psd(self, ctx, rng):
        for _ in range(10):
            u, v = rng.standard_normal((2,) + ctx.cloud.points.shape)
            lhs = l2_inner(ctx.cloud, u, apply(ctx, v))
            rhs = l2_inner(ctx.cloud, apply(ctx, u), v)
            assert lhs == pytest.approx(rhs, abs=1e-10)
            assert l2_inner(ctx.cloud, v, apply(ctx, v)) >= -1e-9

    def test_invariant_space_is_preserved(self, ctx, rng):
        v = project_invariant(ctx.cloud, rng.standard_normal(ctx.cloud.points.shape))
        m = moment_matrix(ctx.cloud, apply(ctx, v))
        assert np.max(np.abs(m - m.T)) <= 1e-10

    def test_shape_mismatch(self, ctx):
        with pytest.raises(ValueError):
            apply(ctx, np.zeros((3, 3, 1)))

    def test_asymmetric_A_rejected(self, rng):
        with pytest.raises(ValueError, match="symmetric"):
            OperatorContext(random_cloud(rng, 4, 2), np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestInverse:
    def test_isotropic_example(self, rng):
        cloud = whiten(random_cloud(rng, 12, 2))
        ctx = OperatorContext(cloud)
        np.testing.assert_allclose(ctx.sigma, np.eye(2), atol=1e-12)
        v, info = inverse(ctx, cloud.points, return_info=True)
        np.testing.assert_allclose(v, cloud.points / 4, atol=1e-12)
        np.testing.assert_allclose(info.B, np.eye(2) / 4, atol=1e-12)
        assert not info.projected

    def test_zero(self, ctx):
        assert np.all(inverse(ctx, np.zeros(ctx.cloud.points.shape)) == 0)

    def test_round_trip_100_contexts(self, rng):
        checked = 0
        while checked < 100:
            d = int(rng.integers(2, 4))
            cloud = _weighted_cloud(rng, int(rng.integers(d + 2, 12)), d)
            ctx = OperatorContext(cloud)
            v0 = project_invariant(cloud, rng.standard_normal(cloud.points.shape))
            w = apply(ctx, v0)
            v, info = inverse(ctx, w, return_info=True)
            if info.condition >= 1e8:
                continue
            checked += 1
            assert np.linalg.norm(v - v0) <= 1e-9 * np.linalg.norm(v0)
            assert np.linalg.norm(apply(ctx, v) - w) <= 1e-9 * np.linalg.norm(w)

    def test_asymmetric_rhs_is_projected(self, ctx, rng):
        w = rng.standard_normal(ctx.cloud.points.shape)
        v, info = inverse(ctx, w, return_info=True)
        assert info.projected
        w_sym = project_invariant(ctx.cloud, w)
        np.testing.assert_allclose(apply(ctx, v), w_sym, atol=1e-9 * np.abs(w_sym).max())

    def test_singular_covariance(self):
        t = np.linspace(-1, 1, 5)
        ctx = OperatorContext(PointCloud(np.column_stack([t, t])))
        with pytest.raises(SingularityError) as exc:
            inverse(ctx, ctx.cloud.points)
        assert exc.value.eigenvalue is not None and exc.value.eigenvalue <= 1e-10

    def test_general_A_reports_residual(self, rng):
        cloud = random_cloud(rng, 8, 2)
        ctx = OperatorContext(cloud, np.diag([2.0, 3.0]))
        _, info = inverse(ctx, rng.standard_normal((8, 2)), return_info=True)
        assert not info.projected and np.isfinite(info.residual)

    def test_sylvester_against_scipy(self, rng):
        for d in (2, 3, 5):
            a = rng.standard_normal((d, d))
            s = rng.standard_normal((d, d))
            a, s = a @ a.T + np.eye(d), s @ s.T + np.eye(d)
            rhs = rng.standard_normal((d, d))
            np.testing.assert_allclose(sylvester_solve(a, s, rhs), scipy.linalg.solve_sylvester(a, s, rhs), atol=1e-10)

    def test_sylvester_guard(self):
        with pytest.raises(SizeGuardError):
            sylvester_solve(np.eye(9), np.eye(9), np.eye(9))


class TestProjection:
    def test_invariant_field_unchanged(self, ctx):
        v = project_invariant(ctx.cloud, ctx.cloud.points)
        assert np.array_equal(v, ctx.cloud.points)

    def test_skew_field_goes_to_zero(self, ctx, rng):
        v = ctx.cloud.points @ _skew(rng, ctx.cloud.d).T
        assert np.max(np.abs(project_invariant(ctx.cloud, v))) <= 1e-10

    def test_random_field(self, ctx, rng):
        v = rng.standard_normal(ctx.cloud.points.shape)
        p = project_invariant(ctx.cloud, v)
        assert is_invariant(ctx.cloud, p)
        np.testing.assert_allclose(apply(ctx, p), apply(ctx, v), atol=1e-10)


class TestOperatorMatrix:
    def test_single_point_block(self):
        cloud = PointCloud(np.array([[1.0, 0.0]]))
        ctx = OperatorContext(cloud)
        x = cloud.points[0]
        np.testing.assert_allclose(operator_matrix(ctx), 2 * (ctx.A + np.outer(x, x)), atol=0)

    def test_matches_apply_and_is_weighted_symmetric(self, ctx, rng):
        mat = operator_matrix(ctx)
        v = rng.standard_normal(ctx.cloud.points.shape)
        np.testing.assert_allclose(mat @ v.ravel(), apply(ctx, v).ravel(), atol=1e-12)
        wdiag = np.repeat(ctx.cloud.weights, ctx.cloud.d)
        wl = wdiag[:, None] * mat
        np.testing.assert_allclose(wl, wl.T, atol=1e-10)
        sq = np.sqrt(wdiag)
        sym = sq[:, None] * mat / sq[None, :]
        assert np.linalg.eigvalsh(0.5 * (sym + sym.T)).min() >= -1e-9

    def test_guard(self):
        cloud = PointCloud(np.ones((1001, 2)))
        with pytest.raises(SizeGuardError):
            operator_matrix(OperatorContext(cloud))


class TestSpectrum:
    def test_whitened(self, rng):
        cloud = whiten(random_cloud(rng, 10, 2))
        np.testing.assert_allclose(np.unique(np.round(predicted_spectrum(covariance(cloud)), 9)), [2.0, 4.0])
        rep = spectrum_check(cloud)
        assert rep.ok
        nonzero = rep.eigenvalues[np.abs(rep.eigenvalues) > 1e-8]
        assert np.all((np.abs(nonzero - 2) < 1e-6) | (np.abs(nonzero - 4) < 1e-6))

    def test_diag_prediction(self):
        np.testing.assert_allclose(predicted_spectrum(np.diag([1.0, 2.0])), [2, 4, 4, 6, 8])

    @pytest.mark.parametrize("d", [2, 3])
    def test_random_clouds(self, rng, d):
        for _ in range(5):
            rep = spectrum_check(_weighted_cloud(rng, 15, d))
            assert rep.ok, rep.max_deviation

    def test_rotated_diag_cloud(self, rng):
        cloud = apply_linear(whiten(random_cloud(rng, 12, 2)), np.diag([1.0, np.sqrt(2.0)]))
        rep = spectrum_check(cloud)
        assert rep.ok and rep.max_deviation <= 1e-6

    def test_single_point_skipped(self):
        rep = spectrum_check(PointCloud(np.array([[1.0, 2.0]])))
        assert rep.skipped and rep.notice
