import numpy as np
import pytest

from lincov.families import toeplitz
from lincov.score_systems import mle_system, start_pair
from lincov.tracking import TrackerOptions, newton_refine, track_path


class Quadratic:
    """x^2 - p = 0: two branches, singular only at p = 0."""

    n_unknowns = 1
    n_params = 1

    def residual(self, x, p):
        return x * x - p

    def residual_and_jac(self, x, p):
        return x * x - p, (2.0 * x).reshape(1, 1)

    def jac_x(self, x, p):
        return (2.0 * x).reshape(1, 1)

    def jac_p(self, x, p):
        return -np.ones((1, 1), dtype=np.result_type(x, p))


class Reciprocal:
    """p * x - 1 = 0: the solution x = 1/p blows up as p -> 0."""

    n_unknowns = 1
    n_params = 1

    def residual(self, x, p):
        return p * x - 1.0

    def residual_and_jac(self, x, p):
        return p * x - 1.0, p.reshape(1, 1).astype(np.result_type(x, p))

    def jac_x(self, x, p):
        return p.reshape(1, 1).astype(np.result_type(x, p))

    def jac_p(self, x, p):
        return x.reshape(1, 1).astype(np.result_type(x, p))


def _arr(v):
    return np.atleast_1d(np.asarray(v, dtype=complex))


class TestTrackPath:
    def test_tracks_square_root_branch(self):
        res = track_path(Quadratic(), _arr(1.0), _arr(1.0), _arr(4.0))
        assert res.success
        assert res.endpoint[0] == pytest.approx(2.0, abs=1e-10)
        assert res.t_reached == pytest.approx(1.0)

    def test_negative_branch_is_preserved(self):
        res = track_path(Quadratic(), _arr(-1.0), _arr(1.0), _arr(9.0))
        assert res.success
        assert res.endpoint[0] == pytest.approx(-3.0, abs=1e-10)

    def test_gamma_arc_avoids_real_singularity(self):
        # the straight segment from p=1 to p=-1 passes through the branch
        # point p=0; the complex arc does not
        rng = np.random.default_rng(0)
        res = track_path(Quadratic(), _arr(1.0), _arr(1.0), _arr(-1.0), rng=rng)
        assert res.success
        assert abs(res.endpoint[0] ** 2 - (-1.0)) < 1e-10

    def test_zero_length_path(self):
        x0 = _arr(3.0)
        res = track_path(Quadratic(), x0, _arr(9.0), _arr(9.0))
        assert res.success
        assert res.steps_taken == 0
        assert np.array_equal(res.endpoint, x0)

    def test_divergence_is_reported(self):
        res = track_path(
            Reciprocal(),
            _arr(1.0),
            _arr(1.0),
            _arr(0.0),
            options=TrackerOptions(divergence_norm=1e6),
            gamma=1.0 + 0.0j,
        )
        assert not res.success
        assert res.status in ("diverged", "step_underflow")

    def test_underflow_near_singular_endpoint(self):
        # target parameter sits exactly on the discriminant; with a tight
        # corrector tolerance the tracker cannot finish and must say so
        opts = TrackerOptions(corrector_tol=1e-14, min_step=1e-8)
        res = track_path(Quadratic(), _arr(1.0), _arr(1.0), _arr(0.0), options=opts, gamma=1.0 + 0.0j)
        if not res.success:
            assert res.status == "step_underflow"
            assert res.t_reached < 1.0
        else:  # if it did finish, it must have actually reached the root
            assert abs(res.endpoint[0]) < 1e-6

    def test_recorded_path_is_continuous(self):
        res = track_path(Quadratic(), _arr(1.0), _arr(1.0), _arr(4.0), record=True)
        assert res.success
        xs = np.array([x[0] for _, x in res.path])
        assert len(xs) >= 3
        jumps = np.abs(np.diff(xs))
        assert jumps.max() < 0.5

    def test_deterministic_given_gamma(self):
        a = track_path(Quadratic(), _arr(1.0), _arr(1.0), _arr(4.0), gamma=0.8 + 0.6j)
        b = track_path(Quadratic(), _arr(1.0), _arr(1.0), _arr(4.0), gamma=0.8 + 0.6j)
        assert np.array_equal(a.endpoint, b.endpoint)
        assert a.steps_taken == b.steps_taken

    def test_options_validation(self):
        with pytest.raises(ValueError):
            TrackerOptions(min_step=0.5, initial_step=0.1)
        with pytest.raises(ValueError):
            TrackerOptions(max_step=2.0)


class TestNewtonRefine:
    def test_recovers_from_small_perturbation(self):
        sys = Quadratic()
        x, res, ok = newton_refine(sys, _arr(2.0 + 1e-4), _arr(4.0))
        assert ok
        assert res <= 1e-12 * 2
        assert x[0] == pytest.approx(2.0, abs=1e-12)

    def test_reports_failure_far_from_solutions(self):
        sys = Reciprocal()
        x, res, ok = newton_refine(sys, _arr(1.0), _arr(0.0), max_iters=4)
        assert not ok

    def test_refines_score_system_start_pair(self):
        rng = np.random.default_rng(5)
        sys = mle_system(toeplitz(3))
        x0, p0 = start_pair(sys, rng)
        noisy = x0 + 1e-5 * (rng.standard_normal(len(x0)) + 1j * rng.standard_normal(len(x0)))
        x, res, ok = newton_refine(sys, noisy, p0)
        assert ok
        assert np.linalg.norm(x - x0) < 1e-9


class TestOnScoreSystems:
    def test_track_toeplitz_between_generic_parameters(self):
        rng = np.random.default_rng(3)
        sys = mle_system(toeplitz(3))
        x0, p0 = start_pair(sys, rng)
        p1 = p0 + 0.3 * (rng.standard_normal(len(p0)) + 1j * rng.standard_normal(len(p0)))
        res = track_path(sys, x0, p0, p1, rng=rng)
        assert res.success
        assert np.linalg.norm(sys.residual(res.endpoint, p1)) < 1e-8
        # round trip returns to the start point on the same branch
        back = track_path(sys, res.endpoint, p1, p0, rng=rng)
        assert back.success
        assert np.linalg.norm(back.endpoint - x0) < 1e-6
