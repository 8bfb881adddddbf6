import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from porter.clip import ClipMode, gaussian_perturb, piecewise_clip, smooth_clip
from porter.privacy import (
    PrivacyBudget,
    accountant_conditions,
    check_privacy_feasibility,
    compute_phi_m,
    compute_sigma_p,
)

vec = arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e4, 1e4, allow_nan=False))
taus = st.floats(1e-3, 1e3)


class TestClipExamples:
    def test_smooth(self):
        np.testing.assert_allclose(smooth_clip(np.array([3.0, 4.0]), 5.0), [1.5, 2.0], rtol=1e-15)

    def test_piecewise_outside(self):
        np.testing.assert_allclose(piecewise_clip(np.array([3.0, 4.0]), 1.0), [0.6, 0.8], rtol=1e-15)

    def test_piecewise_boundary_is_identity(self):
        x = np.array([3.0, 4.0])
        np.testing.assert_array_equal(piecewise_clip(x, 5.0), x)

    def test_zero_vector(self):
        for fn in (smooth_clip, piecewise_clip):
            np.testing.assert_array_equal(fn(np.zeros(3), 1.0), np.zeros(3))

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_bad_tau(self, tau):
        with pytest.raises(ValueError):
            smooth_clip(np.ones(2), tau)
        with pytest.raises(ValueError):
            ClipMode("smooth", tau)

    def test_mode_dispatch(self):
        x = np.array([3.0, 4.0])
        np.testing.assert_array_equal(ClipMode("smooth", 5.0)(x), smooth_clip(x, 5.0))
        np.testing.assert_array_equal(ClipMode("piecewise", 1.0)(x), piecewise_clip(x, 1.0))
        none = ClipMode("none", 3.0)
        assert none.tau is None
        np.testing.assert_array_equal(none(x), x)
        with pytest.raises(ValueError):
            ClipMode("hard", 1.0)

    def test_scales_match_operator(self, rng):
        X = rng.standard_normal((8, 5)) * 3
        norms = np.linalg.norm(X, axis=1)
        for mode in (ClipMode("smooth", 2.0), ClipMode("piecewise", 2.0)):
            np.testing.assert_allclose(mode.scales(norms)[:, None] * X, np.array([mode(x) for x in X]), rtol=1e-14)


class TestClipProperties:
    @settings(max_examples=300, deadline=None)
    @given(x=vec, tau=taus)
    def test_smooth_norm_and_direction(self, x, tau):
        out = smooth_clip(x, tau)
        nx = np.linalg.norm(x)
        assert np.linalg.norm(out) < tau
        assert np.linalg.norm(out) == pytest.approx(tau * nx / (tau + nx), rel=1e-12, abs=1e-300)
        # positive multiple of x
        assert np.all(out * x >= 0)

    @settings(max_examples=300, deadline=None)
    @given(x=vec, tau=taus)
    def test_piecewise_norm(self, x, tau):
        out = piecewise_clip(x, tau)
        assert np.linalg.norm(out) <= tau * (1 + 1e-12)
        assert np.all(out * x >= 0)

    @settings(max_examples=200, deadline=None)
    @given(a=st.floats(0, 1e4), b=st.floats(0, 1e4), tau=taus)
    def test_smooth_norm_monotone(self, a, b, tau):
        lo, hi = sorted((a, b))
        f = lambda r: np.linalg.norm(smooth_clip(np.array([r, 0.0]), tau))
        assert f(lo) <= f(hi) * (1 + 1e-15)

    @settings(max_examples=300, deadline=None)
    @given(data=st.data(), tau=taus, kind=st.sampled_from(["smooth", "piecewise"]))
    def test_lipschitz(self, data, tau, kind):
        n = data.draw(st.integers(1, 10))
        el = st.floats(-1e3, 1e3, allow_nan=False)
        x = data.draw(arrays(np.float64, n, elements=el))
        y = data.draw(arrays(np.float64, n, elements=el))
        mode = ClipMode(kind, tau)
        lhs = np.linalg.norm(mode(x) - mode(y))
        assert lhs <= np.linalg.norm(x - y) * (1 + 1e-9) + 1e-9


class TestPerturb:
    def test_zero_noise_copies(self, rng):
        M = rng.standard_normal((3, 2))
        out = gaussian_perturb(M, 0.0, None)
        np.testing.assert_array_equal(out, M)
        assert out is not M

    def test_moments(self):
        M = np.zeros((20_000, 2))
        out = gaussian_perturb(M, 2.0, [np.random.default_rng(1), np.random.default_rng(2)])
        assert out.std() == pytest.approx(2.0, rel=0.01)
        assert abs(out.mean()) < 4 * 2.0 / np.sqrt(out.size)

    def test_columns_use_own_streams(self):
        M = np.zeros((5, 2))
        a = gaussian_perturb(M, 1.0, [np.random.default_rng(3), np.random.default_rng(3)])
        np.testing.assert_array_equal(a[:, 0], a[:, 1])
        np.testing.assert_array_equal(a[:, 0], np.random.default_rng(3).standard_normal(5))

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            gaussian_perturb(np.zeros((1, 1)), -1.0, None)


class TestCalibration:
    def test_sigma_example(self):
        s = compute_sigma_p(10_000, 1.0, 1000, 0.1, 1e-3)
        assert s == pytest.approx(math.sqrt(10_000 * math.log(1000)) / 100, rel=1e-14)
        assert s == pytest.approx(2.6283, abs=5e-5)

    def test_phi_example(self):
        assert compute_phi_m(100, 1000, 1.0, 1e-5) == pytest.approx(math.sqrt(100 * math.log(1e5)) / 1000, rel=1e-14)

    def test_phi_warns(self):
        with pytest.warns(UserWarning, match="phi_m"):
            compute_phi_m(10_000, 10, 0.1, 1e-3)

    @settings(max_examples=50, deadline=None)
    @given(
        T=st.integers(1, 10**6),
        tau=st.floats(1e-3, 1e3),
        m=st.integers(1, 10**6),
        eps=st.floats(1e-3, 10),
        delta=st.floats(1e-12, 0.5),
        d=st.integers(1, 10**5),
    )
    def test_formulas(self, T, tau, m, eps, delta, d):
        # scaling identities as an independent check on the closed forms
        s = compute_sigma_p(T, tau, m, eps, delta)
        assert s**2 * m**2 * eps**2 == pytest.approx(T * tau**2 * -math.log(delta), rel=1e-12)
        assert compute_sigma_p(4 * T, tau, m, eps, delta) == pytest.approx(2 * s, rel=1e-12)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            phi = compute_phi_m(d, m, eps, delta)
        assert (phi * m * eps) ** 2 == pytest.approx(d * -math.log(delta), rel=1e-12)
        # sigma_p^2 = T tau^2 phi_m^2 / d
        assert s**2 == pytest.approx(T * tau**2 * phi**2 / d, rel=1e-12)

    @pytest.mark.parametrize(
        "args", [(0, 1.0, 10, 1.0, 0.1), (1, 0.0, 10, 1.0, 0.1), (1, 1.0, 10, 0.0, 0.1), (1, 1.0, 10, 1.0, 1.5), (1, 1.0, 10, 1.0, 0.0)]
    )
    def test_domain(self, args):
        with pytest.raises(ValueError):
            compute_sigma_p(*args)


class TestBudget:
    def test_round_trip(self):
        b = PrivacyBudget(0.5, 1e-4, 300, 2000, 1.5, 40)
        d = b.to_dict()
        assert d["sigma_p"] == b.sigma_p == compute_sigma_p(2000, 1.5, 300, 0.5, 1e-4)
        assert PrivacyBudget.from_dict(d) == b

    def test_tampered(self):
        d = PrivacyBudget(0.5, 1e-4, 300, 2000, 1.5, 40).to_dict()
        d["sigma_p"] *= 1 + 1e-9
        with pytest.raises(ValueError, match="sigma_p"):
            PrivacyBudget.from_dict(d)

    def test_invalid(self):
        with pytest.raises(ValueError):
            PrivacyBudget(1.0, 2.0, 10, 10, 1.0, 1)


def _first_certificate(T, m, tau, sigma, eps, delta, lam_max):
    # scalar re-derivation of the three moment-order inequalities
    q = 1 / m
    for lam in range(1, lam_max + 1):
        if (T * q * tau * lam / sigma) ** 2 > lam * eps / 2:
            continue
        if math.exp(-lam * eps / 2) > delta:
            continue
        if lam > sigma**2 / tau**2 * math.log(tau / (q * sigma)):
            continue
        return lam
    return None


class TestFeasibility:
    def test_certificate_example(self):
        budget = PrivacyBudget(1.0, 1e-5, 1000, 1, 1.0, 1)
        r = check_privacy_feasibility(budget, sigma_p=2.0)
        assert r.lambda_certificate == 24 == _first_certificate(1, 1000, 1.0, 2.0, 1.0, 1e-5, 10_000)
        assert r.q_ok
        assert not r.epsilon_ok  # epsilon = 1 > T/m^2
        assert any(line.startswith("lambda certificate: 24") for line in r.lines())

    def test_calibrated_sigma_has_no_certificate(self):
        budget = PrivacyBudget(1.0, 1e-5, 1000, 10**6, 1.0, 1)
        r = check_privacy_feasibility(budget)
        assert r.epsilon_ok and r.q_ok
        assert r.lambda_certificate is None
        assert any("T <= 1/4" in n for n in r.notes)

    @settings(max_examples=30, deadline=None)
    @given(
        T=st.integers(1, 50),
        m=st.integers(10, 5000),
        sigma=st.floats(0.5, 20),
        eps=st.floats(0.05, 5),
        delta=st.floats(1e-8, 0.1),
    )
    def test_matches_scalar_scan(self, T, m, sigma, eps, delta):
        budget = PrivacyBudget(eps, delta, m, T, 1.0, 1)
        want = _first_certificate(T, m, 1.0, sigma, eps, delta, 2000)
        got = check_privacy_feasibility(budget, sigma_p=sigma).lambda_certificate
        if want is not None:
            assert got == want
        else:
            assert got is None or got > 2000

    def test_conditions_shapes(self):
        c = accountant_conditions(np.arange(1, 6), 1, 1e-3, 1.0, 2.0, 1.0, 1e-5)
        assert all(x.shape == (5,) and x.dtype == bool for x in c)

    def test_batch_note(self):
        r = check_privacy_feasibility(PrivacyBudget(1.0, 1e-5, 100, 10, 1.0, 1), b=4)
        assert any("b=4" in n for n in r.notes)
        assert r.to_dict()["notes"] == r.notes
