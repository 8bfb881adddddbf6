import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from porter.problems import (
    Dataset,
    LogRegNonconvex,
    OneHiddenNN,
    ParseError,
    concat,
    parse_idx,
    parse_libsvm,
    partition,
    synthetic_problem,
    write_idx,
    write_libsvm,
)


def central_diff(f, x, coords, h):
    out = []
    for j in coords:
        e = np.zeros_like(x)
        e[j] = h
        out.append((f(x + e) - f(x - e)) / (2 * h))
    return np.array(out)


class TestLogReg:
    def test_zero_point(self):
        prob = LogRegNonconvex(3, lam=0.2)
        ds = Dataset(np.eye(3), [0, 1, 1])
        assert prob.loss(np.zeros(3), ds) == pytest.approx(math.log(2), rel=1e-15)
        # grad at 0: mean of -s_j/2 * a_j, regularizer gradient vanishes
        np.testing.assert_allclose(prob.grad(np.zeros(3), ds), [0.5 / 3, -0.5 / 3, -0.5 / 3], rtol=1e-15)

    def test_regularizer_hand_value(self):
        prob = LogRegNonconvex(2, lam=0.5)
        x = np.array([1.0, 2.0])
        assert prob.regularizer(x) == pytest.approx(0.5 * (0.5 + 0.8))
        np.testing.assert_allclose(prob.regularizer_grad(x), [0.5 * 2 / 4, 0.5 * 4 / 25])

    def test_finite_differences(self, rng):
        prob, ds = synthetic_problem(40, 200, seed=1)
        x = rng.standard_normal(40)
        coords = rng.choice(40, 20, replace=False)
        fd = central_diff(lambda z: prob.loss(z, ds), x, coords, 1e-5)
        g = prob.grad(x, ds)[coords]
        assert np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-12) <= 1e-5

    def test_batch_grad_is_mean_of_per_sample(self, rng):
        prob, ds = synthetic_problem(7, 30, seed=2)
        x = rng.standard_normal(7)
        np.testing.assert_allclose(
            prob.batch_grad(x, ds.features, ds.labels),
            prob.per_sample_grads(x, ds.features, ds.labels).mean(axis=0),
            rtol=1e-12,
            atol=1e-15,
        )

    def test_extreme_margins_finite(self):
        prob = LogRegNonconvex(1, 0.1)
        ds = Dataset(np.array([[1e4], [-1e4]]), [0, 0])
        x = np.array([10.0])
        assert np.isfinite(prob.loss(x, ds))
        assert np.all(np.isfinite(prob.grad(x, ds)))

    def test_predict_and_accuracy(self):
        prob = LogRegNonconvex(1)
        ds = Dataset(np.array([[1.0], [-2.0], [3.0]]), [1, 0, 0])
        assert prob.accuracy(np.array([1.0]), ds) == pytest.approx(2 / 3)

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            LogRegNonconvex(3).loss(np.zeros(2), Dataset(np.eye(3), [0, 1, 0]))

    def test_objective_is_mean_of_local(self):
        prob, ds = synthetic_problem(5, 60, seed=4)
        parts = partition(ds, 4, seed=4)
        x = np.linspace(-1, 1, 5)
        assert prob.loss(x, concat(parts)) == pytest.approx(np.mean([prob.loss(x, p) for p in parts]), rel=1e-13)
        np.testing.assert_allclose(
            prob.grad(x, concat(parts)), np.mean([prob.grad(x, p) for p in parts], axis=0), rtol=1e-12, atol=1e-15
        )

    def test_smoothness_dominates_hessian(self, rng):
        prob, ds = synthetic_problem(5, 80, seed=6)
        L = prob.smoothness(ds)
        for _ in range(20):
            x, y = rng.standard_normal(5) * 3, rng.standard_normal(5) * 3
            assert np.linalg.norm(prob.grad(x, ds) - prob.grad(y, ds)) <= L * np.linalg.norm(x - y) * (1 + 1e-12)


class TestNN:
    def test_pack_round_trip(self, rng):
        nn = OneHiddenNN(5, 4, 3)
        x = rng.standard_normal(nn.dim)
        assert nn.dim == 4 * 5 + 4 + 3 * 4 + 3
        np.testing.assert_array_equal(nn.pack(*nn.unpack(x)), x)
        W1, c1, W2, c2 = nn.unpack(x)
        assert W1.shape == (4, 5) and W2.shape == (3, 4)
        np.testing.assert_array_equal(W1[0], x[:5])

    def test_uniform_at_zero(self, rng):
        nn = OneHiddenNN(784, 16, 10)
        F = rng.random((7, 784))
        np.testing.assert_allclose(nn.sample_losses(np.zeros(nn.dim), F, np.arange(7)), math.log(10), rtol=1e-14)

    def test_finite_differences(self, rng):
        nn = OneHiddenNN(12, 6, 4)
        F, y = rng.random((25, 12)), rng.integers(0, 4, 25)
        ds = Dataset(F, y, n_classes=4)
        x = nn.init_params(0) + 0.1 * rng.standard_normal(nn.dim)
        coords = rng.choice(nn.dim, 20, replace=False)
        fd = central_diff(lambda z: nn.loss(z, ds), x, coords, 1e-6)
        g = nn.grad(x, ds)[coords]
        assert np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-12) <= 1e-4

    def test_per_sample_matches_batch(self, rng):
        nn = OneHiddenNN(6, 3, 3)
        F, y = rng.random((9, 6)), rng.integers(0, 3, 9)
        x = rng.standard_normal(nn.dim)
        np.testing.assert_allclose(nn.per_sample_grads(x, F, y).mean(axis=0), nn.batch_grad(x, F, y), rtol=1e-12, atol=1e-15)
        single = nn.per_sample_grads(x, F, y)[4]
        np.testing.assert_allclose(single, nn.batch_grad(x, F[4:5], y[4:5]), rtol=1e-12, atol=1e-15)

    def test_hidden_permutation_symmetry(self, rng):
        nn = OneHiddenNN(6, 5, 3)
        F, y = rng.random((10, 6)), rng.integers(0, 3, 10)
        W1, c1, W2, c2 = nn.unpack(rng.standard_normal(nn.dim))
        perm = rng.permutation(5)
        a = nn.sample_losses(nn.pack(W1, c1, W2, c2), F, y)
        b = nn.sample_losses(nn.pack(W1[perm], c1[perm], W2[:, perm], c2), F, y)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_init_deterministic(self):
        nn = OneHiddenNN(10, 4, 3)
        np.testing.assert_array_equal(nn.init_params(3), nn.init_params(3))
        assert not np.array_equal(nn.init_params(3), nn.init_params(4))
        _, c1, _, c2 = nn.unpack(nn.init_params(3))
        assert not c1.any() and not c2.any()


class TestSynthetic:
    def test_deterministic(self):
        a = synthetic_problem(8, 50, seed=11)[1]
        b = synthetic_problem(8, 50, seed=11)[1]
        c = synthetic_problem(8, 50, seed=12)[1]
        assert a.same_as(b) and not a.same_as(c)

    def test_planted(self):
        prob, ds = synthetic_problem(10, 4000, seed=0)
        assert np.linalg.norm(prob.planted) == pytest.approx(5.0)
        # the planted model should classify well above chance
        assert prob.accuracy(prob.planted, ds) > 0.8

    def test_noiseless_separable(self):
        prob, ds = synthetic_problem(10, 500, seed=0, noiseless=True)
        assert prob.accuracy(prob.planted, ds) == 1.0


class TestPartition:
    def test_sizes_and_disjoint(self):
        F = np.arange(23, dtype=float)[:, None]
        parts = partition(Dataset(F, np.zeros(23, dtype=int)), 5, seed=0)
        assert [p.m for p in parts] == [4] * 5
        rows = np.concatenate([p.features[:, 0] for p in parts])
        assert len(set(rows.tolist())) == 20

    def test_deterministic(self):
        ds = synthetic_problem(3, 40, seed=0)[1]
        a, b = partition(ds, 4, 9), partition(ds, 4, 9)
        assert all(x.same_as(y) for x, y in zip(a, b))

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            partition(Dataset(np.zeros((2, 1)), [0, 0]), 3, 0)

    @settings(max_examples=30, deadline=None)
    @given(m=st.integers(1, 200), n=st.integers(1, 20), seed=st.integers(0, 100))
    def test_property(self, m, n, seed):
        if m < n:
            return
        parts = partition(Dataset(np.arange(m, dtype=float)[:, None], np.zeros(m, dtype=int)), n, seed)
        assert all(p.m == m // n for p in parts)
        rows = np.concatenate([p.features[:, 0] for p in parts])
        assert np.unique(rows).size == rows.size


class TestLibsvm:
    def test_parse(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("+1 1:0.5 3:2\n-1 2:1.5  # comment\n\n+1\n")
        ds = parse_libsvm(p)
        np.testing.assert_array_equal(ds.features, [[0.5, 0, 2], [0, 1.5, 0], [0, 0, 0]])
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])
        assert parse_libsvm(p, n_features=5).d == 5

    def test_zero_index(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("+1 1:1\n-1 0:1\n")
        with pytest.raises(ParseError, match=":2:"):
            parse_libsvm(p)

    @pytest.mark.parametrize("line", ["x 1:1", "+1 1-2", "+1 a:1", "0.5 1:1"])
    def test_malformed(self, tmp_path, line):
        p = tmp_path / "a.txt"
        p.write_text(line + "\n")
        with pytest.raises(ParseError):
            parse_libsvm(p)

    def test_index_beyond_n_features(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("+1 4:1\n")
        with pytest.raises(ParseError):
            parse_libsvm(p, n_features=3)

    def test_round_trip(self, tmp_path, rng):
        F = rng.standard_normal((12, 6)) * (rng.random((12, 6)) < 0.5)
        ds = Dataset(F, rng.integers(0, 2, 12))
        write_libsvm(ds, tmp_path / "r.txt")
        back = parse_libsvm(tmp_path / "r.txt", n_features=6)
        assert back.same_as(ds)


class TestIdx:
    def test_round_trip(self, tmp_path, rng):
        F = rng.integers(0, 256, (7, 784)) / 255.0
        ds = Dataset(F, rng.integers(0, 10, 7), n_classes=10)
        write_idx(ds, tmp_path / "i", tmp_path / "l")
        back = parse_idx(tmp_path / "i", tmp_path / "l")
        assert back.same_as(ds)
        assert back.features.max() <= 1.0

    def test_bad_magic(self, tmp_path):
        (tmp_path / "i").write_bytes(struct.pack(">IIII", 0x803, 1, 1, 1) + b"\x00")
        (tmp_path / "l").write_bytes(struct.pack(">II", 0x802, 1) + b"\x00")
        with pytest.raises(ParseError, match="magic"):
            parse_idx(tmp_path / "i", tmp_path / "l")

    def test_truncated(self, tmp_path):
        (tmp_path / "i").write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + b"\x00" * 7)
        (tmp_path / "l").write_bytes(struct.pack(">II", 0x801, 2) + b"\x00\x00")
        with pytest.raises(ParseError, match="truncated"):
            parse_idx(tmp_path / "i", tmp_path / "l")

    def test_count_mismatch(self, tmp_path):
        (tmp_path / "i").write_bytes(struct.pack(">IIII", 0x803, 2, 1, 1) + b"\x00" * 2)
        (tmp_path / "l").write_bytes(struct.pack(">II", 0x801, 1) + b"\x00")
        with pytest.raises(ParseError):
            parse_idx(tmp_path / "i", tmp_path / "l")


@pytest.mark.parametrize("make", [lambda: synthetic_problem(6, 50, seed=2), lambda: (OneHiddenNN(4, 3, 3), Dataset(np.random.default_rng(0).random((20, 4)), np.arange(20) % 3, n_classes=3))])
def test_loss_and_grad_matches_separate(make):
    prob, ds = make()
    x = np.random.default_rng(1).standard_normal(prob.dim)
    loss, g = prob.loss_and_grad(x, ds)
    assert loss == pytest.approx(prob.loss(x, ds), rel=1e-14)
    np.testing.assert_allclose(g, prob.grad(x, ds), rtol=1e-13, atol=1e-16)
