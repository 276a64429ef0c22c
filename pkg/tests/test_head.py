import numpy as np
import pytest

from pdanet import engine as E
from pdanet.engine import Tensor, grad_check_params
from pdanet.errors import ConfigurationError, DimensionError
from pdanet.head import (
    FeatureMap,
    PdanetParams,
    channel_attention,
    coupled_spatial_attention,
    head_forward,
    init_params,
    spatial_attention,
)

from head_oracle import head_oracle


def random_params(rng, h, w, n, scale=1.0):
    p = init_params(h, w, n, rng=rng)
    for t in p.named().values():
        t.values = rng.normal(scale=scale, size=t.shape)
    return p


def fmap(x):
    return FeatureMap(Tensor(x))


class TestFeatureMap:
    def test_views_are_transposes(self, rng):
        x = rng.normal(size=(3, 2, 4))
        fm = fmap(x)
        np.testing.assert_array_equal(fm.as_nm().values, x.reshape(3, 8))
        np.testing.assert_array_equal(fm.as_mn().values, fm.as_nm().values.T)
        assert (fm.h, fm.w, fm.n, fm.m) == (2, 4, 3, 8)

    def test_rejects_empty(self):
        with pytest.raises(DimensionError):
            fmap(np.zeros((0, 2, 2)))


class TestSpatial:
    def test_zero_input_uniform(self, rng):
        p = init_params(2, 3, 4, rng=rng)
        A, f = spatial_attention(fmap(np.zeros((4, 2, 3))), p)
        np.testing.assert_allclose(A.values, 1 / 6, atol=1e-15)
        np.testing.assert_array_equal(f.values, np.zeros(4))

    def test_normalized(self, rng):
        p = random_params(rng, 3, 3, 5)
        A, _ = spatial_attention(fmap(rng.normal(size=(5, 3, 3))), p)
        assert abs(A.values.sum() - 1) < 1e-6 and np.all(A.values >= 0)

    def test_small_integer_case(self):
        # h = w = 2, n = k = 2, hand-chosen integer weights
        p = init_params(2, 2, 2)
        p.W_S2.values = np.array([[1.0, 0.0], [1.0, -1.0]])
        p.b_S.values = np.array([0.0, 1.0])
        p.W_S1.values = np.array([[1.0, 2.0]])
        F = np.array([[[1.0, 0.0], [2.0, -1.0]], [[0.0, 1.0], [1.0, 1.0]]])
        _, f_S = spatial_attention(fmap(F), p)
        ref = head_oracle(F.tolist(), {k: v.values.tolist() for k, v in p.named().items()}, "S")
        np.testing.assert_allclose(f_S.values, ref["f_A"][:2], rtol=1e-12)
        # direct dense algebra
        V = p.W_S2.values @ F.reshape(2, 4) + p.b_S.values[:, None]
        s = (p.W_S1.values @ np.tanh(V))[0]
        A = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
        np.testing.assert_allclose(f_S.values, V @ A, rtol=1e-12)

    def test_shape_inconsistency(self, rng):
        p = init_params(2, 2, 3, rng=rng)
        with pytest.raises(DimensionError):
            spatial_attention(fmap(np.zeros((3, 3, 2))), p)


class TestChannel:
    def test_zero_weights_half(self, rng):
        p = init_params(2, 2, 3, rng=rng)
        p.W_C1.values[:] = 0
        A_C, _ = channel_attention(fmap(rng.normal(size=(3, 2, 2))), p)
        np.testing.assert_array_equal(A_C.values, [0.5, 0.5, 0.5])

    def test_open_unit_interval(self, rng):
        p = random_params(rng, 2, 3, 4)
        A_C, _ = channel_attention(fmap(rng.normal(size=(4, 2, 3))), p)
        assert np.all((A_C.values > 0) & (A_C.values < 1))

    def test_small_integer_case(self):
        p = init_params(2, 2, 2)
        p.W_S2.values = np.array([[2.0, 1.0], [0.0, 1.0]])
        p.W_C1.values = np.array([[1.0, 0, 0, -1], [0, 1, 1, 0], [1, 1, 1, 1], [0, 0, 0, 2]])
        p.b_C.values = np.array([0.0, -1.0, 1.0, 0.0])
        F = np.array([[[1.0, 2.0], [0.0, -1.0]], [[1.0, 0.0], [-2.0, 1.0]]])
        A_C, f_C = channel_attention(fmap(F), p)
        ref = head_oracle(F.tolist(), {k: v.values.tolist() for k, v in p.named().items()}, "CW")
        np.testing.assert_allclose(f_C.values, ref["f_A"][:2], rtol=1e-12)
        np.testing.assert_allclose(A_C.values, ref["A_C"], rtol=1e-12)


class TestCoupled:
    def test_zero_coupling_reduces_to_spatial_bitwise(self, rng):
        p = random_params(rng, 2, 3, 4)
        p.W_CS.values[:] = 0
        p.b_CS.values[:] = 0
        F = fmap(rng.normal(size=(4, 2, 3)))
        A_C, _ = channel_attention(F, p)
        A1, f1 = coupled_spatial_attention(F, A_C, p)
        A2, f2 = spatial_attention(F, p)
        assert A1.values.tobytes() == A2.values.tobytes()
        assert f1.values.tobytes() == f2.values.tobytes()

    def test_normalized(self, rng):
        p = random_params(rng, 2, 2, 3)
        F = fmap(rng.normal(size=(3, 2, 2)))
        A_C, _ = channel_attention(F, p)
        A, _ = coupled_spatial_attention(F, A_C, p)
        assert abs(A.values.sum() - 1) < 1e-6

    def test_channel_attention_shape_checked(self, rng):
        p = random_params(rng, 2, 2, 3)
        with pytest.raises(DimensionError):
            coupled_spatial_attention(fmap(rng.normal(size=(3, 2, 2))), Tensor(np.ones(2)), p)


class TestHeadForward:
    def test_zero_weights_predict_bias(self, rng):
        p = init_params(2, 2, 3, rng=rng)
        for name, t in p.named().items():
            if name != "b_out":
                t.values[:] = 0
        p.b_out.values = np.array([0.1, 0.2, 0.3])
        for mode in ("S", "CW", "S_CW"):
            out = head_forward(fmap(rng.normal(size=(3, 2, 2))), p, mode)
            np.testing.assert_array_equal(out.prediction.values, [0.1, 0.2, 0.3])
            assert out.prediction.shape == (3,)

    def test_unknown_mode(self, rng):
        with pytest.raises(ConfigurationError):
            head_forward(fmap(np.zeros((2, 2, 2))), init_params(2, 2, 2), "SC")

    @pytest.mark.parametrize("mode", ["S", "CW", "S_CW"])
    def test_gradients_all_parameters(self, rng, mode):
        p = random_params(rng, 2, 3, 3, scale=0.8)
        F = rng.normal(size=(3, 2, 3))

        def loss(params):
            return E.sum_all(head_forward(fmap(F), PdanetParams.from_named(dict(params)), mode).prediction)

        errors = grad_check_params(loss, p.named())
        assert max(errors.values()) < 1e-4, errors

    @pytest.mark.parametrize("mode", ["S", "CW", "S_CW"])
    def test_matches_oracle(self, rng, mode):
        for _ in range(10):
            p = random_params(rng, 2, 3, 3)
            F = rng.normal(size=(3, 2, 3))
            out = head_forward(fmap(F), p, mode)
            ref = head_oracle(F.tolist(), {k: v.values.tolist() for k, v in p.named().items()}, mode)
            np.testing.assert_allclose(out.prediction.values, ref["prediction"], rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(out.f_A.values, ref["f_A"], rtol=1e-10, atol=1e-12)

    def test_batched_equals_per_sample(self, rng):
        p = random_params(rng, 2, 2, 3)
        F = rng.normal(size=(5, 3, 2, 2))
        batched = head_forward(fmap(F), p, "S_CW")
        for i in range(5):
            single = head_forward(fmap(F[i]), p, "S_CW")
            np.testing.assert_allclose(batched.prediction.values[i], single.prediction.values, rtol=1e-13)
            np.testing.assert_allclose(batched.A_S.values[i], single.A_S.values, rtol=1e-13)


def test_k_must_equal_n(rng):
    p = init_params(2, 2, 3, rng=rng)
    p.W_S2 = Tensor(np.zeros((4, 3)))
    with pytest.raises(DimensionError):
        p.validate()


def test_init_ranges(rng):
    p = init_params(2, 3, 4, rng=rng)
    assert np.all(np.abs(p.W_S2.values) <= np.sqrt(1 / 4))
    assert np.all(np.abs(p.W_C1.values) <= np.sqrt(1 / 6))
    assert np.all(np.abs(p.W_out.values) <= np.sqrt(1 / 8))
    for name in ("b_S", "b_C", "b_CS", "b_out"):
        assert not getattr(p, name).values.any()


def test_location_permutation_permutes_attention(rng):
    """Scores are per location: permuting locations permutes A_S (multiset invariant)."""
    p = random_params(rng, 2, 3, 3)
    F = rng.normal(size=(3, 6))
    perm = rng.permutation(6)
    A1, f1 = spatial_attention(fmap(F.reshape(3, 2, 3)), p)
    A2, f2 = spatial_attention(fmap(F[:, perm].reshape(3, 2, 3)), p)
    np.testing.assert_allclose(A2.values, A1.values[perm], rtol=1e-13)
    np.testing.assert_allclose(np.sort(A2.values), np.sort(A1.values), rtol=1e-13)
    np.testing.assert_allclose(f1.values, f2.values, rtol=1e-12)


def test_invariants_random_draws(rng):
    for _ in range(1000):
        h, w, n = rng.integers(1, 4, size=3)
        p = random_params(rng, h, w, n, scale=rng.uniform(0.1, 3.0))
        F = fmap(rng.normal(scale=rng.uniform(0.1, 3.0), size=(n, h, w)))
        A_C, _ = channel_attention(F, p)
        A_S, _ = coupled_spatial_attention(F, A_C, p)
        assert abs(A_S.values.sum() - 1) < 1e-6 and np.all(A_S.values >= 0)
        assert np.all((A_C.values > 0) & (A_C.values < 1))
