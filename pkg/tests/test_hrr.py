import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hrrformer import hrr, oracles
from hrrformer.errors import ConfigError, ContractError, DimensionError, SingularInverseError
from hrrformer.gradcheck import check_gradients, relative_error
from hrrformer.tensor import Tensor, grad, reduce_sum

F64 = np.float64


def sym(values):
    return hrr.HrrSymbol(Tensor(np.asarray(values, dtype=F64)))


def delta(H, i):
    e = np.zeros(H)
    e[i] = 1.0
    return sym(e)


def pair(seed, H=256, stream=0):
    rng = hrr.SplitMix64(seed, stream)
    return hrr.sample_symbol(H, rng, F64), hrr.sample_symbol(H, rng, F64)


class TestSplitMix64:
    def test_reference_outputs(self):
        # seed 0 and the published first output of the textbook generator
        assert int(hrr.SplitMix64(0).next_u64(1)[0]) == 0xE220A8397B1DCDAF
        assert int(hrr.SplitMix64(1234567).next_u64(1)[0]) == 6457827717110365317

    def test_matches_scalar_reference(self):
        mask = (1 << 64) - 1

        def ref(state, n):
            out = []
            for _ in range(n):
                state = (state + 0x9E3779B97F4A7C15) & mask
                z = state
                z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
                z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
                out.append(z ^ (z >> 31))
            return out

        g = hrr.SplitMix64(99)
        assert [int(v) for v in g.next_u64(5)] + [int(v) for v in g.next_u64(3)] == ref(99, 8)

    def test_streams_differ(self):
        a = hrr.SplitMix64(5, 0).uniform(8)
        b = hrr.SplitMix64(5, 1).uniform(8)
        assert not np.array_equal(a, b)

    def test_uniform_range(self):
        u = hrr.SplitMix64(3).uniform(10_000)
        assert u.min() > 0 and u.max() < 1


class TestSampleSymbol:
    def test_deterministic(self):
        a = hrr.sample_symbol(64, 7, F64).vec.data
        b = hrr.sample_symbol(64, 7, F64).vec.data
        np.testing.assert_array_equal(a, b)

    def test_moments(self):
        H = 1024
        rng = hrr.SplitMix64(11)
        x = np.concatenate([hrr.sample_symbol(H, rng, F64).vec.data for _ in range(10)])
        assert -0.005 < x.mean() < 0.005
        assert 0.9 / H < x.var() < 1.1 / H

    def test_independent_symbols_nearly_orthogonal(self):
        rng = hrr.SplitMix64(12)
        passed = sum(
            abs(hrr.cosine_similarity(hrr.sample_symbol(1024, rng, F64), hrr.sample_symbol(1024, rng, F64)).item())
            < 0.15
            for _ in range(100)
        )
        assert passed >= 99

    @pytest.mark.parametrize("H", [0, 1, 3, 100])
    def test_bad_dimension(self, H):
        with pytest.raises(ConfigError):
            hrr.sample_symbol(H, 0)


class TestBind:
    def test_identity_and_commutativity(self):
        x, y = pair(1, 16)
        np.testing.assert_allclose(hrr.bind(x, hrr.identity(16, F64)).vec.data, x.vec.data, atol=1e-14)
        np.testing.assert_allclose(hrr.bind(x, y).vec.data, hrr.bind(y, x).vec.data, atol=1e-14)

    def test_small_example(self):
        np.testing.assert_allclose(hrr.bind(sym([1, 2]), sym([3, 4])).vec.data, [11, 10], atol=1e-12)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            hrr.bind(delta(4, 0), delta(8, 0))

    def test_associative(self):
        rng = hrr.SplitMix64(4)
        a, b, c = (hrr.sample_symbol(128, rng, F64) for _ in range(3))
        lhs = hrr.bind(hrr.bind(a, b), c).vec.data
        rhs = hrr.bind(a, hrr.bind(b, c)).vec.data
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestExactInverse:
    def test_cyclic_group(self):
        np.testing.assert_allclose(hrr.exact_inverse(delta(8, 0)).vec.data, delta(8, 0).vec.data, atol=1e-15)
        np.testing.assert_allclose(hrr.exact_inverse(delta(4, 1)).vec.data, [0, 0, 0, 1], atol=1e-15)

    def test_identity_recovery(self):
        y = hrr.sample_symbol(256, 3, F64)
        got = hrr.bind(y, hrr.exact_inverse(y)).vec.data
        np.testing.assert_allclose(got, np.eye(256)[0], atol=1e-8)

    def test_matches_dense_solve(self):
        y = hrr.sample_symbol(32, 8, F64)
        assert relative_error(hrr.exact_inverse(y).vec.data, oracles.solve_inverse(y.vec.data)) < 1e-10

    def test_singular_bin_is_named(self):
        with pytest.raises(SingularInverseError) as info:
            hrr.exact_inverse(sym([1.0, 1.0, 1.0, 1.0]))
        assert info.value.bin_index in (1, 2)
        assert info.value.magnitude < 1e-8

    def test_clamp_keeps_result_finite(self):
        out = hrr.exact_inverse(sym([1.0, 1.0, 1.0, 1.0]), clamp=True).vec.data
        assert np.isfinite(out).all()


class TestUnbind:
    def test_exact_single_pair(self):
        k, v = pair(21)
        assert relative_error(hrr.unbind(hrr.bind(k, v), k).vec.data, v.vec.data) < 1e-8

    def test_two_pair_retrieval(self):
        wins = 0
        for t in range(100):
            rng = hrr.SplitMix64(t, 3)
            a, b, c, d = (hrr.sample_symbol(512, rng, F64) for _ in range(4))
            got = hrr.unbind(hrr.superpose([(a, b), (c, d)]), a)
            wins += hrr.cosine_similarity(got, b).item() > hrr.cosine_similarity(got, d).item()
        assert wins >= 95

    def test_linear_in_beta(self):
        rng = hrr.SplitMix64(31)
        b1, b2, q = (hrr.sample_symbol(64, rng, F64) for _ in range(3))
        lhs = hrr.unbind(sym(b1.vec.data + b2.vec.data), q).vec.data
        rhs = hrr.unbind(b1, q).vec.data + hrr.unbind(b2, q).vec.data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_propagates_singular(self):
        with pytest.raises(SingularInverseError):
            hrr.unbind(delta(4, 0), sym([1.0, 1.0, 1.0, 1.0]))


class TestSuperpose:
    def test_single_pair(self):
        k, v = pair(2, 32)
        np.testing.assert_array_equal(hrr.superpose([(k, v)]).vec.data, hrr.bind(k, v).vec.data)

    def test_delta_binding(self):
        rng = hrr.SplitMix64(6)
        x, y = hrr.sample_symbol(4, rng, F64), hrr.sample_symbol(4, rng, F64)
        got = hrr.superpose([(delta(4, 0), x), (delta(4, 1), y)])
        np.testing.assert_allclose(got.vec.data, x.vec.data + np.roll(y.vec.data, 1), atol=1e-14)
        assert got.count == 2

    def test_permutation(self):
        pairs = [pair(s, 64) for s in range(6)]
        a = hrr.superpose(pairs).vec.data
        b = hrr.superpose(pairs[::-1]).vec.data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ContractError):
            hrr.superpose([])
        with pytest.raises(DimensionError):
            hrr.superpose([pair(0, 4), pair(0, 8)])


class TestCosine:
    def test_examples(self):
        v = sym([0.3, -1.0, 2.0, 0.5])
        assert hrr.cosine_similarity(v, v).item() == pytest.approx(1)
        assert hrr.cosine_similarity(v, sym(-v.vec.data)).item() == pytest.approx(-1)
        assert hrr.cosine_similarity(sym([1, 0]), sym([1, 1])).item() == pytest.approx(0.70711, abs=1e-5)

    def test_zero_norm(self):
        x = Tensor(np.zeros(4), requires_grad=True)
        y = Tensor(np.ones(4), requires_grad=True)
        c = hrr.cosine_similarity(x, y)
        assert c.item() == 0.0
        gx, gy = grad(c, [x, y])
        assert not gx.data.any() and not gy.data.any()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bounded(self, seed):
        rng = np.random.default_rng(seed)
        u, v = rng.standard_normal((2, 5, 16))
        c = hrr.cosine_similarity(Tensor(u), Tensor(v)).data
        np.testing.assert_allclose(c, [oracles.cosine(a, b) for a, b in zip(u, v)], atol=1e-12)
        assert (np.abs(c) <= 1 + 1e-12).all()


class TestDifferentiable:
    def test_cosine_fd(self):
        rng = np.random.default_rng(0)
        u, v = (Tensor(rng.uniform(-1, 1, 16), requires_grad=True) for _ in range(2))
        assert check_gradients(lambda: hrr.cosine_similarity(u, v), [u, v]) < 1e-5

    def test_end_to_end_retrieval_fd(self):
        rng = np.random.default_rng(1)
        ts = [Tensor(rng.uniform(-1, 1, 16), requires_grad=True) for _ in range(6)]
        k1, v1, k2, v2, q, v = ts
        q.data[0] += 3.0  # keep the spectrum of q away from zero

        def f():
            beta = hrr.superpose([(k1, v1), (k2, v2)])
            return hrr.cosine_similarity(hrr.unbind(beta, q), v)

        assert check_gradients(f, ts) < 1e-5

    def test_inverse_fd(self):
        rng = np.random.default_rng(2)
        y = Tensor(rng.uniform(-1, 1, 8), requires_grad=True)
        y.data[0] += 3.0
        c = Tensor(rng.uniform(-1, 1, 8))
        assert check_gradients(lambda: reduce_sum(hrr.exact_inverse(y) * c), [y]) < 1e-5
