"""Numeric-core tests: forward values, gradient fidelity vs central finite
differences, graph mechanics, and determinism."""

import numpy as np
import pytest

from topicsum import autodiff as ad


def fd_gradients(build_loss, params, h=1e-5):
    """Central finite differences for every scalar of every parameter."""
    out = []
    for p in params:
        flat = p.data.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = build_loss().item()
            flat[i] = orig - h
            lm = build_loss().item()
            flat[i] = orig
            g[i] = (lp - lm) / (2 * h)
        out.append(g.reshape(p.data.shape))
    return out


def assert_grads_close(build_loss, params, tol=1e-4, h=1e-5):
    ad.zero_grads(params)
    loss = build_loss()
    auto = ad.backward(loss, params=params)
    numeric = fd_gradients(build_loss, params, h=h)
    for a, n in zip(auto, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        rel = np.abs(a - n) / denom
        assert rel.max() < tol, f"max relative error {rel.max():.3g}"


class TestSoftmax:
    def test_symmetry_uniform(self):
        out = ad.softmax(ad.tensor([0.0, 0.0, 0.0, 0.0])).data
        np.testing.assert_allclose(out, [0.25, 0.25, 0.25, 0.25], atol=1e-15)

    def test_single_element(self):
        for c in (-7.3, 0.0, 42.0):
            assert ad.softmax(ad.tensor([c])).data[0] == pytest.approx(1.0)

    def test_hand_case(self):
        # exp(0) = 1, exp(ln 2) = 2, so probabilities are 1/3 and 2/3
        out = ad.softmax(ad.tensor([0.0, np.log(2.0)])).data
        np.testing.assert_allclose(out, [1 / 3, 2 / 3], atol=1e-12)

    def test_simplex_property(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            v = rng.normal(scale=10, size=rng.integers(1, 30))
            out = ad.softmax(ad.tensor(v)).data
            assert np.all(out >= 0)
            assert abs(out.sum() - 1.0) < 1e-9

    def test_extreme_values_stable(self):
        out = ad.softmax(ad.tensor([1000.0, 0.0, -1000.0])).data
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(ad.NumericError):
            ad.softmax(ad.tensor(np.zeros(0)))


class TestBackwardBasics:
    def test_square_gradient(self):
        x = ad.parameter(np.array(3.0), name="x")
        (x * x).backward()
        assert x.grad == pytest.approx(6.0)

    def test_softmax_cross_entropy_stationary(self):
        # uniform target, zero logits: gradient vanishes by symmetry
        logits = ad.parameter(np.zeros(4))
        target = np.full(4, 0.25)
        loss = -ad.tsum(ad.tensor(target) * ad.log_softmax(logits))
        loss.backward()
        np.testing.assert_allclose(logits.grad, np.zeros(4), atol=1e-15)

    def test_non_scalar_loss_rejected(self):
        x = ad.parameter(np.ones(3))
        with pytest.raises(ad.NumericError):
            ad.backward(x * x)

    def test_disconnected_parameter_gets_zero(self):
        x = ad.parameter(np.array(2.0))
        unused = ad.parameter(np.ones(3), name="unused")
        loss = x * x
        grads = ad.backward(loss, params=[x, unused], debug=True)
        assert grads[0] == pytest.approx(4.0)
        np.testing.assert_array_equal(grads[1], np.zeros(3))

    def test_reused_node_accumulates(self):
        x = ad.parameter(np.array(2.0))
        y = x * x      # 4
        loss = y + y   # dloss/dx = 2 * 2x = 8
        loss.backward()
        assert x.grad == pytest.approx(8.0)

    def test_concat_routes_gradients(self):
        a = ad.parameter(np.ones(3))
        b = ad.parameter(np.ones(2))
        cat = ad.concat([a, b])
        w = np.array([1.0, 2.0, 3.0, 0.0, 0.0])
        loss = ad.tsum(cat * ad.tensor(w))
        loss.backward()
        np.testing.assert_array_equal(a.grad, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(b.grad, [0.0, 0.0])  # zero block stays zero


class TestPrimitiveGradients:
    """Gradient vs central differences, 100 randomized trials each."""

    N_TRIALS = 100

    def _weighted_loss(self, rng, op, *params):
        out = op(*params)
        w = ad.tensor(rng.normal(size=out.shape))
        return ad.tsum(out * w)

    def _run(self, make_params, op, seed):
        rng = np.random.default_rng(seed)
        for _ in range(self.N_TRIALS):
            params = make_params(rng)
            w = rng.normal(size=op(*params).shape)

            def loss():
                return ad.tsum(op(*params) * ad.tensor(w))

            assert_grads_close(loss, params)

    def test_matmul(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 4))),
                               ad.parameter(rng.normal(size=(4, 2)))),
                  ad.matmul, seed=0)

    def test_add_broadcast(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 4))),
                               ad.parameter(rng.normal(size=4))),
                  ad.add, seed=1)

    def test_mul_broadcast(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 4))),
                               ad.parameter(rng.normal(size=(3, 1)))),
                  ad.mul, seed=2)

    def test_div(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(2, 3))),
                               ad.parameter(rng.uniform(0.5, 2.0, size=(2, 3)))),
                  ad.div, seed=3)

    def test_concat(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(2, 3))),
                               ad.parameter(rng.normal(size=(4, 3)))),
                  lambda a, b: ad.concat([a, b], axis=0), seed=4)

    def test_sigmoid(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 3))),),
                  ad.sigmoid, seed=5)

    def test_tanh(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 3))),),
                  ad.tanh, seed=6)

    def test_softmax(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 5))),),
                  lambda a: ad.softmax(a, axis=-1), seed=7)

    def test_log_softmax(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 5))),),
                  lambda a: ad.log_softmax(a, axis=-1), seed=8)

    def test_log(self):
        self._run(lambda rng: (ad.parameter(rng.uniform(0.2, 3.0, size=(2, 4))),),
                  ad.log, seed=9)

    def test_exp(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(2, 4))),),
                  ad.exp, seed=10)

    def test_sqrt(self):
        self._run(lambda rng: (ad.parameter(rng.uniform(0.5, 4.0, size=(2, 4))),),
                  ad.sqrt, seed=11)

    def test_mean_axis(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 4))),),
                  lambda a: ad.tmean(a, axis=1, keepdims=True), seed=12)

    def test_sum_all(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 4))),),
                  lambda a: ad.tsum(a, axis=0), seed=13)

    def test_gather_rows(self):
        idx = [0, 2, 2, 1]
        self._run(lambda rng: (ad.parameter(rng.normal(size=(4, 3))),),
                  lambda a: ad.gather_rows(a, idx), seed=14)

    def test_slice(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(4, 5))),),
                  lambda a: a[1:3, 2:], seed=15)

    def test_transpose_reshape(self):
        self._run(lambda rng: (ad.parameter(rng.normal(size=(3, 4))),),
                  lambda a: ad.reshape(ad.transpose(a), (2, 6)), seed=16)

    def test_relu_away_from_kink(self):
        def make(rng):
            x = rng.normal(size=(3, 3))
            x[np.abs(x) < 0.1] += 0.2  # keep clear of the nondifferentiable point
            return (ad.parameter(x),)
        self._run(make, ad.relu, seed=17)

    def test_clip_away_from_edges(self):
        def make(rng):
            x = rng.normal(size=(3, 3)) * 0.4  # comfortably inside (-1, 1)
            return (ad.parameter(x),)
        self._run(make, lambda a: ad.clip(a, -1.0, 1.0), seed=18)


class TestGuards:
    def test_nan_rejected(self):
        with pytest.raises(ad.NumericError):
            ad.tensor([1.0, np.nan])

    def test_inf_from_op_rejected(self):
        big = ad.tensor(np.array([800.0]))
        with pytest.raises(ad.NumericError):
            ad.exp(big)

    def test_matmul_shape_guard(self):
        with pytest.raises(ad.NumericError):
            ad.matmul(ad.tensor(np.ones(3)), ad.tensor(np.ones((3, 2))))

    def test_fancy_index_rejected(self):
        with pytest.raises(ad.NumericError):
            ad.tensor(np.ones((3, 3)))[[0, 1]]


class TestDeterminism:
    def test_bit_identical_forward(self):
        def run():
            rng = np.random.default_rng(123)
            x = ad.tensor(rng.normal(size=(5, 5)))
            w = ad.tensor(rng.normal(size=(5, 5)))
            return ad.softmax(ad.matmul(ad.tanh(x), w)).data

        a, b = run(), run()
        assert np.array_equal(a, b)

    def test_no_grad_builds_no_graph(self):
        x = ad.parameter(np.ones(3))
        with ad.no_grad():
            y = x * 2.0
        assert y._parents == ()
        assert not y.requires_grad
