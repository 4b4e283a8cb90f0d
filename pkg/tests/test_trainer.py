import numpy as np
import pytest
from scipy import integrate, stats

from ridge import autodiff as ad
from ridge.autodiff import Tensor, parameter, straight_through
from ridge.errors import EmptyLabelSet, InvalidConfig
from ridge.features import truncated_svd_features
from ridge.graph import SsbmConfig, from_edge_list, split_edges, ssbm_generate
from ridge.metrics import f1_family, hard_signs
from ridge.trainer import (
    MaskState, RidgeConfig, RidgeModel, cleaned_graph, fit, loss_closure, loss_cls, loss_kl_g, loss_kl_y,
    mask_features, predict, sample_substructure, total_loss,
)


def toy_graph():
    # two unbalanced triangles sharing node 2 plus a tail
    return from_edge_list([(0, 1, 1), (1, 2, 1), (0, 2, -1), (2, 3, -1), (3, 4, -1), (2, 4, -1), (4, 5, 1)], 6)


# ---------------------------------------------------------------- masking

def test_mask_extremes_and_mixing():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3))
    xr = rng.standard_normal((5, 3))
    np.testing.assert_array_equal(mask_features(np.ones(3), x, resample=xr).data, x)
    np.testing.assert_array_equal(mask_features(np.zeros(3), x, resample=xr).data, xr)
    mixed = mask_features(np.array([1.0, 0.0, 1.0]), x, resample=xr).data
    np.testing.assert_array_equal(mixed, np.column_stack([x[:, 0], xr[:, 1], x[:, 2]]))


def test_resample_draws_from_column_values():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 4))
    out = mask_features(np.zeros(4), x, rng=np.random.default_rng(2)).data
    for j in range(4):
        assert set(out[:, j]) <= set(x[:, j])


def test_mask_hard_and_relaxed():
    m = MaskState(4, init=2.0)
    m.logits.data[:] = [3.0, -1.0, 0.0, -0.1]
    np.testing.assert_array_equal(m.hard(), [1.0, 0.0, 1.0, 0.0])
    r = m.relaxed().data
    assert np.all((r > 0) & (r < 1))


def test_mask_gradient_reaches_logits():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 3))
    m = MaskState(3, init=0.5)
    xr = rng.standard_normal((6, 3))
    assert ad.grad_check(lambda: ad.sum(ad.square(mask_features(m, x, resample=xr))), [m.logits]) < 1e-4


# ---------------------------------------------------------------- sampling

def test_sampling_keep_all_when_p_one():
    p = Tensor(np.ones(50))
    ka, ky, fb = sample_substructure(p, p, np.random.default_rng(0))
    assert ka.data.sum() == 50 and ky.data.sum() == 50 and not fb


def test_sampling_fallback_top1():
    p = Tensor(np.array([0.0, 0.0, 0.0]))
    p_y = Tensor(np.array([1e-9, 3e-9, 2e-9]))
    _, ky, fb = sample_substructure(p, p_y, np.random.default_rng(0))
    assert fb
    np.testing.assert_array_equal(ky.data, [0.0, 1.0, 0.0])


def test_sampling_binomial():
    p = Tensor(np.full(1000, 0.5))
    ka, ky, _ = sample_substructure(p, p, np.random.default_rng(11))
    for k in (ka, ky):
        assert abs(k.data.sum() - 500) <= 3 * np.sqrt(250)


def test_sampling_eval_threshold():
    p = Tensor(np.array([0.2, 0.5, 0.9]))
    ka, ky, _ = sample_substructure(p, p, mode="eval")
    np.testing.assert_array_equal(ka.data, [0.0, 1.0, 1.0])


# ---------------------------------------------------------------- losses

def test_loss_cls_values():
    signs = np.array([1, -1])
    perfect = Tensor(np.array([[50.0, -50.0], [-50.0, 50.0]]))
    assert loss_cls(perfect, signs).item() < 1e-8
    assert loss_cls(Tensor(np.zeros((2, 2))), signs).item() == pytest.approx(np.log(2))
    # p(+) = 0.8 for a positive edge
    logit = np.log(0.8 / 0.2)
    assert loss_cls(Tensor(np.array([[logit, 0.0]])), [1]).item() == pytest.approx(-np.log(0.8), abs=1e-12)
    with pytest.raises(EmptyLabelSet):
        loss_cls(Tensor(np.zeros((0, 2))), [])


def test_loss_cls_only_kept_labels():
    logits = Tensor(np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 1.0]]))
    signs = np.array([1, 1, -1])
    keep = Tensor(np.array([1.0, 0.0, 1.0]))
    per = np.log1p(np.exp(np.array([-2.0, 0.0])))
    assert loss_cls(logits, signs, keep).item() == pytest.approx(per.mean(), abs=1e-12)


def test_kl_y_values():
    assert loss_kl_y(Tensor(np.full(7, 0.8)), 0.8).item() == pytest.approx(0.0, abs=1e-15)
    expected = 0.5 * np.log(0.5 / 0.8) + 0.5 * np.log(0.5 / 0.2)
    assert loss_kl_y(Tensor(np.full(4, 0.5)), 0.8).item() == pytest.approx(expected, abs=1e-12)
    rng = np.random.default_rng(0)
    assert loss_kl_y(Tensor(rng.uniform(0.01, 0.99, 100)), 0.8).item() > 0


def test_kl_g_values():
    assert loss_kl_g(Tensor(np.zeros((3, 4))), Tensor(np.ones((3, 4)))).item() == 0.0
    assert loss_kl_g(Tensor(np.ones((1, 1))), Tensor(np.ones((1, 1)))).item() == pytest.approx(0.5)


def _kl_quadrature(mu: float, sigma: float) -> float:
    q = stats.norm(mu, sigma)
    p = stats.norm(0.0, 1.0)
    f = lambda t: q.pdf(t) * (q.logpdf(t) - p.logpdf(t))
    val, _ = integrate.quad(f, mu - 15 * sigma, mu + 15 * sigma, limit=200)
    return val


@pytest.mark.parametrize("seed", range(5))
def test_kl_g_quadrature(seed):
    rng = np.random.default_rng(seed)
    mu, sigma = rng.normal(), rng.uniform(0.3, 2.0)
    val = loss_kl_g(Tensor([[mu]]), Tensor([[sigma]])).item()
    assert val == pytest.approx(_kl_quadrature(mu, sigma), abs=1e-4)


def test_kl_g_minimum_gradient_zero():
    mu, sigma = parameter(np.zeros((2, 3))), parameter(np.ones((2, 3)))
    ad.backward(loss_kl_g(mu, sigma))
    np.testing.assert_allclose(mu.grad, 0.0)
    np.testing.assert_allclose(sigma.grad, 0.0)
    assert ad.grad_check(lambda: loss_kl_g(mu, sigma), [mu, sigma]) < 1e-4


def test_kl_y_gradient():
    p = parameter(np.random.default_rng(0).uniform(0.1, 0.9, 8))
    assert ad.grad_check(lambda: loss_kl_y(p, 0.8), [p]) < 1e-4


def test_total_loss_identities():
    cls_t, kl_y, kl_g = Tensor(0.7), Tensor(0.3), Tensor(2.0)
    assert total_loss(cls_t, kl_y, kl_g, RidgeConfig(alpha=0, beta=0)) is cls_t
    zero_kl = loss_kl_y(Tensor(np.full(3, 0.8)), 0.8)
    assert total_loss(cls_t, zero_kl, kl_g, RidgeConfig(alpha=1, beta=0)).item() == pytest.approx(0.7, abs=1e-15)
    cfg = RidgeConfig(alpha=0.4, beta=0.05)
    assert total_loss(cls_t, kl_y, kl_g, cfg).item() == pytest.approx(0.7 + 0.4 * 0.3 + 0.05 * 2.0, abs=1e-12)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        RidgeConfig(tau=1.0)
    with pytest.raises(InvalidConfig):
        RidgeConfig(alpha=-1)
    with pytest.raises(InvalidConfig):
        RidgeConfig(mode="other")


# ---------------------------------------------------------------- end to end

def test_full_loss_gradient_small_instance():
    g = toy_graph()
    x = np.random.default_rng(0).standard_normal((6, 4))
    model = RidgeModel(4, RidgeConfig(alpha=0.7, beta=0.3, hidden=4, layers=2, seed=3))
    f = loss_closure(model, g, x, seed=5)
    with straight_through(False):
        assert ad.grad_check(f, model.parameters()) < 1e-4


def test_fit_zero_epochs():
    g = toy_graph()
    model, traces = fit(g, np.eye(6), cfg=RidgeConfig(epochs=0, hidden=4, layers=2))
    assert len(traces) == 0 and isinstance(model, RidgeModel)


def test_fit_deterministic():
    g = toy_graph()
    cfg = RidgeConfig(epochs=15, hidden=4, layers=2, seed=4)
    m1, t1 = fit(g, np.eye(6), cfg=cfg)
    m2, t2 = fit(g, np.eye(6), cfg=cfg)
    for k, v in m1.arrays().items():
        np.testing.assert_array_equal(v, m2.arrays()[k])
    assert t1.to_csv() == t2.to_csv()


def test_toy_cls_loss_decreases():
    g = toy_graph()
    x = truncated_svd_features(g, 4, seed=0).values
    _, traces = fit(g, x, cfg=RidgeConfig(alpha=0.01, beta=0.01, epochs=200, hidden=8, layers=2, seed=0))
    ma = np.convolve(traces.cls, np.ones(20) / 20, mode="valid")
    # sampled subsets make per-epoch values noisy once converged; the smoothed
    # curve must fall below its starting level and stay there
    assert ma[-1] < ma[0]
    assert np.all(ma[20:] < ma[0])


def test_subsets_within_support():
    g = toy_graph()
    model, traces = fit(g, np.eye(6), cfg=RidgeConfig(epochs=20, hidden=4, layers=2))
    assert max(traces.kept_edges) <= g.m and max(traces.kept_labels) <= g.m
    assert min(traces.kept_labels) >= 1
    kept = cleaned_graph(model, g, np.eye(6))
    assert set(zip(kept.src.tolist(), kept.dst.tolist())) <= set(zip(g.src.tolist(), g.dst.tolist()))


def test_plain_mode_keeps_everything():
    g = toy_graph()
    model, traces = fit(g, np.eye(6), cfg=RidgeConfig(mode="plain", alpha=0, beta=0, epochs=5, hidden=4, layers=2))
    assert traces.kept_edges == [g.m] * 5 and traces.kl_y == [0.0] * 5
    assert cleaned_graph(model, g, np.eye(6)) is g


def test_predict_properties():
    g = toy_graph()
    model, _ = fit(g, np.eye(6), cfg=RidgeConfig(epochs=10, hidden=4, layers=2))
    p = predict(model, g, np.eye(6), [0, 0, 3], [5, 5, 1])
    assert p[0] == p[1]
    assert np.all((p > 0) & (p < 1))


def test_noiseless_two_cluster_separable():
    g = ssbm_generate(SsbmConfig(n=200, k=2, p=0.1, rho=1.5, sign_flip=0.0, seed=0))
    split = split_edges(g, 0.8, seed=0)
    x = truncated_svd_features(split.train, 16, seed=0)
    model, _ = fit(split.train, x, cfg=RidgeConfig(epochs=150, hidden=16, layers=2, seed=0))
    p = predict(model, split.train, x, split.test.src, split.test.dst)
    assert f1_family(hard_signs(p), split.test.sign).binary >= 0.95
