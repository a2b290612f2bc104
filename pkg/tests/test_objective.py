from decimal import Decimal, getcontext

import numpy as np
import pytest

from figrat.augmenter import choose_k
from figrat.autodiff import Tensor, grad_check, no_grad, sum_all
from figrat.batched import batch_forward
from figrat.config import TrainConfig
from figrat.errors import DimensionError, ValidationError
from figrat.experiments import random_graph
from figrat.graphs import gen_motif_dataset
from figrat.model import FIGModel, PredictorParams
from figrat.objective import (beta_for, decompose, predict, predict_graph, readout, task_loss, total_loss,
                              utility_loss)


def small_model(variant="fig_n", **kw):
    cfg = TrainConfig(variant=variant, d=6, r=4, encoder_layers=2, n_max=20, **kw)
    return FIGModel.init(cfg, 6, 0, 2, 20)


def test_readout_examples():
    row = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(readout(Tensor(np.repeat(row, 4, axis=0)), "mean").data, row[0])
    assert np.array_equal(readout(Tensor(row), "sum").data, row[0])
    assert np.array_equal(readout(Tensor([[2.0, 0.0], [0.0, 2.0]]), "mean").data, [1.0, 1.0])
    with pytest.raises(DimensionError):
        readout(Tensor(np.zeros((0, 3))))
    with pytest.raises(ValueError):
        readout(Tensor(row), "max")


def test_predict_examples():
    rng = np.random.default_rng(0)
    p = PredictorParams.init(rng, 5, 3)
    for lin in p.layers:
        lin.W.data[...] = 0.0
    assert np.array_equal(predict(Tensor(rng.normal(size=5)), p).data, np.zeros(3))
    assert predict(Tensor(rng.normal(size=5)), PredictorParams.init(rng, 5, 1)).shape == (1,)
    with pytest.raises(DimensionError):
        predict(Tensor(np.ones(4)), p)


def test_predict_gradients():
    rng = np.random.default_rng(1)
    p = PredictorParams.init(rng, 5, 2)
    for lin in p.layers:
        lin.b.data += rng.normal(scale=0.1, size=lin.b.shape)
    h = Tensor(rng.normal(size=5), requires_grad=True)
    w = Tensor([0.3, -1.2])
    assert grad_check(lambda x: sum_all(predict(x, p) * w), h) < 1e-4
    for lin in p.layers:
        assert grad_check(lambda _: sum_all(predict(h, p) * w), lin.W) < 1e-4


def test_task_loss_examples():
    assert task_loss(Tensor([1.5]), 1.5, "regression").item() == 0.0
    for y in (0, 1):
        assert abs(task_loss(Tensor([0.0, 0.0]), y, "binary_classification").item() - np.log(2)) < 1e-15
    getcontext().prec = 50
    e2 = Decimal(2).exp()
    ref = float(-(e2 / (e2 + 1)).ln())
    assert abs(task_loss(Tensor([2.0, 0.0]), 0, "binary_classification").item() - ref) < 1e-15
    assert abs(ref - 0.126928) < 1e-6
    with pytest.raises(ValidationError):
        task_loss(Tensor([0.0, 0.0]), 2, "binary_classification")
    with pytest.raises(DimensionError):
        task_loss(Tensor([0.0, 0.0]), 1.0, "regression")


def test_beta_scaling():
    assert beta_for(TrainConfig(), 5) == pytest.approx(0.1, abs=1e-15)
    assert beta_for(TrainConfig(variant="fig_vn", r=8), 50) == pytest.approx(2 / 56, abs=1e-15)
    assert beta_for(TrainConfig(beta_hat=0.0), 9) == 0.0
    assert beta_for(TrainConfig(), 1) == 0.0


def hand_chained_utility(model, H_ra, H_env, y):
    """The same pipeline written directly in numpy."""
    p = model.intervener
    H = np.concatenate([H_ra, H_env])
    d = H.shape[1]
    Q = H @ p.q.W.data + p.q.b.data
    K = H @ p.k.W.data
    V = H @ p.v.W.data + p.v.b.data
    L = Q @ K.T / np.sqrt(d)
    P = np.exp(L - L.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    X = P @ V + H
    h = X
    for i, lin in enumerate(p.ffn):
        h = h @ lin.W.data + lin.b.data
        if i < len(p.ffn) - 1:
            h = np.maximum(h, 0)
    X = X + h
    z = X.mean(axis=0)
    for i, lin in enumerate(model.predictor.layers):
        z = z @ lin.W.data + lin.b.data
        if i < len(model.predictor.layers) - 1:
            z = np.maximum(z, 0)
    return float(np.log(np.exp(z - z.max()).sum()) + z.max() - z[y])


def test_utility_matches_hand_chained_recomputation():
    rng = np.random.default_rng(4)
    model = small_model()
    H = rng.normal(size=(4, 6))
    for y in (0, 1):
        loss, rec = utility_loss(Tensor(H[:3]), Tensor(H[3:]), y, model.intervener, model.predictor)
        assert abs(loss.item() - hand_chained_utility(model, H[:3], H[3:], y)) < 1e-12
        assert loss.item() >= 0 and rec.P.shape == (4, 4)
        again, _ = utility_loss(Tensor(H[:3]), Tensor(H[3:]), y, model.intervener, model.predictor)
        assert again.item() == loss.item()


def test_degenerate_weights_and_self_partner():
    (g, h) = gen_motif_dataset(2, seed=3)
    model = small_model(alpha=0.0, beta_hat=0.0)
    rep = total_loss(g, h, model)
    assert rep.total.item() == rep.l_util_own.item()
    model = small_model()
    rep = total_loss(g, g, model)
    assert rep.l_util_swapped.item() == rep.l_util_own.item()
    assert rep.l_reg_swapped.item() == rep.l_reg_own.item()


@pytest.mark.parametrize("variant", ["fig_n", "fig_vn"])
def test_total_recombination_identity(variant):
    graphs = gen_motif_dataset(6, seed=1)
    model = small_model(variant, alpha=0.7, beta_hat=1.4)
    for g, h in zip(graphs, graphs.graphs[1:]):
        r = total_loss(g, h, model)
        beta = beta_for(model.config, g.n)
        expect = r.l_util_own.item() + 0.7 * r.l_util_swapped.item() + beta * (r.l_reg_own.item() + r.l_reg_swapped.item())
        assert abs(r.total.item() - expect) < 1e-12


@pytest.mark.parametrize("variant", ["fig_n", "fig_vn"])
@pytest.mark.parametrize("layer_norm", [False, True])
def test_batched_path_matches_per_graph(variant, layer_norm):
    graphs = gen_motif_dataset(7, seed=2, env_size_range=(3, 12)).graphs
    cfg = TrainConfig(variant=variant, d=8, r=5, encoder_layers=2, layer_norm=layer_norm, n_max=14, alpha=0.6)
    model = FIGModel.init(cfg, graphs[0].d_x, 0, 2, 14)
    partner = np.array([3, 0, 1, 6, 2, 4, 5])
    model.zero_grad()
    fwd = batch_forward(graphs, model, partner)
    fwd.total.backward()
    g_batched = {k: p.grad.copy() for k, p in model.parameters().items()}

    model.zero_grad()
    reports = [total_loss(g, graphs[j], model) for g, j in zip(graphs, partner)]
    mean = sum_all(Tensor(0.0))
    for r in reports:
        mean = mean + r.total * (1.0 / len(graphs))
    mean.backward()
    assert abs(fwd.total.item() - mean.item()) < 1e-12
    for k, p in model.parameters().items():
        assert np.allclose(g_batched[k], p.grad, rtol=1e-9, atol=1e-12), k
    rep = fwd.report
    assert abs(rep["l_util_own"] - np.mean([r.l_util_own.item() for r in reports])) < 1e-12
    assert abs(rep["l_reg_swapped"] - np.mean([r.l_reg_swapped.item() for r in reports])) < 1e-12
    assert abs(rep["total"] - (rep["l_util_own"] + cfg.alpha * rep["l_util_swapped"] + rep["reg_weighted"])) < 1e-12


@pytest.mark.parametrize("variant", ["fig_n", "fig_vn"])
def test_structural_shapes(variant):
    graphs = gen_motif_dataset(12, seed=6, env_size_range=(3, 15)).graphs
    cfg = TrainConfig(variant=variant, d=6, r=8, encoder_layers=1, n_max=25)
    model = FIGModel.init(cfg, graphs[0].d_x, 0, 2, 25)
    with no_grad():
        fwd = batch_forward(graphs, model)
    for i, g in enumerate(graphs):
        t = g.n if variant == "fig_n" else cfg.r
        K = choose_k(cfg.K_hat, t)
        assert fwd.own.block(i).shape == (t, t) and fwd.own.K[i] == K
        dec = decompose(g, model)
        assert dec.H_ra.shape == (K, cfg.d) and dec.H_env.shape == (t - K, cfg.d)
        _, rec, _ = predict_graph(g, model)
        assert rec.P.shape == (t, t) and rec.s.tolist() == [1] * K + [0] * (t - K)


def test_test_time_path_equals_own_utility_path():
    graphs = gen_motif_dataset(5, seed=9).graphs
    model = small_model()
    with no_grad():
        fwd = batch_forward(graphs, model, with_swapped=False)
    for i, g in enumerate(graphs):
        out, _, _ = predict_graph(g, model)
        assert np.allclose(out, fwd.own.logits.data[i], atol=1e-12)


def test_random_graph_edge_features_flow():
    rng = np.random.default_rng(0)
    g, h = random_graph(rng, 6, 3, 2), random_graph(rng, 7, 3, 2)
    model = FIGModel.init(TrainConfig(d=4, encoder_layers=1), 3, 2)
    assert np.isfinite(total_loss(g, h, model).total.item())
