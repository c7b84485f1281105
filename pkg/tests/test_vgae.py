import math

import numpy as np
import pytest

from conftest import check_gradients, make_grid_graph
from streetvae import graph, nodemodel, tensor as T, vgae
from streetvae.graph import Edge, StreetGraph, normalize_adjacency
from streetvae.tensor import Tensor
from streetvae.vgae import VgaeConfig


def small_setup(n=5, feature_dim=6, hidden=4, latent=3, seed=0):
    rng = np.random.default_rng(seed)
    cfg = VgaeConfig(feature_dim=feature_dim, hidden_dim=hidden, latent_dim=latent)
    params = vgae.init_params(cfg, seed=seed)
    g = make_grid_graph(2, 3)  # 6 nodes
    adj = normalize_adjacency(g)
    feats = rng.normal(size=(g.n_nodes, feature_dim))
    return cfg, params, adj, feats


class TestEncode:
    def test_shapes(self):
        cfg, params, adj, feats = small_setup()
        mu, lv = vgae.encode(params, adj.a_norm, feats)
        assert mu.data.shape == (6, cfg.latent_dim)
        assert lv.data.shape == (6, cfg.latent_dim)

    def test_zero_weights_posterior_is_prior(self):
        cfg, params, adj, feats = small_setup()
        zeros = {k: Tensor(np.zeros_like(p.data)) for k, p in params.items()}
        mu, lv = vgae.encode(zeros, adj.a_norm, feats)
        assert np.all(mu.data == 0.0) and np.all(lv.data == 0.0)

    def test_feature_width_mismatch(self):
        cfg, params, adj, _ = small_setup()
        with pytest.raises(vgae.VgaeError):
            vgae.encode(params, adj.a_norm, np.zeros((6, cfg.feature_dim + 1)))

    def test_permutation_equivariance(self):
        cfg, params, adj, feats = small_setup()
        rng = np.random.default_rng(1)
        perm = rng.permutation(6)
        p_mat = np.eye(6)[perm]
        mu, lv = vgae.encode(params, adj.a_norm, feats)
        mu_p, lv_p = vgae.encode(params, p_mat @ adj.a_norm @ p_mat.T, p_mat @ feats)
        assert np.abs(mu_p.data - p_mat @ mu.data).max() < 1e-9
        assert np.abs(lv_p.data - p_mat @ lv.data).max() < 1e-9


class TestReparameterize:
    def test_tiny_variance_limit(self):
        mu = np.ones((4, 3))
        latent = vgae.reparameterize(mu, np.full((4, 3), -40.0), seed=0)
        assert np.abs(latent.z - mu).max() < 1e-8

    def test_seeded_identical(self):
        mu = np.zeros((3, 2))
        lv = np.zeros((3, 2))
        a = vgae.reparameterize(mu, lv, seed=9)
        b = vgae.reparameterize(mu, lv, seed=9)
        assert np.array_equal(a.z, b.z)

    def test_monte_carlo_mean(self):
        mu = np.array([[0.7, -1.2]])
        lv = np.array([[0.4, -0.3]])
        draws = np.stack([vgae.reparameterize(mu, lv, seed=s).z[0] for s in range(10_000)])
        sigma = np.exp(0.5 * lv[0])
        tol = 3 * sigma / 100.0  # 3 sigma of the mean of 10^4 draws
        assert np.all(np.abs(draws.mean(axis=0) - mu[0]) < tol)

    def test_replay_bit_exact(self):
        rng = np.random.default_rng(3)
        mu = rng.normal(size=(5, 4))
        lv = rng.normal(size=(5, 4))
        first = vgae.reparameterize(mu, lv, seed=17)
        again = vgae.replay_reparameterize(mu, lv, first.epsilon)
        assert np.array_equal(first.z, again.z)

    def test_invariant_holds(self):
        rng = np.random.default_rng(4)
        mu = rng.normal(size=(3, 3))
        lv = rng.normal(size=(3, 3))
        latent = vgae.reparameterize(mu, lv, seed=2)
        assert np.array_equal(latent.z, latent.mu + np.exp(0.5 * latent.log_var) * latent.epsilon)


class TestDecode:
    def test_zero_latents_give_half(self):
        probs = vgae.decode(np.zeros((3, 2)))
        assert np.all(probs.data == 0.5)

    def test_unit_latents(self):
        z = np.array([[1.0, 1.0], [1.0, 1.0]])
        probs = vgae.decode(z)
        assert probs.data[0, 1] == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-6)

    def test_symmetric_and_open_interval(self):
        rng = np.random.default_rng(5)
        probs = vgae.decode(rng.normal(size=(6, 4))).data
        assert np.array_equal(probs, probs.T)
        assert probs.min() > 0.0 and probs.max() < 1.0


class TestElboLoss:
    def test_weights_from_two_node_graph(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])  # with self-loops
        pos_weight, norm = vgae.loss_weights(a)
        assert pos_weight == pytest.approx(1.0)
        assert norm == pytest.approx(1.0)

    def test_no_edges_degenerate(self):
        with pytest.raises(vgae.DegenerateGraphError):
            vgae.loss_weights(np.eye(3))

    def test_two_node_uniform_reconstruction_oracle(self):
        # independent scalar computation of the weighted BCE
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        pos_weight, norm = vgae.loss_weights(a)
        expected = 0.0
        for i in range(2):
            for j in range(2):
                y = a[i, j]
                w = pos_weight if y > 0 else 1.0
                expected += -(w * y * math.log(0.5) + (1 - y) * math.log(0.5))
        expected = norm * expected / 4.0  # mean over N^2 entries
        loss = vgae.elbo_loss(a, np.full((2, 2), 0.5), np.zeros((2, 1)), np.zeros((2, 1)))
        assert loss.item() == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(math.log(2))

    def test_zero_kl_when_posterior_is_prior(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        recon_only = vgae.elbo_loss(a, np.full((2, 2), 0.5), np.zeros((2, 3)), np.zeros((2, 3)))
        with_kl = vgae.elbo_loss(a, np.full((2, 2), 0.5), np.ones((2, 3)), np.zeros((2, 3)))
        assert with_kl.item() > recon_only.item()

    def test_loss_decreases_towards_perfect_reconstruction(self):
        g = make_grid_graph(2, 2)
        adj = normalize_adjacency(g)
        mu = np.zeros((4, 2))
        lv = np.zeros((4, 2))
        prev = None
        for closeness in (0.6, 0.9, 0.99, 0.9999):
            a_prime = np.where(adj.a > 0, closeness, 1 - closeness)
            loss = vgae.elbo_loss(adj.a, a_prime, mu, lv).item()
            if prev is not None:
                assert loss < prev
            prev = loss
        assert prev < 1e-3

    def test_end_to_end_gradient(self):
        # 6-node graph, latent width 3, feature width 5
        g = make_grid_graph(2, 3)
        adj = normalize_adjacency(g)
        rng = np.random.default_rng(7)
        feats = rng.normal(size=(6, 5))
        eps = rng.normal(size=(6, 3))
        cfg = VgaeConfig(feature_dim=5, hidden_dim=4, latent_dim=3)
        params = vgae.init_params(cfg, seed=2)

        def loss():
            mu, lv = vgae.encode(params, adj.a_norm, feats)
            z = vgae._reparameterize_t(mu, lv, eps)
            a_prime = vgae.decode(z)
            return vgae.elbo_loss(adj.a, a_prime, mu, lv)

        check_gradients(loss, params, eps=1e-4, tol=1e-4)

    def test_kl_and_reconstruction_nonnegative(self):
        rng = np.random.default_rng(11)
        g = make_grid_graph(2, 2)
        adj = normalize_adjacency(g)
        for _ in range(20):
            mu = rng.normal(size=(4, 2))
            lv = rng.normal(size=(4, 2))
            z = vgae.replay_reparameterize(mu, lv, rng.normal(size=(4, 2))).z
            a_prime = vgae.decode(z)
            loss = vgae.elbo_loss(adj.a, a_prime, mu, lv)
            assert loss.item() >= 0.0


class TestEdgeAuc:
    def test_perfect_ranking(self):
        a = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
        probs = np.array([[0, 0.9, 0.1], [0.9, 0, 0.2], [0.1, 0.2, 0]])
        assert vgae.edge_auc(a, probs) == 1.0

    def test_random_is_half(self):
        rng = np.random.default_rng(13)
        n = 40
        a = (rng.random((n, n)) < 0.2).astype(float)
        a = np.triu(a, 1) + np.triu(a, 1).T
        probs = rng.random((n, n))
        assert 0.35 < vgae.edge_auc(a, probs) < 0.65


class TestTrainVgae:
    def corpus(self, n_graphs=12, seed=0):
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n_graphs):
            g = make_grid_graph(3, 3)
            adj = normalize_adjacency(g)
            coords = np.array([[x, y] for _, x, y in g.nodes]) / 200.0
            feats = np.concatenate([np.sin(coords @ rng.normal(size=(2, 3))), coords], axis=1)
            out.append((adj, feats))
        return out

    def test_learns_quickly_on_tiny_corpus(self):
        corpus = self.corpus()
        cfg = VgaeConfig(feature_dim=5, hidden_dim=8, latent_dim=4)
        _, curves = vgae.train_vgae(corpus, config=cfg, epochs=30, lr=0.05, seed=0)
        assert curves[-1].train_loss < curves[0].train_loss
        assert curves[-1].val_auc > 0.6

    def test_deterministic(self):
        corpus = self.corpus(6)
        cfg = VgaeConfig(feature_dim=5, hidden_dim=4, latent_dim=3)

        def run():
            _, curves = vgae.train_vgae(corpus, config=cfg, epochs=3, lr=0.01, seed=5)
            return [(c.train_loss, c.val_auc) for c in curves]

        assert run() == run()

    def test_zero_epochs_keeps_params(self):
        corpus = self.corpus(5)
        cfg = VgaeConfig(feature_dim=5, hidden_dim=4, latent_dim=3)
        params = vgae.init_params(cfg, seed=1)
        before = {k: p.data.copy() for k, p in params.items()}
        trained, curves = vgae.train_vgae(corpus, params=params, config=cfg, epochs=0, seed=1)
        assert curves == []
        for k in before:
            assert np.array_equal(trained[k].data, before[k])

    def test_checkpoint_roundtrip(self, tmp_path):
        cfg = VgaeConfig(feature_dim=5, hidden_dim=4, latent_dim=3)
        params = vgae.init_params(cfg, seed=3)
        vgae.save_vgae(tmp_path / "v.svae", params, cfg)
        loaded, cfg2 = vgae.load_vgae(tmp_path / "v.svae")
        assert cfg2 == cfg
        for k, p in params.items():
            assert np.array_equal(loaded[k].data, p.data)


@pytest.fixture(scope="module")
def models():
    node_cfg = nodemodel.NodeModelConfig(d_model=16, layers=1, heads=2, d_ff=16, max_nodes=12)
    node_params = nodemodel.init_params(node_cfg, seed=0)
    vgae_cfg = VgaeConfig(feature_dim=16, hidden_dim=8, latent_dim=4)
    vgae_params = vgae.init_params(vgae_cfg, seed=0)
    return node_params, node_cfg, vgae_params, vgae_cfg


class TestGenerate:

    def test_structure_invariants(self, models):
        g = vgae.generate_network(*models, max_nodes=10, temperature=1.0, seed=4)
        g.validate()
        assert g.n_nodes >= 2
        for e in g.edges:
            assert e.u < e.v

    def test_threshold_endpoints(self, models):
        complete = vgae.generate_network(*models, max_nodes=10, seed=4, edge_threshold=0.0)
        n = complete.n_nodes
        assert complete.n_edges == n * (n - 1) // 2
        empty = vgae.generate_network(*models, max_nodes=10, seed=4, edge_threshold=1.0)
        assert empty.n_edges == 0

    def test_deterministic(self, models):
        a = vgae.generate_network(*models, max_nodes=10, seed=11)
        b = vgae.generate_network(*models, max_nodes=10, seed=11)
        assert a.nodes == b.nodes
        assert [(e.u, e.v) for e in a.edges] == [(e.u, e.v) for e in b.edges]

    def test_scale_applied(self, models):
        unit = vgae.generate_network(*models, max_nodes=10, seed=4, scale=1.0)
        scaled = vgae.generate_network(*models, max_nodes=10, seed=4, scale=1000.0)
        ux = np.array([x for _, x, _ in unit.nodes])
        sx = np.array([x for _, x, _ in scaled.nodes])
        assert np.allclose(sx, ux * 1000.0)

    def test_bernoulli_mode(self, models):
        g = vgae.generate_network(*models, max_nodes=10, seed=4, edge_mode="bernoulli")
        g.validate()
