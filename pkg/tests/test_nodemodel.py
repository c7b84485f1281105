import math

import numpy as np
import pytest

from conftest import check_gradients
from streetvae import nodemodel, tensor as T
from streetvae.graph import PAD_TOKEN, START_TOKEN, STOP_TOKEN, VOCAB_SIZE, flatten_sequence
from streetvae.nodemodel import NodeModelConfig


def tiny_config(**kw):
    defaults = dict(d_model=16, layers=2, heads=2, d_ff=32, max_nodes=24)
    defaults.update(kw)
    return NodeModelConfig(**defaults)


def seq_of(pairs):
    return flatten_sequence(pairs)


@pytest.fixture(scope="module")
def tiny_model():
    config = tiny_config()
    params = nodemodel.init_params(config, seed=1)
    return params, config


class TestForward:
    def test_output_shapes(self, tiny_model):
        params, config = tiny_model
        toks = seq_of([(3, 5), (7, 9)])
        logits, hidden = nodemodel.forward_logits(params, config, toks)
        assert logits.data.shape == (len(toks), VOCAB_SIZE)
        assert hidden.data.shape == (len(toks), config.d_model)

    def test_untrained_head_gives_uniform(self, tiny_model):
        params, config = tiny_model
        toks = seq_of([(1, 2)])
        loss = nodemodel.nll_loss(params, config, toks)
        assert loss.item() == pytest.approx(math.log(VOCAB_SIZE), abs=1e-9)

    def test_causality(self, tiny_model):
        params, config = tiny_model
        rng = np.random.default_rng(5)
        base = [START_TOKEN] + [int(v) for v in rng.integers(0, 256, size=10)]
        with T.no_grad():
            ref, _ = nodemodel.forward_logits(params, config, base)
        for t in (3, 6, 9):
            mutated = list(base)
            for p in range(t + 1, len(base)):
                mutated[p] = int((mutated[p] + 37) % 256)
            with T.no_grad():
                out, _ = nodemodel.forward_logits(params, config, mutated)
            assert np.array_equal(out.data[: t + 1], ref.data[: t + 1])

    def test_probabilities_sum_to_one(self, tiny_model):
        params, config = tiny_model
        toks = seq_of([(10, 20), (30, 40), (50, 60)])
        with T.no_grad():
            logits, _ = nodemodel.forward_logits(params, config, toks)
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-9

    def test_token_out_of_vocab(self, tiny_model):
        params, config = tiny_model
        with pytest.raises(nodemodel.NodeModelError):
            nodemodel.forward_logits(params, config, [START_TOKEN, 300])

    def test_sequence_too_long(self, tiny_model):
        params, config = tiny_model
        toks = [START_TOKEN] + [0] * (config.max_seq)
        with pytest.raises(nodemodel.NodeModelError):
            nodemodel.forward_logits(params, config, toks)


class TestNllLoss:
    def test_nonnegative(self, tiny_model):
        params, config = tiny_model
        rng = np.random.default_rng(8)
        for _ in range(5):
            pairs = [(int(a), int(b)) for a, b in rng.integers(0, 256, size=(4, 2))]
            assert nodemodel.nll_loss(params, config, seq_of(pairs)).item() >= 0.0

    def test_malformed_sequences(self, tiny_model):
        params, config = tiny_model
        with pytest.raises(nodemodel.NodeModelError):
            nodemodel.nll_loss(params, config, [5, 6, STOP_TOKEN])  # no START
        with pytest.raises(nodemodel.NodeModelError):
            nodemodel.nll_loss(params, config, [START_TOKEN, 5, 6])  # no STOP
        with pytest.raises(nodemodel.NodeModelError):
            nodemodel.nll_loss(params, config, [START_TOKEN, 5, PAD_TOKEN, 6, STOP_TOKEN])

    def test_pad_ignored(self, tiny_model):
        params, config = tiny_model
        toks = seq_of([(9, 9)])
        padded = toks + [PAD_TOKEN] * 4
        a = nodemodel.nll_loss(params, config, toks).item()
        b = nodemodel.nll_loss(params, config, padded).item()
        assert a == pytest.approx(b, rel=1e-12)

    def test_gradient_reduced_config(self):
        config = NodeModelConfig(d_model=8, layers=2, heads=2, d_ff=12, max_nodes=6)
        params = nodemodel.init_params(config, seed=3)
        # non-zero head so the logits actually depend on everything
        rng = np.random.default_rng(4)
        params["head.w"].data += rng.normal(0, 0.05, size=params["head.w"].data.shape)
        toks = seq_of([(1, 2), (3, 4)])
        check_gradients(
            lambda: nodemodel.nll_loss(params, config, toks), params, eps=1e-4, tol=1e-3
        )


class TestSampling:
    def test_even_pairing_and_determinism(self, tiny_model):
        params, config = tiny_model
        a = nodemodel.sample_nodes(params, config, max_nodes=8, temperature=1.0, seed=11)
        b = nodemodel.sample_nodes(params, config, max_nodes=8, temperature=1.0, seed=11)
        assert a == b
        for qx, qy in a:
            assert 0 <= qx <= 255 and 0 <= qy <= 255

    def test_different_seeds_differ(self, tiny_model):
        params, config = tiny_model
        outs = {tuple(nodemodel.sample_nodes(params, config, max_nodes=8, seed=s)) for s in range(6)}
        assert len(outs) > 1

    def test_temperature_must_be_positive(self, tiny_model):
        params, config = tiny_model
        with pytest.raises(nodemodel.NodeModelError):
            nodemodel.sample_nodes(params, config, temperature=0.0)

    def test_respects_cap(self, tiny_model):
        params, config = tiny_model
        out = nodemodel.sample_nodes(params, config, max_nodes=3, temperature=5.0, seed=2)
        assert len(out) <= 3

    def test_degenerate_distribution_raises(self, tiny_model):
        params, config = tiny_model
        broken = dict(params)
        w = params["head.w"].data.copy()
        b = params["head.b"].data.copy()
        b[:] = -1e9
        b[PAD_TOKEN] = 1e9  # all probability mass on PAD
        broken["head.w"] = T.Tensor(np.zeros_like(w))
        broken["head.b"] = T.Tensor(b)
        with pytest.raises(nodemodel.SamplingError):
            nodemodel.sample_nodes(broken, config, max_nodes=4, seed=0)


class TestNodeEmbeddings:
    def test_shape(self, tiny_model):
        params, config = tiny_model
        toks = seq_of([(0, 1), (2, 3), (4, 5)])
        emb = nodemodel.node_embeddings(params, config, toks)
        assert emb.shape == (3, config.d_model)

    def test_deterministic(self, tiny_model):
        params, config = tiny_model
        toks = seq_of([(8, 8), (9, 9)])
        a = nodemodel.node_embeddings(params, config, toks)
        b = nodemodel.node_embeddings(params, config, toks)
        assert np.array_equal(a, b)

    def test_distinct_coordinates_differ(self, tiny_model):
        params, config = tiny_model
        emb = nodemodel.node_embeddings(params, config, seq_of([(10, 10), (200, 200)]))
        assert not np.allclose(emb[0], emb[1])

    def test_feature_modes(self):
        for mode in ("mean", "y_token", "concat_halves"):
            config = tiny_config(feature_mode=mode)
            params = nodemodel.init_params(config, seed=0)
            emb = nodemodel.node_embeddings(params, config, seq_of([(1, 2), (3, 4)]))
            assert emb.shape == (2, config.d_model)


class TestTraining:
    def corpus(self, n=8, nodes=3, seed=0):
        rng = np.random.default_rng(seed)
        return [
            seq_of([(int(a), int(b)) for a, b in rng.integers(0, 256, size=(nodes, 2))])
            for _ in range(n)
        ]

    def test_loss_decreases(self):
        config = tiny_config()
        corpus = self.corpus()
        _, curves = nodemodel.train_node_model(
            corpus, config, epochs=5, batch_size=4, lr=3e-3, seed=0, val_fraction=0.25
        )
        assert curves[-1].train_nll <= curves[0].train_nll

    def test_empty_corpus(self):
        with pytest.raises(nodemodel.NodeModelError):
            nodemodel.train_node_model([], tiny_config(), epochs=1)

    def test_deterministic_curves(self):
        config = tiny_config()
        corpus = self.corpus(6)

        def run():
            _, curves = nodemodel.train_node_model(
                corpus, config, epochs=2, batch_size=3, lr=1e-3, seed=7, val_fraction=0.2
            )
            return [(c.train_nll, c.val_nll) for c in curves]

        assert run() == run()

    def test_checkpoint_written(self, tmp_path):
        config = tiny_config()
        corpus = self.corpus(4)
        nodemodel.train_node_model(
            corpus, config, epochs=1, batch_size=2, lr=1e-3, seed=0,
            val_fraction=0.25, checkpoint_dir=tmp_path,
        )
        ckpt = tmp_path / "node_model.svae"
        assert ckpt.exists()
        assert ckpt.read_bytes().startswith(b"SVAE1\n")
        params, config2 = nodemodel.load_node_model(ckpt)
        assert config2.d_model == config.d_model
        assert set(params) == set(nodemodel.init_params(config, seed=0))
