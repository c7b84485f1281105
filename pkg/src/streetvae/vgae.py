"""Variational graph autoencoder: GCN encoder to per-node Gaussians,
inner-product edge decoder, negative-ELBO training, and the end-to-end
synthetic street network generator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import geom
from . import nodemodel
from . import tensor as T
from .graph import AdjacencyMatrix, Edge, StreetGraph, flatten_sequence
from .tensor import Tensor


class VgaeError(ValueError):
    pass


class DegenerateGraphError(VgaeError):
    pass


class GenerationError(VgaeError):
    pass


@dataclass
class VgaeConfig:
    feature_dim: int = 128
    hidden_dim: int = 64
    latent_dim: int = 16

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "latent_dim": self.latent_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VgaeConfig":
        return cls(**d)


def init_params(config: VgaeConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return {
        "w0": Tensor(glorot(config.feature_dim, config.hidden_dim), requires_grad=True, name="w0"),
        "w_mu": Tensor(glorot(config.hidden_dim, config.latent_dim), requires_grad=True, name="w_mu"),
        "w_sigma": Tensor(glorot(config.hidden_dim, config.latent_dim), requires_grad=True, name="w_sigma"),
    }


def encode(params: dict[str, Tensor], a_norm, x) -> tuple[Tensor, Tensor]:
    """Two GCN heads over a shared hidden layer: H = relu(A X W0),
    mu = A H W_mu, log_var = A H W_sigma."""
    a = a_norm if isinstance(a_norm, Tensor) else Tensor(np.asarray(a_norm, dtype=np.float64))
    feats = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if feats.data.ndim != 2 or feats.data.shape[1] != params["w0"].data.shape[0]:
        raise VgaeError(
            f"feature width {feats.data.shape} does not match encoder input {params['w0'].data.shape[0]}"
        )
    if a.data.shape != (feats.data.shape[0], feats.data.shape[0]):
        raise VgaeError(f"adjacency {a.data.shape} does not match {feats.data.shape[0]} nodes")
    h = T.relu(a @ (feats @ params["w0"]))
    ah = a @ h
    return ah @ params["w_mu"], ah @ params["w_sigma"]


@dataclass
class LatentSample:
    mu: np.ndarray
    log_var: np.ndarray
    epsilon: np.ndarray
    z: np.ndarray


def reparameterize(mu, log_var, seed: int = 0) -> LatentSample:
    """Z = mu + sigma * eps with a seeded standard-normal draw; storing
    epsilon makes the draw replayable bit-for-bit."""
    mu_a = mu.data if isinstance(mu, Tensor) else np.asarray(mu, dtype=np.float64)
    lv_a = log_var.data if isinstance(log_var, Tensor) else np.asarray(log_var, dtype=np.float64)
    if mu_a.shape != lv_a.shape:
        raise VgaeError(f"mu {mu_a.shape} vs log_var {lv_a.shape}")
    eps = np.random.default_rng(seed).standard_normal(mu_a.shape)
    return replay_reparameterize(mu_a, lv_a, eps)


def replay_reparameterize(mu: np.ndarray, log_var: np.ndarray, epsilon: np.ndarray) -> LatentSample:
    z = mu + np.exp(0.5 * log_var) * epsilon
    return LatentSample(mu=mu.copy(), log_var=log_var.copy(), epsilon=epsilon.copy(), z=z)


def _reparameterize_t(mu: Tensor, log_var: Tensor, epsilon: np.ndarray) -> Tensor:
    return mu + T.exp(log_var * 0.5) * Tensor(epsilon)


def decode(z) -> Tensor:
    """Edge probabilities A' = sigmoid(Z Z^T); symmetric by construction."""
    zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float64))
    return T.sigmoid(zt @ zt.T)


def loss_weights(a_with_loops: np.ndarray) -> tuple[float, float]:
    """(pos_weight, norm) for the reweighted reconstruction term.

    Computed from the off-diagonal edge count: the diagonal is an artifact
    of the self-loop trick, not signal about sparsity.
    """
    n = a_with_loops.shape[0]
    sum_a = float(a_with_loops.sum() - np.trace(a_with_loops))
    if sum_a <= 0:
        raise DegenerateGraphError("graph has no edges")
    if n * n - sum_a <= 0:
        raise DegenerateGraphError("graph is complete; reconstruction weights undefined")
    pos_weight = (n * n - sum_a) / sum_a
    norm = n * n / (2.0 * (n * n - sum_a))
    return pos_weight, norm


def elbo_loss(a_with_loops: np.ndarray, a_prime, mu, log_var) -> Tensor:
    """Negative ELBO: reweighted reconstruction cross-entropy plus KL."""
    a = np.asarray(a_with_loops, dtype=np.float64)
    ap = a_prime if isinstance(a_prime, Tensor) else Tensor(np.asarray(a_prime, dtype=np.float64))
    mu_t = mu if isinstance(mu, Tensor) else Tensor(np.asarray(mu, dtype=np.float64))
    lv_t = log_var if isinstance(log_var, Tensor) else Tensor(np.asarray(log_var, dtype=np.float64))
    n = a.shape[0]
    if a.shape != (n, n) or ap.data.shape != (n, n):
        raise VgaeError(f"adjacency {a.shape} vs reconstruction {ap.data.shape}")
    pos_weight, norm = loss_weights(a)

    weights = Tensor(np.where(a > 0, pos_weight, 1.0))
    targets = Tensor(a)
    p = T.clip(ap, 1e-12, 1.0 - 1e-12)
    ll = targets * T.log(p) + (Tensor(1.0) - targets) * T.log(Tensor(1.0) - p)
    recon = T.tmean(weights * ll) * (-norm)
    kl = T.gaussian_kl(mu_t, lv_t)
    return recon + kl


def edge_auc(a_true: np.ndarray, probs: np.ndarray) -> float:
    """Rank AUC of off-diagonal edge predictions (ties get half credit)."""
    n = a_true.shape[0]
    iu = np.triu_indices(n, k=1)
    y = a_true[iu] > 0
    s = probs[iu]
    pos = s[y]
    neg = s[~y]
    if len(pos) == 0 or len(neg) == 0:
        return float("nan")
    order = np.argsort(np.concatenate([pos, neg]), kind="mergesort")
    ranks = np.empty(len(order))
    ranks[order] = np.arange(1, len(order) + 1)
    # average ranks across ties
    allscores = np.concatenate([pos, neg])
    sorted_scores = allscores[order]
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    r_pos = ranks[: len(pos)].sum()
    return float((r_pos - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg)))


@dataclass
class VgaeCurve:
    epoch: int
    train_loss: float
    val_auc: float


def train_vgae(
    corpus: Sequence[tuple[AdjacencyMatrix, np.ndarray]],
    params: Optional[dict[str, Tensor]] = None,
    config: Optional[VgaeConfig] = None,
    *,
    epochs: int = 200,
    lr: float = 0.01,
    seed: int = 0,
    val_fraction: float = 0.2,
) -> tuple[dict[str, Tensor], list[VgaeCurve]]:
    """Full-batch training, one optimizer step per graph per epoch.

    Reports mean train loss and the held-out edge-reconstruction AUC
    (decoded from the posterior mean) each epoch.
    """
    if not corpus:
        raise VgaeError("empty corpus")
    if config is None:
        config = VgaeConfig(feature_dim=corpus[0][1].shape[1])
    if params is None:
        params = init_params(config, seed=seed)

    train_idx, val_idx = nodemodel.split_indices(len(corpus), seed, val_fraction)
    if not train_idx:
        raise VgaeError("validation split leaves no training graphs")
    rng = np.random.default_rng(seed + 1)  # epsilon draw stream

    state = T.AdamState()
    curves: list[VgaeCurve] = []
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in train_idx:
            adj, feats = corpus[idx]
            eps = rng.standard_normal((feats.shape[0], config.latent_dim))
            T.zero_grads(params)
            mu, lv = encode(params, adj.a_norm, feats)
            z = _reparameterize_t(mu, lv, eps)
            a_prime = decode(z)
            loss = elbo_loss(adj.a, a_prime, mu, lv)
            if not np.isfinite(loss.data):
                raise VgaeError(f"non-finite loss at epoch {epoch}, graph {idx}")
            T.backward(loss)
            T.adam_step(params, state, lr)
            losses.append(loss.item())
        aucs = []
        with T.no_grad():
            for idx in val_idx:
                adj, feats = corpus[idx]
                mu, _ = encode(params, adj.a_norm, feats)
                probs = decode(mu)
                auc = edge_auc(adj.a - np.eye(adj.a.shape[0]), probs.data)
                if np.isfinite(auc):
                    aucs.append(auc)
        curves.append(
            VgaeCurve(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                val_auc=float(np.mean(aucs)) if aucs else float("nan"),
            )
        )
    return params, curves


def save_vgae(path, params: dict[str, Tensor], config: VgaeConfig) -> None:
    T.save_checkpoint(path, params)
    with open(str(path) + ".config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=1)
        fh.write("\n")


def load_vgae(path) -> tuple[dict[str, Tensor], VgaeConfig]:
    params = T.load_params(path)
    with open(str(path) + ".config.json", "r", encoding="utf-8") as fh:
        config = VgaeConfig.from_dict(json.load(fh))
    return params, config


def generate_network(
    node_params: dict[str, Tensor],
    node_config: nodemodel.NodeModelConfig,
    vgae_params: dict[str, Tensor],
    vgae_config: VgaeConfig,
    *,
    max_nodes: Optional[int] = None,
    temperature: float = 1.0,
    seed: int = 0,
    edge_threshold: float = 0.5,
    edge_mode: str = "threshold",  # threshold | bernoulli
    scale: float = 1.0,
) -> StreetGraph:
    """Sample nodes, embed them, and decode an adjacency into a graph.

    The encoder needs an adjacency before any edges exist, so generation
    encodes with the self-loop-only identity. Edges are kept where the
    decoded probability exceeds the threshold (or by a seeded Bernoulli
    draw). Coordinates are the dequantized normalized frame times `scale`.
    """
    if edge_mode not in ("threshold", "bernoulli"):
        raise GenerationError(f"unknown edge_mode '{edge_mode}'")
    qpoints = nodemodel.sample_nodes(
        node_params, node_config, max_nodes=max_nodes, temperature=temperature, seed=seed
    )
    if len(qpoints) < 2:
        raise GenerationError(f"sampled only {len(qpoints)} nodes")

    tokens = flatten_sequence(qpoints)
    feats = nodemodel.node_embeddings(node_params, node_config, tokens)
    n = len(qpoints)
    with T.no_grad():
        mu, lv = encode(vgae_params, np.eye(n), feats)
        latent = reparameterize(mu, lv, seed=seed)
        probs = decode(latent.z).data

    rng = np.random.default_rng(seed + 1)
    draws = rng.random((n, n)) if edge_mode == "bernoulli" else None
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            keep = probs[i, j] > edge_threshold if draws is None else draws[i, j] < probs[i, j]
            if keep:
                edges.append(Edge(i, j, None))

    coords = [geom.dequantize(q) for q in qpoints]
    nodes = [(i, coords[i][0] * scale, coords[i][1] * scale) for i in range(n)]
    from .geom import NormalizationRecord

    return StreetGraph(
        nodes=nodes,
        edges=edges,
        crs="local",
        normalization=NormalizationRecord(center=(0.0, 0.0), scale=1.0 / scale),
    )
