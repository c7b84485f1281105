"""Autoregressive transformer over quantized coordinate token sequences.

Models the joint distribution of a street network's node coordinates as a
product of per-token categorical conditionals, and exposes the learnt
hidden states as per-node feature vectors for the graph autoencoder.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .graph import PAD_TOKEN, START_TOKEN, STOP_TOKEN, VOCAB_SIZE
from .tensor import Tensor


class NodeModelError(ValueError):
    pass


class SamplingError(NodeModelError):
    pass


@dataclass
class NodeModelConfig:
    vocab: int = VOCAB_SIZE
    d_model: int = 128
    layers: int = 4
    heads: int = 8
    d_ff: int = 512
    max_nodes: int = 512
    dropout: float = 0.0
    # how qx/qy hidden states combine into one node feature
    feature_mode: str = "mean"  # mean | y_token | concat_halves

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise NodeModelError("d_model must be divisible by heads")
        if self.dropout != 0.0:
            raise NodeModelError("dropout is fixed at 0.0")
        if self.feature_mode not in ("mean", "y_token", "concat_halves"):
            raise NodeModelError(f"unknown feature_mode '{self.feature_mode}'")

    @property
    def max_seq(self) -> int:
        return 2 * self.max_nodes + 2

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab,
            "d_model": self.d_model,
            "layers": self.layers,
            "heads": self.heads,
            "d_ff": self.d_ff,
            "max_nodes": self.max_nodes,
            "dropout": self.dropout,
            "feature_mode": self.feature_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NodeModelConfig":
        return cls(**d)


def init_params(config: NodeModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Seeded parameter init. The output head starts at zero so an
    untrained model is exactly uniform over the vocabulary."""
    rng = np.random.default_rng(seed)
    d, h = config.d_model, config.d_ff

    def normal(shape):
        return rng.normal(0.0, 0.02, size=shape)

    params: dict[str, np.ndarray] = {
        "value_emb": normal((config.vocab, d)),
        # +1 row: the STOP position of a max-size sequence maps past the last vertex
        "pos_emb": normal((config.max_nodes + 1, d)),
        "coord_emb": normal((2, d)),
        "final_ln.g": np.ones(d),
        "final_ln.b": np.zeros(d),
        "head.w": np.zeros((d, config.vocab)),
        "head.b": np.zeros(config.vocab),
    }
    for i in range(config.layers):
        p = f"layer{i}."
        params[p + "ln1.g"] = np.ones(d)
        params[p + "ln1.b"] = np.zeros(d)
        params[p + "wq"] = normal((d, d))
        params[p + "wk"] = normal((d, d))
        params[p + "wv"] = normal((d, d))
        params[p + "wo"] = normal((d, d))
        params[p + "bq"] = np.zeros(d)
        params[p + "bk"] = np.zeros(d)
        params[p + "bv"] = np.zeros(d)
        params[p + "bo"] = np.zeros(d)
        params[p + "ln2.g"] = np.ones(d)
        params[p + "ln2.b"] = np.zeros(d)
        params[p + "w1"] = normal((d, h))
        params[p + "b1"] = np.zeros(h)
        params[p + "w2"] = normal((h, d))
        params[p + "b2"] = np.zeros(d)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}


def _token_indices(tokens: Sequence[int], config: NodeModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-position vertex index and coordinate-type index (x=0, y=1)."""
    n = len(tokens)
    pos = np.zeros(n, dtype=np.int64)
    coord = np.zeros(n, dtype=np.int64)
    for p in range(1, n):
        pos[p] = min((p - 1) // 2, config.max_nodes)
        coord[p] = (p - 1) % 2
    return pos, coord


def forward_logits(
    params: dict[str, Tensor], config: NodeModelConfig, tokens: Sequence[int]
) -> tuple[Tensor, Tensor]:
    """Causal forward pass: logits [T, vocab] and final hidden states [T, d]."""
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.ndim != 1 or toks.size == 0:
        raise NodeModelError("tokens must be a non-empty 1-d sequence")
    if toks.min() < 0 or toks.max() >= config.vocab:
        raise NodeModelError(f"token out of vocabulary [0, {config.vocab})")
    t = toks.size
    if t > config.max_seq:
        raise NodeModelError(f"sequence length {t} exceeds max {config.max_seq}")

    pos_idx, coord_idx = _token_indices(toks, config)
    x = T.rows(params["value_emb"], toks)
    x = x + T.rows(params["pos_emb"], pos_idx)
    x = x + T.rows(params["coord_emb"], coord_idx)

    mask = Tensor(np.triu(np.full((t, t), -1e30), k=1))
    dh = config.d_model // config.heads
    scale = Tensor(1.0 / np.sqrt(dh))

    for i in range(config.layers):
        p = f"layer{i}."
        h = T.layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = h @ params[p + "wq"] + params[p + "bq"]
        k = h @ params[p + "wk"] + params[p + "bk"]
        v = h @ params[p + "wv"] + params[p + "bv"]
        heads = []
        for j in range(config.heads):
            qj = T.slice_cols(q, j * dh, (j + 1) * dh)
            kj = T.slice_cols(k, j * dh, (j + 1) * dh)
            vj = T.slice_cols(v, j * dh, (j + 1) * dh)
            scores = (qj @ kj.T) * scale + mask
            heads.append(T.softmax_rows(scores) @ vj)
        att = T.concat_cols(heads) @ params[p + "wo"] + params[p + "bo"]
        x = x + att

        h = T.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        ff = T.relu(h @ params[p + "w1"] + params[p + "b1"]) @ params[p + "w2"] + params[p + "b2"]
        x = x + ff

    hidden = T.layer_norm(x, params["final_ln.g"], params["final_ln.b"])
    logits = hidden @ params["head.w"] + params["head.b"]
    return logits, hidden


def _check_sequence(tokens: Sequence[int]) -> None:
    toks = list(tokens)
    if not toks or toks[0] != START_TOKEN:
        raise NodeModelError("sequence must start with START")
    body = [t for t in toks[1:] if t != PAD_TOKEN]
    if not body or body[-1] != STOP_TOKEN or body.count(STOP_TOKEN) != 1:
        raise NodeModelError("sequence must end with a single STOP")
    if START_TOKEN in body:
        raise NodeModelError("unexpected START inside sequence")
    if any(t == PAD_TOKEN for t in toks[1 : 1 + len(body)]):
        raise NodeModelError("PAD may only trail the sequence")


def nll_loss(params: dict[str, Tensor], config: NodeModelConfig, tokens: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of tokens[1:] given their prefixes."""
    _check_sequence(tokens)
    toks = np.asarray(tokens, dtype=np.int64)
    logits, _ = forward_logits(params, config, toks[:-1])
    return T.softmax_cross_entropy(logits, toks[1:], ignore_index=PAD_TOKEN)


def _next_token_dist(params, config, seq: list[int], temperature: float) -> np.ndarray:
    logits, _ = forward_logits(params, config, seq)
    row = logits.data[-1] - logits.data[-1].max()
    if temperature > 0:
        row = row / temperature
    e = np.exp(row)
    # START/PAD are never valid continuations; if the model leaves them all
    # the mass (nothing else representable), sampling is degenerate
    e[START_TOKEN] = 0.0
    e[PAD_TOKEN] = 0.0
    total = e.sum()
    if not np.isfinite(total) or total <= 0:
        raise SamplingError("next-token distribution has no valid mass")
    return e / total


def sample_nodes(
    params: dict[str, Tensor],
    config: NodeModelConfig,
    max_nodes: Optional[int] = None,
    temperature: float = 1.0,
    seed: int = 0,
) -> list[tuple[int, int]]:
    """Sample quantized (qx, qy) pairs autoregressively until STOP."""
    if temperature <= 0:
        raise NodeModelError("temperature must be > 0")
    cap = min(max_nodes or config.max_nodes, config.max_nodes)
    rng = np.random.default_rng(seed)
    seq = [START_TOKEN]
    values: list[int] = []
    with T.no_grad():
        while len(values) < 2 * cap:
            probs = _next_token_dist(params, config, seq, temperature)
            tok = int(rng.choice(config.vocab, p=probs))
            if tok == STOP_TOKEN:
                break
            seq.append(tok)
            values.append(tok)
    if len(values) % 2 == 1:
        values.pop()  # drop an unfinished trailing half-pair
    return [(values[i], values[i + 1]) for i in range(0, len(values), 2)]


def greedy_decode(
    params: dict[str, Tensor], config: NodeModelConfig, max_nodes: Optional[int] = None
) -> list[tuple[int, int]]:
    """Deterministic argmax decoding (the temperature -> 0 limit)."""
    cap = min(max_nodes or config.max_nodes, config.max_nodes)
    seq = [START_TOKEN]
    values: list[int] = []
    with T.no_grad():
        while len(values) < 2 * cap:
            probs = _next_token_dist(params, config, seq, temperature=0.0)
            tok = int(np.argmax(probs))
            if tok == STOP_TOKEN:
                break
            seq.append(tok)
            values.append(tok)
    if len(values) % 2 == 1:
        values.pop()
    return [(values[i], values[i + 1]) for i in range(0, len(values), 2)]


def node_embeddings(
    params: dict[str, Tensor], config: NodeModelConfig, tokens: Sequence[int]
) -> np.ndarray:
    """Per-node feature rows [N, d_model] from the final hidden states.

    Node i combines the states at its qx and qy token positions according
    to config.feature_mode; rows follow the sequence's node order.
    """
    _check_sequence(tokens)
    toks = [t for t in tokens if t != PAD_TOKEN]
    n = (len(toks) - 2) // 2
    with T.no_grad():
        _, hidden = forward_logits(params, config, toks)
    h = hidden.data
    xs = h[1 : 1 + 2 * n : 2]
    ys = h[2 : 2 + 2 * n : 2]
    if config.feature_mode == "mean":
        return (xs + ys) / 2.0
    if config.feature_mode == "y_token":
        return ys.copy()
    half = config.d_model // 2
    return np.concatenate([xs[:, :half], ys[:, :half]], axis=1)


def split_indices(n: int, seed: int, val_fraction: float) -> tuple[list[int], list[int]]:
    """Seeded train/validation index split (defaults give 80/20)."""
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(val_fraction * n))
    return list(order[n_val:]), list(order[:n_val])


@dataclass
class TrainCurve:
    epoch: int
    train_nll: float
    val_nll: float


def train_node_model(
    corpus: Sequence[Sequence[int]],
    config: NodeModelConfig,
    *,
    epochs: int = 20,
    batch_size: int = 8,
    lr: float = 1e-3,
    seed: int = 0,
    val_fraction: float = 0.2,
    params: Optional[dict[str, Tensor]] = None,
    checkpoint_dir=None,
) -> tuple[dict[str, Tensor], list[TrainCurve]]:
    """Minibatch training (gradient accumulation over each batch).

    Returns the trained parameters and the per-epoch train/validation NLL
    curve; writes a checkpoint per epoch when checkpoint_dir is given.
    """
    if not corpus:
        raise NodeModelError("empty corpus")
    for s in corpus:
        if len(s) > config.max_seq:
            raise NodeModelError(f"sequence length {len(s)} exceeds max {config.max_seq}")
        _check_sequence(s)

    if params is None:
        params = init_params(config, seed=seed)
    train_idx, val_idx = split_indices(len(corpus), seed, val_fraction)
    if not train_idx:
        raise NodeModelError("validation split leaves no training sequences")
    rng = np.random.default_rng(seed + 1)  # epoch shuffling stream

    state = T.AdamState()
    curves: list[TrainCurve] = []
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(train_idx))
        losses = []
        for b0 in range(0, len(perm), batch_size):
            batch = [train_idx[i] for i in perm[b0 : b0 + batch_size]]
            T.zero_grads(params)
            batch_loss = 0.0
            for idx in batch:
                loss = nll_loss(params, config, corpus[idx]) * (1.0 / len(batch))
                if not np.isfinite(loss.data):
                    raise NodeModelError(f"non-finite loss at epoch {epoch}, sequence {idx}")
                T.backward(loss)
                batch_loss += loss.item() * len(batch)
            losses.append(batch_loss / len(batch))
            T.adam_step(params, state, lr)
        with T.no_grad():
            val_losses = [nll_loss(params, config, corpus[i]).item() for i in val_idx]
        curve = TrainCurve(
            epoch=epoch,
            train_nll=float(np.mean(losses)),
            val_nll=float(np.mean(val_losses)) if val_losses else float("nan"),
        )
        curves.append(curve)
        if checkpoint_dir is not None:
            save_node_model(f"{checkpoint_dir}/node_model.svae", params, config)
    return params, curves


def save_node_model(path, params: dict[str, Tensor], config: NodeModelConfig) -> None:
    T.save_checkpoint(path, params)
    with open(str(path) + ".config.json", "w", encoding="utf-8") as fh:
        import json

        json.dump(config.to_dict(), fh, indent=1)
        fh.write("\n")


def load_node_model(path) -> tuple[dict[str, Tensor], NodeModelConfig]:
    import json

    params = T.load_params(path)
    with open(str(path) + ".config.json", "r", encoding="utf-8") as fh:
        config = NodeModelConfig.from_dict(json.load(fh))
    return params, config
