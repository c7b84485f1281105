import numpy as np
import pytest

from streetvae import tensor as T
from streetvae.graph import Edge, StreetGraph


def fd_gradient(f, params, eps=1e-4):
    """Central finite differences of a scalar-valued f over named tensors.

    Independent oracle for the tape: perturbs raw parameter entries and
    never touches the autodiff machinery.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def check_gradients(make_loss, params, eps=1e-4, tol=1e-4):
    """Backprop vs central differences; returns the worst relative error."""
    T.zero_grads(params)
    loss = make_loss()
    T.backward(loss)
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    def scalar():
        with T.no_grad():
            return float(make_loss().data)

    numeric = fd_gradient(scalar, params, eps=eps)
    err = max_rel_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: max rel err {err}"
    return err


@pytest.fixture
def grid3_graph():
    """3x3 grid with 100 m spacing: 9 nodes, 12 straight edges."""
    nodes = []
    for j in range(3):
        for i in range(3):
            nodes.append((j * 3 + i, i * 100.0, j * 100.0))
    edges = []
    for j in range(3):
        for i in range(3):
            nid = j * 3 + i
            if i < 2:
                edges.append(Edge(nid, nid + 1, None))
            if j < 2:
                edges.append(Edge(nid, nid + 3, None))
    edges.sort(key=lambda e: (e.u, e.v))
    return StreetGraph(nodes=nodes, edges=edges)


def make_grid_graph(w, h, spacing=100.0):
    nodes = []
    for j in range(h):
        for i in range(w):
            nodes.append((j * w + i, i * spacing, j * spacing))
    edges = []
    for j in range(h):
        for i in range(w):
            nid = j * w + i
            if i < w - 1:
                edges.append(Edge(nid, nid + 1, None))
            if j < h - 1:
                edges.append(Edge(nid, nid + w, None))
    edges.sort(key=lambda e: (e.u, e.v))
    return StreetGraph(nodes=nodes, edges=edges)


def connected_after_removal(n_nodes, edges):
    parent = list(range(n_nodes))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for e in edges:
        ri, rj = find(e.u), find(e.v)
        if ri != rj:
            parent[ri] = rj
    return len({find(i) for i in range(n_nodes)}) == 1


def random_planar_fixture(seed):
    """Connected grid with random edge deletions (connectivity preserved)."""
    rng = np.random.default_rng(seed)
    w = int(rng.integers(3, 7))
    h = int(rng.integers(3, 7))
    g = make_grid_graph(w, h)
    edges = list(g.edges)
    target = int(rng.integers(0, len(edges) // 3 + 1))
    removed = 0
    for e in [edges[i] for i in rng.permutation(len(edges))]:
        if removed >= target:
            break
        candidate = [x for x in edges if x is not e]
        if connected_after_removal(g.n_nodes, candidate):
            edges = candidate
            removed += 1
    return StreetGraph(nodes=g.nodes, edges=sorted(edges, key=lambda e: (e.u, e.v)))
