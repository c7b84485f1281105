"""Evaluation and downstream analysis: topological and geometric graph
metrics, fixed-length graph embeddings (padded latents + PCA), k-means
clustering with elbow selection, and street orientation histograms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geom, graph
from .graph import Face, StreetGraph
from .ingest import PlaceRecord

ORIENTATION_BINS = 36


class AnalysisError(ValueError):
    pass


class MetricsError(AnalysisError):
    pass


class JoinError(AnalysisError):
    pass


# ---------------------------------------------------------------------------
# topological and geometric metrics
# ---------------------------------------------------------------------------


@dataclass
class GraphMetrics:
    avg_street_length: float
    avg_streets_per_node: float
    avg_circuity: float


def topo_metrics(g: StreetGraph, circuity_mode: str = "ratio_of_sums") -> GraphMetrics:
    """Average street length, streets per node (2E/N), and circuity.

    Circuity defaults to total geometric length over total straight-line
    endpoint distance; "mean_of_ratios" averages the per-edge ratio.
    """
    if g.n_nodes < 1 or g.n_edges < 1:
        raise MetricsError("metrics need at least one node and one edge")
    xy = g.coords()
    geo_lengths = []
    chords = []
    for e in g.edges:
        a, b = xy[e.u], xy[e.v]
        chord = math.hypot(b[0] - a[0], b[1] - a[1])
        length = geom.polyline_length(e.geometry) if e.geometry is not None else chord
        geo_lengths.append(length)
        chords.append(chord)
    total_chord = sum(chords)
    if circuity_mode == "ratio_of_sums":
        if total_chord <= 0:
            raise MetricsError("all edges have zero straight-line length")
        circuity = sum(geo_lengths) / total_chord
    elif circuity_mode == "mean_of_ratios":
        ratios = [l / c for l, c in zip(geo_lengths, chords) if c > 0]
        if not ratios:
            raise MetricsError("all edges have zero straight-line length")
        circuity = float(np.mean(ratios))
    else:
        raise MetricsError(f"unknown circuity_mode '{circuity_mode}'")
    return GraphMetrics(
        avg_street_length=float(np.mean(geo_lengths)),
        avg_streets_per_node=2.0 * g.n_edges / g.n_nodes,
        avg_circuity=circuity,
    )


@dataclass
class BlockRecord:
    area: float
    perimeter: float
    form_factor: float
    compactness: float


@dataclass
class BlockMetrics:
    avg_area: float
    avg_form_factor: float
    avg_compactness: float
    n_blocks: int
    n_zero_area: int
    blocks: list[BlockRecord] = field(default_factory=list)


def block_metrics(g: StreetGraph, include_boundary: bool = True) -> BlockMetrics:
    """Geometry of the interior faces (city blocks) of the street graph.

    Form factor compares each block's area to its minimum enclosing
    circle; compactness is perimeter over area. Zero-area faces are
    excluded and counted.
    """
    faces = graph.extract_faces(g)
    outer_nodes: set[int] = set()
    for f in faces:
        if f.is_outer:
            outer_nodes.update(f.ring)
    records = []
    zero_area = 0
    for f in faces:
        if f.is_outer or len(f.ring) < 3:
            continue
        if not include_boundary and any(nid in outer_nodes for nid in f.ring):
            continue
        ring = graph.face_polygon(g, f)
        try:
            area, perimeter = geom.polygon_area_perimeter(ring)
        except ValueError:
            zero_area += 1
            continue
        if area <= 0:
            zero_area += 1
            continue
        _, radius = geom.min_enclosing_circle(ring)
        records.append(
            BlockRecord(
                area=area,
                perimeter=perimeter,
                form_factor=area / (math.pi * radius * radius),
                compactness=perimeter / area,
            )
        )
    if records:
        avg_area = float(np.mean([r.area for r in records]))
        avg_ff = float(np.mean([r.form_factor for r in records]))
        avg_comp = float(np.mean([r.compactness for r in records]))
    else:
        avg_area = avg_ff = avg_comp = float("nan")
    return BlockMetrics(
        avg_area=avg_area,
        avg_form_factor=avg_ff,
        avg_compactness=avg_comp,
        n_blocks=len(records),
        n_zero_area=zero_area,
        blocks=records,
    )


# ---------------------------------------------------------------------------
# PCA and fixed-length graph embeddings
# ---------------------------------------------------------------------------


@dataclass
class PcaModel:
    mean: np.ndarray  # [D]
    components: np.ndarray  # [d, D], orthonormal rows
    explained_variance: np.ndarray  # [d], non-increasing

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.mean) @ self.components.T

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            components=np.asarray(d["components"], dtype=np.float64),
            explained_variance=np.asarray(d["explained_variance"], dtype=np.float64),
        )


def pca_fit(data: np.ndarray, d: int) -> PcaModel:
    """Top-d principal directions of the centered data via SVD."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise AnalysisError("pca_fit needs a [M >= 2, D] matrix")
    m, dim = x.shape
    if not 1 <= d <= min(m, dim):
        raise AnalysisError(f"d={d} out of range [1, {min(m, dim)}]")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:d]
    # deterministic sign: largest-|.| entry of each component is positive
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=(s[:d] ** 2) / (m - 1),
    )


def graph_embedding(mu: np.ndarray, pca: PcaModel, n_cap: int = 512) -> np.ndarray:
    """Fixed-length vector: posterior means padded to n_cap rows,
    flattened row-major, then PCA-projected."""
    flat = pad_and_flatten(mu, n_cap)
    return pca.transform(flat)[0]


def pad_and_flatten(mu: np.ndarray, n_cap: int) -> np.ndarray:
    x = np.asarray(mu, dtype=np.float64)
    if x.ndim != 2:
        raise AnalysisError("latent matrix must be 2-d")
    n, f = x.shape
    if n > n_cap:
        raise AnalysisError(f"graph has {n} nodes, above the cap {n_cap}")
    padded = np.zeros((n_cap, f), dtype=np.float64)
    padded[:n] = x
    return padded.reshape(-1)


# ---------------------------------------------------------------------------
# k-means with elbow selection
# ---------------------------------------------------------------------------


@dataclass
class ClusterResult:
    k: int
    assignments: dict[str, int]
    centroids: np.ndarray
    inertia: float


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    m = x.shape[0]
    # k-means++ seeding
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(m)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = x[rng.integers(m)]
        else:
            centroids[i] = x[rng.choice(m, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centroids[i]) ** 2).sum(axis=1))

    labels = None
    prev_inertia = float("inf")
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        inertia = float(dist[np.arange(m), new_labels].sum())
        if inertia > prev_inertia + 1e-9:
            raise AnalysisError("k-means inertia increased across an iteration")
        reseeded = False
        for c in range(k):
            members = x[new_labels == c]
            if len(members) == 0:
                # re-seed an empty cluster at the farthest point
                far = int(dist[np.arange(m), new_labels].argmax())
                centroids[c] = x[far]
                new_labels[far] = c
                reseeded = True
            else:
                centroids[c] = members.mean(axis=0)
        if labels is not None and np.array_equal(new_labels, labels) and not reseeded:
            break
        labels = new_labels
        # a reseed restarts the monotonicity baseline
        prev_inertia = float("inf") if reseeded else inertia
    dist = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = dist.argmin(axis=1)
    inertia = float(dist[np.arange(m), labels].sum())
    return labels, centroids, inertia


def kmeans(
    embeddings: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    ids: Optional[Sequence[str]] = None,
    restarts: int = 1,
) -> ClusterResult:
    """Seeded k-means++ plus Lloyd iterations to an assignment fixpoint."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or not 1 <= k <= x.shape[0]:
        raise AnalysisError(f"need M >= k >= 1, got M={x.shape[0] if x.ndim == 2 else '?'}, k={k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        labels, centroids, inertia = _kmeans_once(x, k, rng, max_iter)
        if best is None or inertia < best[2]:
            best = (labels, centroids, inertia)
    labels, centroids, inertia = best
    names = list(ids) if ids is not None else [str(i) for i in range(x.shape[0])]
    if len(names) != x.shape[0]:
        raise AnalysisError("ids length must match embedding count")
    return ClusterResult(
        k=k,
        assignments={names[i]: int(labels[i]) for i in range(x.shape[0])},
        centroids=centroids,
        inertia=inertia,
    )


def elbow_curve(
    embeddings: np.ndarray, k_range: Sequence[int], seed: int = 0, restarts: int = 5
) -> tuple[list[tuple[int, float]], int]:
    """Inertia per k (best of `restarts`) and the elbow suggestion: the k
    whose point is farthest from the chord joining the curve endpoints."""
    x = np.asarray(embeddings, dtype=np.float64)
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1 or ks[-1] > x.shape[0]:
        raise AnalysisError(f"k_range must lie within [1, {x.shape[0]}]")
    curve = []
    for k in ks:
        result = kmeans(x, k, seed=seed, restarts=restarts)
        curve.append((k, result.inertia))
    if len(curve) < 3:
        return curve, ks[0]
    (x0, y0), (x1, y1) = curve[0], curve[-1]
    span = math.hypot(x1 - x0, y1 - y0)
    best_k, best_dist = curve[0][0], -1.0
    for k, inertia in curve:
        dist = abs((x1 - x0) * (y0 - inertia) - (x0 - k) * (y1 - y0)) / span if span > 0 else 0.0
        if dist > best_dist:
            best_k, best_dist = k, dist
    return curve, best_k


@dataclass
class CountrySummary:
    country: str
    mode_label: int
    tied: bool
    variety: int
    counts: dict[int, int]


def cluster_summaries(
    result: ClusterResult, places: Sequence[PlaceRecord]
) -> tuple[dict[int, int], list[CountrySummary]]:
    """Global label histogram plus per-country modal label and variety."""
    by_id = {p.id: p for p in places}
    missing = [gid for gid in result.assignments if gid not in by_id]
    if missing:
        raise JoinError(f"no place metadata for graph ids: {sorted(missing)[:10]}")
    histogram: dict[int, int] = {label: 0 for label in range(result.k)}
    per_country: dict[str, dict[int, int]] = {}
    for gid, label in result.assignments.items():
        histogram[label] += 1
        counts = per_country.setdefault(by_id[gid].country, {})
        counts[label] = counts.get(label, 0) + 1
    summaries = []
    for country in sorted(per_country):
        counts = per_country[country]
        top = max(counts.values())
        modes = sorted(label for label, c in counts.items() if c == top)
        summaries.append(
            CountrySummary(
                country=country,
                mode_label=modes[0],
                tied=len(modes) > 1,
                variety=len(counts),
                counts=dict(sorted(counts.items())),
            )
        )
    return histogram, summaries


# ---------------------------------------------------------------------------
# street orientation
# ---------------------------------------------------------------------------


@dataclass
class OrientationHistogram:
    bins: np.ndarray  # 36 weights, bin 0 centered on north
    entropy: float


def orientation_histogram(g: StreetGraph, length_weighted: bool = True) -> OrientationHistogram:
    """Bidirectional 36-bin bearing histogram (10 degrees per bin).

    Each edge contributes both bearings; weights are geometric lengths by
    default (pass length_weighted=False for plain counts, which then sum
    to twice the edge count). Zero-length edges are skipped.
    """
    if g.n_edges < 1:
        raise MetricsError("orientation histogram needs at least one edge")
    xy = g.coords()
    bins = np.zeros(ORIENTATION_BINS, dtype=np.float64)
    for e in g.edges:
        a, b = xy[e.u], xy[e.v]
        if a == b:
            continue
        weight = g.edge_length(e) if length_weighted else 1.0
        for theta in (geom.bearing(a, b), geom.bearing(b, a)):
            idx = int(((theta + 5.0) % 360.0) / 10.0)
            bins[idx % ORIENTATION_BINS] += weight
    total = bins.sum()
    if total <= 0:
        return OrientationHistogram(bins=bins, entropy=0.0)
    p = bins[bins > 0] / total
    return OrientationHistogram(bins=bins, entropy=float(-(p * np.log(p)).sum()))


# ---------------------------------------------------------------------------
# distribution comparison
# ---------------------------------------------------------------------------


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    xa = np.sort(np.asarray(a, dtype=np.float64))
    xb = np.sort(np.asarray(b, dtype=np.float64))
    if len(xa) == 0 or len(xb) == 0:
        raise AnalysisError("KS statistic needs non-empty samples")
    grid = np.concatenate([xa, xb])
    fa = np.searchsorted(xa, grid, side="right") / len(xa)
    fb = np.searchsorted(xb, grid, side="right") / len(xb)
    return float(np.abs(fa - fb).max())
