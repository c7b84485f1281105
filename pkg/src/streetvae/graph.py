"""Street graphs: construction from polylines, node merging, adjacency
normalization, canonical ordering, token sequences, and planar faces.

Graphs are undirected, loop-free, and store each edge once with u < v.
Edge geometry, when present, is the full polyline including both endpoint
coordinates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import geom
from .geom import NormalizationRecord, Point

# token vocabulary: 0..255 quantized values, then control tokens
STOP_TOKEN = 256
START_TOKEN = 257
PAD_TOKEN = 258
VOCAB_SIZE = 259

SNAP_TOLERANCE_M = 1e-6


class GraphError(ValueError):
    pass


class NonPlanarError(GraphError):
    """The straight-line embedding has crossing edges."""

    def __init__(self, edge_a: tuple[int, int], edge_b: tuple[int, int]):
        super().__init__(f"edges {edge_a} and {edge_b} cross in the embedding")
        self.edge_a = edge_a
        self.edge_b = edge_b


@dataclass
class Edge:
    u: int
    v: int
    geometry: Optional[list[Point]] = None


@dataclass
class StreetGraph:
    nodes: list[tuple[int, float, float]]  # (id, x, y)
    edges: list[Edge]
    crs: str = "local"
    normalization: Optional[NormalizationRecord] = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def coords(self) -> dict[int, Point]:
        return {nid: (x, y) for nid, x, y in self.nodes}

    def validate(self) -> None:
        ids = [nid for nid, _, _ in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate node ids")
        known = set(ids)
        seen = set()
        xy = self.coords()
        for e in self.edges:
            if e.u == e.v:
                raise GraphError(f"self-loop at node {e.u}")
            if e.u > e.v:
                raise GraphError(f"edge ({e.u},{e.v}) not stored with u < v")
            if e.u not in known or e.v not in known:
                raise GraphError(f"edge ({e.u},{e.v}) references unknown node")
            if (e.u, e.v) in seen:
                raise GraphError(f"duplicate edge ({e.u},{e.v})")
            seen.add((e.u, e.v))
            if e.geometry is not None:
                if len(e.geometry) < 2:
                    raise GraphError(f"edge ({e.u},{e.v}) geometry too short")
                for end, nid in ((e.geometry[0], e.u), (e.geometry[-1], e.v)):
                    if math.hypot(end[0] - xy[nid][0], end[1] - xy[nid][1]) > 1e-6:
                        raise GraphError(f"edge ({e.u},{e.v}) geometry does not end at its nodes")

    def edge_length(self, e: Edge) -> float:
        if e.geometry is not None:
            return geom.polyline_length(e.geometry)
        xy = self.coords()
        a, b = xy[e.u], xy[e.v]
        return math.hypot(b[0] - a[0], b[1] - a[1])


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _snap_key(p: Point) -> tuple[int, int]:
    s = 1.0 / SNAP_TOLERANCE_M
    return int(round(p[0] * s)), int(round(p[1] * s))


def build_graph(polylines: Sequence[Sequence[Point]]) -> StreetGraph:
    """Build a street graph from metric polylines.

    Nodes appear at polyline endpoints and at any vertex shared between
    polylines (within the snap tolerance); edges keep the intermediate
    vertices as geometry. Closed polylines are split at every vertex so no
    self-loops survive.
    """
    # count how many polyline traversals touch each snapped vertex
    counts: dict[tuple[int, int], int] = {}
    endpoints: set[tuple[int, int]] = set()
    cleaned: list[list[Point]] = []
    for line in polylines:
        pts = [(float(x), float(y)) for x, y in line]
        dedup = [pts[0]] if pts else []
        for p in pts[1:]:
            if _snap_key(p) != _snap_key(dedup[-1]):
                dedup.append(p)
        if len(dedup) < 2:
            continue
        cleaned.append(dedup)
        seen_in_line: set[tuple[int, int]] = set()
        for p in dedup:
            k = _snap_key(p)
            # a vertex visited twice by the same polyline is a junction too
            if k in seen_in_line:
                counts[k] = counts.get(k, 0) + 1
            seen_in_line.add(k)
            counts[k] = counts.get(k, 0) + 1
        endpoints.add(_snap_key(dedup[0]))
        endpoints.add(_snap_key(dedup[-1]))

    junctions = endpoints | {k for k, c in counts.items() if c >= 2}

    node_id: dict[tuple[int, int], int] = {}
    nodes: list[tuple[int, float, float]] = []

    def get_node(p: Point) -> int:
        k = _snap_key(p)
        if k not in node_id:
            node_id[k] = len(nodes)
            nodes.append((len(nodes), p[0], p[1]))
        return node_id[k]

    pieces: list[list[Point]] = []
    for line in cleaned:
        piece = [line[0]]
        for p in line[1:]:
            piece.append(p)
            if _snap_key(p) in junctions:
                pieces.append(piece)
                piece = [p]
        if len(piece) >= 2:
            pieces.append(piece)

    # split closed pieces (same snapped endpoint) at their interior vertices
    final_pieces: list[list[Point]] = []
    for piece in pieces:
        if _snap_key(piece[0]) == _snap_key(piece[-1]) and len(piece) > 2:
            for i in range(len(piece) - 1):
                final_pieces.append([piece[i], piece[i + 1]])
        else:
            final_pieces.append(piece)

    edges: dict[tuple[int, int], Edge] = {}
    for piece in final_pieces:
        u = get_node(piece[0])
        v = get_node(piece[-1])
        if u == v:
            continue
        geometry = [p for p in piece] if len(piece) > 2 else None
        if u > v:
            u, v = v, u
            geometry = list(reversed(geometry)) if geometry else None
        if (u, v) not in edges:
            if geometry is not None:
                geometry[0] = (nodes[u][1], nodes[u][2])
                geometry[-1] = (nodes[v][1], nodes[v][2])
            edges[(u, v)] = Edge(u, v, geometry)

    return StreetGraph(nodes=nodes, edges=sorted(edges.values(), key=lambda e: (e.u, e.v)))


def simplify_merge(g: StreetGraph, threshold_m: float = 10.0) -> StreetGraph:
    """Merge node groups linked by pairwise distance < threshold.

    Single-linkage grouping; each group is replaced by one node at its
    centroid. Repeats until no two nodes are closer than the threshold, so
    the result is a fixpoint (idempotent).
    """
    if threshold_m < 0:
        raise GraphError("threshold must be >= 0")
    current = g
    if threshold_m == 0:
        return current
    while True:
        current, changed = _merge_once(current, threshold_m)
        if not changed:
            return current


def _merge_once(g: StreetGraph, threshold: float) -> tuple[StreetGraph, bool]:
    n = g.n_nodes
    if n == 0:
        return g, False
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    index_of = {nid: i for i, (nid, _, _) in enumerate(g.nodes)}
    pts = [(x, y) for _, x, y in g.nodes]
    changed = False
    for i in range(n):
        for j in range(i + 1, n):
            if math.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]) < threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
                    changed = True
    if not changed:
        return g, False

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    rep_coord: dict[int, Point] = {}
    new_nodes: list[tuple[int, float, float]] = []
    new_id: dict[int, int] = {}
    for root in sorted(groups, key=lambda r: min(groups[r])):
        members = groups[root]
        cx = sum(pts[i][0] for i in members) / len(members)
        cy = sum(pts[i][1] for i in members) / len(members)
        nid = len(new_nodes)
        new_nodes.append((nid, cx, cy))
        for i in members:
            new_id[i] = nid
        rep_coord[nid] = (cx, cy)

    new_edges: dict[tuple[int, int], Edge] = {}
    for e in g.edges:
        u = new_id[index_of[e.u]]
        v = new_id[index_of[e.v]]
        if u == v:
            continue
        geometry = e.geometry
        if u > v:
            u, v = v, u
            geometry = list(reversed(geometry)) if geometry else None
        if (u, v) in new_edges:
            continue
        if geometry is not None:
            geometry = [rep_coord[u]] + list(geometry[1:-1]) + [rep_coord[v]]
            if len(geometry) < 3:
                geometry = None
        new_edges[(u, v)] = Edge(u, v, geometry)

    merged = StreetGraph(
        nodes=new_nodes,
        edges=sorted(new_edges.values(), key=lambda e: (e.u, e.v)),
        crs=g.crs,
        normalization=g.normalization,
    )
    return merged, True


# ---------------------------------------------------------------------------
# adjacency and ordering
# ---------------------------------------------------------------------------


@dataclass
class AdjacencyMatrix:
    a: np.ndarray  # adjacency with self-loops, {0,1}
    degree: np.ndarray  # row sums of a
    a_norm: np.ndarray  # D^{-1/2} A D^{-1/2}


def normalize_adjacency(g: StreetGraph) -> AdjacencyMatrix:
    """Self-loop adjacency with symmetric degree normalization."""
    n = g.n_nodes
    if n < 1:
        raise GraphError("normalize_adjacency needs at least one node")
    index = {nid: i for i, (nid, _, _) in enumerate(g.nodes)}
    a = np.eye(n, dtype=np.float64)
    for e in g.edges:
        a[index[e.u], index[e.v]] = 1.0
        a[index[e.v], index[e.u]] = 1.0
    degree = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    a_norm = a * inv_sqrt[:, None] * inv_sqrt[None, :]
    return AdjacencyMatrix(a=a, degree=degree, a_norm=a_norm)


def order_nodes(g: StreetGraph) -> list[int]:
    """Positions of nodes in canonical order: ascending y, then x, then id."""
    keyed = sorted(range(g.n_nodes), key=lambda i: (g.nodes[i][2], g.nodes[i][1], g.nodes[i][0]))
    return keyed


def apply_ordering(g: StreetGraph) -> StreetGraph:
    """Renumber nodes densely 0..N-1 in canonical order."""
    perm = order_nodes(g)
    old_ids = [g.nodes[i][0] for i in perm]
    remap = {old: new for new, old in enumerate(old_ids)}
    nodes = [(new, g.nodes[perm[new]][1], g.nodes[perm[new]][2]) for new in range(g.n_nodes)]
    edges = []
    for e in g.edges:
        u, v = remap[e.u], remap[e.v]
        geometry = e.geometry
        if u > v:
            u, v = v, u
            geometry = list(reversed(geometry)) if geometry else None
        edges.append(Edge(u, v, geometry))
    edges.sort(key=lambda e: (e.u, e.v))
    return StreetGraph(nodes=nodes, edges=edges, crs=g.crs, normalization=g.normalization)


def flatten_sequence(qpoints: Sequence[tuple[int, int]]) -> list[int]:
    """[START, qx1, qy1, ..., STOP] for quantized points in node order."""
    tokens = [START_TOKEN]
    for qx, qy in qpoints:
        if not (0 <= qx < 256 and 0 <= qy < 256):
            raise GraphError(f"quantized value out of range: {(qx, qy)}")
        tokens.append(qx)
        tokens.append(qy)
    tokens.append(STOP_TOKEN)
    return tokens


def detokenize(tokens: Sequence[int]) -> list[tuple[int, int]]:
    """Inverse of flatten_sequence; ignores PAD, stops at STOP."""
    if not tokens or tokens[0] != START_TOKEN:
        raise GraphError("token sequence must start with START")
    values = []
    for t in tokens[1:]:
        if t == STOP_TOKEN:
            break
        if t == PAD_TOKEN:
            continue
        if t == START_TOKEN:
            raise GraphError("unexpected START inside sequence")
        values.append(t)
    pairs = [(values[i], values[i + 1]) for i in range(0, len(values) - len(values) % 2, 2)]
    return pairs


def graph_tokens(g: StreetGraph) -> tuple[list[int], StreetGraph, NormalizationRecord]:
    """Order, normalize, and quantize a graph into its token sequence."""
    ordered = apply_ordering(g)
    pts = [(x, y) for _, x, y in ordered.nodes]
    normed, rec = geom.center_and_normalize(pts)
    qpoints = [geom.quantize(p) for p in normed]
    ordered.normalization = rec
    return flatten_sequence(qpoints), ordered, rec


# ---------------------------------------------------------------------------
# planar faces
# ---------------------------------------------------------------------------


@dataclass
class Face:
    ring: list[int]
    is_outer: bool = False


def _segments_cross(p1: Point, p2: Point, p3: Point, p4: Point) -> bool:
    def orient(a: Point, b: Point, c: Point) -> float:
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True

    def on_segment(a: Point, b: Point, c: Point) -> bool:
        return (
            min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
        )

    # collinear touching in a segment interior also breaks the embedding
    if d1 == 0 and on_segment(p3, p4, p1) and p1 not in (p3, p4):
        return True
    if d2 == 0 and on_segment(p3, p4, p2) and p2 not in (p3, p4):
        return True
    if d3 == 0 and on_segment(p1, p2, p3) and p3 not in (p1, p2):
        return True
    if d4 == 0 and on_segment(p1, p2, p4) and p4 not in (p1, p2):
        return True
    return False


def extract_faces(g: StreetGraph) -> list[Face]:
    """Faces of the straight-line embedding via rotation-system traversal.

    Every directed half-edge belongs to exactly one face walk; per
    connected component the walk with the most negative signed area is the
    outer face. Raises NonPlanarError when chords cross.
    """
    xy = g.coords()
    edge_list = [(e.u, e.v) for e in g.edges]

    for i in range(len(edge_list)):
        a, b = edge_list[i]
        for j in range(i + 1, len(edge_list)):
            c, d = edge_list[j]
            if {a, b} & {c, d}:
                continue
            if _segments_cross(xy[a], xy[b], xy[c], xy[d]):
                raise NonPlanarError(edge_list[i], edge_list[j])

    rotation: dict[int, list[int]] = {nid: [] for nid, _, _ in g.nodes}
    for u, v in edge_list:
        rotation[u].append(v)
        rotation[v].append(u)
    for nid, nbrs in rotation.items():
        cx, cy = xy[nid]
        nbrs.sort(key=lambda m: math.atan2(xy[m][1] - cy, xy[m][0] - cx))

    rot_index = {
        (nid, m): k for nid, nbrs in rotation.items() for k, m in enumerate(nbrs)
    }

    visited: set[tuple[int, int]] = set()
    faces_by_component: dict[int, list[tuple[Face, float]]] = {}
    component = _components(g)

    for u0, v0 in _directed_half_edges(edge_list):
        if (u0, v0) in visited:
            continue
        ring = []
        u, v = u0, v0
        while (u, v) not in visited:
            visited.add((u, v))
            ring.append(u)
            nbrs = rotation[v]
            k = rot_index[(v, u)]
            w = nbrs[(k + 1) % len(nbrs)]
            u, v = v, w
        area = geom.signed_area([xy[nid] for nid in ring])
        faces_by_component.setdefault(component[u0], []).append((Face(ring=ring), area))

    result: list[Face] = []
    for comp_faces in faces_by_component.values():
        # this traversal orients interior walks clockwise (negative area);
        # the outer walk carries the whole component's positive area
        outer_idx = max(range(len(comp_faces)), key=lambda i: comp_faces[i][1])
        for i, (face, _) in enumerate(comp_faces):
            face.is_outer = i == outer_idx
            result.append(face)
    return result


def _directed_half_edges(edge_list: list[tuple[int, int]]) -> Iterable[tuple[int, int]]:
    for u, v in edge_list:
        yield u, v
        yield v, u


def _components(g: StreetGraph) -> dict[int, int]:
    parent = {nid: nid for nid, _, _ in g.nodes}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for e in g.edges:
        ru, rv = find(e.u), find(e.v)
        if ru != rv:
            parent[ru] = rv
    return {nid: find(nid) for nid in parent}


def face_polygon(g: StreetGraph, face: Face) -> list[Point]:
    """Face ring as coordinates, with edge polyline geometry substituted."""
    xy = g.coords()
    geo = {}
    for e in g.edges:
        if e.geometry is not None:
            geo[(e.u, e.v)] = e.geometry
    pts: list[Point] = []
    n = len(face.ring)
    for i in range(n):
        u = face.ring[i]
        v = face.ring[(i + 1) % n]
        pts.append(xy[u])
        if (u, v) in geo:
            pts.extend(geo[(u, v)][1:-1])
        elif (v, u) in geo:
            pts.extend(list(reversed(geo[(v, u)][1:-1])))
    return pts


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def graph_to_json(g: StreetGraph) -> str:
    doc: dict = {"crs": g.crs}
    if g.normalization is not None:
        doc["normalization"] = {
            "center": [g.normalization.center[0], g.normalization.center[1]],
            "scale": g.normalization.scale,
        }
    doc["nodes"] = [{"id": nid, "x": x, "y": y} for nid, x, y in g.nodes]
    edges = []
    for e in g.edges:
        entry: dict = {"u": e.u, "v": e.v}
        if e.geometry is not None:
            entry["geometry"] = [[p[0], p[1]] for p in e.geometry]
        edges.append(entry)
    doc["edges"] = edges
    return json.dumps(doc, indent=1)


def graph_from_json(text: str) -> StreetGraph:
    doc = json.loads(text)
    nodes = [(int(n["id"]), float(n["x"]), float(n["y"])) for n in doc["nodes"]]
    edges = []
    for e in doc["edges"]:
        geometry = None
        if "geometry" in e and e["geometry"] is not None:
            geometry = [(float(p[0]), float(p[1])) for p in e["geometry"]]
        edges.append(Edge(int(e["u"]), int(e["v"]), geometry))
    norm = None
    if "normalization" in doc:
        norm = NormalizationRecord(
            center=(float(doc["normalization"]["center"][0]), float(doc["normalization"]["center"][1])),
            scale=float(doc["normalization"]["scale"]),
        )
    g = StreetGraph(nodes=nodes, edges=edges, crs=doc.get("crs", "local"), normalization=norm)
    g.validate()
    return g


def save_graph(path, g: StreetGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(graph_to_json(g))
        fh.write("\n")


def load_graph(path) -> StreetGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return graph_from_json(fh.read())
