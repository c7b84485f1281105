"""Command-line pipeline: preprocess -> train -> embed -> generate ->
metrics -> cluster -> plot, plus an Overpass fetch helper.

Logs go to stderr; machine-readable results go to files in --out. Every
command is deterministic given (inputs, config, seed).
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import click
import numpy as np

from . import analysis, geom, graph, ingest, nodemodel, svgplot, tensor, vgae
from .config import DEFAULT_OVERPASS_URL, ConfigError, PipelineConfig, load_config, self_test

log = logging.getLogger("streetvae")

_METRIC_NAMES = (
    "avg_street_length",
    "avg_streets_per_node",
    "avg_circuity",
    "avg_block_area",
    "avg_form_factor",
    "avg_compactness",
)


def _setup_logging() -> None:
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)


def config_options(fn):
    """Expose every PipelineConfig key as a flag (flag wins over file)."""
    for f in reversed(fields(PipelineConfig)):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            fn = click.option(flag + "/--no-" + f.name.replace("_", "-"), f.name, default=None)(fn)
        elif f.type in ("int", int):
            fn = click.option(flag, f.name, type=int, default=None)(fn)
        elif f.type in ("float", float):
            fn = click.option(flag, f.name, type=float, default=None)(fn)
        else:
            fn = click.option(flag, f.name, type=str, default=None)(fn)
    return fn


def _merge_config(config_path: Optional[str], seed: Optional[int], kwargs: dict) -> PipelineConfig:
    overrides = {k: v for k, v in kwargs.items() if v is not None}
    if seed is not None:
        overrides["seed"] = seed
    try:
        return load_config(config_path, overrides)
    except (ConfigError, OSError) as e:
        raise click.ClickException(str(e))


def _write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _safe_id(raw: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", raw)


@click.group()
def main() -> None:
    """Street-network representation learning pipeline."""
    _setup_logging()


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


def _detect_format(path: Path) -> Optional[str]:
    suffix = path.suffix.lower()
    if suffix in (".geojson", ".json"):
        return "geojson"
    if suffix in (".xml", ".osm"):
        return "osm_xml"
    return None


def _preprocess_file(path_str: str, cfg_kwargs: dict) -> tuple[list, list[str]]:
    """Parse one extract and run the per-place pipeline. Returns
    (successes, warnings); each success is (place_dict, graph_json, tokens)."""
    cfg = PipelineConfig(**cfg_kwargs)
    path = Path(path_str)
    fmt = _detect_format(path)
    warnings: list[str] = []
    if fmt is None:
        return [], [f"{path.name}: unknown extension, skipped"]
    try:
        raw, places = ingest.parse_extract(path.read_bytes(), fmt)
    except ingest.IngestError as e:
        return [], [f"{path.name}: {e}"]
    selected = ingest.filter_places(places, cfg.min_population)
    if not selected:
        warnings.append(f"{path.name}: no place passes the population filter")
    out = []
    for place in selected:
        try:
            clipped = ingest.clip_box(raw, place.centroid, cfg.box_half_width_m)
            _, _, zone, south = geom.utm_project(place.centroid[0], place.centroid[1])
            projected = [
                [geom.utm_project(lon, lat, zone, south)[:2] for lon, lat in line]
                for line in clipped.polylines
            ]
            g = graph.build_graph(projected)
            g = graph.simplify_merge(g, cfg.merge_threshold_m)
            if g.n_nodes < 2 or g.n_edges < 1:
                warnings.append(f"{place.id}: too few nodes/edges after clipping, skipped")
                continue
            if g.n_nodes > cfg.n_cap:
                warnings.append(f"{place.id}: {g.n_nodes} nodes above cap {cfg.n_cap}, skipped")
                continue
            tokens, ordered, _ = graph.graph_tokens(g)
            ordered.crs = f"utm/{zone}{'s' if south else 'n'}"
            place_doc = {
                "id": _safe_id(place.id),
                "name": place.name,
                "country": place.country,
                "place_kind": place.place_kind,
                "population": place.population,
                "centroid": [place.centroid[0], place.centroid[1]],
            }
            out.append((place_doc, graph.graph_to_json(ordered), tokens))
        except (ingest.IngestError, graph.GraphError, geom.ProjectionError, geom.DegenerateExtentError, ValueError) as e:
            warnings.append(f"{place.id}: {e}")
    return out, warnings


def _hist_csv_svg(values: Sequence[int], out_dir: Path, stem: str, title: str) -> None:
    arr = np.asarray(values, dtype=float)
    bins = min(20, max(int(arr.max() - arr.min()) + 1, 1)) if arr.size else 1
    counts, edges = np.histogram(arr, bins=bins)
    _write_csv(
        out_dir / f"{stem}.csv",
        ["bin_lo", "bin_hi", "count"],
        [[float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(len(counts))],
    )
    svgplot.histogram(out_dir / f"{stem}.svg", {title: list(arr)}, bins=bins, title=title)


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=1)
@config_options
def preprocess(input_dir, out_dir, config_path, seed, jobs, **kwargs) -> None:
    """Parse extracts, clip per place, and build the token corpus."""
    cfg = _merge_config(config_path, seed, kwargs)
    files = sorted(p for p in Path(input_dir).iterdir() if p.is_file() and _detect_format(p))
    if not files:
        raise click.ClickException(f"no inputs in {input_dir}")
    out = Path(out_dir)
    (out / "graphs").mkdir(parents=True, exist_ok=True)

    cfg_kwargs = {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)}
    results: list[tuple[list, list[str]]] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_preprocess_file, [str(p) for p in files], [cfg_kwargs] * len(files)))
    else:
        results = [_preprocess_file(str(p), cfg_kwargs) for p in files]

    successes = []
    for (items, warnings), path in zip(results, files):
        for w in warnings:
            log.warning("%s", w)
        successes.extend(items)
    if not successes:
        raise click.ClickException("no place produced a usable street graph")

    successes.sort(key=lambda item: item[0]["id"])
    places_doc = []
    token_lines = []
    node_counts = []
    edge_counts = []
    for place_doc, graph_json, tokens in successes:
        gid = place_doc["id"]
        with open(out / "graphs" / f"{gid}.json", "w", encoding="utf-8") as fh:
            fh.write(graph_json)
            fh.write("\n")
        places_doc.append(place_doc)
        token_lines.append(json.dumps({"id": gid, "tokens": tokens}, separators=(",", ":")))
        g = graph.graph_from_json(graph_json)
        node_counts.append(g.n_nodes)
        edge_counts.append(g.n_edges)

    with open(out / "tokens.jsonl", "w", encoding="utf-8") as fh:
        fh.write("\n".join(token_lines) + "\n")
    _write_json(out / "places.json", places_doc)
    _hist_csv_svg(node_counts, out, "corpus_nodes_hist", "nodes per graph")
    _hist_csv_svg(edge_counts, out, "corpus_edges_hist", "edges per graph")
    log.info("preprocessed %d places from %d files", len(successes), len(files))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _load_token_corpus(corpus_dir: Path) -> tuple[list[str], list[list[int]]]:
    tokens_path = corpus_dir / "tokens.jsonl"
    if not tokens_path.exists():
        raise click.UsageError(f"missing {tokens_path}; run preprocess first")
    ids, seqs = [], []
    with open(tokens_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                ids.append(doc["id"])
                seqs.append([int(t) for t in doc["tokens"]])
    if not ids:
        raise click.UsageError(f"{tokens_path} is empty")
    return ids, seqs


def _load_graph_corpus(corpus_dir: Path) -> tuple[list[str], list[graph.StreetGraph]]:
    gdir = corpus_dir / "graphs"
    if not gdir.is_dir():
        raise click.UsageError(f"missing {gdir}; run preprocess first")
    paths = sorted(gdir.glob("*.json"))
    if not paths:
        raise click.UsageError(f"no graphs in {gdir}")
    return [p.stem for p in paths], [graph.load_graph(p) for p in paths]


def _node_config(cfg: PipelineConfig) -> nodemodel.NodeModelConfig:
    return nodemodel.NodeModelConfig(
        d_model=cfg.d_model,
        layers=cfg.layers,
        heads=cfg.heads,
        d_ff=cfg.d_ff,
        max_nodes=cfg.max_nodes,
        dropout=cfg.dropout,
        feature_mode=cfg.feature_mode,
    )


def _features_for(
    node_params, node_cfg: nodemodel.NodeModelConfig, g: graph.StreetGraph
) -> np.ndarray:
    tokens, _, _ = graph.graph_tokens(g)
    return nodemodel.node_embeddings(node_params, node_cfg, tokens)


@main.command()
@click.argument("kind", type=click.Choice(["nodes", "vgae"]))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--nodes-checkpoint", type=click.Path(dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=1)
@config_options
def train(kind, corpus_dir, out_dir, nodes_checkpoint, config_path, seed, jobs, **kwargs) -> None:
    """Train the node model or the graph autoencoder (seeded 80/20 split)."""
    cfg = _merge_config(config_path, seed, kwargs)
    corpus = Path(corpus_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    try:
        if kind == "nodes":
            _, seqs = _load_token_corpus(corpus)
            node_cfg = _node_config(cfg)
            params, curves = nodemodel.train_node_model(
                seqs,
                node_cfg,
                epochs=cfg.node_epochs,
                batch_size=cfg.node_batch,
                lr=cfg.node_lr,
                seed=cfg.seed,
                val_fraction=cfg.val_fraction,
                checkpoint_dir=out,
            )
            nodemodel.save_node_model(out / "node_model.svae", params, node_cfg)
            _write_csv(
                out / "curves_nodes.csv",
                ["epoch", "train_nll", "val_nll"],
                [[c.epoch, c.train_nll, c.val_nll] for c in curves],
            )
            svgplot.line_chart(
                out / "curves_nodes.svg",
                {
                    "train": [(c.epoch, c.train_nll) for c in curves],
                    "val": [(c.epoch, c.val_nll) for c in curves if math.isfinite(c.val_nll)],
                },
                title="node model NLL",
            )
        else:
            ckpt = Path(nodes_checkpoint) if nodes_checkpoint else out / "node_model.svae"
            if not ckpt.exists():
                raise click.UsageError(f"vgae training needs a node checkpoint; missing {ckpt}")
            node_params, node_cfg = nodemodel.load_node_model(ckpt)
            ids, graphs = _load_graph_corpus(corpus)
            pairs = []
            for gid, g in zip(ids, graphs):
                adj = graph.normalize_adjacency(g)
                feats = _features_for(node_params, node_cfg, g)
                pairs.append((adj, feats))
            vgae_cfg = vgae.VgaeConfig(
                feature_dim=node_cfg.d_model, hidden_dim=cfg.hidden_dim, latent_dim=cfg.latent_dim
            )
            params, curves = vgae.train_vgae(
                pairs,
                config=vgae_cfg,
                epochs=cfg.vgae_epochs,
                lr=cfg.vgae_lr,
                seed=cfg.seed,
                val_fraction=cfg.val_fraction,
            )
            vgae.save_vgae(out / "vgae_model.svae", params, vgae_cfg)
            _write_csv(
                out / "curves_vgae.csv",
                ["epoch", "train_loss", "val_auc"],
                [[c.epoch, c.train_loss, c.val_auc] for c in curves],
            )
            svgplot.line_chart(
                out / "curves_vgae.svg",
                {
                    "train loss": [(c.epoch, c.train_loss) for c in curves],
                    "val auc": [(c.epoch, c.val_auc) for c in curves if math.isfinite(c.val_auc)],
                },
                title="vgae training",
            )
    except (nodemodel.NodeModelError, vgae.VgaeError, tensor.TensorError, graph.GraphError) as e:
        raise click.ClickException(str(e))
    log.info("trained %s model into %s", kind, out)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--nodes-checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vgae-checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@config_options
def embed(corpus_dir, nodes_checkpoint, vgae_checkpoint, out_dir, config_path, seed, **kwargs) -> None:
    """Per-graph fixed-length embeddings: padded posterior means + PCA."""
    cfg = _merge_config(config_path, seed, kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    node_params, node_cfg = nodemodel.load_node_model(nodes_checkpoint)
    vgae_params, _ = vgae.load_vgae(vgae_checkpoint)
    ids, graphs = _load_graph_corpus(Path(corpus_dir))

    flats = []
    for g in graphs:
        adj = graph.normalize_adjacency(g)
        feats = _features_for(node_params, node_cfg, g)
        with tensor.no_grad():
            mu, _ = vgae.encode(vgae_params, adj.a_norm, feats)
        flats.append(analysis.pad_and_flatten(mu.data, cfg.n_cap))
    matrix = np.vstack(flats)
    d_eff = min(cfg.embed_dim, matrix.shape[0], matrix.shape[1])
    if d_eff < cfg.embed_dim:
        log.warning("embed_dim clamped to %d (corpus size)", d_eff)
    pca = analysis.pca_fit(matrix, d_eff)
    emb = pca.transform(matrix)

    _write_csv(
        out / "embeddings.csv",
        ["id"] + [f"e{i}" for i in range(d_eff)],
        [[gid] + [float(v) for v in row] for gid, row in zip(ids, emb)],
    )
    _write_json(out / "pca.json", pca.to_dict())
    log.info("embedded %d graphs to %d dims", len(ids), d_eff)


# ---------------------------------------------------------------------------
# metrics helpers
# ---------------------------------------------------------------------------


def _graph_metric_row(g: graph.StreetGraph, cfg: PipelineConfig) -> tuple[dict, Optional[str]]:
    row: dict = {}
    topo = analysis.topo_metrics(g, circuity_mode=cfg.circuity_mode)
    row["avg_street_length"] = topo.avg_street_length
    row["avg_streets_per_node"] = topo.avg_streets_per_node
    row["avg_circuity"] = topo.avg_circuity
    try:
        blocks = analysis.block_metrics(g, include_boundary=cfg.include_boundary_blocks)
        if blocks.n_blocks > 0:
            row["avg_block_area"] = blocks.avg_area
            row["avg_form_factor"] = blocks.avg_form_factor
            row["avg_compactness"] = blocks.avg_compactness
        return row, None
    except graph.NonPlanarError as e:
        return row, str(e)


def _metric_table(ids, graphs, cfg) -> tuple[list[dict], int]:
    rows = []
    nonplanar = 0
    for gid, g in zip(ids, graphs):
        try:
            row, planarity_issue = _graph_metric_row(g, cfg)
        except analysis.MetricsError as e:
            log.warning("%s: %s", gid, e)
            continue
        if planarity_issue:
            nonplanar += 1
            log.warning("%s excluded from block metrics: %s", gid, planarity_issue)
        row["id"] = gid
        rows.append(row)
    return rows, nonplanar


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@config_options
def metrics(corpus_dir, out_dir, config_path, seed, **kwargs) -> None:
    """Topological and geometric metrics for every graph in a corpus."""
    cfg = _merge_config(config_path, seed, kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids, graphs = _load_graph_corpus(Path(corpus_dir))
    rows, nonplanar = _metric_table(ids, graphs, cfg)
    if not rows:
        raise click.ClickException("no graph yielded metrics")
    _write_csv(
        out / "metrics.csv",
        ["id"] + list(_METRIC_NAMES),
        [[r["id"]] + [r.get(m, float("nan")) for m in _METRIC_NAMES] for r in rows],
    )
    summary = {
        m: float(np.nanmean([r.get(m, float("nan")) for r in rows])) for m in _METRIC_NAMES
    }
    summary["n_graphs"] = len(rows)
    summary["n_nonplanar_excluded"] = nonplanar
    _write_json(out / "metrics.json", summary)
    log.info("metrics for %d graphs (%d excluded from blocks)", len(rows), nonplanar)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@main.command()
@click.option("--nodes-checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vgae-checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--count", type=int, default=100)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=1)
@config_options
def generate(
    nodes_checkpoint, vgae_checkpoint, corpus_dir, count, out_dir, config_path, seed, jobs, **kwargs
) -> None:
    """Sample synthetic networks and compare them with the held-out set."""
    cfg = _merge_config(config_path, seed, kwargs)
    out = Path(out_dir)
    (out / "generated").mkdir(parents=True, exist_ok=True)
    node_params, node_cfg = nodemodel.load_node_model(nodes_checkpoint)
    vgae_params, vgae_cfg = vgae.load_vgae(vgae_checkpoint)

    ids, graphs = _load_graph_corpus(Path(corpus_dir))
    _, val_idx = nodemodel.split_indices(len(ids), cfg.seed, cfg.val_fraction)
    held_ids = [ids[i] for i in val_idx]
    held = [graphs[i] for i in val_idx]
    if not held:
        held_ids, held = ids, graphs

    # give generated graphs the held-out sets' physical scale
    diagonals = []
    for g in held:
        xs = [x for _, x, _ in g.nodes]
        ys = [y for _, _, y in g.nodes]
        diagonals.append(math.hypot(max(xs) - min(xs), max(ys) - min(ys)))
    scale = float(np.mean(diagonals)) if diagonals else 1.0

    generated = []
    failures = []
    for i in range(count):
        sample = None
        for attempt in (0, 1):
            try:
                sample = vgae.generate_network(
                    node_params,
                    node_cfg,
                    vgae_params,
                    vgae_cfg,
                    temperature=cfg.temperature,
                    seed=cfg.seed + i + attempt * (count + 1),
                    edge_threshold=cfg.edge_threshold,
                    edge_mode=cfg.edge_mode,
                    scale=scale,
                )
                break
            except vgae.GenerationError as e:
                if attempt == 1:
                    failures.append({"sample": i, "error": str(e)})
                    log.warning("sample %d failed twice: %s", i, e)
        if sample is not None:
            gid = f"gen-{i:04d}"
            graph.save_graph(out / "generated" / f"{gid}.json", sample)
            generated.append((gid, sample))

    gen_rows, gen_nonplanar = _metric_table([g for g, _ in generated], [s for _, s in generated], cfg)
    real_rows, real_nonplanar = _metric_table(held_ids, held, cfg)

    ks_rows = []
    for m in _METRIC_NAMES:
        gen_vals = [r[m] for r in gen_rows if m in r and math.isfinite(r[m])]
        real_vals = [r[m] for r in real_rows if m in r and math.isfinite(r[m])]
        series = {}
        if real_vals:
            series["held-out"] = real_vals
        if gen_vals:
            series["generated"] = gen_vals
        if series:
            svgplot.histogram(out / f"hist_{m}.svg", series, title=m)
        _write_csv(
            out / f"hist_{m}.csv",
            ["set", "value"],
            [["held-out", v] for v in real_vals] + [["generated", v] for v in gen_vals],
        )
        if gen_vals and real_vals:
            ks_rows.append([m, analysis.ks_statistic(gen_vals, real_vals)])
    _write_csv(out / "ks.csv", ["metric", "ks_statistic"], ks_rows)

    circuities = [r["avg_circuity"] for r in gen_rows if "avg_circuity" in r]
    report = {
        "count_requested": count,
        "count_generated": len(generated),
        "failures": failures,
        "scale_m": scale,
        "nonplanar_excluded": {"generated": gen_nonplanar, "held_out": real_nonplanar},
        "sanity_circuity_ge_1": bool(all(c >= 1.0 - 1e-9 for c in circuities)),
        "metrics": {
            "generated": {m: float(np.nanmean([r.get(m, float("nan")) for r in gen_rows])) for m in _METRIC_NAMES},
            "held_out": {m: float(np.nanmean([r.get(m, float("nan")) for r in real_rows])) for m in _METRIC_NAMES},
        },
        "ks": {m: k for m, k in ks_rows},
    }
    _write_json(out / "report.json", report)
    if not generated:
        raise click.ClickException("no sample could be generated")
    log.info("generated %d/%d samples", len(generated), count)


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


@main.command()
@click.option("--embeddings", "embeddings_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--places", "places_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--graphs", "graphs_dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@config_options
def cluster(embeddings_path, places_path, graphs_dir, out_dir, config_path, seed, **kwargs) -> None:
    """K-means over graph embeddings plus elbow curve and summaries."""
    cfg = _merge_config(config_path, seed, kwargs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ids = []
    vectors = []
    with open(embeddings_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            ids.append(row[0])
            vectors.append([float(v) for v in row[1:]])
    x = np.asarray(vectors)
    with open(places_path, "r", encoding="utf-8") as fh:
        places_doc = json.load(fh)
    places = [
        ingest.PlaceRecord(
            id=p["id"],
            name=p.get("name", ""),
            country=p.get("country", "ZZ"),
            place_kind=p.get("place_kind", "town"),
            population=p.get("population"),
            centroid=tuple(p.get("centroid", (0.0, 0.0))),
        )
        for p in places_doc
    ]
    known = {p.id for p in places}
    orphans = [gid for gid in ids if gid not in known]
    if orphans:
        raise click.ClickException(f"place metadata missing for: {', '.join(sorted(orphans))}")

    k = min(cfg.k_clusters, len(ids))
    if k < cfg.k_clusters:
        log.warning("k clamped to %d (only %d embeddings)", k, len(ids))
    try:
        result = analysis.kmeans(x, k, seed=cfg.seed, ids=ids, restarts=5)
        k_hi = min(12, len(ids))
        curve, suggested = analysis.elbow_curve(x, range(2, k_hi + 1), seed=cfg.seed) if k_hi >= 2 else ([], k)
        histogram, summaries = analysis.cluster_summaries(result, places)
    except analysis.AnalysisError as e:
        raise click.ClickException(str(e))

    _write_csv(out / "assignments.csv", ["id", "label"], [[gid, result.assignments[gid]] for gid in ids])
    _write_csv(out / "elbow.csv", ["k", "inertia"], [[kk, inertia] for kk, inertia in curve])
    _write_csv(
        out / "membership_hist.csv", ["label", "count"], [[label, histogram[label]] for label in sorted(histogram)]
    )
    _write_csv(
        out / "country_summary.csv",
        ["country", "mode_label", "tied", "variety"] + [f"count_{i}" for i in range(k)],
        [
            [s.country, s.mode_label, int(s.tied), s.variety] + [s.counts.get(i, 0) for i in range(k)]
            for s in summaries
        ],
    )
    _write_json(out / "cluster_report.json", {"k": k, "suggested_k": suggested, "inertia": result.inertia})
    svgplot.bar_chart(
        out / "membership_hist.svg",
        [str(label) for label in sorted(histogram)],
        [histogram[label] for label in sorted(histogram)],
        title="cluster membership",
    )
    if curve:
        svgplot.line_chart(out / "elbow.svg", {"inertia": [(kk, v) for kk, v in curve]}, title="elbow curve")

    if graphs_dir is not None:
        by_label: dict[int, str] = {}
        for gid in sorted(result.assignments):
            by_label.setdefault(result.assignments[gid], gid)
        for label, gid in sorted(by_label.items()):
            gpath = Path(graphs_dir) / f"{gid}.json"
            if gpath.exists():
                g = graph.load_graph(gpath)
                rose = analysis.orientation_histogram(g, length_weighted=cfg.orientation_weighted)
                svgplot.polar_rose(out / f"rose_cluster{label}.svg", rose.bins, title=f"cluster {label}: {gid}")
    log.info("clustered %d graphs into k=%d (elbow suggests %s)", len(ids), k, suggested)


# ---------------------------------------------------------------------------
# plot & fetch
# ---------------------------------------------------------------------------


@main.command()
@click.option("--graphs", "graphs_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def plot(graphs_path, out_dir) -> None:
    """Render graph JSON files to SVG line drawings."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src = Path(graphs_path)
    paths = sorted(src.glob("*.json")) if src.is_dir() else [src]
    if not paths:
        raise click.ClickException(f"no graph files under {src}")
    for p in paths:
        g = graph.load_graph(p)
        svgplot.render_graph(out / f"{p.stem}.svg", g, title=p.stem)
    log.info("rendered %d graphs", len(paths))


@main.command()
@click.option("--bbox", nargs=4, type=float, required=True, metavar="SOUTH WEST NORTH EAST")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--endpoint", type=str, default=None)
@click.option("--timeout", type=float, default=60.0)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@config_options
def fetch(bbox, out_path, endpoint, timeout, config_path, **kwargs) -> None:
    """Fetch raw data from an Overpass endpoint into a local file."""
    cfg = _merge_config(config_path, None, kwargs)
    url = endpoint or os.environ.get("STREETVAE_OVERPASS_URL") or cfg.overpass_url
    south, west, north, east = bbox
    query = ingest.overpass_query(south, west, north, east)
    try:
        body = ingest.fetch_overpass(url, query, timeout=timeout)
    except ingest.FetchError as e:
        raise click.ClickException(str(e))
    with open(out_path, "wb") as fh:
        fh.write(body)
    log.info("fetched %d bytes from %s", len(body), url)


@main.command("config-check")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@config_options
def config_check(config_path, **kwargs) -> None:
    """Verify the pipeline constants against their documented defaults."""
    cfg = _merge_config(config_path, None, kwargs)
    checks = self_test(cfg)
    failed = [name for name, ok, _ in checks if not ok]
    for name, ok, detail in checks:
        click.echo(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
    if failed:
        raise click.ClickException(f"{len(failed)} config check(s) failed")


if __name__ == "__main__":
    main()
