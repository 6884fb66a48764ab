"""Command line pipeline: simulate | vocab | cluster | train | eval | report.

Every subcommand reads one YAML config and an output directory and writes
its artifacts there, so a full run is a sequence of idempotent stages:

    prefetchlab simulate --config run.yaml --out run/
    prefetchlab vocab    --config run.yaml --out run/
    prefetchlab train    --config run.yaml --out run/
    prefetchlab eval     --config run.yaml --out run/
    prefetchlab report   --config run.yaml --out run/

Exit codes: 0 on success, 1 on runtime errors (bad data, missing
artifacts), 2 on usage errors. Runs are deterministic for a fixed config
and seed; reports are byte-identical across repeat runs.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np
import yaml

from . import baselines, clustering, eval as evaluation, models, trace, vocab as vocab_mod
from .cachesim import CacheLevelConfig, HierarchyConfig, default_broadwell_config, simulate
from .errors import ConfigError, DataError

TRACE_FILE = "trace.bin"
MISSES_FILE = "misses.bin"
SIM_STATS_FILE = "sim_stats.json"
VOCAB_FILE = "vocab.bin"
CLUSTER_FILE = "clusters.bin"
MODEL_FILE = "model.bin"
METRICS_FILE = "metrics.json"
REPORT_FILE = "report.json"

_SPEC_KINDS = {
    "stride": trace.StrideSpec,
    "multi_stride": trace.MultiStrideSpec,
    "pc_correlated": trace.PcCorrelatedSpec,
    "region_hopping": trace.RegionHoppingSpec,
    "linked_list": trace.LinkedListSpec,
}

DEFAULTS = {
    "seed": 0,
    "vocab": {"max_output": 50_000, "min_input_count": 10},
    "cluster": {"k": 3, "max_iters": 100, "min_input_count": 1},
    "model": {
        "type": "embedding",
        "hidden": 128,
        "embed": 64,
        "layers": 2,
        "modality": "both",
        "dtype": "float32",
    },
    "train": {
        "steps": 1000,
        "batch": 64,
        "window": 64,
        "optimizer": "adam",
        "lr": None,
        "clip": 5.0,
        "eval_every": 0,
        "target_precision": None,
    },
    "eval": {"k": 10, "split": 0.7, "baselines": True},
}


def load_config(path, seed: int | None = None) -> dict:
    with open(path) as f:
        cfg = yaml.safe_load(f) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    merged = {}
    for key, defaults in DEFAULTS.items():
        if isinstance(defaults, dict):
            section = dict(defaults)
            section.update(cfg.get(key) or {})
            merged[key] = section
        else:
            merged[key] = cfg.get(key, defaults)
    for key in cfg:
        if key not in merged:
            merged[key] = cfg[key]
    if seed is not None:
        merged["seed"] = seed
    return merged


def _as_tuple(value):
    if isinstance(value, list):
        return tuple(_as_tuple(v) for v in value)
    return value


def trace_spec_from_config(cfg: dict):
    section = dict(cfg.get("trace") or {})
    kind = section.pop("kind", None)
    if kind not in _SPEC_KINDS:
        raise ConfigError(f"trace.kind must be one of {sorted(_SPEC_KINDS)}, got {kind!r}")
    section.setdefault("seed", cfg.get("seed", 0))
    section = {key: _as_tuple(v) for key, v in section.items()}
    try:
        return _SPEC_KINDS[kind](**section)
    except TypeError as e:
        raise ConfigError(f"bad trace config for kind {kind!r}: {e}") from None


def hierarchy_from_config(cfg: dict) -> HierarchyConfig:
    section = cfg.get("cache", "broadwell")
    if section in (None, "broadwell"):
        return default_broadwell_config()
    levels = tuple(CacheLevelConfig(**lvl) for lvl in section["levels"])
    return HierarchyConfig(levels=levels, miss_emit_level=section.get("miss_emit_level", -1))


def _artifact(out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    return path


def _require(out_dir: str, name: str) -> str:
    path = _artifact(out_dir, name)
    if not os.path.exists(path):
        raise DataError(f"missing artifact {path}; run the earlier pipeline stages first")
    return path


def _n_train(misses, cfg) -> int:
    return evaluation.split_index(len(misses), cfg["eval"]["split"])


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_simulate(cfg: dict, out_dir: str) -> dict:
    spec = trace_spec_from_config(cfg)
    records = trace.generate_synthetic(spec)
    trace.write_trace(records, _artifact(out_dir, TRACE_FILE))
    hierarchy = hierarchy_from_config(cfg)
    misses, stats = simulate(records, hierarchy)
    trace.write_miss_trace(misses, _artifact(out_dir, MISSES_FILE))
    payload = {
        "n_accesses": len(records),
        "n_misses": len(misses),
        "levels": [
            {"accesses": s.accesses, "hits": s.hits, "misses": s.misses} for s in stats.levels
        ],
    }
    evaluation.write_report(_artifact(out_dir, SIM_STATS_FILE), payload)
    return payload


def _load_misses(cfg: dict, out_dir: str):
    line_size = hierarchy_from_config(cfg).line_size
    return trace.read_miss_trace(_require(out_dir, MISSES_FILE), line_size=line_size)


def run_vocab(cfg: dict, out_dir: str) -> dict:
    misses = _load_misses(cfg, out_dir)
    n_train = _n_train(misses, cfg)
    deltas = vocab_mod.compute_deltas(misses[:n_train])
    v = vocab_mod.build_vocab(
        deltas,
        max_output=cfg["vocab"]["max_output"],
        min_input_count=cfg["vocab"]["min_input_count"],
    )
    vocab_mod.save_vocab(v, _artifact(out_dir, VOCAB_FILE))
    return {"n_input": v.n_input, "n_output": v.n_output, "coverage": v.output_coverage()}


def run_cluster(cfg: dict, out_dir: str) -> dict:
    misses = _load_misses(cfg, out_dir)
    n_train = _n_train(misses, cfg)
    model = clustering.kmeans_fit(
        [m.line_addr for m in misses[:n_train]],
        k=cfg["cluster"]["k"],
        max_iters=cfg["cluster"]["max_iters"],
        seed=cfg["seed"],
    )
    stream = clustering.partition_stream(misses, model, train_len=n_train)
    clustering.save_cluster_model(model, _artifact(out_dir, CLUSTER_FILE), stream.norm_params)
    return {"k": model.k, "inertia": model.inertia, "n_iters": model.n_iters}


def run_train(cfg: dict, out_dir: str) -> dict:
    misses = _load_misses(cfg, out_dir)
    n_train = _n_train(misses, cfg)
    mcfg = cfg["model"]
    tcfg = models.TrainConfig(
        steps=cfg["train"]["steps"],
        window=cfg["train"]["window"],
        optimizer=cfg["train"]["optimizer"],
        lr=cfg["train"]["lr"],
        clip=cfg["train"]["clip"],
        eval_every=cfg["train"]["eval_every"],
    )
    dtype = np.dtype(mcfg["dtype"])

    if mcfg["type"] == "embedding":
        v = vocab_mod.load_vocab(_require(out_dir, VOCAB_FILE))
        pc_vocab = vocab_mod.build_pc_vocab(misses[:n_train])
        model = models.EmbeddingPrefetcher(
            n_delta_inputs=v.n_input,
            n_pcs=pc_vocab.n_pcs,
            n_outputs=v.n_output,
            hidden=mcfg["hidden"],
            embed=mcfg["embed"],
            layers=mcfg["layers"],
            modality=mcfg["modality"],
            dtype=dtype,
            seed=cfg["seed"],
        )
        dataset = models.embedding_dataset(misses, v, pc_vocab)
        train_mask = dataset["target_index"] < n_train
        train_arrays = {key: arr[train_mask] for key, arr in dataset.items()}
        batches = models.batchify(train_arrays, cfg["train"]["batch"])
    elif mcfg["type"] == "cluster":
        cmodel, norms = clustering.load_cluster_model(_require(out_dir, CLUSTER_FILE))
        if norms is None:
            raise DataError("cluster model file lacks normalization params")
        assignments = cmodel.assign([m.line_addr for m in misses])
        vocabs = models.build_cluster_vocabs(
            misses,
            assignments,
            n_train,
            max_output=cfg["vocab"]["max_output"],
            min_input_count=cfg["cluster"]["min_input_count"],
        )
        model = models.ClusterPrefetcher(
            vocab_sizes=[v.n_output if v is not None else 0 for v in vocabs],
            hidden=mcfg["hidden"],
            layers=mcfg["layers"],
            dtype=dtype,
            seed=cfg["seed"],
        )
        dataset = models.cluster_dataset(misses, assignments, vocabs, norms, model)
        batches = dict(dataset)
        batches["label"] = np.where(
            dataset["target_index"] < n_train, dataset["label"], -1
        )
    else:
        raise ConfigError(f"model.type must be embedding or cluster, got {mcfg['type']!r}")

    history = models.train_model(model, batches, tcfg)
    meta = {"config_hash": evaluation.config_hash(evaluation.sanitize(cfg)), "n_train": n_train}
    models.save_model(model, _artifact(out_dir, MODEL_FILE), meta)
    final = history[-1]["loss"] if history else None
    return {"steps": len(history), "final_loss": final}


def _model_prediction_sets(cfg, out_dir, misses, n_train, k):
    model, meta = models.load_model(_require(out_dir, MODEL_FILE))
    if isinstance(model, models.EmbeddingPrefetcher):
        v = vocab_mod.load_vocab(_require(out_dir, VOCAB_FILE))
        pc_vocab = vocab_mod.build_pc_vocab(misses[:n_train])
        dataset = models.embedding_dataset(misses, v, pc_vocab)
        return models.embedding_prediction_sets(model, dataset, v, n_train, k)
    cmodel, norms = clustering.load_cluster_model(_require(out_dir, CLUSTER_FILE))
    assignments = cmodel.assign([m.line_addr for m in misses])
    vocabs = models.build_cluster_vocabs(
        misses,
        assignments,
        n_train,
        max_output=cfg["vocab"]["max_output"],
        min_input_count=cfg["cluster"]["min_input_count"],
    )
    dataset = models.cluster_dataset(misses, assignments, vocabs, norms, model)
    return models.cluster_prediction_sets(model, dataset, vocabs, n_train, k)


def run_eval(cfg: dict, out_dir: str) -> dict:
    misses = _load_misses(cfg, out_dir)
    n_train = _n_train(misses, cfg)
    k = cfg["eval"]["k"]
    sets = _model_prediction_sets(cfg, out_dir, misses, n_train, k)
    metrics = {"model": evaluation.metrics_summary(sets, k)}
    if cfg["eval"]["baselines"]:
        for name, pf in (
            ("stream", baselines.StreamPrefetcher()),
            ("ghb_pc_dc", baselines.GhbPcDc()),
        ):
            all_sets = baselines.baseline_prediction_sets(pf, misses)
            test_sets = [s for s in all_sets if s.timestep + 1 >= n_train]
            metrics[name] = evaluation.metrics_summary(test_sets, k)
    payload = {"n_train": n_train, "n_misses": len(misses), "metrics": metrics}
    evaluation.write_report(_artifact(out_dir, METRICS_FILE), payload)
    return payload


def run_report(cfg: dict, out_dir: str) -> dict:
    misses = _load_misses(cfg, out_dir)
    deltas = vocab_mod.compute_deltas(misses)
    coverage = vocab_mod.coverage_stats(misses, deltas)
    metrics = evaluation.read_report(_require(out_dir, METRICS_FILE))
    sim_stats = evaluation.read_report(_require(out_dir, SIM_STATS_FILE))
    precisions = [m["precision_at_k"] for m in metrics["metrics"].values()]
    payload = {
        "config": evaluation.sanitize(cfg),
        "config_hash": evaluation.config_hash(evaluation.sanitize(cfg)),
        "coverage": coverage.__dict__,
        "simulation": sim_stats,
        "evaluation": metrics,
        "geomean_precision": evaluation.geometric_mean(precisions),
    }
    evaluation.write_report(_artifact(out_dir, REPORT_FILE), payload)
    return payload


def run_export_embeddings(cfg: dict, out_dir: str) -> dict:
    model, _ = models.load_model(_require(out_dir, MODEL_FILE))
    if not isinstance(model, models.EmbeddingPrefetcher) or not model.e_delta:
        raise DataError("checkpoint has no delta embedding table to export")
    v = vocab_mod.load_vocab(_require(out_dir, VOCAB_FILE))
    table = model.params["emb_delta"]
    path = _artifact(out_dir, "embeddings.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["input_class_id", "delta"] + [f"dim{i}" for i in range(table.shape[1])])
        for delta, idx in v.input_classes:
            w.writerow([idx, delta] + [repr(float(x)) for x in table[idx]])
        w.writerow([v.oov_input, ""] + [repr(float(x)) for x in table[v.oov_input]])
    return {"rows": v.n_input + 1, "path": path}


_STAGES = {
    "simulate": run_simulate,
    "vocab": run_vocab,
    "cluster": run_cluster,
    "train": run_train,
    "eval": run_eval,
    "report": run_report,
    "export-embeddings": run_export_embeddings,
}


def run_pipeline(cfg: dict, out_dir: str, stages=("simulate", "vocab", "train", "eval", "report")):
    """Convenience driver used by tests and demos."""
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    for stage in stages:
        results[stage] = _STAGES[stage](cfg, out_dir)
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prefetchlab",
        description="Cache miss prefetcher workbench: trace simulation, "
        "delta vocabularies, LSTM and table-driven prefetchers.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default="out", help="artifact directory (default: out)")
    common.add_argument(
        "--workers", type=int, default=1, help="reserved; the implementation is single threaded"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _STAGES:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        os.makedirs(args.out, exist_ok=True)
        result = _STAGES[args.command](cfg, args.out)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for key, value in (result or {}).items():
        print(f"{key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
