"""Monte Carlo comparison of direct regression against the physics-guided
two-stage route across training-set sizes."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .errors import ParameterError, PgirError
from .metrics import METRIC_NAMES, compute_metrics  # noqa: F401  (re-exported)
from .models import RegressorConfig
from .pipeline import TrainConfig, derive_seed, inverse_features, stratified_split, train_inverse, train_regressor
from .synth import SynthConfig, labels_csv_bytes, manifest_dict, manifest_hash, synthesize

log = logging.getLogger(__name__)

MODELS = ("direct", "pgnn")
ROW_FIELDS = ("model", "train_size", "rep", *METRIC_NAMES)


@dataclass(frozen=True)
class BenchConfig:
    train_sizes: tuple[int, ...] = (15, 25, 50, 75, 100)
    test_size: int = 150
    reps: int = 1
    variant: str = "resnet-small"
    base_seed: int = 0
    synth: SynthConfig = SynthConfig()
    train: TrainConfig = TrainConfig()
    null_labels: bool = False  # replace labels by independent noise (control experiment)

    def __post_init__(self):
        if self.reps < 1:
            raise ParameterError("reps must be >= 1")
        if not self.train_sizes or any(s < 1 for s in self.train_sizes):
            raise ParameterError("train_sizes must be positive")
        if self.test_size < 1:
            raise ParameterError("test_size must be >= 1")
        RegressorConfig(self.variant)

    @property
    def pool_train(self) -> int:
        return max(self.train_sizes)


@dataclass
class BenchReport:
    rows: list[dict]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: (r["rep"], r["train_size"], MODELS.index(r["model"]) if r["model"] in MODELS else 99, r["model"]))


def _round9(v):
    return None if v is None else float(format(v, ".9g"))


def _pool(cfg: BenchConfig, rep: int):
    seed = derive_seed(cfg.base_seed, "pool", rep)
    records = synthesize(cfg.synth, seed, cfg.pool_train + cfg.test_size)
    fingerprint = manifest_hash(
        {**manifest_dict(cfg.synth, seed, len(records), {}), "labels": labels_csv_bytes(records).decode()}
    )
    z = np.stack([r.image for r in records]).transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    y = np.array([r.y_noisy for r in records])
    if cfg.null_labels:
        y = np.random.default_rng(derive_seed(cfg.base_seed, "null", rep)).uniform(y.min(), y.max(), size=y.size)
    return seed, fingerprint, z, y


def run_rep(cfg: BenchConfig, rep: int) -> tuple[list[dict], dict]:
    """All (size, model) cells of one repetition; returns rows and per-rep metadata."""
    seed, fingerprint, z, y = _pool(cfg, rep)
    n_train = cfg.pool_train
    z_pool, y_pool = z[:n_train], y[:n_train]
    z_test, y_test = z[n_train:], y[n_train:]
    test_idx = list(range(n_train, n_train + cfg.test_size))
    rows, cells = [], {}
    reg_cfg = RegressorConfig(cfg.variant)
    for size in cfg.train_sizes:
        try:
            if size == n_train:
                tr = np.arange(n_train)
            else:
                tr, _ = stratified_split(y_pool, size, derive_seed(cfg.base_seed, "split", rep, size))
            cells[str(size)] = {"train_idx": tr.tolist(), "test_idx": test_idx}
            tcfg = replace(cfg.train, seed=derive_seed(cfg.base_seed, "train", rep, size))
            t0 = time.perf_counter()
            direct = train_regressor(z_pool[tr], y_pool[tr], z_test, y_test, tcfg, reg_cfg, tag="direct")
            stage1 = train_inverse(z_pool[tr], tcfg)
            x_tr = inverse_features(stage1.model, z_pool[tr])
            x_te = inverse_features(stage1.model, z_test)
            pgnn = train_regressor(x_tr, y_pool[tr], x_te, y_test, tcfg, reg_cfg, tag="pgnn")
            log.info("rep %d size %d done in %.1fs", rep, size, time.perf_counter() - t0)
        except PgirError as exc:
            raise type(exc)(f"rep {rep}, train size {size}: {exc}") from exc
        for name, res in (("direct", direct), ("pgnn", pgnn)):
            rows.append({"model": name, "train_size": size, "rep": rep, **{k: _round9(res.metrics[k]) for k in METRIC_NAMES}})
    return rows, {"pool_seed": seed, "pool_hash": fingerprint, "cells": cells}


def _run_rep_worker(args):
    cfg, rep, threads = args
    torch.set_num_threads(threads)
    return rep, run_rep(cfg, rep)


def run_monte_carlo(cfg: BenchConfig, jobs: int = 1) -> BenchReport:
    rows, reps_meta = [], {}
    if jobs <= 1:
        for rep in range(cfg.reps):
            r, m = run_rep(cfg, rep)
            rows += r
            reps_meta[str(rep)] = m
    else:
        threads = max(1, (os.cpu_count() or 1) // jobs)
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for rep, (r, m) in ex.map(_run_rep_worker, [(cfg, rep, threads) for rep in range(cfg.reps)]):
                rows += r
                reps_meta[str(rep)] = m
    return BenchReport(rows, {"reps": reps_meta})


def summarize(report: BenchReport) -> list[dict]:
    """Mean and population std of every metric per (model, train size)."""
    if not report.rows:
        raise ParameterError("cannot summarize an empty report")
    groups: dict[tuple[str, int], list[dict]] = {}
    for r in report.rows:
        groups.setdefault((r["model"], r["train_size"]), []).append(r)
    out = []
    for (model, size), rows in sorted(groups.items(), key=lambda kv: (kv[0][1], MODELS.index(kv[0][0]) if kv[0][0] in MODELS else 99)):
        entry = {"model": model, "train_size": size, "n": len(rows)}
        for k in METRIC_NAMES:
            vals = [r[k] for r in rows if r[k] is not None]
            entry[f"{k}_mean"] = float(np.mean(vals)) if vals else None
            entry[f"{k}_std"] = float(np.std(vals)) if vals else None
        out.append(entry)
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) or isinstance(v, str):
        return str(v)
    return format(float(v), ".9g")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])


def emit_report(report: BenchReport, out_dir) -> list[Path]:
    """Write rows.csv, summary.csv, summary.json, learning_curves.json and,
    when present, report_meta.json (per-rep pool seeds/hashes and index sets)."""
    if not report.rows:
        raise ParameterError("refusing to write an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(report)
    paths = [out / "rows.csv", out / "summary.csv", out / "summary.json", out / "learning_curves.json"]
    _write_csv(paths[0], ROW_FIELDS, report.rows)
    _write_csv(paths[1], list(summary[0].keys()), summary)
    rounded = [{k: (_round9(v) if isinstance(v, float) else v) for k, v in s.items()} for s in summary]
    paths[2].write_text(json.dumps(rounded, indent=2) + "\n", encoding="utf-8")
    curves: dict[str, dict] = {}
    for s in rounded:
        c = curves.setdefault(s["model"], {"train_size": [], **{f"{k}_mean": [] for k in METRIC_NAMES}, **{f"{k}_std": [] for k in METRIC_NAMES}})
        c["train_size"].append(s["train_size"])
        for k in METRIC_NAMES:
            c[f"{k}_mean"].append(s[f"{k}_mean"])
            c[f"{k}_std"].append(s[f"{k}_std"])
    paths[3].write_text(json.dumps(curves, indent=2) + "\n", encoding="utf-8")
    if report.meta:
        paths.append(out / "report_meta.json")
        paths[-1].write_text(json.dumps(report.meta, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def read_rows(out_dir) -> BenchReport:
    path = Path(out_dir) / "rows.csv"
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise PgirError(f"{path}: unexpected header {reader.fieldnames}")
        rows = [
            {
                "model": r["model"],
                "train_size": int(r["train_size"]),
                "rep": int(r["rep"]),
                **{k: (float(r[k]) if r[k] != "" else None) for k in METRIC_NAMES},
            }
            for r in reader
        ]
    return BenchReport(rows)


def format_summary(summary: list[dict]) -> str:
    lines = [f"{'model':<7} {'size':>5} {'n':>3} {'rmse':>10} {'mae':>10} {'r2':>10} {'se':>10}"]
    for s in summary:
        vals = " ".join(f"{s[f'{k}_mean']:>10.5f}" if s[f"{k}_mean"] is not None else f"{'n/a':>10}" for k in METRIC_NAMES)
        lines.append(f"{s['model']:<7} {s['train_size']:>5} {s['n']:>3} {vals}")
    return "\n".join(lines)
