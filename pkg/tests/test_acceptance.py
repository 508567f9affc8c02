"""End-to-end acceptance suite: one test and one PASS/FAIL line per criterion.

Criterion 5 needs a full desk-scale benchmark (hours on a small machine). It
reads a report produced by ``pgir bench --config configs/desk_acceptance.json``
from ``$PGIR_ACCEPTANCE_REPORT`` (default ``runs/acceptance``), after checking
that the report's effective config is exactly the desk configuration. If no
report exists the benchmark is run in-process.
"""
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from pgir.benchmark import compute_metrics, emit_report, read_rows, run_monte_carlo, summarize
from pgir.cli import main
from pgir.config import load_run_config
from pgir.diffusion import DiffusionScenario, sample_scenario, solve_fd_oracle, solve_fourier
from pgir.field import GridSpec, integrate
from pgir.pipeline import PreprocessConfig, images_of, physics_loss, predict_inverse, preprocess_real
from pgir.synth import NoiseSpec, SynthConfig, invert_colormap, render_colormap, synthesize
from pgir.verify import layer_grad_checks

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk_acceptance.json"
RUNTIME_BUDGET_S = 2 * 3600


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_solver(verdict):
    t0 = time.perf_counter()
    g = GridSpec(64, 64)
    rng = np.random.default_rng(2024)
    gap = max(
        float(np.abs(solve_fourier(s, g).values - solve_fd_oracle(s, g).values).max())
        for s in (sample_scenario(rng) for _ in range(20))
    )
    const = DiffusionScenario(0.1, (0.4, 0.4, 0.4, 0.4), 0.4, 0.3, K=32)
    const_err = float(np.abs(solve_fourier(const, g).values - 0.4).max())
    elapsed = time.perf_counter() - t0
    ok = gap <= 2e-2 and const_err <= 1e-12 and elapsed <= 60
    verdict(1, "solver vs FD oracle", ok, f"sup gap {gap:.3e} (<= 2e-2), constant err {const_err:.1e} (<= 1e-12), {elapsed:.1f}s (<= 60s)")


def test_criterion_2_gradients(verdict):
    t0 = time.perf_counter()
    errors = {name: f() for name, f in layer_grad_checks(0).items()}
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = all(v <= 1e-4 for v in errors.values()) and elapsed <= 300
    verdict(2, "gradient fidelity", ok, f"{len(errors)} checks, worst {worst}={errors[worst]:.2e} (<= 1e-4), {elapsed:.1f}s (<= 300s)")


def test_criterion_3_physics_loss(verdict):
    d = torch.float64
    const = physics_loss(torch.full((2, 3, 16, 16), 0.7, dtype=d)).item()
    i = torch.arange(16, dtype=d).view(-1, 1)
    j = torch.arange(16, dtype=d).view(1, -1)
    bilinear = physics_loss(torch.stack([0.3 * i * j, -0.02 * i * j, 1.5 * i * j])[None]).item()
    x = torch.zeros(1, 3, 16, 16, dtype=d)
    x[0, 0] = (i**2).expand(16, 16)
    para = physics_loss(x).item()
    ok = const <= 1e-10 and bilinear <= 1e-10 and abs(para - 4 / 3) <= 1e-6
    verdict(3, "physics-loss analytics", ok, f"constant {const:.1e}, bilinear {bilinear:.1e}, i^2 fixture {para:.9f} (4/3)")


def test_criterion_4_colormap_and_oracle(verdict):
    x = np.random.default_rng(0).uniform(0, 1, 1000)
    rt = float(np.abs(invert_colormap(render_colormap(x[None, :]))[0] - x).max())
    clean = SynthConfig(grid=GridSpec(64, 64), noise=NoiseSpec(sigma_field=0.0, sigma_label=0.0, circle_count=(0, 0)))
    records = synthesize(clean, 5, 20)

    def g_inv(zt):
        return invert_colormap((zt.numpy().transpose(0, 2, 3, 1) * 255.0).round())[:, None]

    def f(x_hat):
        return np.array([integrate(v[0]) for v in x_hat.numpy()])

    pred = predict_inverse(g_inv, f, images_of(records))
    oracle = float(np.abs(pred - np.array([r.y_clean for r in records])).max())
    ok = rt <= 0.5 / 255 + 1e-9 and oracle <= 1e-3
    verdict(4, "colormap round trip and analytic oracle", ok, f"round trip {rt:.3e} (<= {0.5 / 255 + 1e-9:.3e}), label recovery {oracle:.2e} (<= 1e-3)")


def _desk_report():
    expected = load_run_config(DESK_CONFIG).model_dump(mode="json")
    out = Path(os.environ.get("PGIR_ACCEPTANCE_REPORT", ROOT / "runs" / "acceptance"))
    if (out / "rows.csv").exists():
        effective = json.loads((out / "effective_config.json").read_text())
        assert effective == expected, f"{out} was produced with a different configuration"
        timing = json.loads((out / "timing.json").read_text())
        return read_rows(out), timing["elapsed_seconds"], timing.get("jobs", 1), str(out)
    cfg = load_run_config(DESK_CONFIG)
    t0 = time.perf_counter()
    report = run_monte_carlo(cfg.bench_config(), jobs=cfg.bench.jobs)
    elapsed = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, out)
    return report, elapsed, cfg.bench.jobs, "in-process run"


@pytest.mark.slow
def test_criterion_5_desk_benchmark(verdict):
    report, elapsed, jobs, source = _desk_report()
    s = {(e["model"], e["train_size"]): e for e in summarize(report)}
    r2 = {k: v["r2_mean"] for k, v in s.items()}
    rmse = {k: v["rmse_mean"] for k, v in s.items()}
    checks = {
        "r2 pgnn > direct @15": r2[("pgnn", 15)] > r2[("direct", 15)],
        "r2 pgnn >= direct @30": r2[("pgnn", 30)] >= r2[("direct", 30)],
        "rmse direct 100 < 15": rmse[("direct", 100)] < rmse[("direct", 15)],
        "rmse pgnn 100 < 15": rmse[("pgnn", 100)] < rmse[("pgnn", 15)],
        f"runtime <= {RUNTIME_BUDGET_S}s": elapsed <= RUNTIME_BUDGET_S,
    }
    table = ", ".join(
        f"{m}@{n}: r2={r2[(m, n)]:.4f} rmse={rmse[(m, n)]:.4f}" for n in (15, 30, 50, 100) for m in ("direct", "pgnn")
    )
    failed = [k for k, v in checks.items() if not v]
    detail = f"{table}; runtime {elapsed:.0f}s with {jobs} job(s) on {os.cpu_count()} core(s) [{source}]"
    if failed:
        detail += "; failed: " + ", ".join(failed)
    verdict(5, "desk-scale ordering and trend", not failed, detail)


def test_criterion_6_determinism(verdict, tmp_path):
    for d in ("g1", "g2"):
        assert main(["gen", "--out", str(tmp_path / d), "--n", "5", "--seed", "1"]) == 0
    gen_same = (tmp_path / "g1" / "labels.csv").read_bytes() == (tmp_path / "g2" / "labels.csv").read_bytes()
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps({"grid": {"height": 32, "width": 32}, "noise": {"circle_radius": [1, 4]}, "train": {"epochs": 3, "window": [2, 3]}}))
    for d in ("b1", "b2"):
        assert main(["bench", "--config", str(cfg), "--train-sizes", "15", "--reps", "1", "--test-size", "10", "--seed", "9", "--out", str(tmp_path / d)]) == 0
    bench_same = (tmp_path / "b1" / "rows.csv").read_bytes() == (tmp_path / "b2" / "rows.csv").read_bytes()
    verdict(6, "byte-identical reruns", gen_same and bench_same, f"labels.csv identical={gen_same}, rows.csv identical={bench_same}")


def test_criterion_7_metrics(verdict):
    fixture = [
        ([1.0, 2.0], [1.0, 4.0], math.sqrt(2), 1.0, 1 - 4 / 4.5, 1 / math.sqrt(2)),
        ([3.0, 5.0, 7.0], [3.0, 5.0, 7.0], 0.0, 0.0, 1.0, 0.0),
        ([5.0, 5.0, 5.0], [3.0, 5.0, 7.0], math.sqrt(8 / 3), 4 / 3, 0.0, math.sqrt(8 / 9) / math.sqrt(3)),
        ([0.0, 0.0, 0.0, 0.0], [1.0, -1.0, 1.0, -1.0], 1.0, 1.0, 0.0, 0.0),
        ([2.0, 1.0], [0.0, 2.0], math.sqrt(2.5), 1.5, -1.5, 0.5 / math.sqrt(2)),
    ]
    worst = 0.0
    for preds, targets, *expected in fixture:
        m = compute_metrics(preds, targets)
        worst = max(worst, *(abs(m[k] - e) for k, e in zip(("rmse", "mae", "r2", "se"), expected)))
    verdict(7, "metrics oracle", worst <= 1e-9, f"max deviation over 5 rows {worst:.1e} (<= 1e-9)")


def test_criterion_8_real_image_contract(verdict):
    cfg = PreprocessConfig()
    # gray inside the ROI, white outside: an exact crop normalizes to all zeros
    img = np.ones((300, 500, 3))
    img[:110, :350] = 0.5
    out = preprocess_real(img, cfg)
    crop_exact = out.shape == (3, 224, 224) and float(out.abs().max()) <= 1e-6
    rand = np.random.default_rng(1).integers(0, 256, size=(240, 420, 3), dtype=np.uint8)
    deterministic = torch.equal(preprocess_real(rand, cfg), preprocess_real(rand, cfg))
    ok = crop_exact and deterministic and cfg.roi[2:] == (110, 350) and tuple(cfg.resize) == (224, 224)
    verdict(8, "real-image preprocessing contract", ok, f"ROI {cfg.roi[2]}x{cfg.roi[3]} -> {tuple(out.shape)}, exact crop={crop_exact}, eval deterministic={deterministic}")
