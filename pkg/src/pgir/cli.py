"""Command-line entry point: ``pgir gen | train | bench | verify``.

Exit codes: 0 ok, 1 verification failure, 2 usage/config, 3 I/O,
4 data/shape mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .errors import ConfigError, DimensionError, FormatError, ParameterError, RangeError, SchemaError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 1, 2, 3, 4

log = logging.getLogger("pgir")


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _window(text: str) -> list[int]:
    vals = _csv_ints(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("window must be LO,HI")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgir", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic moisture-image dataset")
    g.add_argument("--config", type=Path)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--save-fields", action="store_true", help="also store the clean moisture fields (.f32)")

    t = sub.add_parser("train", help="train one model of the direct or inverse route")
    t.add_argument("--mode", choices=["direct", "inverse-stage1", "inverse-stage2"], required=True)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--model-out", type=Path, required=True)
    t.add_argument("--inverse-model", type=Path, help="stage-1 weight file (required for inverse-stage2)")
    t.add_argument("--test-data", type=Path, help="separate evaluation dataset; default is a split of --data")
    t.add_argument("--test-fraction", type=float, default=0.2)
    t.add_argument("--config", type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--window", type=_window, help="evaluation window LO,HI (1-based epochs)")
    t.add_argument("--lr", type=float, help="learning rate of the model being trained")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--fidelity-weight", type=float)
    t.add_argument("--variant", choices=["resnet18", "resnet-small"], default="resnet-small")

    b = sub.add_parser("bench", help="Monte Carlo comparison of the direct and physics-guided routes")
    b.add_argument("--config", type=Path)
    b.add_argument("--out", type=Path, required=True)
    b.add_argument("--train-sizes", type=_csv_ints)
    b.add_argument("--test-size", type=int)
    b.add_argument("--reps", type=int)
    b.add_argument("--variant", choices=["resnet18", "resnet-small"])
    b.add_argument("--seed", type=int)
    b.add_argument("--jobs", type=int)
    b.add_argument("--epochs", type=int)
    b.add_argument("--window", type=_window)

    v = sub.add_parser("verify", help="run the built-in verification suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--inject-fault", help=argparse.SUPPRESS)
    return p


def _drop_none(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            v = _drop_none(v)
            if v:
                out[k] = v
        elif v is not None:
            out[k] = v
    return out


def cmd_gen(args) -> int:
    from .config import load_run_config, write_effective_config
    from .synth import generate_dataset, manifest_hash

    if args.n < 0:
        raise ConfigError("--n must be >= 0")
    cfg = load_run_config(args.config)
    synth = cfg.synth()
    manifest = generate_dataset(synth, args.seed, args.out, args.n, save_fields=args.save_fields)
    write_effective_config(cfg, args.out)
    print(f"wrote {args.n} samples to {args.out}")
    print(f"manifest sha256 {manifest_hash(manifest)}")
    return EXIT_OK


def _train_overrides(args) -> dict:
    train = {"seed": args.seed, "epochs": args.epochs, "window": args.window, "batch_size": args.batch_size}
    train["fidelity_weight"] = args.fidelity_weight
    if args.lr is not None:
        train["lr_inverse" if args.mode == "inverse-stage1" else "lr_regressor"] = args.lr
    if args.epochs is not None and args.window is None:
        # keep the default window inside a shortened run
        train["window"] = [min(25, args.epochs), args.epochs]
    return _drop_none({"train": train})


def cmd_train(args, parser) -> int:
    from .config import load_run_config, write_effective_config
    from .models import RegressorConfig, load_model, save_model
    from .pipeline import (
        field_discrepancy,
        images_of,
        inverse_features,
        stratified_split,
        train_inverse,
        train_regressor,
        write_loss_trace_csv,
        write_trace_csv,
    )
    from .synth import load_dataset

    if args.mode == "inverse-stage2" and args.inverse_model is None:
        parser.error("--mode inverse-stage2 requires --inverse-model (a stage-1 weight file)")
    if not 0 < args.test_fraction < 1:
        parser.error("--test-fraction must be in (0, 1)")
    cfg = load_run_config(args.config, _train_overrides(args))
    tcfg = cfg.train_config()
    out_dir = args.model_out.parent
    out_dir.mkdir(parents=True, exist_ok=True)

    records = load_dataset(args.data)
    if not records:
        raise SchemaError(f"{args.data}: dataset is empty")
    if args.test_data is not None:
        train_recs, test_recs = records, load_dataset(args.test_data)
    else:
        labels = [r.y_noisy for r in records]
        n_train = max(1, min(len(records) - 1, round(len(records) * (1 - args.test_fraction))))
        tr, te = stratified_split(labels, n_train, tcfg.seed)
        train_recs, test_recs = [records[i] for i in tr], [records[i] for i in te]

    stem = args.model_out.stem
    if args.mode == "inverse-stage1":
        res = train_inverse(images_of(train_recs), tcfg)
        save_model(res.model, args.model_out)
        write_loss_trace_csv(res.loss_trace, out_dir / f"{stem}_loss_trace.csv")
        print(f"stage-1 physics loss: first epoch {res.loss_trace[0]:.6g}, last epoch {res.loss_trace[-1]:.6g}")
        if test_recs and all(r.true_field is not None for r in test_recs):
            mse = field_discrepancy(res.model, images_of(test_recs), [r.true_field for r in test_recs])
            print(f"held-out field MSE (clipped output vs true field): {mse:.6g}")
    else:
        z_tr, z_te = images_of(train_recs), images_of(test_recs)
        if args.mode == "inverse-stage2":
            g_inv = load_model(args.inverse_model)
            if g_inv.kind != "inverse":
                raise FormatError(f"{args.inverse_model} is not a stage-1 (inverse) model")
            if z_tr.shape[1] != g_inv.config.channels[0]:
                raise DimensionError("image channels do not match the stage-1 model")
            z_tr, z_te = inverse_features(g_inv, z_tr), inverse_features(g_inv, z_te)
        res = train_regressor(
            z_tr,
            [r.y_noisy for r in train_recs],
            z_te,
            [r.y_noisy for r in test_recs],
            tcfg,
            RegressorConfig(args.variant),
            tag=args.mode,
        )
        save_model(res.model, args.model_out)
        write_trace_csv(res.trace, out_dir / f"{stem}_metrics.csv")
        m = res.metrics
        print("window-mean test metrics: " + ", ".join(f"{k}={'n/a' if v is None else format(v, '.6g')}" for k, v in m.items()))
    write_effective_config(cfg, out_dir)
    print(f"model written to {args.model_out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .benchmark import emit_report, format_summary, run_monte_carlo, summarize
    from .config import load_run_config, write_effective_config

    bench = {
        "train_sizes": args.train_sizes,
        "test_size": args.test_size,
        "reps": args.reps,
        "variant": args.variant,
        "base_seed": args.seed,
        "jobs": args.jobs,
    }
    train = {"epochs": args.epochs, "window": args.window}
    if args.epochs is not None and args.window is None:
        train["window"] = [min(25, args.epochs), args.epochs]
    cfg = load_run_config(args.config, _drop_none({"bench": bench, "train": train}))
    bcfg = cfg.bench_config()
    args.out.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, args.out)
    t0 = time.perf_counter()
    report = run_monte_carlo(bcfg, jobs=cfg.bench.jobs)
    elapsed = time.perf_counter() - t0
    emit_report(report, args.out)
    (args.out / "timing.json").write_text(json.dumps({"elapsed_seconds": round(elapsed, 1), "jobs": cfg.bench.jobs}) + "\n")
    print(format_summary(summarize(report)))
    print(f"report written to {args.out} ({elapsed:.0f}s)")
    return EXIT_OK


def cmd_verify(args) -> int:
    import contextlib

    from .nn import inject_fault
    from .verify import run_checks

    ctx = inject_fault(args.inject_fault) if args.inject_fault else contextlib.nullcontext()
    with ctx:
        results = run_checks(args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("verification FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_verify(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DimensionError, FormatError, SchemaError, RangeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
