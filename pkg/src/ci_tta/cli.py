"""``ci-tta`` command line: predict, eval, sweep, synth, train, serve.

Exit codes: 0 success, 2 invalid arguments, 3 backend failure, 4 I/O error.
``predict`` runs the pipeline in-process against a model file or an external
backend; with ``--server`` it instead acts as a thin client of a running
``ci-tta serve`` instance.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .deform import DeformationConfig
from .errors import (
    BackendFailure,
    FileFormatError,
    InvalidArgumentError,
    TrainingFailure,
)
from .harness import (
    SweepSpec,
    export_confidence_histograms,
    generate_synthetic_dg,
    load_manifest,
    results_to_jsonl,
    run_sweep,
    train_tiny_model,
)
from .imgcore import read_image
from .inference import encode_image_payload, load_backend
from .pipeline import PipelineConfig, infer_dataset, infer_one

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID_ARGS = 2
EXIT_BACKEND = 3
EXIT_IO = 4


def _parse_grid(text: str) -> tuple[int, int]:
    rows, sep, cols = text.lower().partition("x")
    if not sep or not rows.isdigit() or not cols.isdigit():
        raise InvalidArgumentError(f"bad grid {text!r}, want ROWSxCOLS like 4x4")
    return int(rows), int(cols)


def _parse_values(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v != "")
    except ValueError as exc:
        raise InvalidArgumentError(f"bad value list {text!r}: {exc}") from exc


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma", type=float, default=0.01, help="deformation strength, fraction of min(H,W)")
    parser.add_argument("--tau", type=float, default=0.7, help="confidence threshold in [0,1]")
    parser.add_argument("--n-variants", type=int, default=100, help="number of deformed variants N")
    parser.add_argument("--grid", default="4x4", help="control grid as ROWSxCOLS")
    parser.add_argument("--elastic-fraction", type=float, default=0.5, help="share of elastic variants")
    parser.add_argument("--kappa", type=int, default=None, help="elastic smoothing kernel size (odd); default auto")
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--no-filter", action="store_true", help="disable confidence filtering")
    parser.add_argument("--chunk", type=int, default=None, help="max views per backend batch call")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    rows, cols = _parse_grid(args.grid)
    deform = DeformationConfig(
        sigma=args.sigma,
        kappa=args.kappa,
        grid_rows=rows,
        grid_cols=cols,
        elastic_fraction=args.elastic_fraction,
    )
    return PipelineConfig(
        n_variants=args.n_variants,
        deform=deform,
        tau=args.tau,
        filtering_enabled=not args.no_filter,
        seed=args.seed,
        batch_chunk=args.chunk,
    )


def _decision_json(image_id: int, result) -> dict:
    decision = result.decision
    return {
        "image_id": image_id,
        "predicted_class": int(decision.predicted_class),
        "confidence": float(np.max(decision.final_probs)),
        "final_probs": [float(p) for p in decision.final_probs],
        "retained_count": int(decision.retained_count),
        "fallback_used": bool(decision.fallback_used),
    }


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    img = read_image(args.input)
    if args.server:
        import httpx

        payload = {
            "shape": list(img.shape),
            "data": encode_image_payload(img),
            "image_id": args.image_id,
            "n_variants": cfg.n_variants,
            "sigma": cfg.deform.sigma,
            "tau": cfg.tau,
            "kappa": cfg.deform.kappa,
            "grid_rows": cfg.deform.grid_rows,
            "grid_cols": cfg.deform.grid_cols,
            "elastic_fraction": cfg.deform.elastic_fraction,
            "filtering": cfg.filtering_enabled,
            "seed": cfg.seed,
        }
        response = httpx.post(f"{args.server.rstrip('/')}/predict", json=payload, timeout=300.0)
        if response.status_code != 200:
            raise BackendFailure(f"server returned {response.status_code}: {response.text}")
        print(json.dumps(response.json()))
        return EXIT_OK
    backend = load_backend(args.model)
    try:
        result = infer_one(img, backend, cfg, args.image_id)
    finally:
        backend.close()
    if not result.ok:
        raise BackendFailure(result.error)
    print(json.dumps(_decision_json(args.image_id, result)))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    manifest = load_manifest(args.manifest)
    backend = load_backend(args.model)
    try:
        results, summary = infer_dataset(
            list(manifest), backend, cfg, workers=args.workers, hash_ids=args.hash_ids
        )
    finally:
        backend.close()
    jsonl = results_to_jsonl(results, manifest)
    if args.out:
        Path(args.out).write_text(jsonl, encoding="utf-8")
        print(json.dumps(summary))
    else:
        sys.stdout.write(jsonl)
        print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    values = _parse_values(args.values) if args.values else ()
    spec = SweepSpec(kind=args.kind, values=values, fixed=cfg)
    manifest = load_manifest(args.manifest)
    backend = load_backend(args.model)
    try:
        report = run_sweep(
            spec, manifest, backend, workers=args.workers, keep_results=args.hist is not None
        )
    finally:
        backend.close()
    out = Path(args.out)
    report.write(out)
    emitted = [str(out), str(out.with_suffix(".json"))]
    if args.hist is not None:
        for row in report.rows:
            hist = export_confidence_histograms(report.results[row.param], manifest, args.hist)
            hist_path = out.with_name(f"{out.stem}_hist_{row.param:g}.csv")
            hist_path.write_text(hist.to_csv_text(), encoding="utf-8")
            emitted.append(str(hist_path))
    print(json.dumps({"rows": len(report.rows), "files": emitted}))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    source, shifted = generate_synthetic_dg(
        args.out, classes=args.classes, per_domain=args.per_domain, seed=args.seed
    )
    assert len(source) == len(shifted)
    print(
        json.dumps(
            {
                "out": args.out,
                "source_manifest": str(Path(args.out) / "source.csv"),
                "shifted_manifest": str(Path(args.out) / "shifted.csv"),
                "images_per_domain": len(source),
            }
        )
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    layers = [int(v) for v in args.layers.split(",") if v != ""] if args.layers else []
    report = train_tiny_model(
        manifest,
        layers=layers,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        out_path=args.out,
        batch_size=args.batch_size,
    )
    print(json.dumps(asdict(report)))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    cfg = _config_from_args(args)
    backend = load_backend(args.model)
    app = create_app(backend, cfg, model_label=args.model)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ci-tta",
        description="Class-invariant test-time augmentation for image classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_predict = sub.add_parser("predict", help="classify one image with deformation ensembling")
    p_predict.add_argument("--model", help="CITM path, tcp:host:port, or exec:cmd")
    p_predict.add_argument("--input", required=True, help="IMGF or PPM image path")
    p_predict.add_argument("--image-id", type=int, default=0, help="stream id for this image")
    p_predict.add_argument("--server", default=None, help="URL of a running ci-tta serve instance")
    _add_pipeline_flags(p_predict)
    p_predict.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("eval", help="evaluate a manifest; summary plus per-image JSONL")
    p_eval.add_argument("--manifest", required=True, help="CSV manifest: path,label per line")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--out", default=None, help="JSONL output path (default: stdout)")
    p_eval.add_argument("--workers", type=int, default=1, help="parallel images")
    p_eval.add_argument("--hash-ids", action="store_true", help="key image streams by content hash")
    _add_pipeline_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="ablation sweep over sigma, tau, or filtering on/off")
    p_sweep.add_argument("--kind", required=True, choices=["sigma", "tau", "cf"])
    p_sweep.add_argument("--values", default=None, help="comma-separated sweep values (ignored for cf)")
    p_sweep.add_argument("--manifest", required=True)
    p_sweep.add_argument("--model", required=True)
    p_sweep.add_argument("--out", default="sweep.csv", help="CSV report path; JSON mirror alongside")
    p_sweep.add_argument("--hist", type=int, default=None, help="also emit confidence histograms with this many bins")
    p_sweep.add_argument("--workers", type=int, default=1)
    _add_pipeline_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_synth = sub.add_parser("synth", help="generate the synthetic two-domain shape dataset")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--per-domain", type=int, default=30)
    p_synth.add_argument("--classes", type=int, default=3)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="fit a small builtin model on a manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--layers", default="64", help="comma-separated hidden sizes; empty for linear")
    p_train.add_argument("--epochs", type=int, required=True)
    p_train.add_argument("--lr", type=float, required=True)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--out", required=True, help="CITM output path")
    p_train.set_defaults(func=cmd_train)

    p_serve = sub.add_parser("serve", help="run the HTTP inference service")
    p_serve.add_argument("--model", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    _add_pipeline_flags(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "predict" and not args.server and not args.model:
        parser.error("predict needs --model or --server")
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_ARGS
    except BackendFailure as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (FileFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingFailure as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
