"""Command-line pipeline driver.

Subcommands cover the full loop: generate a model, render corpora, train,
breed against a target corpus, run single-image inference, re-render
parameters, and evaluate.  Identical config and seeds give byte-identical
output artifacts.  Report commands write a PNG figure next to each CSV.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

THREADS_ENV = "INVERSEFACE_THREADS"


def _pin_blas_threads() -> None:
    # Must run before numpy is imported anywhere in this process.  The tiny
    # GEMMs in this workload lose badly to BLAS thread oversubscription.
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _figure_path(csv_path: str) -> str:
    root, _ = os.path.splitext(csv_path)
    return root + ".png"


def _params_to_json(params) -> dict:
    return {
        "rotation": [float(v) for v in params.rotation],
        "shape": [float(v) for v in params.shape],
        "expression": [float(v) for v in params.expression],
        "reflectance": [float(v) for v in params.reflectance],
        "illumination": [[float(c) for c in band]
                         for band in params.illumination],
    }


def _params_from_json(data: dict, spec):
    import numpy as np

    from .facemodel import ParameterVector

    try:
        params = ParameterVector(
            rotation=np.asarray(data["rotation"], dtype=np.float64),
            shape=np.asarray(data["shape"], dtype=np.float64),
            expression=np.asarray(data["expression"], dtype=np.float64),
            reflectance=np.asarray(data["reflectance"], dtype=np.float64),
            illumination=np.asarray(data["illumination"],
                                    dtype=np.float64).reshape(9, 3),
        )
    except KeyError as exc:
        raise ValueError(f"params file missing group {exc}") from exc
    params.validate(spec)
    return params


def _load_config(path):
    from .config import config_from_dict, desk_config_dict, load_config

    if path is None:
        return config_from_dict(desk_config_dict())
    return load_config(path)


def _cmd_gen_model(args) -> int:
    from .facemodel import generate_model, save_model

    cfg = _load_config(args.config)
    model = generate_model(cfg.model)
    save_model(model, args.out)
    print(f"wrote {args.out} (m={cfg.model.m}, V={cfg.model.n_vertices})")
    return 0


def _cmd_gen_corpus(args) -> int:
    from .corpus import generate_corpus, write_shard
    from .facemodel import load_model

    cfg = _load_config(args.config)
    model = load_model(args.model)
    prior = cfg.prior(args.prior)
    shard = generate_corpus(model, cfg.camera, prior, args.count,
                            start_index=args.start, threads=args.threads)
    write_shard(shard, args.out)
    skipped = f", skipped {len(shard.skipped)}" if shard.skipped else ""
    print(f"wrote {args.out} ({shard.count} records at "
          f"{shard.width}x{shard.height}{skipped})")
    return 0


def _resolve_diag(args, cfg, model):
    from .regressor import identity_diagonal

    if getattr(args, "unweighted", False):
        return identity_diagonal(model.spec.m)
    return cfg.loss_weights.diagonal(model)


def _cmd_train(args) -> int:
    from .corpus import read_shard
    from .facemodel import load_model
    from .figures import loss_curve
    from .regressor import init_state, load_state, save_state, train, write_trace

    cfg = _load_config(args.config)
    model = load_model(args.model)
    shard = read_shard(args.corpus)
    tp = cfg.training
    if args.resume:
        state = load_state(args.resume)
    else:
        state = init_state(cfg.network, seed=tp.init_seed)
    iterations = args.iters if args.iters is not None else tp.iterations
    state, trace = train(
        state, shard, _resolve_diag(args, cfg, model), iterations,
        batch_size=tp.batch_size, lr=tp.learning_rate, decay=tp.weight_decay,
        rho=tp.rho, eps=tp.eps, shuffle_seed=tp.shuffle_seed)
    save_state(state, args.out)
    if args.trace:
        write_trace(trace, args.trace)
        loss_curve(trace, _figure_path(args.trace))
    last = trace[-1][1] if trace else float("nan")
    print(f"wrote {args.out} after {iterations} iterations "
          f"(last loss window {last:.6g})")
    return 0


def _cmd_breed(args) -> int:
    from .breeding import breed, write_metrics
    from .corpus import read_shard
    from .evaluation import evaluate
    from .facemodel import load_model
    from .figures import breeding_rounds
    from .regressor import load_state, save_state

    cfg = _load_config(args.config)
    model = load_model(args.model)
    state = load_state(args.net)
    target = read_shard(args.target)
    diag = _resolve_diag(args, cfg, model)
    eval_shard = read_shard(args.eval) if args.eval else None

    def eval_fn(st):
        report = evaluate(st, eval_shard, model, cfg.camera, diag)
        return {m: report.mean(m)
                for m in ("weighted_loss", "photometric", "geometric", "iou")}

    state, metrics = breed(
        state, target, model, cfg.camera, cfg.breeding, diag,
        batch_size=cfg.training.batch_size, lr=cfg.training.learning_rate,
        decay=cfg.training.weight_decay,
        eval_fn=eval_fn if eval_shard is not None else None)
    save_state(state, args.out)
    if args.metrics:
        write_metrics(metrics, args.metrics)
        breeding_rounds(metrics, _figure_path(args.metrics))
    print(f"wrote {args.out} after {cfg.breeding.n_breed} breeding rounds")
    return 0


def _cmd_infer(args) -> int:
    import numpy as np

    from .imagefiles import read_ppm
    from .regressor import forward, load_state, normalize_input

    cfg = _load_config(args.config)
    state = load_state(args.net)
    if state.spec.n_outputs != cfg.model.m:
        raise ValueError(
            f"network outputs {state.spec.n_outputs} do not match the "
            f"config's model (m={cfg.model.m}); pass the matching --config")
    image = read_ppm(args.image)
    batch = normalize_input(image, state.spec.input_resolution)[None]
    pred = forward(state, batch)[0].astype(np.float64)
    from .facemodel import ParameterVector

    params = ParameterVector.from_flat(cfg.model, pred)
    with open(args.out, "w") as f:
        json.dump(_params_to_json(params), f, indent=1)
        f.write("\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_render(args) -> int:
    from .facemodel import load_model
    from .imagefiles import write_pgm, write_ppm
    from .renderer import render

    cfg = _load_config(args.config)
    model = load_model(args.model)
    with open(args.params) as f:
        params = _params_from_json(json.load(f), model.spec)
    sample = render(model, cfg.camera, params)
    write_ppm(args.out, sample.image)
    if args.mask:
        write_pgm(args.mask, sample.mask)
    print(f"wrote {args.out}" + (f" and {args.mask}" if args.mask else ""))
    return 0


def _cmd_eval(args) -> int:
    from .corpus import read_shard
    from .evaluation import evaluate
    from .facemodel import load_model
    from .figures import eval_histograms
    from .regressor import load_state

    cfg = _load_config(args.config)
    model = load_model(args.model)
    state = load_state(args.net)
    shard = read_shard(args.corpus)
    report = evaluate(state, shard, model, cfg.camera,
                      _resolve_diag(args, cfg, model))
    report.to_csv(args.report)
    eval_histograms(report, _figure_path(args.report))
    print(report.summary())
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inverseface",
        description="Synthetic face rendering and single-shot inverse "
                    "rendering pipeline.")
    parser.add_argument(
        "--threads", type=int,
        default=int(os.environ.get(THREADS_ENV, "1")),
        help="worker process cap for corpus generation (0 = all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="generate and save a face model")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_model)

    p = sub.add_parser("gen-corpus", help="sample a prior and render a shard")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--prior", default="base")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--start", type=int, default=0,
                   help="first record index (records are index-seeded)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_corpus)

    p = sub.add_parser("train", help="train the regressor on a shard")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="loss trace CSV (+ PNG alongside)")
    p.add_argument("--resume", help="continue from a saved network")
    p.add_argument("--unweighted", action="store_true",
                   help="use the unweighted Euclidean loss")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("breed", help="adapt a trained net to a target corpus")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="per-round metrics CSV (+ PNG alongside)")
    p.add_argument("--eval", help="held-out shard for per-round metrics")
    p.set_defaults(fn=_cmd_breed)

    p = sub.add_parser("infer", help="regress parameters from one PPM image")
    p.add_argument("--config")
    p.add_argument("--net", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("render", help="render a parameter JSON file")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask")
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("eval", help="evaluate a net on a labeled shard")
    p.add_argument("--config")
    p.add_argument("--model", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--unweighted", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    return parser


def main(argv=None) -> int:
    _pin_blas_threads()
    args = _build_parser().parse_args(argv)
    from .binio import FormatError
    from .config import ConfigError

    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
    except (FormatError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
