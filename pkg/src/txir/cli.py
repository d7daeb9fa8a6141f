"""Command-line entry point.

Subcommands: synth, train, eval, predict, ablate, gradcheck, embed. All
output files go under the explicit --out targets; reruns with the same seed
reproduce outputs byte-identically. Exit codes: 0 success, 1 validation
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _cap_threads():
    cap = os.environ.get("TXIR_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_cap_threads()

import numpy as np  # noqa: E402  (thread caps must precede the first numpy import)

from . import data as D  # noqa: E402
from . import train as TR  # noqa: E402
from .metrics import EvalReport  # noqa: E402
from .network import ModelConfig, load_checkpoint, model_forward  # noqa: E402
from .prompts import (FileEmbeddingProvider, ToyEmbeddingProvider,  # noqa: E402
                      toy_embed, write_embeddings)
from .tensor import Tensor, TxirError, no_grad  # noqa: E402


def _provider(args):
    if getattr(args, "embeddings", None):
        return FileEmbeddingProvider(args.embeddings)
    return ToyEmbeddingProvider(d_t=getattr(args, "d_t", 512), seed=getattr(args, "toy_seed", 0))


def _check_text_dim(provider, text_dim: int):
    if provider.d_t != text_dim:
        raise TxirError(f"embedding dimension {provider.d_t} does not match the model's "
                        f"text_dim {text_dim}; pass matching --d-t/--embeddings")


def _load_model_cfg(args) -> ModelConfig:
    if getattr(args, "model_config", None):
        with open(args.model_config) as fh:
            return ModelConfig.from_json(fh.read())
    return ModelConfig()


def cmd_synth(args) -> int:
    with open(args.spec) as fh:
        spec = D.SynthSpec.from_json(fh.read())
    records = D.generate_synthetic(spec, args.out)
    counts = {s: sum(1 for r in records if r.split == s) for s in D.SPLITS}
    print(f"samples={len(records)} train={counts['train']} val={counts['val']} "
          f"test={counts['test']} out={args.out}")
    return 0


def cmd_train(args) -> int:
    with open(args.config) as fh:
        train_cfg = TR.TrainConfig.from_json(fh.read())
    model_cfg = _load_model_cfg(args)
    records = D.load_dataset(args.data)
    provider = _provider(args)
    _check_text_dim(provider, model_cfg.text_dim)
    result = TR.train(model_cfg, train_cfg, records, provider, args.out)
    last = result.log.epochs[-1]
    print(f"epochs={len(result.log.epochs)} final_loss={last.loss:.6f} "
          f"best_val_iou={result.log.best_val_iou:.6f} checkpoint={result.checkpoint_path}")
    return 0


def _report_line(report: EvalReport) -> str:
    pd = f"{report.pd():.6f}" if report.pd_defined else "undefined"
    return (f"iou={report.iou():.6f} f1={report.f1():.6f} pd={pd} "
            f"fa_e6={report.fa_e6():.4f} samples={len(report.rows)}")


def cmd_eval(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    records = [r for r in D.load_dataset(args.data) if r.split == args.split]
    if not records:
        raise TxirError(f"no records in split {args.split!r}")
    provider = _provider(args)
    _check_text_dim(provider, config.text_dim)
    fusion, switches, use_text = TR.ablation_setup(args.ablation)
    if fusion != config.fusion:
        raise TxirError(f"checkpoint fusion {config.fusion!r} does not support "
                        f"ablation {args.ablation!r}")
    resolver = TR.PromptResolver(provider, use_text, args.default_prompt_mode)
    report = TR.evaluate_records(params, records, resolver, switches,
                                 config.input_size[0])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "eval.csv")
        report.write_json(out / "eval_summary.json")
    print(_report_line(report))
    return 0


def cmd_predict(args) -> int:
    params, config = load_checkpoint(args.checkpoint)
    image = D.read_pgm(args.image)
    h, w = image.shape
    if h % 8 != 0 or w % 8 != 0:
        raise TxirError(f"image size {h}x{w} must be divisible by 8")
    provider = _provider(args)
    _check_text_dim(provider, config.text_dim)
    vec = provider.get(args.prompt).vector.astype(np.float32)
    window = image.astype(np.float32) / 255.0
    # the network is fully convolutional: run at the image's own size
    with no_grad():
        prob = model_forward(Tensor(window.reshape(1, 1, h, w)),
                             Tensor(vec.reshape(1, -1)), params)
    out_map = np.clip(np.round(prob.data[0, 0] * 255.0), 0, 255).astype(np.uint8)
    D.write_pgm(args.out, out_map)
    print(f"out={args.out} max_prob={float(prob.data.max()):.6f}")
    return 0


def cmd_ablate(args) -> int:
    with open(args.suite) as fh:
        suite = json.load(fh)
    variants = suite.get("variants", ["full", "no_text"])
    for v in variants:
        if v not in TR.ABLATIONS:
            raise TxirError(f"unknown ablation variant {v!r}")
    train_cfg = TR.TrainConfig.from_json(json.dumps(suite.get("train", {})))
    model_cfg = (ModelConfig.from_json(json.dumps(suite["model"]))
                 if "model" in suite else ModelConfig())
    records = D.load_dataset(args.data)
    provider = _provider(args)
    _check_text_dim(provider, model_cfg.text_dim)
    rows = TR.run_ablation(variants, model_cfg, train_cfg, records, provider, args.out)
    for r in rows:
        print(f"variant={r['variant']} iou={r['iou']:.6f} f1={r['f1']:.6f} "
              f"pd={r['pd']:.6f} fa_e6={r['fa_e6']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .battery import run_gradient_battery
    results = run_gradient_battery(verbose=True)
    worst = max(err for _, err in results)
    print(f"checks={len(results)} worst_rel_err={worst:.3e}")
    return 0 if worst < 1e-4 else 2


def cmd_embed(args) -> int:
    with open(args.prompts) as fh:
        prompts = [line.rstrip("\n") for line in fh if line.strip()]
    if not prompts:
        raise TxirError(f"{args.prompts}: no prompts found")
    table = {}
    for p in prompts:
        if p in table:
            raise TxirError(f"duplicate prompt {p!r}")
        table[p] = toy_embed(p, d_t=args.d_t, seed=args.toy_seed).vector
    write_embeddings(args.out, table)
    print(f"prompts={len(table)} d_t={args.d_t} out={args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="txir",
                                     description="text-guided infrared small target detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model-config", help="ModelConfig JSON file")
    p.add_argument("--embeddings", help="TXEMB file (default: toy embedder)")
    p.add_argument("--toy", action="store_true", help="force the toy embedder")
    p.add_argument("--d-t", type=int, default=512, dest="d_t")
    p.add_argument("--toy-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=list(D.SPLITS))
    p.add_argument("--embeddings")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--d-t", type=int, default=512, dest="d_t")
    p.add_argument("--toy-seed", type=int, default=0)
    p.add_argument("--ablation", default="full", choices=list(TR.ABLATIONS))
    p.add_argument("--default-prompt-mode", default="generic_prompt",
                   choices=["generic_prompt", "zero_vector"])
    p.add_argument("--out", help="directory for eval.csv / eval_summary.json")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="probability map for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input PGM image")
    p.add_argument("--prompt", required=True, help="exact prompt string")
    p.add_argument("--embeddings")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--d-t", type=int, default=512, dest="d_t")
    p.add_argument("--toy-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output PGM probability map")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--suite", required=True, help="suite JSON: variants/train/model")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--d-t", type=int, default=512, dest="d_t")
    p.add_argument("--toy-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="run the finite-difference battery")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("embed", help="write a TXEMB file with the toy embedder")
    p.add_argument("--prompts", required=True, help="text file, one prompt per line")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--d-t", type=int, default=512, dest="d_t")
    p.add_argument("--toy-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (TxirError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"usage: see 'txir {args.command} --help'", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
