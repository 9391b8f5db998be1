"""Command line entry point.

    depthrec gen       --task graph --complexities 1-5 --count 1000 --out data/
    depthrec train     --config run.yaml [--out runs/graph] [--seed 3]
    depthrec eval      --checkpoint runs/graph/model.ckpt [--config run.yaml] [--out reports/]
    depthrec gradcheck [--config run.yaml]
    depthrec ablate    --config run.yaml [--out reports/ablation]

Delimited results (CSV) go to stdout; figures and files go under --out.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .ablate import ablation_csv, emit_ablation, run_ablation
from .config import ConfigError, RunConfig, default_config, load, parse_range
from .evaluate import emit, frontier_stats, report_csv, sweep
from .gradcheck import check_all
from .model import ModelConfig, TASKS, build_model
from .perception import FAMILY_VOCAB, LOGIC_VOCAB
from .tasks import generate, verify
from .train import SEED_GEN, TrainingDiverged, train

log = logging.getLogger("depthrec")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _config(args) -> RunConfig:
    if args.config:
        return load(args.config, seed=args.seed)
    task = getattr(args, "task", None)
    if not task:
        raise ConfigError("either --config or --task is required")
    return default_config(task, args.seed if args.seed is not None else 0)


def _snapshot(cfg: RunConfig, out: Path, name: str = "config.yaml") -> None:
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.atomic_write_text(out / name, cfg.to_yaml())


def cmd_gen(args) -> int:
    cfg = _config(args)
    if args.task and args.task != cfg.task:
        raise ConfigError(f"--task {args.task} disagrees with config task {cfg.task}")
    complexities = parse_range(args.complexities) if args.complexities else cfg.gen.complexities
    count = args.count or cfg.gen.count
    out = Path(args.out or cfg.paths.data)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for c in complexities:
        rng = np.random.default_rng([cfg.seed, SEED_GEN, c])
        kw = {"id_pool": cfg.model.id_pool} if cfg.task == "graph" else {}
        for inst in generate(cfg.task, [c] * count, rng, **kw):
            if not verify(cfg.task, inst):
                log.error("oracle mismatch: %s", inst.to_json())
                return EXIT_FAIL
            lines.append(inst.to_json())
    path = out / f"{cfg.task}.jsonl"
    checkpoint.atomic_write_text(path, "\n".join(lines) + "\n")
    if cfg.task in ("logic", "family"):
        vocab = LOGIC_VOCAB if cfg.task == "logic" else FAMILY_VOCAB
        checkpoint.atomic_write_text(out / "vocab.txt", "\n".join(vocab.tokens) + "\n")
    cfg.gen.complexities, cfg.gen.count = list(complexities), count
    _snapshot(cfg, out, f"{cfg.task}.config.yaml")
    print(f"wrote {len(lines)} records to {path} (oracle verified)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or Path(cfg.paths.checkpoints) / cfg.task)
    _snapshot(cfg, out)
    model = build_model(cfg.model, seed=cfg.seed)
    try:
        res = train(cfg.train, model, out, resume=True,
                    on_log=lambda r: print(",".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                                    for k, v in r.items()), flush=True))
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"checkpoint: {out / 'model.ckpt'} ({res.steps_done} steps)")
    return EXIT_OK


def _model_from_checkpoint(path: Path) -> tuple[object, dict]:
    _, meta = checkpoint.load_tensors(path)
    if "model" not in meta:
        raise checkpoint.CheckpointError(f"{path}: no model config in checkpoint metadata")
    model = build_model(ModelConfig(**meta["model"]), seed=0)
    checkpoint.load_into(path, model)
    return model, meta


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir():
        ckpt = ckpt / "model.ckpt"
    model, meta = _model_from_checkpoint(ckpt)
    cfg = load(args.config, seed=args.seed) if args.config else default_config(model.task, args.seed or 0)
    if cfg.task != model.task:
        raise ConfigError(f"config task {cfg.task} does not match checkpoint task {model.task}")
    steps = parse_range(args.steps) if args.steps else cfg.eval.steps
    cx = parse_range(args.complexities) if args.complexities else cfg.eval.complexities
    n = args.n or cfg.eval.n_per_cell
    tr = meta.get("train", {})
    train_steps = (tr["t_lo"], tr["t_hi"]) if "t_lo" in tr else None
    train_cx = (tr["complexity_lo"], tr["complexity_hi"]) if "complexity_lo" in tr else None
    report = sweep(model, steps, cx, n_per_cell=n, seed=cfg.seed, train_steps=train_steps, train_complexity=train_cx)
    report.meta["checkpoint"] = str(ckpt)
    out = Path(args.out or cfg.paths.reports)
    paths = emit(report, out, image_format=args.format or cfg.eval.image_format)
    _snapshot(cfg, out, f"{report.task}_heatmap.config.yaml")
    sys.stdout.write(report_csv(report))
    for f in frontier_stats(report, cfg.eval.threshold):
        print(f"# frontier complexity={f.complexity} min_steps={f.min_steps} sharpness={f.sharpness}")
    print(f"# wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args) if (args.config or getattr(args, "task", None)) else default_config("graph", args.seed or 0)
    gc = cfg.gradcheck
    ok = True
    for task, rep in check_all(gc).items():
        passed = rep.passed(gc.tol)
        ok &= passed
        print(f"{task},{rep.max_rel_err:.3e},{rep.n_checked},{'pass' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = Path(args.out or Path(cfg.paths.reports) / f"{cfg.task}_ablation")
    _snapshot(cfg, out)
    ab = cfg.ablate
    rows = run_ablation(cfg.model, cfg.train, ab.deep_complexities, ab.ood_complexities, ab.sufficient_steps,
                        ab.n_per_cell, cfg.seed, out_dir=out / "runs",
                        on_log=lambda m, r: print(f"# {m} step={r['step']} loss={r['loss']:.4f} "
                                                  f"acc={r['train_acc']:.3f}", flush=True))
    meta = {"task": cfg.task, "deep": ab.deep_complexities, "ood": ab.ood_complexities, "seed": cfg.seed}
    paths = emit_ablation(rows, out, meta)
    sys.stdout.write(ablation_csv(rows))
    print(f"# wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthrec", description="Depth-recurrent reasoning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, task=False):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--checkpoint", help="checkpoint file or run directory")
        if task:
            sp.add_argument("--task", choices=TASKS)

    sp = sub.add_parser("gen", help="write oracle-verified JSON-lines datasets")
    common(sp, task=True)
    sp.add_argument("--complexities", help='bucket spec, e.g. "1-5" or "2,4,8"')
    sp.add_argument("--count", type=int, help="instances per bucket")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train a model (resumes if a checkpoint exists in --out)")
    common(sp, task=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="sweep steps x complexity and write a heatmap report")
    common(sp)
    sp.add_argument("--steps", help='step counts, e.g. "1-20"')
    sp.add_argument("--complexities", help='complexities, e.g. "1-12"')
    sp.add_argument("--n", type=int, help="instances per cell")
    sp.add_argument("--format", choices=("png", "svg", "pdf"), help="heatmap image format")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check on tiny models")
    common(sp)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="silent vs intermediate supervision")
    common(sp, task=True)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (checkpoint.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
