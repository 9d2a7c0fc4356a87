"""Command-line entry point: ``mlcl {gen,train,eval,analyze,gradcheck,grid}``.

Config files are JSON objects whose keys mirror the dataclass field names.
Command-line flags override config values.  Exit codes: 0 success, 1 a check
failed (gradcheck), 2 bad input (config, record, missing file).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .data import (
    Dataset,
    SyntheticConfig,
    build_dataset,
    generate_synthetic,
    load_splits,
    read_records,
    write_jsonl,
)
from .errors import ConfigError, MLCLError
from .evaluation import (
    Dimension,
    evaluate,
    export_embeddings,
    format_score,
    semantic_space_analysis,
)
from .model import init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, grid_search_alpha, train

log = logging.getLogger("mlcl")

LOSS_CHOICES = ("scl", "jscl", "jspcl", "slcl", "icl", "none")


class UsageError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _read_json_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        values = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(values, dict):
        raise UsageError(f"{p}: expected a JSON object")
    return values


def _require_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _float_list(text: str, field: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(field, f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str, field: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(field, f"expected comma-separated integers, got {text!r}") from None


def resolve_train_config(args) -> tuple[TrainConfig, int]:
    """Merge config file and flag overrides; returns (config, split seed)."""
    values = _read_json_config(args.config)
    split_seed = values.pop("split_seed", 0)
    if not isinstance(split_seed, int):
        raise ConfigError("split_seed", f"must be an integer, got {split_seed!r}")
    overrides = {
        "seed": args.seed,
        "loss_kind": args.loss,
        "alpha": args.alpha,
        "tau": args.tau,
        "jaccard_weight_mode": args.jaccard_mode,
        "threshold": args.threshold,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "split_seed", None) is not None:
        split_seed = args.split_seed
    if values.get("loss_kind", "none") == "none":
        values["alpha"] = 0.0
    try:
        cfg = TrainConfig.from_dict(values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None
    return cfg, split_seed


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _dataset_for_checkpoint(path: Path, meta: dict, split: str) -> Dataset:
    vocab, labels = meta["vocabulary"], meta["label_names"]
    if split == "all":
        return build_dataset(read_records(path), vocab, labels)
    parts = load_splits(path, meta.get("split_seed", 0), vocab, labels)
    return dict(zip(("train", "valid", "test"), parts))[split]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    values = _read_json_config(args.config)
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = SyntheticConfig.from_dict(values)
    if args.out is None:
        raise UsageError("--out is required")
    ds = generate_synthetic(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(ds, out)
    counts = ds.label_matrix().sum(axis=0)
    sizes = Counter(len(ex.labels) for ex in ds.examples)
    print(f"wrote {len(ds)} examples to {out}")
    print("label\tcount\tfrequency")
    for name, c in zip(ds.label_names, counts):
        print(f"{name}\t{int(c)}\t{c / len(ds):.4f}")
    print("labels/example\t" + "  ".join(f"{k}:{sizes[k]}" for k in sorted(sizes)))
    return 0


def _train_once(dataset: Path, cfg: TrainConfig, split_seed: int, out_root: Path) -> tuple[Path, dict]:
    train_set, valid, test = load_splits(dataset, split_seed)
    resolved = {"train": cfg.to_dict(), "split_seed": split_seed, "dataset_sha256": _file_digest(dataset)}
    stamp = hashlib.sha256(_dump(resolved).encode()).hexdigest()[:12]
    run_dir = out_root / f"run-{stamp}"
    run_dir.mkdir(parents=True, exist_ok=True)

    params = init_params(cfg.seed, train_set.vocab_size, train_set.n_labels, cfg.dim, cfg.init_scale)
    result = train(params, train_set, valid, cfg)
    report = evaluate(result.params, test, cfg.threshold)

    meta = {
        "vocabulary": train_set.vocabulary,
        "label_names": train_set.label_names,
        "split_seed": split_seed,
        "threshold": cfg.threshold,
        "best_epoch": result.best_epoch,
    }
    (run_dir / "config.json").write_text(_dump(resolved), encoding="utf-8")
    save_checkpoint(run_dir / "model.ckpt", result.params, meta)
    history = [dataclasses.asdict(r) for r in result.history]
    (run_dir / "history.json").write_text(_dump({"best_epoch": result.best_epoch, "epochs": history}))
    (run_dir / "report.json").write_text(_dump(report.to_dict()), encoding="utf-8")
    return run_dir, report.to_dict()


def cmd_train(args) -> int:
    dataset = _require_file(args.dataset, "dataset")
    cfg, split_seed = resolve_train_config(args)
    out_root = Path(args.out or "runs")
    seeds = _int_list(args.seeds, "seeds") if args.seeds else [cfg.seed]
    reports = []
    for seed in seeds:
        run_cfg = dataclasses.replace(cfg, seed=seed)
        run_dir, report = _train_once(dataset, run_cfg, split_seed, out_root)
        reports.append(report)
        print(
            f"seed {seed}: micro-F1 {report['micro_f1']:.4f}  macro-F1 {report['macro_f1']:.4f}  "
            f"JS {report['jaccard_score']:.4f}  CH_multi {format_score(report['ch_multi'])}  -> {run_dir}"
        )
    if len(seeds) > 1:
        print("metric\tmean\tmin\tmax")
        for key in ("micro_f1", "macro_f1", "jaccard_score", "ch_multi", "ch_single"):
            vals = [r[key] for r in reports if r[key] is not None]
            if not vals:
                print(f"{key}\tUNDEFINED")
                continue
            print(f"{key}\t{np.mean(vals):.4f}\t{min(vals):.4f}\t{max(vals):.4f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = _require_file(args.checkpoint, "checkpoint")
    dataset = _require_file(args.dataset, "dataset")
    params, meta = load_checkpoint(ckpt)
    ds = _dataset_for_checkpoint(dataset, meta, args.split)
    threshold = args.threshold if args.threshold is not None else meta.get("threshold", 0.5)
    report = evaluate(params, ds, threshold)
    print(_dump(report.to_dict()), end="")
    return 0


def cmd_analyze(args) -> int:
    ckpt = _require_file(args.checkpoint, "checkpoint")
    dataset = _require_file(args.dataset, "dataset")
    params, meta = load_checkpoint(ckpt)
    ds = _dataset_for_checkpoint(dataset, meta, args.split)
    score = semantic_space_analysis(params, ds, Dimension(args.dimension))
    print(f"calinski_harabasz[{args.dimension}]\t{format_score(score)}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        export_embeddings(params, ds, out)
        print(f"embeddings -> {out}")
    return 0


def _gradcheck_targets(loss: str | None, mode: str | None) -> list[str]:
    if loss is None:
        return list(gc.TARGETS)
    if loss == "none":
        return ["bce"]
    if loss == "jscl" and mode == "inside":
        return ["jscl_inside"]
    return [loss]


def cmd_gradcheck(args) -> int:
    seeds = _int_list(args.seeds, "seeds") if args.seeds else [7 if args.seed is None else args.seed]
    failures = 0
    print("target\tparam\tseed\tmax_rel\tmax_abs\tstatus")
    for target in _gradcheck_targets(args.loss, args.jaccard_mode):
        for seed in seeds:
            for row in gc.check_target(target, seed):
                failures += not row.ok
                print(
                    f"{row.target}\t{row.param}\t{seed}\t{row.max_rel_error:.3e}\t"
                    f"{row.max_abs_error:.3e}\t{'ok' if row.ok else 'FAIL'}"
                )
    print("all gradients match" if failures == 0 else f"{failures} parameter checks failed")
    return 0 if failures == 0 else 1


def cmd_grid(args) -> int:
    dataset = _require_file(args.dataset, "dataset")
    cfg, split_seed = resolve_train_config(args)
    if cfg.loss_kind == "none":
        raise ConfigError("loss_kind", "grid search over alpha needs a contrastive loss")
    alphas = _float_list(args.alphas, "alphas")
    train_set, valid, _ = load_splits(dataset, split_seed)
    rows, best = grid_search_alpha(alphas, train_set, valid, cfg, workers=args.workers)
    print("alpha\tbest_epoch\tval_micro_f1\tval_macro_f1\tval_jaccard")
    for r in rows:
        print(f"{r.alpha:g}\t{r.best_epoch}\t{r.val_micro_f1:.4f}\t{r.val_macro_f1:.4f}\t{r.val_jaccard:.4f}")
    print(f"best alpha\t{best:g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        table = {"rows": [dataclasses.asdict(r) for r in rows], "best_alpha": best, "train": cfg.to_dict()}
        (out / "grid.json").write_text(_dump(table), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--dataset", help="JSON-lines corpus")
    common.add_argument("--out", help="output path or directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--loss", choices=LOSS_CHOICES)
    common.add_argument("--alpha", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--jaccard-mode", choices=("outside", "inside"))
    common.add_argument("--threshold", type=float)
    common.add_argument("--dimension", choices=("multi", "single"), default="multi")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mlcl", description="Multi-label contrastive learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="generate a synthetic corpus").set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train and evaluate one run per seed")
    p.add_argument("--seeds", help="comma-separated seeds for a sweep (overrides --seed)")
    p.add_argument("--split-seed", type=int, help="seed of the 70/10/20 split")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "metrics of a checkpoint"),
        ("analyze", cmd_analyze, "Calinski-Harabasz analysis and embedding export"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("grid", parents=[common], help="grid search over alpha")
    p.add_argument("--alphas", default="0,0.1,0.2,0.3,0.5")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--split-seed", type=int)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, MLCLError, OSError) as exc:
        print(f"mlcl {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
