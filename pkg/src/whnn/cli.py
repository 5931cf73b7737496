"""Command-line entry point: ``whnn <command> [options]``.

Exit codes: 0 success, 1 failure (including failing verify suites),
2 configuration or input error, 3 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .autodiff.checkpoint import atomic_write_text
from .hypergraph import (
    Dataset,
    DatasetFormatError,
    Hypergraph,
    load_canonical,
    random_split,
    save_canonical,
    synth_spread_dataset,
    synth_two_community,
)
from .model import ConfigError, ModelConfig, WhnnModel, prepare_hypergraph
from .train import (
    SPACES,
    TrainConfig,
    TrainingDiverged,
    ablation_run,
    accuracy,
    random_search,
    rows_to_csv,
    summarise,
    train,
    write_csv,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NAN = 0, 1, 2, 3

TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"model"}
MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
# command-level entries of a resolved config block; not part of TrainConfig
RUN_KEYS = {"data", "out", "trials", "space", "repeats", "encoders", "aggregators", "resplit"}


# ------------------------------------------------------------------ config plumbing


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        if key not in TRAIN_KEYS | MODEL_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(value)
    return out


def build_config(path: Optional[str], overrides: dict, seed: Optional[int] = None,
                 dtype: Optional[str] = None) -> TrainConfig:
    """Merge a flat JSON config file, ``key=value`` overrides and flags into a TrainConfig."""
    flat: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                flat = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(flat, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        if isinstance(flat.get("model"), dict):
            nested = flat.pop("model")
            flat = {**nested, **flat}
        # a printed resolved block may be fed back verbatim
        for key in RUN_KEYS:
            flat.pop(key, None)
    flat.update(overrides)
    if seed is not None:
        flat["seed"] = seed
    if dtype is not None:
        flat["dtype"] = dtype
    unknown = set(flat) - TRAIN_KEYS - MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    try:
        model = ModelConfig(**{k: v for k, v in flat.items() if k in MODEL_KEYS})
        return TrainConfig(model=model, **{k: v for k, v in flat.items() if k in TRAIN_KEYS})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def flat_config(cfg: TrainConfig) -> dict:
    out = {k: v for k, v in cfg.to_dict().items() if k != "model"}
    out.update(cfg.model.to_dict())
    return out


def print_resolved(command: str, cfg: dict) -> None:
    print(f"# resolved config ({command})")
    print(json.dumps(cfg, indent=2, sort_keys=True))
    sys.stdout.flush()


def run_value(args, key: str):
    """A command-level setting from the flag, else from the config file."""
    value = getattr(args, key, None)
    if value is None and getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError):
            return None
        value = doc.get(key) if isinstance(doc, dict) else None
    return value


def load_data(spec: Optional[str]) -> Dataset:
    """A canonical JSON path, or ``synth:<kind>[:key=value,...]`` for generated data."""
    if not spec:
        raise ConfigError("--data is required")
    if spec.startswith("synth:"):
        kind, _, params = spec[len("synth:"):].partition(":")
        kwargs = {}
        for item in filter(None, params.split(",")):
            k, _, v = item.partition("=")
            kwargs[k] = _parse_value(v)
        return make_synth(kind, **kwargs)
    if not os.path.exists(spec):
        raise ConfigError(f"dataset file not found: {spec}")
    return load_canonical(spec, allow_isolated=True)


def make_synth(kind: str, **kwargs) -> Dataset:
    try:
        if kind in ("spread",):
            return synth_spread_dataset(**kwargs)
        if kind in ("two_community", "two-community", "community"):
            return synth_two_community(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad synth parameter: {exc}") from exc
    raise ConfigError(f"unknown synthetic dataset {kind!r}")


def ensure_dir(path: Optional[str], default: str) -> str:
    out = path or default
    os.makedirs(out, exist_ok=True)
    return out


# ------------------------------------------------------------------ commands


def cmd_train(args) -> int:
    cfg = build_config(args.config, parse_overrides(args.override), args.seed, args.dtype)
    data = run_value(args, "data")
    ds = load_data(data)
    out = ensure_dir(args.out, "runs/train")
    resolved = {"data": data, "out": out, **flat_config(cfg)}
    print_resolved("train", resolved)
    metrics, model = train(ds, cfg, return_model=True)
    row = {
        "trial": 0, "seed": cfg.seed, "encoder": cfg.model.encoder, "aggregator": cfg.model.aggregator_label,
        "epoch_best": metrics.epoch_best, "val_acc": metrics.best_val, "test_acc": metrics.test_at_best,
        "secs_per_epoch": metrics.secs_per_epoch,
        **{k: v for k, v in flat_config(cfg).items() if k not in ("encoder", "aggregator", "seed")},
    }
    write_csv(os.path.join(out, "metrics.csv"), [row])
    history = [{"epoch": e + 1, **{k: v[e] for k, v in metrics.history().items()}}
               for e in range(len(metrics.train_loss))]
    atomic_write_text(os.path.join(out, "history.csv"), _plain_csv(history))
    meta = {"train": flat_config(cfg), "d_in": ds.num_features, "num_classes": ds.num_classes}
    save_checkpoint(os.path.join(out, "model.ckpt"), model.state_dict(), meta)
    atomic_write_text(os.path.join(out, "config.json"), json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    print(f"best epoch {metrics.epoch_best}: val_acc={metrics.best_val:.4f} test_acc={metrics.test_at_best:.4f}")
    return EXIT_OK


def _plain_csv(rows) -> str:
    head = list(rows[0])
    lines = [",".join(head)] + [",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in head)
                                for r in rows]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    if not args.ckpt:
        raise ConfigError("--ckpt is required")
    try:
        state, meta = load_checkpoint(args.ckpt)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.ckpt}: {exc}") from exc
    if not meta or "train" not in meta:
        raise ConfigError("checkpoint has no embedded config")
    flat = dict(meta["train"])
    cfg = TrainConfig(model=ModelConfig(**{k: flat[k] for k in MODEL_KEYS if k in flat}),
                      **{k: flat[k] for k in TRAIN_KEYS if k in flat})
    ds = load_data(args.data)
    if ds.num_features != meta["d_in"]:
        raise ConfigError(f"dataset has {ds.num_features} features, checkpoint expects {meta['d_in']}")
    print_resolved("eval", {"data": args.data, "ckpt": args.ckpt, **flat_config(cfg)})
    model = WhnnModel(cfg.model, meta["d_in"], meta["num_classes"], np.random.default_rng(0))
    model.load_state_dict(state)
    model.eval()
    logits = model(ds.features, prepare_hypergraph(ds.hypergraph, cfg.model)).data
    splits = ds.splits or {"all": np.ones(ds.num_nodes, dtype=bool)}
    for name, mask in splits.items():
        if mask.any():
            print(f"{name}_acc={accuracy(logits, ds.labels, mask):.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = build_config(args.config, parse_overrides(args.override), args.seed, args.dtype)
    data = run_value(args, "data")
    ds = load_data(data)
    out = ensure_dir(args.out, "runs/ablate")
    encoders = tuple(args.encoders.split(","))
    aggregators = tuple(args.aggregators.split(","))
    print_resolved("ablate", {"data": data, "out": out, "repeats": args.repeats,
                              "encoders": list(encoders), "aggregators": list(aggregators),
                              "resplit": args.resplit, **flat_config(cfg)})
    rows = ablation_run(ds, cfg, encoders, aggregators, args.repeats, resplit_each=args.resplit)
    write_csv(os.path.join(out, "ablation.csv"), rows)
    cells = summarise(rows)
    atomic_write_text(os.path.join(out, "summary.csv"), _plain_csv(cells))
    for c in cells:
        print(f"{c['encoder']:<5} {c['aggregator']:<9} {c['mean']:.4f} +- {c['std']:.4f} (n={c['runs']})")
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = build_config(args.config, parse_overrides(args.override), args.seed, args.dtype)
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    if args.space not in SPACES:
        raise ConfigError(f"--space must be one of {sorted(SPACES)}")
    data = run_value(args, "data")
    ds = load_data(data)
    out = ensure_dir(args.out, "runs/search")
    print_resolved("search", {"data": data, "out": out, "trials": args.trials,
                              "space": args.space, **flat_config(cfg)})
    best, rows = random_search(ds, cfg, SPACES[args.space], args.trials, base_seed=cfg.seed)
    write_csv(os.path.join(out, "search.csv"), rows)
    atomic_write_text(os.path.join(out, "best_config.json"),
                      json.dumps(flat_config(best), indent=2, sort_keys=True) + "\n")
    print(f"best trial {rows[0]['trial']}: val_acc={rows[0]['val_acc']:.4f} test_acc={rows[0]['test_acc']:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind == "spread":
        params = dict(n_edges=args.edges or 200, edge_size=args.size or 16, d=args.dim, seed=args.seed or 0)
    else:
        params = dict(n_per_class=args.n_per_class, edges_per_class=args.edges or 10, d=args.dim,
                      noise=args.noise, seed=args.seed or 0, mixed_fraction=args.mixed)
    print_resolved("synth", {"kind": args.kind, "out": args.out, **params})
    try:
        ds = make_synth(args.kind, **params)
    except ValueError as exc:
        raise ConfigError(f"invalid synth parameters: {exc}") from exc
    out = args.out or f"{args.kind}.json"
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    save_canonical(ds, out)
    print(f"wrote {out}: {ds.num_nodes} nodes, {ds.hypergraph.num_edges} hyperedges")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    dtype = np.dtype(args.dtype or "float64")
    print_resolved("verify", {"tol": args.tol, "dtype": dtype.name})
    results = run_all(tol=args.tol, dtype=dtype)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("ALL PASS" if ok else "SOME SUITES FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_convert(args) -> int:
    """``.npz`` with ``features``, ``labels`` and incidence COO arrays ``node``/``edge`` to canonical JSON."""
    if not args.data or not args.out:
        raise ConfigError("convert needs --data input.npz and --out output.json")
    try:
        z = np.load(args.data)
    except (OSError, ValueError) as exc:
        raise DatasetFormatError(f"{args.data}: {exc}") from exc
    for key in ("features", "labels", "node", "edge"):
        if key not in z:
            raise DatasetFormatError(f"{args.data}: missing array '{key}'")
    features, labels = z["features"], z["labels"]
    node, edge = z["node"].astype(np.int64), z["edge"].astype(np.int64)
    if node.shape != edge.shape:
        raise DatasetFormatError("node/edge incidence arrays differ in length")
    n = int(features.shape[0])
    m = int(edge.max()) + 1 if edge.size else 0
    members = [[] for _ in range(m)]
    for i, j in zip(node.tolist(), edge.tolist()):
        members[j].append(i)
    members = [e for e in members if e]
    h = Hypergraph(n, members, allow_isolated=True)
    splits = None
    if all(k in z for k in ("train", "val", "test")):
        splits = {k: z[k].astype(bool) for k in ("train", "val", "test")}
    elif args.seed is not None:
        splits = random_split(n, seed=args.seed)
    ds = Dataset(h, features, labels, splits, name=os.path.splitext(os.path.basename(args.out))[0])
    print_resolved("convert", {"data": args.data, "out": args.out, "seed": args.seed})
    save_canonical(ds, args.out)
    print(f"wrote {args.out}: {n} nodes, {h.num_edges} hyperedges")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="whnn", description="Wasserstein hypergraph neural networks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, config=True):
        if data:
            sp.add_argument("--data", help="canonical JSON dataset or synth:<kind>[:k=v,...]")
        if config:
            sp.add_argument("--config", help="flat JSON config file")
            sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
            sp.add_argument("--dtype", choices=["float64", "float32"])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (or file for synth/convert)")

    sp = sub.add_parser("train", help="train one model")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, config=False)
    sp.add_argument("--ckpt", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="encoder x aggregator grid")
    common(sp)
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--encoders", default="MLP,SAB")
    sp.add_argument("--aggregators", default="DeepSets,PMA,FPSWE,LPSWE")
    sp.add_argument("--resplit", action="store_true", help="draw a new split per repeat")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("search", help="random hyperparameter search")
    common(sp)
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--space", default="paper", help="paper (published ranges) or desk (narrow widths)")
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("synth", help="write a synthetic dataset")
    sp.add_argument("kind", choices=["spread", "two_community"])
    sp.add_argument("--edges", type=int, help="hyperedges (spread) or edges per class (two_community)")
    sp.add_argument("--size", type=int, help="hyperedge size (spread)")
    sp.add_argument("--dim", type=int, default=8)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--mixed", type=float, default=0.0)
    sp.add_argument("--n-per-class", type=int, default=30)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("verify", help="run oracle, invariance and gradient suites")
    sp.add_argument("--tol", type=float, help="tolerance for the SWP oracle suite")
    sp.add_argument("--dtype", choices=["float64", "float32"])
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("convert", help="npz incidence lists to canonical JSON")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, help="draw a 50/25/25 split when the file has none")
    sp.set_defaults(func=cmd_convert)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
