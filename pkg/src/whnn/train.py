"""Full-batch training, evaluation, random search and the aggregator ablation grid."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Adam, Tape, ops
from .autodiff.checkpoint import atomic_write_text
from .hypergraph import Dataset, random_split
from .model import ConfigError, ModelConfig, WhnnModel, init_params, prepare_hypergraph
from .rng import derive_seed, stream

# Published search ranges; the first value of each list is not special.
PUBLISHED_SPACE: dict[str, list] = {
    "num_ref": [5, 10, 25, 50],
    "learnable_W": [False, True],
    "heads": [1, 2, 4],
    "MLP_layers": [0, 1, 2],
    "MLP_hid": [128, 256, 512],
    "MLP2_layers": [0, 1],
    "Cls_layers": [1, 2],
    "Cls_hid": [96, 128, 256],
    "self_loops": [False, True],
    "dropout": [0.5, 0.6, 0.7],
    "in_dropout": [0.2, 0.5, 0.6, 0.7],
}

# Same keys, narrower widths, so a search finishes on a laptop CPU.
DESK_SPACE: dict[str, list] = {
    **PUBLISHED_SPACE,
    "num_ref": [5, 10],
    "MLP_hid": [16, 32],
    "Cls_hid": [16, 32],
}

SPACES = {"paper": PUBLISHED_SPACE, "published": PUBLISHED_SPACE, "desk": DESK_SPACE}
CSV_HEAD = ["trial", "seed", "encoder", "aggregator", "epoch_best", "val_acc", "test_acc", "secs_per_epoch"]


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; ``op`` names the first bad op."""

    def __init__(self, epoch: int, op: Optional[str]):
        self.epoch, self.op = epoch, op
        where = f"first non-finite value produced by op '{op}'" if op else "source op not found"
        super().__init__(f"non-finite loss or logits at epoch {epoch}: {where}")


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-3
    seed: int = 0
    split_seed: Optional[int] = None
    trials: int = 20
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1")
        if not float(self.lr) > 0.0:
            raise ConfigError("lr must be > 0")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Metrics:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    epoch_best: int = 0
    secs_per_epoch: float = field(default=0.0, compare=False)
    best_state: Optional[dict] = field(default=None, repr=False, compare=False)

    @property
    def best_val(self) -> float:
        return self.val_acc[self.epoch_best - 1]

    @property
    def test_at_best(self) -> float:
        return self.test_acc[self.epoch_best - 1]

    def history(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("train_loss", "train_acc", "val_acc", "test_acc")}


def cross_entropy(logits, labels, mask):
    """Mean negative log-likelihood over ``mask``; thin wrapper over the fused op."""
    return ops.cross_entropy(logits, labels, mask)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask) -> float:
    idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask)
    if idx.size == 0:
        raise ValueError("accuracy over an empty mask")
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    pred = np.argmax(logits[idx], axis=1)
    return float(np.mean(pred == labels[idx]))


def evaluate(model: WhnnModel, dataset: Dataset, mask, hypergraph=None) -> float:
    """Accuracy of eval-mode predictions on ``mask``."""
    h = hypergraph if hypergraph is not None else prepare_hypergraph(dataset.hypergraph, model.config)
    was_training = model.training
    model.eval()
    logits = model(dataset.features, h).data
    model.train(was_training)
    return accuracy(logits, dataset.labels, mask)


def labelled_nodes(dataset: Dataset) -> np.ndarray:
    """Nodes eligible for splits: the union of the current masks, or every node."""
    if dataset.splits:
        union = np.zeros(dataset.num_nodes, dtype=bool)
        for m in dataset.splits.values():
            union |= m
        if union.any():
            return np.flatnonzero(union)
    return np.arange(dataset.num_nodes)


def resplit(dataset: Dataset, split_seed: int) -> Dataset:
    cand = labelled_nodes(dataset)
    return dataset.with_splits(random_split(dataset.num_nodes, seed=split_seed, candidates=cand))


def train(dataset: Dataset, config: TrainConfig, on_epoch: Optional[Callable[[int, Metrics], None]] = None,
          return_model: bool = False):
    """Train one model full-batch with Adam and keep the best-validation parameters.

    Returns ``Metrics`` (and the model, restored to its best-validation state,
    when ``return_model`` is set). Raises ``TrainingDiverged`` on a non-finite
    loss.
    """
    if config.split_seed is not None:
        dataset = resplit(dataset, config.split_seed)
    for name in ("train", "val", "test"):
        if not dataset.splits or not dataset.splits.get(name, np.zeros(1, bool)).any():
            raise ConfigError(f"dataset has no '{name}' nodes")

    mcfg = config.model
    h = prepare_hypergraph(dataset.hypergraph, mcfg)
    X = dataset.features.astype(mcfg.dtype)
    y = dataset.labels
    train_idx = np.flatnonzero(dataset.splits["train"])
    model = init_params(mcfg, dataset.num_features, dataset.num_classes, config.seed)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)

    metrics = Metrics()
    best = -1.0
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        model.train()
        with Tape() as tape:
            logits = model(X, h)
            loss = cross_entropy(logits, y, train_idx)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, tape.first_nonfinite_op())
            tape.backward(loss)
        opt.step()

        model.eval()
        out = model(X, h).data
        if not np.all(np.isfinite(out)):
            raise TrainingDiverged(epoch, _first_bad_eval_op(model, X, h))
        metrics.train_loss.append(float(loss.data))
        metrics.train_acc.append(accuracy(out, y, dataset.splits["train"]))
        metrics.val_acc.append(accuracy(out, y, dataset.splits["val"]))
        metrics.test_acc.append(accuracy(out, y, dataset.splits["test"]))
        if metrics.val_acc[-1] > best:
            best = metrics.val_acc[-1]
            metrics.epoch_best = epoch
            metrics.best_state = model.state_dict()
        if on_epoch is not None:
            on_epoch(epoch, metrics)
    metrics.secs_per_epoch = (time.perf_counter() - start) / config.epochs

    if return_model:
        model.load_state_dict(metrics.best_state)
        model.eval()
        return metrics, model
    return metrics


def _first_bad_eval_op(model, X, h) -> Optional[str]:
    # re-run the eval forward on a tape so the ops are recorded for inspection
    with Tape() as tape:
        model(X, h)
        return tape.first_nonfinite_op()


# ------------------------------------------------------------------- search / ablation


def _csv_row(trial: int, seed: int, cfg: TrainConfig, m: Metrics) -> dict:
    row = {
        "trial": trial, "seed": seed, "encoder": cfg.model.encoder,
        "aggregator": cfg.model.aggregator_label, "epoch_best": m.epoch_best,
        "val_acc": m.best_val, "test_acc": m.test_at_best, "secs_per_epoch": m.secs_per_epoch,
    }
    for k, v in cfg.model.to_dict().items():
        if k not in ("encoder", "aggregator"):
            row[k] = v
    row["epochs"], row["lr"], row["split_seed"] = cfg.epochs, cfg.lr, cfg.split_seed
    return row


def _run_trial(job):
    trial, seed, dataset, cfg = job
    return _csv_row(trial, seed, cfg, train(dataset, cfg))


def worker_count(jobs: int) -> int:
    """Workers allowed by ``WHNN_THREADS`` (default 1, i.e. run in-process)."""
    try:
        cap = int(os.environ.get("WHNN_THREADS", "1"))
    except ValueError:
        raise ConfigError("WHNN_THREADS must be an integer") from None
    return max(1, min(cap, jobs))


def run_jobs(jobs: Sequence) -> list[dict]:
    """Run trials, in parallel when allowed, and return rows in job order."""
    workers = worker_count(len(jobs))
    if workers == 1:
        return [_run_trial(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_trial, jobs))


def sample_space(space: dict, trials: int, base_seed: int) -> list[dict]:
    """``trials`` independent uniform draws from ``space``, reproducible from ``base_seed``."""
    rng = stream(base_seed, "search")
    keys = sorted(space)
    return [{k: space[k][int(rng.integers(len(space[k])))] for k in keys} for _ in range(trials)]


def random_search(dataset: Dataset, base: TrainConfig, space: dict, trials: int,
                  base_seed: int = 0) -> tuple[TrainConfig, list[dict]]:
    """Train ``trials`` random configurations; rows come back sorted by validation accuracy."""
    if trials < 1:
        raise ConfigError("random search needs at least one trial")
    jobs = []
    for t, draw in enumerate(sample_space(space, trials, base_seed)):
        seed = derive_seed(base_seed, f"trial-{t}")
        mcfg = base.model.replace(**draw)
        if mcfg.MLP_hid % mcfg.heads:
            mcfg = mcfg.replace(heads=1)
        jobs.append((t, seed, dataset, base.replace(seed=seed, model=mcfg)))
    rows = run_jobs(jobs)
    rows.sort(key=lambda r: (-r["val_acc"], r["trial"]))
    best = next(j[3] for j in jobs if j[0] == rows[0]["trial"])
    return best, rows


def ablation_run(dataset: Dataset, base: TrainConfig, encoders=("MLP", "SAB"),
                 aggregators=("DeepSets", "PMA", "FPSWE", "LPSWE"), repeats: int = 5,
                 resplit_each: bool = False) -> list[dict]:
    """Grid of encoder x aggregator with ``repeats`` seeds per cell.

    Seed ``base.seed + r`` is shared by every cell in repeat ``r``, so the
    FPSWE and LPSWE cells start from identical parameters. With
    ``resplit_each`` the split is redrawn per repeat (also shared by cells).
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    jobs = []
    t = 0
    for enc in encoders:
        for agg in aggregators:
            for r in range(repeats):
                seed = base.seed + r
                cfg = base.replace(seed=seed, model=base.model.replace(encoder=enc, aggregator=agg),
                                   split_seed=seed if resplit_each else base.split_seed)
                jobs.append((t, seed, dataset, cfg))
                t += 1
    return run_jobs(jobs)


def summarise(rows: Sequence[dict], key: str = "test_acc") -> list[dict]:
    """Per (encoder, aggregator) cell: run count, mean and population std of ``key``."""
    cells: dict[tuple, list[float]] = {}
    for r in rows:
        cells.setdefault((r["encoder"], r["aggregator"]), []).append(float(r[key]))
    return [{"encoder": e, "aggregator": a, "runs": len(v), "mean": float(np.mean(v)), "std": float(np.std(v))}
            for (e, a), v in cells.items()]


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ",".join(CSV_HEAD) + "\n"
    extra = [k for k in rows[0] if k not in CSV_HEAD]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEAD + extra, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float) and math.isfinite(v):
        return repr(v)
    return v


def write_csv(path: str, rows: Sequence[dict]) -> None:
    atomic_write_text(path, rows_to_csv(rows))
