"""Training loop, checkpoints, evaluation and the ablation grid."""

from __future__ import annotations

import io
import json
import logging
import os
import time
import zipfile
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import metrics
from .backbone import neighborhood_matrix
from .config import ConfigError, ExperimentConfig, parse_config
from .losses import LossWeights, total_loss
from .model import Adam, PartComModel, PrototypeModel, SoftmaxModel
from .pufs import MixConfig
from .shapes import LabeledSample, build_task, read_manifest

log = logging.getLogger(__name__)

EVAL_BATCH = 50
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss; ``components`` holds the last batch's values."""

    def __init__(self, epoch: int, step: int, components: dict[str, float]):
        self.epoch, self.step, self.components = epoch, step, components
        dump = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"non-finite loss at epoch {epoch} step {step}: {dump}")


class TaskMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class Split:
    points: np.ndarray          # (N, L, 3)
    labels: np.ndarray          # 1..K+1
    neighborhoods: list
    K: int

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], K: int, radius: float) -> "Split":
        if not samples:
            raise TaskMismatchError("empty split")
        sizes = {s.cloud.L for s in samples}
        if len(sizes) != 1:
            raise TaskMismatchError(f"clouds in a split must share one point count, got {sorted(sizes)}")
        points = np.stack([s.cloud.points for s in samples])
        labels = np.array([s.label for s in samples], dtype=int)
        return cls(points, labels, [neighborhood_matrix(p, radius) for p in points], K)

    def __len__(self) -> int:
        return len(self.labels)


_SPLIT_CACHE: dict[str, tuple[Split, Split]] = {}


def load_splits(cfg: ExperimentConfig) -> tuple[Split, Split]:
    """Train and test splits, read from ``cfg.data_dir`` if set, else generated.

    The most recent result is memoised, since ablation rows sharing a seed
    share their data. Splits are never mutated downstream.
    """
    key = json.dumps([cfg.task_spec().__dict__, cfg.radius, cfg.data_dir], sort_keys=True, default=str)
    if key not in _SPLIT_CACHE:
        _SPLIT_CACHE.clear()
        _SPLIT_CACHE[key] = _load_splits(cfg)
    return _SPLIT_CACHE[key]


def _load_splits(cfg: ExperimentConfig) -> tuple[Split, Split]:
    if cfg.data_dir:
        root = Path(cfg.data_dir)
        train, K = read_manifest(root / "train.json")
        test, K_test = read_manifest(root / "test.json")
        if K != cfg.K or K_test != cfg.K:
            raise TaskMismatchError(f"data in {root} has K={K}, config expects {cfg.K}")
    else:
        train, test = build_task(cfg.task_spec())
        K = cfg.K
    return Split.from_samples(train, K, cfg.radius), Split.from_samples(test, K, cfg.radius)


# ---------------------------------------------------------------------------
# models and checkpoints
# ---------------------------------------------------------------------------

def build_model(cfg: ExperimentConfig):
    common = dict(feature_dim=cfg.feature_dim, radius=cfg.radius, init_gain=cfg.init_gain, seed=cfg.seed)
    weights = LossWeights(pl=cfg.w_pl, pb=cfg.w_pb, pd=cfg.w_pd, virtual=cfg.w_virtual, tau=cfg.tau, delta=cfg.delta,
                          scale=cfg.logit_scale)
    if cfg.head == "softmax":
        return SoftmaxModel(cfg.K, **common)
    if cfg.head == "gcp":
        return PrototypeModel(cfg.K, embed_dim=cfg.embed_dim, weights=weights, **common)
    return PartComModel(cfg.K, parts_per_class=cfg.parts_per_class, reduced_dim=cfg.reduced_dim,
                        fusion=cfg.fusion, use_pb=cfg.use_pb, use_pd=cfg.use_pd, pufs=cfg.pufs,
                        weights=weights, mix=MixConfig(cfg.mix_low, cfg.mix_high), epsilon=cfg.epsilon,
                        sinkhorn_iters=cfg.sinkhorn_iters, rounding=cfg.rounding,
                        similarity=cfg.similarity, similarity_scale=cfg.similarity_scale, **common)


@dataclass
class Checkpoint:
    config: ExperimentConfig
    arrays: dict[str, np.ndarray]
    epoch: int
    rng_state: dict
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return self.config.digest()

    def model(self):
        m = build_model(self.config)
        m.load_arrays(self.arrays)
        return m

    def save(self, path: str | Path) -> Path:
        """Write a zip whose bytes depend only on the contents (fixed timestamps, sorted names)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {"config": self.config.dumps(), "config_hash": self.config_hash, "epoch": self.epoch,
                "rng_state": self.rng_state, "history": self.history}
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr(zipfile.ZipInfo("meta.json", _ZIP_DATE), json.dumps(meta, sort_keys=True, indent=1))
            for name in sorted(self.arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(self.arrays[name]), allow_pickle=False)
                info = zipfile.ZipInfo(f"arrays/{name}.npy", _ZIP_DATE)
                info.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(info, buf.getvalue())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            with zipfile.ZipFile(path) as zf:
                meta = json.loads(zf.read("meta.json"))
                arrays = {}
                for name in zf.namelist():
                    if name.startswith("arrays/"):
                        arrays[name[len("arrays/"):-len(".npy")]] = np.lib.format.read_array(
                            io.BytesIO(zf.read(name)), allow_pickle=False)
        except (OSError, KeyError, zipfile.BadZipFile) as exc:
            raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
        cfg = parse_config(meta["config"], f"{path}:meta.json")
        if cfg.digest() != meta["config_hash"]:
            raise ConfigError(f"{path}: config hash mismatch")
        return cls(cfg, arrays, int(meta["epoch"]), meta["rng_state"], meta.get("history", []))


def _train_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(b"train")]))


def _finite_components(comps: dict[str, ad.Tensor]) -> dict[str, float]:
    return {k: float(v.item()) for k, v in comps.items()}


def train(cfg: ExperimentConfig, train_split: Split | None = None, progress=None) -> Checkpoint:
    """Fit a model; one Adam step per mini-batch, shuffled each epoch."""
    if train_split is None:
        train_split, _ = load_splits(cfg)
    if train_split.K != cfg.K:
        raise TaskMismatchError(f"train split has K={train_split.K}, config expects {cfg.K}")
    if np.any(train_split.labels > cfg.K):
        raise TaskMismatchError("training split contains unknown-class samples")
    model = build_model(cfg)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    rng = _train_rng(cfg.seed)
    targets_all = train_split.labels - 1
    history = []
    n = len(train_split)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums: dict[str, float] = {}
        steps = 0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            out = model.forward(train_split.points[idx], [train_split.neighborhoods[i] for i in idx])
            comps = model.loss_components(out, targets_all[idx], rng)
            loss = total_loss(comps, model.weights) if hasattr(model, "weights") else comps["ce"]
            values = _finite_components(comps)
            if not np.isfinite(loss.item()):
                raise DivergenceError(epoch, step, {**values, "total": float(loss.item())})
            opt.step(ad.gradients(loss, params))
            values["total"] = float(loss.item())
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        row = {k: v / steps for k, v in sums.items()}
        history.append(row)
        log.info("epoch %d %s (%.1fs)", epoch, " ".join(f"{k}={v:.4f}" for k, v in row.items()),
                 time.perf_counter() - t0)
        if progress is not None:
            progress(epoch, row)
    return Checkpoint(cfg, model.arrays(), cfg.epochs, rng.bit_generator.state, history)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

METRIC_KEYS = ("acc", "oscr", "n_known", "n_unknown", "seed")


@dataclass
class Evaluation:
    metrics: dict
    records: list[metrics.ScoreRecord]
    closed_records: list[metrics.ScoreRecord]
    curve: metrics.OscrCurve


def score_split(model, split: Split) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    preds, closed, conf = [], [], []
    for start in range(0, len(split), EVAL_BATCH):
        sl = slice(start, start + EVAL_BATCH)
        s = model.score(split.points[sl], split.neighborhoods[sl])
        preds.append(s.predicted)
        closed.append(s.closed)
        conf.append(s.confidence)
    return np.concatenate(preds), np.concatenate(closed), np.concatenate(conf)


def evaluate(ckpt: Checkpoint, split: Split, out_dir: str | Path | None = None) -> Evaluation:
    """ACC (K-way argmax on knowns) and OSCR (open-set rule) with optional file output."""
    if split.K != ckpt.config.K:
        raise TaskMismatchError(f"checkpoint has K={ckpt.config.K}, split has K={split.K}")
    model = ckpt.model()
    pred, closed, conf = score_split(model, split)
    K = split.K
    records = [metrics.ScoreRecord(int(t), int(p), float(c)) for t, p, c in zip(split.labels, pred, conf)]
    closed_records = [metrics.ScoreRecord(int(t), int(p), float(c)) for t, p, c in zip(split.labels, closed, conf)]
    known = split.labels <= K
    curve = metrics.oscr(records, K)
    result = {"acc": metrics.acc(closed_records, K), "oscr": curve.area, "n_known": int(known.sum()),
              "n_unknown": int((~known).sum()), "seed": int(ckpt.config.seed)}
    if out_dir is not None:
        write_evaluation(out_dir, result, records, curve)
    return Evaluation(result, records, closed_records, curve)


def write_evaluation(out_dir: str | Path, result: dict, records, curve) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps({k: result[k] for k in METRIC_KEYS}, indent=1) + "\n")
    metrics.write_records_csv(out / "records.csv", records)
    metrics.write_curve_csv(out / "curve.csv", curve)


def part_usage_entropy(ckpt: Checkpoint, split: Split) -> float:
    """Mean over known test shapes of the entropy of their hard own-class part-usage histogram."""
    model = ckpt.model()
    if not isinstance(model, PartComModel):
        raise TypeError("part usage needs a part-prototype model")
    known = np.flatnonzero(split.labels <= split.K)
    M = model.parts_per_class
    values = []
    for start in range(0, len(known), EVAL_BATCH):
        idx = known[start:start + EVAL_BATCH]
        usage = model.part_usage(split.points[idx], split.labels[idx] - 1, [split.neighborhoods[i] for i in idx])
        for row in usage:
            p = np.bincount(row, minlength=M) / row.size
            p = p[p > 0]
            values.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

ABLATION_ROWS: list[tuple[str, dict]] = [
    ("baseline", dict(head="gcp")),
    ("+part", dict(head="partcom", use_pd=False, use_pb=False, pufs=False)),
    ("+L_pd", dict(head="partcom", use_pd=True, use_pb=False, pufs=False)),
    ("+L_pb", dict(head="partcom", use_pd=False, use_pb=True, pufs=False)),
    ("+both", dict(head="partcom", use_pd=True, use_pb=True, pufs=False)),
    ("cat->max", dict(head="partcom", use_pd=True, use_pb=True, pufs=False, fusion="max")),
    ("full", dict(head="partcom", use_pd=True, use_pb=True, pufs=True)),
]


def worker_count(default: int | None = None) -> int:
    raw = os.environ.get("PARTCOM_THREADS")
    if raw is None:
        return default or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"PARTCOM_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError("PARTCOM_THREADS must be >= 1")
    return value


def run_one(cfg: ExperimentConfig, out_dir: str | Path | None = None, usage: bool = False) -> dict:
    """Train and evaluate one configuration; returns its metrics (plus usage entropy if asked)."""
    train_split, test_split = load_splits(cfg)
    ckpt = train(cfg, train_split)
    ev = evaluate(ckpt, test_split, out_dir)
    result = dict(ev.metrics)
    if usage and cfg.head == "partcom":
        result["usage_entropy"] = part_usage_entropy(ckpt, test_split)
        if out_dir is not None:
            (Path(out_dir) / "usage.json").write_text(json.dumps({"usage_entropy": result["usage_entropy"]}) + "\n")
    return result


def _run_job(job):
    cfg, out_dir, usage = job
    return run_one(cfg, out_dir, usage)


def run_jobs(jobs: list, workers: int | None = None) -> list[dict]:
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_job, jobs))


@dataclass
class AblationRow:
    name: str
    results: list[dict]

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.results]))

    def std(self, key: str) -> float:
        return float(np.std([r[key] for r in self.results]))


def run_ablation_suite(base: ExperimentConfig, seeds: Sequence[int] | int = 3, rows: Sequence[str] | None = None,
                       out_dir: str | Path | None = None, workers: int | None = None) -> list[AblationRow]:
    """Train every ablation row for every seed; rows keep their grid order."""
    if isinstance(seeds, int):
        seeds = [base.seed + i for i in range(seeds)]
    chosen = [(n, o) for n, o in ABLATION_ROWS if rows is None or n in rows]
    if rows is not None and len(chosen) != len(rows):
        raise ConfigError(f"unknown ablation rows: {sorted(set(rows) - {n for n, _ in ABLATION_ROWS})}")
    jobs, keys = [], []
    # seed-major order lets consecutive jobs reuse the cached splits
    for seed in seeds:
        for name, overrides in chosen:
            cfg = base.replace(seed=seed, **overrides)
            cfg.validate()
            target = None if out_dir is None else Path(out_dir) / _slug(name) / f"seed{seed}"
            jobs.append((cfg, target, True))
            keys.append(name)
    results = run_jobs(jobs, workers)
    table = []
    for name, _ in chosen:
        table.append(AblationRow(name, [r for k, r in zip(keys, results) if k == name]))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.txt").write_text(format_table(table))
    return table


def _slug(name: str) -> str:
    return name.replace("+", "plus_").replace("->", "_to_").replace("/", "_")


def format_table(table: Sequence[AblationRow]) -> str:
    lines = [f"{'row':<10} {'ACC':>15} {'OSCR':>15}  seeds"]
    for row in table:
        lines.append(f"{row.name:<10} {row.mean('acc'):7.4f}±{row.std('acc'):.4f} "
                     f"{row.mean('oscr'):7.4f}±{row.std('oscr'):.4f}  {len(row.results)}")
    return "\n".join(lines) + "\n"
