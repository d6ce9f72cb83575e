"""Training, evaluation, ablation and few-shot suites, embedding dumps."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import ABLATION_FLAGS, ExperimentConfig, save_config
from .contrastive import Negatives, loss_rdn, loss_syn, pool, total_loss
from .data import (ConfigError, LoadSeries, LoadWindow, few_shot_split, generate_synthetic,
                   ingest_csv, instance_normalize, make_windows, patchify)
from .layers import attention
from .image import make_conv_stack, make_image_negative, render_frames, write_pgm
from .model import EmbeddingSet, PrismNet
from .optim import Adam
from .tensor import Tensor
from .text import (Tokenizer, compute_stats, default_tokenizer, load_rules, make_text_negative,
                   render_text)

TEXT_NEGATIVES = ("context_swap", "semantic_tamper")
IMAGE_NEGATIVES = ("patch_swap", "color_jitter")
LOSS_PAIRS = ("rdn_series_text", "rdn_series_image", "syn_fused_series", "syn_fused_text",
              "syn_fused_image")
# each pair is logged as both directions and their weighted sum
LOSS_COMPONENTS = tuple(f"{p}{d}" for p in LOSS_PAIRS for d in ("", "_fwd", "_rev"))


class TrainingDivergence(RuntimeError):
    pass


# --------------------------------------------------------------------------
# data


def load_series(cfg: ExperimentConfig) -> LoadSeries:
    if cfg.source == "csv":
        return ingest_csv(cfg.csv_path, cfg.time_column or None, list(cfg.value_columns) or None,
                          cfg.resolution)
    series = generate_synthetic(cfg.synthetic())
    series.resolution = cfg.resolution
    return series


def standardize(series: LoadSeries, train_ratio: float) -> LoadSeries:
    """Z-score every channel with statistics of the leading training span."""
    n = max(2, int(len(series) * train_ratio))
    head = series.values[:n]
    mu, sd = head.mean(axis=0), head.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return dataclasses.replace(series, values=(series.values - mu) / sd)


def windows_hash(windows: Sequence[LoadWindow]) -> str:
    h = hashlib.sha256()
    for w in windows:
        h.update(str(w.window_start_index).encode())
        h.update(np.ascontiguousarray(w.history).tobytes())
        h.update(np.ascontiguousarray(w.target).tobytes())
    return h.hexdigest()[:16]


@dataclass
class TriModalBatch:
    patches: np.ndarray  # (B, P, patch_len * d)
    mean: np.ndarray  # (B, d)
    std: np.ndarray  # (B, d)
    target: np.ndarray  # (B, h, d)
    text_feats: np.ndarray | None  # (B, 1 + K, L, Dt), positive first
    text_mask: np.ndarray | None  # (B, 1 + K, L)
    frame_means: np.ndarray | None  # (B, 1 + K, N, n_patches), positive first
    index: list[int]

    def __len__(self) -> int:
        return self.patches.shape[0]


class TriModalDataset:
    """Windows of one series for one horizon, plus lazily cached views.

    Cached per window: the text views, their frozen (pooled) features per
    text variant, and the frame patch means of the positive and negative
    image stacks.  Everything cached depends only on frozen components, so
    a dataset can be shared by runs that differ in trainable settings.
    """

    def __init__(self, cfg: ExperimentConfig, horizon: int, series: LoadSeries | None = None):
        cfg.validate()
        if horizon not in cfg.horizons:
            raise ConfigError(f"horizon {horizon} is not in the configured set {cfg.horizons}")
        self.cfg = cfg
        self.horizon = horizon
        raw = series if series is not None else load_series(cfg)
        self.series = standardize(raw, cfg.split_ratios[0]) if cfg.standardize else raw
        self.n_channels = self.series.n_channels
        self.windows = make_windows(self.series, cfg.window, horizon, cfg.window_stride)
        self.full_splits = few_shot_split(self.windows, 1.0, cfg.seed, tuple(cfg.split_ratios))
        self.tokenizer: Tokenizer = default_tokenizer()
        self.rules = load_rules()
        self.conv = make_conv_stack(self.n_channels, seed=cfg.frozen_seed)
        self._texts: dict[tuple, list] = {}
        self._text_feats: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._frames: dict[int, np.ndarray] = {}
        self._norm: dict[int, LoadWindow] = {}
        self._frame_model: PrismNet | None = None

    # -- splits ----------------------------------------------------------------

    def splits(self, fraction: float | None = None):
        frac = self.cfg.train_fraction if fraction is None else fraction
        return few_shot_split(self.windows, frac, self.cfg.seed, tuple(self.cfg.split_ratios))

    def split(self, name: str, fraction: float | None = None) -> list[LoadWindow]:
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self.splits(fraction), name)

    # -- views -----------------------------------------------------------------

    def normalized(self, w: LoadWindow) -> LoadWindow:
        out = self._norm.get(w.window_start_index)
        if out is None:
            out = self._norm[w.window_start_index] = instance_normalize(w)
        return out

    def text_variant(self, cfg: ExperimentConfig) -> tuple:
        return (not cfg.no_stat, not cfg.no_knowledge)

    def text_views(self, w: LoadWindow, variant: tuple) -> list:
        key = (variant, w.window_start_index)
        views = self._texts.get(key)
        if views is None:
            include_stats, include_knowledge = variant
            stats = compute_stats(w.history, int(round(self.cfg.daily_period)))
            meta = {"entity_level": self.cfg.entity_level, "resolution": self.series.resolution,
                    "horizon": self.horizon}
            pos = render_text(stats, meta, self.rules, include_stats, include_knowledge)
            pos.tokens = self.tokenizer.encode(pos.text)
            rng = np.random.default_rng([self.cfg.seed, w.window_start_index, 101])
            views = [pos] + [make_text_negative(pos, k, rng, self.tokenizer) for k in TEXT_NEGATIVES]
            self._texts[key] = views
        return views

    def _ensure_text_feats(self, windows: Sequence[LoadWindow], model: PrismNet, cfg: ExperimentConfig,
                           with_negatives: bool) -> None:
        variant = self.text_variant(cfg)
        enc = model.config.text_encoder
        todo = []
        for w in windows:
            views = self.text_views(w, variant)
            for k in range(1 + len(TEXT_NEGATIVES) if with_negatives else 1):
                key = (variant, enc, w.window_start_index, k)
                if key not in self._text_feats:
                    todo.append((key, views[k].tokens))
        for start in range(0, len(todo), 64):
            chunk = todo[start:start + 64]
            feats, mask = model.text_features([t for _, t in chunk])
            for (key, _), f, m in zip(chunk, feats, mask):
                n = int(m.sum())
                self._text_feats[key] = (f[:n].copy(), np.ones(n, dtype=bool))

    def frame_means(self, w: LoadWindow, model: PrismNet) -> np.ndarray:
        """(1 + K, N, n_patches) patch averages of positive and negative frames."""
        out = self._frames.get(w.window_start_index)
        if out is None:
            stack = render_frames(self.normalized(w).history, self.conv, self.cfg.group_size)
            rng = np.random.default_rng([self.cfg.seed, w.window_start_index, 202])
            negs = [make_image_negative(stack, k, rng) for k in IMAGE_NEGATIVES]
            frames = np.stack([stack.frames] + [n.frames for n in negs])
            out = self._frames[w.window_start_index] = model.frame_patch_means(frames)
        return out

    def batch(self, windows: Sequence[LoadWindow], model: PrismNet, cfg: ExperimentConfig,
              with_negatives: bool) -> TriModalBatch:
        c = model.config
        normed = [self.normalized(w) for w in windows]
        patches = np.stack([patchify(n.history, c.patch_len, c.patch_stride).patches.reshape(
            -1, c.patch_len * self.n_channels) for n in normed])
        mean = np.stack([n.norm_stats.mean for n in normed])
        std = np.stack([n.norm_stats.std for n in normed])
        target = np.stack([w.target for w in windows])
        text_feats = text_mask = frames = None
        k1 = 1 + len(TEXT_NEGATIVES) if with_negatives else 1
        if c.use_text:
            self._ensure_text_feats(windows, model, cfg, with_negatives)
            variant = self.text_variant(cfg)
            items = [[self._text_feats[(variant, c.text_encoder, w.window_start_index, k)]
                      for k in range(k1)] for w in windows]
            length = max(f.shape[0] for row in items for f, _ in row)
            text_feats = np.zeros((len(windows), k1, length, c.text_dim))
            text_mask = np.zeros((len(windows), k1, length), dtype=bool)
            for i, row in enumerate(items):
                for k, (f, m) in enumerate(row):
                    text_feats[i, k, :f.shape[0]] = f
                    text_mask[i, k, :f.shape[0]] = m
        if c.use_image:
            frames = np.stack([self.frame_means(w, model)[:1 + len(IMAGE_NEGATIVES) if with_negatives else 1]
                               for w in windows])
        return TriModalBatch(patches, mean, std, target, text_feats, text_mask, frames,
                             [w.window_start_index for w in windows])


# --------------------------------------------------------------------------
# forward pass and losses


@dataclass
class StepOutput:
    pred: Tensor
    embeddings: EmbeddingSet
    negatives: Negatives
    breakdown: object | None = None


def forward(model: PrismNet, batch: TriModalBatch, training: bool = False,
            with_negatives: bool = False) -> StepOutput:
    c = model.config
    B = len(batch)
    h_X = model.encode_series(batch.patches, training)
    h_T = h_I = None
    neg = Negatives()
    if c.use_text and batch.text_feats is not None:
        h_T = T.reshape(model.prompt_encoder(batch.text_feats[:, 0], batch.text_mask[:, 0], training),
                        (B, 1, c.embed_dim))
        k = batch.text_feats.shape[1] - 1
        if with_negatives and k > 0:
            feats = batch.text_feats[:, 1:].reshape(B * k, *batch.text_feats.shape[2:])
            mask = batch.text_mask[:, 1:].reshape(B * k, -1)
            with model.negative_stream():
                neg.text = T.reshape(model.prompt_encoder(feats, mask, training), (B, k, c.embed_dim))
    if c.use_image and batch.frame_means is not None:
        proj = model.params["image.proj"].data
        h_I = model.encode_images(batch.frame_means[:, 0] @ proj, training)
        k = batch.frame_means.shape[1] - 1
        if with_negatives and k > 0:
            fm = batch.frame_means[:, 1:]
            with model.negative_stream():
                z = model.encode_images(fm.reshape(B * k, *fm.shape[2:]) @ proj, training)
            neg.image = T.mean(T.reshape(z, (B, k, c.group_size, c.embed_dim)), axis=2)
    h_F = model.fuse(h_T, h_I, B)
    pred = model.forecast(h_X, h_F, batch.mean, batch.std, training)
    return StepOutput(pred, EmbeddingSet(h_X, h_T, h_I, h_F), neg)


def compute_losses(out: StepOutput, batch: TriModalBatch, cfg: ExperimentConfig):
    cc = cfg.contrastive()
    parts: dict[str, float] = {}
    e = out.embeddings
    if cc.lambda_rdn == 0 and cc.lambda_syn == 0:
        zero = Tensor(np.zeros(()))
        return total_loss(out.pred, batch.target, zero, zero, 0.0, 0.0, parts)
    rdn = loss_rdn(e.h_X, e.h_T, e.h_I, out.negatives, cc, parts)
    syn = loss_syn(e.h_F, e.h_X, e.h_T, e.h_I, out.negatives, cc, parts)
    return total_loss(out.pred, batch.target, rdn, syn, cc.lambda_rdn, cc.lambda_syn, parts)


# --------------------------------------------------------------------------
# metrics


@dataclass
class HorizonMetrics:
    horizon: int
    mse: float
    mae: float
    n_windows: int


@dataclass
class MetricsReport:
    rows: list[HorizonMetrics]
    runtime: float = 0.0
    config_hash: str = ""
    seed: int = 0
    split: str = "test"
    label: str = "full"
    test_hash: str = ""

    @property
    def avg_mse(self) -> float:
        return float(np.mean([r.mse for r in self.rows]))

    @property
    def avg_mae(self) -> float:
        return float(np.mean([r.mae for r in self.rows]))

    def csv_rows(self) -> list[dict]:
        base = {"label": self.label, "split": self.split, "seed": self.seed,
                "config_hash": self.config_hash}
        out = [{**base, "horizon": r.horizon, "mse": repr(r.mse), "mae": repr(r.mae),
                "n_windows": r.n_windows} for r in self.rows]
        out.append({**base, "horizon": "avg", "mse": repr(self.avg_mse), "mae": repr(self.avg_mae),
                    "n_windows": sum(r.n_windows for r in self.rows)})
        return out


# wall-clock time is kept out of the metrics file so reruns give identical bytes
METRIC_FIELDS = ["label", "split", "horizon", "mse", "mae", "n_windows", "seed", "config_hash"]


def write_metrics(reports: Sequence[MetricsReport], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for rep in reports:
            writer.writerows(rep.csv_rows())


def error_metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    diff = np.asarray(pred) - np.asarray(target)
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))


def predict(model: PrismNet, dataset: TriModalDataset, windows: Sequence[LoadWindow],
            cfg: ExperimentConfig, batch_size: int | None = None) -> np.ndarray:
    bs = batch_size or max(cfg.batch_size, 64)
    preds = []
    with T.no_grad():
        for s in range(0, len(windows), bs):
            b = dataset.batch(windows[s:s + bs], model, cfg, with_negatives=False)
            preds.append(forward(model, b, training=False).pred.data)
    return np.concatenate(preds) if preds else np.zeros((0, dataset.horizon, dataset.n_channels))


def evaluate_split(model: PrismNet, dataset: TriModalDataset, windows: Sequence[LoadWindow],
                   cfg: ExperimentConfig) -> tuple[float, float]:
    if not windows:
        raise ConfigError("cannot evaluate an empty split")
    pred = predict(model, dataset, windows, cfg)
    return error_metrics(pred, np.stack([w.target for w in windows]))


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: PrismNet
    horizon: int
    loss_log: list[dict] = field(default_factory=list)
    epoch_log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = math.inf
    initial_val_mse: float = math.nan
    initial_val_mae: float = math.nan
    final_val_mae: float = math.nan
    stopped_early: bool = False
    runtime: float = 0.0


def train(cfg: ExperimentConfig, horizon: int | None = None, dataset: TriModalDataset | None = None,
          fraction: float | None = None, progress: Callable[[str], None] | None = None) -> TrainResult:
    """Mini-batch training with early stopping on validation prediction MSE.

    The parameters of the best validation epoch are restored at the end.
    """
    t0 = time.perf_counter()
    cfg.validate()
    horizon = horizon or cfg.horizons[0]
    dataset = dataset or TriModalDataset(cfg, horizon)
    if dataset.horizon != horizon:
        raise ConfigError("dataset was built for a different horizon")
    splits = dataset.splits(fraction)
    train_w, val_w = splits.train, splits.val
    model = PrismNet(cfg.model_config(horizon, dataset.n_channels, len(dataset.tokenizer)), seed=cfg.seed)
    opt = Adam(model.trainable(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 11])
    with_neg = not cfg.no_cl
    result = TrainResult(model, horizon)

    mse0, mae0 = evaluate_split(model, dataset, val_w, cfg)
    result.initial_val_mse, result.initial_val_mae = mse0, mae0
    result.epoch_log.append({"epoch": 0, "val_mse": mse0, "val_mae": mae0, "improved": True})
    best_state, best_mse, bad = model.state_dict(), mse0, 0
    result.best_val_mse, result.final_val_mae = mse0, mae0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_w))
        for s in range(0, len(order), cfg.batch_size):
            windows = [train_w[i] for i in order[s:s + cfg.batch_size]]
            batch = dataset.batch(windows, model, cfg, with_negatives=with_neg)
            opt.zero_grad()
            with T.fresh_tape():
                out = forward(model, batch, training=True, with_negatives=with_neg)
                bd = compute_losses(out, batch, cfg)
                if not math.isfinite(bd.l_total):
                    raise TrainingDivergence(
                        f"loss became non-finite at step {step} (epoch {epoch}): "
                        f"prediction={bd.l_prediction}, rdn={bd.l_rdn}, syn={bd.l_syn}")
                T.backward(bd.total)
            opt.step()
            row = {"horizon": horizon, "step": step, "epoch": epoch, "l_prediction": bd.l_prediction,
                   "l_rdn": bd.l_rdn, "l_syn": bd.l_syn, "l_total": bd.l_total,
                   "lambda_rdn": bd.lambda_rdn, "lambda_syn": bd.lambda_syn}
            row.update({k: bd.components.get(k, 0.0) for k in LOSS_COMPONENTS})
            result.loss_log.append(row)
            step += 1
        mse, mae = evaluate_split(model, dataset, val_w, cfg)
        improved = mse < best_mse
        result.epoch_log.append({"epoch": epoch, "val_mse": mse, "val_mae": mae, "improved": improved})
        if progress:
            progress(f"h={horizon} epoch {epoch}: val mse {mse:.4f} mae {mae:.4f}")
        if improved:
            best_state, best_mse, bad = model.state_dict(), mse, 0
            result.best_epoch, result.best_val_mse, result.final_val_mae = epoch, mse, mae
        else:
            bad += 1
            if bad >= max(cfg.patience, 1):
                result.stopped_early = epoch < cfg.epochs
                break
    model.load_state_dict(best_state)
    result.runtime = time.perf_counter() - t0
    return result


LOSS_FIELDS = ["horizon", "step", "epoch", "l_prediction", "l_rdn", "l_syn", "l_total",
               "lambda_rdn", "lambda_syn", *LOSS_COMPONENTS]


def write_loss_log(rows: Sequence[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# --------------------------------------------------------------------------
# evaluation over horizons, checkpoints


def evaluate(models: dict[int, PrismNet], cfg: ExperimentConfig, split: str = "test",
             horizons: Sequence[int] | None = None,
             datasets: dict[int, TriModalDataset] | None = None, label: str = "full") -> MetricsReport:
    t0 = time.perf_counter()
    horizons = list(horizons or sorted(models))
    rows = []
    test_hash = ""
    for h in horizons:
        if h not in models:
            raise ConfigError(f"no model was trained for horizon {h}")
        ds = (datasets or {}).get(h) or TriModalDataset(cfg, h)
        windows = ds.split(split)
        mse, mae = evaluate_split(models[h], ds, windows, cfg)
        rows.append(HorizonMetrics(h, mse, mae, len(windows)))
        test_hash = windows_hash(ds.split("test"))
    return MetricsReport(rows, time.perf_counter() - t0, cfg.config_hash(), cfg.seed, split, label,
                         test_hash)


def save_models(models: dict[int, PrismNet], path) -> None:
    tensors = {}
    for h, m in sorted(models.items()):
        tensors.update({f"h{h}/{k}": v for k, v in m.state_dict().items()})
    checkpoint.save(tensors, path)


def load_models(path, cfg: ExperimentConfig, n_channels: int | None = None) -> dict[int, PrismNet]:
    if not Path(path).is_file():
        raise ConfigError(f"no checkpoint at {path}; train first")
    tensors = checkpoint.load(path)
    by_h: dict[int, dict] = {}
    for name, arr in tensors.items():
        head, _, rest = name.partition("/")
        if not head.startswith("h") or not rest:
            raise checkpoint.CheckpointError(f"unexpected tensor name {name!r}")
        by_h.setdefault(int(head[1:]), {})[rest] = arr
    vocab = len(default_tokenizer())
    models = {}
    for h, state in by_h.items():
        m = PrismNet(cfg.model_config(h, n_channels or cfg.n_channels, vocab), seed=cfg.seed)
        m.load_state_dict(state)
        models[h] = m
    return models


@dataclass
class RunOutput:
    results: dict[int, TrainResult]
    report: MetricsReport
    datasets: dict[int, TriModalDataset]

    @property
    def models(self) -> dict[int, PrismNet]:
        return {h: r.model for h, r in self.results.items()}


def run(cfg: ExperimentConfig, out_dir=None, horizons: Sequence[int] | None = None,
        progress: Callable[[str], None] | None = None) -> RunOutput:
    """Train one model per horizon, evaluate on the test split, write outputs."""
    horizons = list(horizons or cfg.horizons)
    results, datasets = {}, {}
    for h in horizons:
        datasets[h] = TriModalDataset(cfg, h)
        results[h] = train(cfg, h, datasets[h], progress=progress)
    report = evaluate({h: r.model for h, r in results.items()}, cfg, "test", horizons, datasets)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out / "config.ini")
        save_models({h: r.model for h, r in results.items()}, out / "checkpoint.prsm")
        write_loss_log([row for r in results.values() for row in r.loss_log], out / "loss_log.csv")
        write_metrics([report], out / "metrics.csv")
        with (out / "timing.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["horizon", "train_s", "best_epoch", "stopped_early"])
            for h, r in results.items():
                writer.writerow([h, f"{r.runtime:.3f}", r.best_epoch, r.stopped_early])
            writer.writerow(["eval", f"{report.runtime:.3f}", "", ""])
    return RunOutput(results, report, datasets)


# --------------------------------------------------------------------------
# suites


@dataclass
class SuiteRow:
    label: str
    fraction: float
    val_mse: float
    val_mae: float
    test_mse: float
    test_mae: float
    test_hash: str
    seed: int


SUITE_FIELDS = ["label", "fraction", "val_mse", "val_mae", "test_mse", "test_mae", "test_hash", "seed"]


def write_suite(rows: Sequence[SuiteRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUITE_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in dataclasses.asdict(r).items()})


def _suite_row(label: str, cfg: ExperimentConfig, res: TrainResult, ds: TriModalDataset,
               fraction: float, with_test: bool) -> SuiteRow:
    test_w = ds.split("test", fraction)
    tmse = tmae = math.nan
    if with_test:
        tmse, tmae = evaluate_split(res.model, ds, test_w, cfg)
    return SuiteRow(label, fraction, res.best_val_mse, res.final_val_mae, tmse, tmae,
                    windows_hash(test_w), cfg.seed)


def run_ablation_suite(cfg: ExperimentConfig, flags: Sequence[str] | None = None,
                       horizon: int | None = None, with_test: bool = True,
                       progress: Callable[[str], None] | None = None) -> list[SuiteRow]:
    """The full model plus one run per ablation flag, on shared data."""
    flags = list(ABLATION_FLAGS if flags is None else flags)
    horizon = horizon or cfg.horizons[0]
    ds = TriModalDataset(cfg, horizon)
    rows = []
    for flag in [None, *flags]:
        run_cfg = cfg.with_flag(flag)
        res = train(run_cfg, horizon, ds, progress=progress)
        rows.append(_suite_row(flag or "full", run_cfg, res, ds, cfg.train_fraction, with_test))
    return rows


def run_few_shot_suite(cfg: ExperimentConfig, fractions: Sequence[float] = (0.05, 0.1, 0.5, 1.0),
                       horizon: int | None = None, with_test: bool = True,
                       progress: Callable[[str], None] | None = None) -> list[SuiteRow]:
    """One train + evaluate per training fraction; the test set never changes."""
    horizon = horizon or cfg.horizons[0]
    ds = TriModalDataset(cfg, horizon)
    rows = []
    for frac in fractions:
        res = train(cfg, horizon, ds, fraction=frac, progress=progress)
        rows.append(_suite_row(f"fraction={frac:g}", cfg, res, ds, frac, with_test))
    hashes = {r.test_hash for r in rows}
    if len(hashes) != 1:
        raise RuntimeError(f"test sets differ across fractions: {sorted(hashes)}")
    return rows


# --------------------------------------------------------------------------
# embeddings and previews


EMBEDDING_TAGS = ("h_X", "h_X+I", "h_X+T", "h_F")


def window_embeddings(model: PrismNet, batch: TriModalBatch) -> dict[str, np.ndarray]:
    """Pooled representations per window.

    ``h_X`` pools the series rows and ``h_F`` the fused rows.  ``h_X+I`` and
    ``h_X+T`` pool the series rows after cross-attending to image-only or
    text-only fused rows (the other modality zeroed), i.e. the forecaster's
    view of the series enriched by one modality.
    """
    p, c = model.params, model.config
    with T.no_grad():
        out = forward(model, batch, training=False)
        e = out.embeddings
        B = len(batch)

        def enriched(h_T, h_I):
            h_F = model.fuse(h_T, h_I, B)
            a, _ = attention(e.h_X, h_F, p["cross.wq"], p["cross.wk"], p["cross.wv"], p["cross.wo"], c.heads)
            return pool(T.add(e.h_X, a)).data

        return {"h_X": pool(e.h_X).data, "h_X+I": enriched(None, e.h_I),
                "h_X+T": enriched(e.h_T, None), "h_F": pool(e.h_F).data}


def dump_embeddings(model: PrismNet, dataset: TriModalDataset, cfg: ExperimentConfig, split: str,
                    path) -> int:
    windows = dataset.split(split)
    E = model.config.embed_dim
    n = 0
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tag", "window_index"] + [f"dim{k}" for k in range(E)])
        for s in range(0, len(windows), 64):
            chunk = windows[s:s + 64]
            emb = window_embeddings(model, dataset.batch(chunk, model, cfg, with_negatives=False))
            for tag in EMBEDDING_TAGS:
                for w, vec in zip(chunk, emb[tag]):
                    writer.writerow([tag, w.window_start_index] + [repr(float(v)) for v in vec])
                    n += 1
    return n


def render_preview(cfg: ExperimentConfig, window_position: int, out_dir, horizon: int | None = None) -> list[Path]:
    """Write the text views and the image frames (positive and negatives) of one window."""
    horizon = horizon or cfg.horizons[0]
    ds = TriModalDataset(cfg, horizon)
    if not 0 <= window_position < len(ds.windows):
        raise ConfigError(f"window {window_position} is out of range (0..{len(ds.windows) - 1})")
    w = ds.windows[window_position]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for view in ds.text_views(w, ds.text_variant(cfg)):
        path = out / f"window{window_position}_text_{view.negative_kind}.txt"
        path.write_text(view.text + "\n")
        written.append(path)
    stack = render_frames(ds.normalized(w).history, ds.conv, cfg.group_size)
    rng = np.random.default_rng([cfg.seed, w.window_start_index, 202])
    stacks = [stack] + [make_image_negative(stack, k, rng) for k in IMAGE_NEGATIVES]
    for st in stacks:
        for t, frame in enumerate(st.frames):
            path = out / f"window{window_position}_image_{st.negative_kind}_{t}.pgm"
            write_pgm(frame, path)
            written.append(path)
    return written
