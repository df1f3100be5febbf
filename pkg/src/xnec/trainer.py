"""Training protocol: clip-level splits, full-batch Adam optimization with
class-balanced sampling, ROC-AUC evaluation, and the threshold sweep.

Splits are made per clip (never per window) so no clip leaks across sets.
The reported checkpoint is the one with the best validation AUC; when the
validation windows are single-class (tiny corpora) selection falls back to
training AUC with a warning.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch

from .corpus import ClipRecord, read_media
from .errors import ValidationError, XnecError
from .model import ModelConfig, NecessityModel
from .windows import FrameWindow, LabelingPolicy, build_windows


@dataclass(frozen=True)
class TrainConfig:
    """Optimization protocol and split fractions."""

    p0: float = 0.5
    train_frac: float = 0.70
    val_frac: float = 0.10
    learning_rate: float = 1e-2
    first_moment_decay: float = 0.9
    second_moment_decay: float = 0.999
    epochs: int = 300
    seed: int = 0
    negatives_per_clip: int = 1
    batch_size: int | None = None  # None: full batch (the protocol)
    early_stop_train_auc: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.train_frac + self.val_frac < 1.0:
            raise ValidationError("train and val fractions must leave room for a test set")


@dataclass(frozen=True)
class EvalResult:
    p0: float
    auc_model: float
    auc_baseline: float
    n_test_windows: int
    seed: int


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def _apportion(sizes: dict[bool, int], total_quota: int, frac: float) -> dict[bool, int]:
    """Largest-remainder apportionment of a quota across strata."""
    ideal = {key: frac * size for key, size in sizes.items()}
    counts = {key: math.floor(v) for key, v in ideal.items()}
    remainder = total_quota - sum(counts.values())
    order = sorted(sizes, key=lambda key: (-(ideal[key] - counts[key]), key))
    for key in order[:remainder]:
        counts[key] += 1
    return counts


def split_corpus(
    clips: Sequence[ClipRecord], config: TrainConfig
) -> tuple[list[ClipRecord], list[ClipRecord], list[ClipRecord]]:
    """Seed-deterministic clip-level split, stratified by label at p0.

    Totals follow the declared convention: floor(train_frac*n) train,
    floor(val_frac*n) val, remainder test.
    """
    n = len(clips)
    if n < 10:
        raise ValidationError(f"split needs >= 10 clips, got {n}")
    strata: dict[bool, list[ClipRecord]] = {}
    for clip in clips:
        if not clip.labeled:
            raise ValidationError(f"{clip.vid}: cannot split an unlabeled clip")
        strata.setdefault(clip.necessity_score >= config.p0, []).append(clip)
    for key, members in strata.items():
        if len(members) < 3:
            raise ValidationError(
                f"stratum {'>= p0' if key else '< p0'} has only {len(members)} clips"
            )

    n_train = math.floor(config.train_frac * n)
    n_val = math.floor(config.val_frac * n)
    sizes = {key: len(members) for key, members in strata.items()}
    train_quota = _apportion(sizes, n_train, config.train_frac)
    val_quota = _apportion(sizes, n_val, config.val_frac)

    rng = np.random.default_rng(config.seed)
    train: list[ClipRecord] = []
    val: list[ClipRecord] = []
    test: list[ClipRecord] = []
    for key in sorted(strata):
        members = sorted(strata[key], key=lambda c: c.vid)
        rng.shuffle(members)
        t, v = train_quota[key], val_quota[key]
        train += members[:t]
        val += members[t : t + v]
        test += members[t + v :]
    return train, val, test


# ---------------------------------------------------------------------------
# tensor loading
# ---------------------------------------------------------------------------


def _to_gray(frames: np.ndarray) -> np.ndarray:
    if frames.ndim == 4:
        return frames.mean(axis=-1)
    return frames


def _resize_stack(frames: np.ndarray, size: int) -> np.ndarray:
    if frames.shape[1] == size and frames.shape[2] == size:
        return frames
    return np.stack([cv2.resize(f, (size, size), interpolation=cv2.INTER_AREA) for f in frames])


class WindowTensors:
    """Windows materialized as batched tensors, media loaded once per clip."""

    @classmethod
    def from_tensors(
        cls,
        frames: torch.Tensor,
        gaze: torch.Tensor | None,
        accel: torch.Tensor,
        labels: torch.Tensor,
    ) -> "WindowTensors":
        """Wrap pre-built tensors (synthetic data in tests)."""
        self = cls.__new__(cls)
        self.windows = []
        self.frames = frames
        self.gaze = gaze if gaze is not None else torch.zeros(
            frames.shape[0], frames.shape[1], 1, *frames.shape[3:]
        )
        self.accel = accel
        self.labels = labels
        return self

    def __init__(self, windows: Sequence[FrameWindow], input_size: int):
        if not windows:
            raise ValidationError("no windows to load")
        self.windows = list(windows)
        video_cache: dict[str, np.ndarray] = {}
        gaze_cache: dict[str, np.ndarray] = {}
        frames_out = []
        gaze_out = []
        for w in self.windows:
            if w.video_path not in video_cache:
                media, _ = read_media(w.video_path)
                if media.ndim == 3:
                    media = np.repeat(media[..., None], 3, axis=-1)
                video_cache[w.video_path] = _resize_stack(media, input_size).astype(np.float32) / 255.0
            if w.gazemap_path not in gaze_cache:
                gmedia, _ = read_media(w.gazemap_path)
                gray = _to_gray(gmedia).astype(np.float32) / 255.0
                gaze_cache[w.gazemap_path] = _resize_stack(gray, input_size)
            clip_frames = video_cache[w.video_path]
            clip_gaze = gaze_cache[w.gazemap_path]
            if w.end_frame > clip_frames.shape[0]:
                raise ValidationError(
                    f"{w.vid}: window end {w.end_frame} beyond media ({clip_frames.shape[0]} frames)"
                )
            sl = slice(w.start_frame - 1, w.end_frame)
            frames_out.append(clip_frames[sl])
            gaze_out.append(clip_gaze[sl])
        self.frames = torch.from_numpy(np.stack(frames_out)).permute(0, 1, 4, 2, 3).contiguous()
        self.gaze = torch.from_numpy(np.stack(gaze_out)).unsqueeze(2)
        self.accel = torch.tensor([w.accel for w in self.windows], dtype=torch.float32)
        self.labels = torch.tensor([w.label for w in self.windows], dtype=torch.float32)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.shape[0], dtype=np.float64)
    i = 0
    while i < values.shape[0]:
        j = i
        while j + 1 < values.shape[0] and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC AUC as the Mann-Whitney statistic (ties count one half),
    computed by rank sums over a single sort."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValidationError("scores and labels must align")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("roc_auc needs both classes")
    ranks = _midranks(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def baseline_scores(n: int, seed: int) -> np.ndarray:
    """Seeded uniform-random baseline scores (expected AUC 0.5)."""
    return np.random.default_rng(seed).uniform(size=n)


def constant_baseline(n: int, value: float = 0.5) -> np.ndarray:
    """All-ties baseline: AUC is exactly 0.5 under the half-tie convention."""
    return np.full(n, value, dtype=np.float64)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def evaluate_scores(model: NecessityModel, data: WindowTensors, chunk: int = 128) -> np.ndarray:
    """Evaluation-mode scores for every window in ``data``."""
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(data), chunk):
            sl = slice(start, start + chunk)
            out.append(model(data.frames[sl], data.gaze[sl], data.accel[sl]).numpy())
    model.train(was_training)
    return np.concatenate(out)


def _auc_or_none(scores: np.ndarray, labels: np.ndarray) -> float | None:
    if len(set(labels.tolist())) < 2:
        return None
    return roc_auc(scores, labels)


def train(
    config: TrainConfig,
    train_data: WindowTensors,
    val_data: WindowTensors | None = None,
    model_config: ModelConfig | None = None,
) -> tuple[NecessityModel, list[dict]]:
    """Run the optimization protocol and return (best checkpoint, history).

    Full-batch Adam on class-balanced resamples of the training windows,
    binary cross-entropy loss, model selection by validation AUC (training
    AUC when validation is degenerate). Seed-deterministic on one device.
    """
    labels_np = train_data.labels.numpy().astype(int)
    n_pos = int(labels_np.sum())
    n_neg = labels_np.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("training windows must contain both classes")

    torch.manual_seed(config.seed)
    model = NecessityModel(model_config)
    weights = torch.where(
        train_data.labels == 1,
        torch.tensor(1.0 / n_pos, dtype=torch.float64),
        torch.tensor(1.0 / n_neg, dtype=torch.float64),
    )
    sampler_gen = torch.Generator().manual_seed(config.seed + 1)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.first_moment_decay, config.second_moment_decay),
    )
    loss_fn = torch.nn.BCELoss()

    n = len(train_data)
    batch_size = n if config.batch_size is None else config.batch_size
    if config.batch_size is not None:
        warnings.warn(
            "mini-batch training deviates from the full-batch protocol", stacklevel=2
        )

    history: list[dict] = []
    best_metric = -math.inf
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    val_degenerate_warned = False

    for epoch in range(config.epochs):
        model.train()
        idx = torch.multinomial(weights, num_samples=n, replacement=True, generator=sampler_gen)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = idx[start : start + batch_size]
            optimizer.zero_grad()
            scores = model(
                train_data.frames[batch], train_data.gaze[batch], train_data.accel[batch]
            )
            loss = loss_fn(scores, train_data.labels[batch])
            if not torch.isfinite(loss):
                raise XnecError(f"training diverged (non-finite loss) at epoch {epoch}")
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
        epoch_loss /= n

        train_auc = _auc_or_none(evaluate_scores(model, train_data), labels_np)
        val_auc = None
        if val_data is not None and len(val_data):
            val_auc = _auc_or_none(
                evaluate_scores(model, val_data), val_data.labels.numpy().astype(int)
            )
            if val_auc is None and not val_degenerate_warned:
                warnings.warn(
                    "validation windows are single-class; selecting on training AUC",
                    stacklevel=2,
                )
                val_degenerate_warned = True
        history.append(
            {"epoch": epoch, "loss": epoch_loss, "train_auc": train_auc, "val_auc": val_auc}
        )

        metric = val_auc if val_auc is not None else train_auc
        if metric is not None and metric > best_metric:
            best_metric = metric
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

        if (
            config.early_stop_train_auc is not None
            and train_auc is not None
            and train_auc >= config.early_stop_train_auc
        ):
            break

    model.load_state_dict(best_state)
    model.eval()
    return model, history


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def threshold_sweep(
    clips: Sequence[ClipRecord],
    p0_values: Sequence[float],
    config: TrainConfig,
    model_config: ModelConfig | None = None,
) -> list[EvalResult]:
    """One full train/eval per p0; the random baseline is scored on the
    identical test windows. Degenerate labelings are skipped with a warning."""
    results: list[EvalResult] = []
    model_config = model_config or ModelConfig()
    for p0 in p0_values:
        cfg = TrainConfig(
            p0=p0,
            train_frac=config.train_frac,
            val_frac=config.val_frac,
            learning_rate=config.learning_rate,
            first_moment_decay=config.first_moment_decay,
            second_moment_decay=config.second_moment_decay,
            epochs=config.epochs,
            seed=config.seed,
            negatives_per_clip=config.negatives_per_clip,
            batch_size=config.batch_size,
            early_stop_train_auc=config.early_stop_train_auc,
        )
        try:
            result = train_and_eval(clips, cfg, model_config)[0]
        except ValidationError as exc:
            warnings.warn(f"skipping p0={p0}: {exc}", stacklevel=2)
            continue
        results.append(result)
    return results


def train_and_eval(
    clips: Sequence[ClipRecord],
    config: TrainConfig,
    model_config: ModelConfig | None = None,
) -> tuple[EvalResult, NecessityModel, list[dict]]:
    """Split, window, train, and evaluate once at config.p0."""
    model_config = model_config or ModelConfig()
    policy = LabelingPolicy(
        p0=config.p0, negatives_per_clip=config.negatives_per_clip, seed=config.seed
    )
    train_clips, val_clips, test_clips = split_corpus(clips, config)
    train_w = build_windows(train_clips, policy)
    val_w = build_windows(val_clips, policy)
    test_w = build_windows(test_clips, policy)
    if not train_w or not test_w:
        raise ValidationError(f"p0={config.p0}: empty train or test window set")

    size = model_config.input_size
    train_data = WindowTensors(train_w, size)
    val_data = WindowTensors(val_w, size) if val_w else None
    model, history = train(config, train_data, val_data, model_config)

    test_data = WindowTensors(test_w, size)
    test_labels = test_data.labels.numpy().astype(int)
    auc_model = roc_auc(evaluate_scores(model, test_data), test_labels)
    auc_base = roc_auc(baseline_scores(len(test_w), config.seed), test_labels)
    result = EvalResult(
        p0=config.p0,
        auc_model=float(auc_model),
        auc_baseline=float(auc_base),
        n_test_windows=len(test_w),
        seed=config.seed,
    )
    return result, model, history


def save_eval_results(results: Sequence[EvalResult], path: str | Path) -> None:
    """Eval CSV: p0,auc_model,auc_baseline,n_test,seed (byte-stable floats)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["p0", "auc_model", "auc_baseline", "n_test", "seed"])
        for r in results:
            writer.writerow([repr(r.p0), repr(r.auc_model), repr(r.auc_baseline), r.n_test_windows, r.seed])
