"""Real-time explanation-necessity classifier.

Per frame, a small convolutional backbone produces a feature grid that is
gated elementwise by the frame's gaze-density map (downsampled to the grid).
A convolutional GRU rolls the gated features through time; the terminal
state passes through a conv stack, is flattened (losslessly, the default) or
reduced by a learned spatial weighted sum (ablation), concatenated with the
terminal acceleration, and scored by a small fully connected head ending in
a sigmoid. The decision is score >= sigma, the per-user threshold.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import Tensor, nn

from .errors import ValidationError

CHECKPOINT_SCHEMA = "xnec-model/1"


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 32  # frames are resized to input_size x input_size
    backbone_channels: tuple[int, ...] = (8, 16, 16)
    gru_channels: int = 8
    post_channels: int = 8
    head_hidden: tuple[int, ...] = (64, 32)
    dropout: float = 0.7
    spatial_transform: str = "flatten"  # or "weighted_sum"
    gaze_gating: bool = True  # False: plain backbone (ablation)
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.spatial_transform not in ("flatten", "weighted_sum"):
            raise ValidationError(f"unknown spatial transform {self.spatial_transform!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError(f"threshold {self.threshold} outside [0, 1]")


@dataclass(frozen=True)
class NecessityDecision:
    score: float
    decision: str  # "explain" | "silent"
    threshold: float


def decide_score(score: float, sigma: float) -> NecessityDecision:
    """Threshold decision; a score exactly at sigma explains (fail-safe)."""
    if not 0.0 <= sigma <= 1.0:
        raise ValidationError(f"sigma {sigma} outside [0, 1]")
    return NecessityDecision(
        score=float(score),
        decision="explain" if score >= sigma else "silent",
        threshold=sigma,
    )


class FovealEncoder(nn.Module):
    """Backbone features, gated by the gaze map at the feature grid.

    The gaze map is average-pooled to the grid and normalized to mean one,
    so a uniform gaze map reproduces the plain backbone exactly while a
    concentrated map zeroes all feature columns off the gazed cells.
    """

    def __init__(self, channels: tuple[int, ...], gaze_gating: bool = True):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 3
        for i, out_ch in enumerate(channels):
            stride = 2 if i < 2 else 1
            layers.append(nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1))
            layers.append(nn.ReLU())
            in_ch = out_ch
        self.backbone = nn.Sequential(*layers)
        self.gaze_gating = gaze_gating
        self.out_channels = in_ch

    def forward(self, images: Tensor, gaze: Tensor | None) -> Tensor:
        """images [B,3,H,W]; gaze [B,1,H,W] densities or None (uniform)."""
        features = self.backbone(images)
        if not self.gaze_gating or gaze is None:
            return features
        if gaze.shape[-2:] != images.shape[-2:]:
            raise ValidationError(
                f"gaze {tuple(gaze.shape[-2:])} not aligned with image {tuple(images.shape[-2:])}"
            )
        gate = nn.functional.adaptive_avg_pool2d(gaze, features.shape[-2:])
        mean = gate.mean(dim=(-1, -2), keepdim=True)
        # all-zero gaze map degrades to the uniform gate
        gate = torch.where(mean > 0, gate / mean.clamp_min(1e-12), torch.ones_like(gate))
        return features * gate


class ConvGRUCell(nn.Module):
    """Gated recurrent cell with convolutional state and gates."""

    def __init__(self, input_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        padding = kernel_size // 2
        self.hidden_channels = hidden_channels
        self.reset_gate = nn.Conv2d(input_channels + hidden_channels, hidden_channels,
                                    kernel_size, padding=padding)
        self.update_gate = nn.Conv2d(input_channels + hidden_channels, hidden_channels,
                                     kernel_size, padding=padding)
        self.out_gate = nn.Conv2d(input_channels + hidden_channels, hidden_channels,
                                  kernel_size, padding=padding)

    def forward(self, x: Tensor, hidden: Tensor | None) -> Tensor:
        if hidden is None:
            hidden = torch.zeros(
                x.shape[0], self.hidden_channels, *x.shape[2:],
                dtype=x.dtype, device=x.device,
            )
        stacked = torch.cat([x, hidden], dim=1)
        reset = torch.sigmoid(self.reset_gate(stacked))
        update = torch.sigmoid(self.update_gate(stacked))
        candidate = torch.tanh(self.out_gate(torch.cat([x, reset * hidden], dim=1)))
        return (1 - update) * candidate + update * hidden


class WeightedSpatialSum(nn.Module):
    """Ablation spatial transform: softmax-weighted sum over grid cells
    (compresses H'xW'xC down to C, losing spatial layout)."""

    def __init__(self, channels: int):
        super().__init__()
        self.score = nn.Conv2d(channels, 1, 1)

    def forward(self, features: Tensor) -> Tensor:
        b, c, h, w = features.shape
        weights = torch.softmax(self.score(features).view(b, 1, h * w), dim=-1)
        return (features.view(b, c, h * w) * weights).sum(dim=-1)


class NecessityHead(nn.Module):
    """Fully connected stack (ReLU + BatchNorm + Dropout) ending in a sigmoid."""

    def __init__(self, in_features: int, hidden: tuple[int, ...], dropout: float):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_features
        for width in hidden:
            layers += [
                nn.Linear(prev, width),
                nn.ReLU(),
                nn.BatchNorm1d(width),
                nn.Dropout(dropout),
            ]
            prev = width
        layers.append(nn.Linear(prev, 1))
        self.stack = nn.Sequential(*layers)

    def forward(self, v: Tensor, accel: Tensor) -> Tensor:
        if not torch.isfinite(v).all() or not torch.isfinite(accel).all():
            raise ValidationError("non-finite head input")
        x = torch.cat([v, accel.reshape(-1, 1)], dim=1)
        return torch.sigmoid(self.stack(x)).squeeze(-1)


class NecessityModel(nn.Module):
    """End-to-end window scorer; see the module docstring for the data path."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.encoder = FovealEncoder(self.config.backbone_channels, self.config.gaze_gating)
        self.gru = ConvGRUCell(self.encoder.out_channels, self.config.gru_channels)
        self.post = nn.Sequential(
            nn.Conv2d(self.config.gru_channels, self.config.post_channels, 3, padding=1),
            nn.ReLU(),
        )
        grid = self.config.input_size // 4  # two stride-2 stages in the backbone
        self._spatial_shape = (self.config.post_channels, grid, grid)
        if self.config.spatial_transform == "flatten":
            feature_dim = self.config.post_channels * grid * grid
            self.spatial: nn.Module | None = None
        else:
            feature_dim = self.config.post_channels
            self.spatial = WeightedSpatialSum(self.config.post_channels)
        self.head = NecessityHead(feature_dim + 1, self.config.head_hidden, self.config.dropout)

    # -- stages ----------------------------------------------------------

    def foveal_encode(self, images: Tensor, gaze: Tensor | None) -> Tensor:
        """Per-frame gated feature maps A_i; images [B,3,H,W], gaze [B,1,H,W]."""
        return self.encoder(images, gaze)

    def temporal_encode(self, frame_features: Tensor) -> tuple[Tensor, Tensor]:
        """Roll a [B,T,C,H,W] feature sequence through the ConvGRU.

        Returns (spatial terminal feature [B,C',H',W'], its transform: the
        lossless flatten by default, or the weighted spatial sum ablation).
        """
        b, t = frame_features.shape[:2]
        hidden: Tensor | None = None
        for i in range(t):
            hidden = self.gru(frame_features[:, i], hidden)
        assert hidden is not None
        spatial = self.post(hidden)
        if self.spatial is None:
            flat = spatial.flatten(1)
        else:
            flat = self.spatial(spatial)
        return spatial, flat

    def unflatten(self, v: Tensor) -> Tensor:
        """Inverse of the flatten transform (undefined for the ablation)."""
        if self.spatial is not None:
            raise ValidationError("weighted-sum transform is not invertible")
        return v.view(v.shape[0], *self._spatial_shape)

    def head_score(self, v: Tensor, accel: Tensor) -> Tensor:
        return self.head(v, accel)

    # -- end to end ------------------------------------------------------

    def forward(self, frames: Tensor, gaze: Tensor | None, accel: Tensor) -> Tensor:
        """Score a batch of windows.

        frames [B,T,3,H,W] in [0,1]; gaze [B,T,1,H,W] densities or None;
        accel [B]. Returns scores in (0,1), shape [B].
        """
        b, t = frames.shape[:2]
        flat_frames = frames.reshape(b * t, *frames.shape[2:])
        flat_gaze = gaze.reshape(b * t, *gaze.shape[2:]) if gaze is not None else None
        features = self.foveal_encode(flat_frames, flat_gaze)
        features = features.reshape(b, t, *features.shape[1:])
        _, v = self.temporal_encode(features)
        return self.head_score(v, accel)

    def decide(self, frames: Tensor, gaze: Tensor | None, accel: Tensor,
               sigma: float | None = None) -> list[NecessityDecision]:
        """Threshold decision per window; evaluation mode, no gradients."""
        sigma = self.config.threshold if sigma is None else sigma
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                scores = self.forward(frames, gaze, accel)
        finally:
            self.train(was_training)
        return [decide_score(float(s), sigma) for s in scores]


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(model: NecessityModel, path: str | Path, extra: dict | None = None) -> None:
    """Versioned binary checkpoint with the architecture config embedded."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "schema": CHECKPOINT_SCHEMA,
            "config": asdict(model.config),
            "state": model.state_dict(),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[NecessityModel, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ValidationError(
            f"{path}: checkpoint schema {payload.get('schema')!r} != {CHECKPOINT_SCHEMA!r}"
        )
    cfg = payload["config"]
    for key in ("backbone_channels", "head_hidden"):
        cfg[key] = tuple(cfg[key])
    model = NecessityModel(ModelConfig(**cfg))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload.get("extra", {})
