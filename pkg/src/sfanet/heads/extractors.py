"""Spatial feature extractors.

An extractor maps an image batch [B, C, H, W] to either global features
[B, spatial_dim] or per-patch features [B, num_patches, spatial_dim]. The
production backbones (large pretrained transformers) plug in through
``register_extractor``; the built-in extractors are lightweight stand-ins
that keep the rest of the pipeline testable at desk scale.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigurationError


class SpatialExtractor(nn.Module):
    """Base class declaring the (num_patches, spatial_dim) output contract."""

    def __init__(
        self,
        resolution: tuple[int, int],
        spatial_dim: int,
        channels: int = 3,
        patch_size: Optional[int] = None,
    ) -> None:
        super().__init__()
        self.resolution = tuple(resolution)
        self.spatial_dim = spatial_dim
        self.channels = channels
        self.patch_size = patch_size
        if patch_size is None:
            self.patch_grid: Optional[tuple[int, int]] = None
            self.num_patches: Optional[int] = None
        else:
            h, w = self.resolution
            if h % patch_size or w % patch_size:
                raise ConfigurationError(
                    f"patch_size {patch_size} does not divide resolution {h}x{w}"
                )
            self.patch_grid = (h // patch_size, w // patch_size)
            self.num_patches = self.patch_grid[0] * self.patch_grid[1]

    @property
    def is_patchwise(self) -> bool:
        return self.num_patches is not None

    def check_batch(self, x: torch.Tensor) -> None:
        if x.ndim != 4:
            raise ConfigurationError(f"expected [B, C, H, W] batch, got shape {tuple(x.shape)}")
        if x.shape[0] < 1:
            raise ConfigurationError("batch must be nonempty")
        b, c, h, w = x.shape
        if c != self.channels or (h, w) != self.resolution:
            raise ConfigurationError(
                f"extractor expects {self.channels}x{self.resolution[0]}x{self.resolution[1]} "
                f"inputs, got {c}x{h}x{w}"
            )


def _flatten_tiles(x: torch.Tensor, patch_size: int) -> torch.Tensor:
    """[B, C, H, W] -> [B, P, C * p * p] with row-major tile order."""
    b, c, h, w = x.shape
    rows, cols = h // patch_size, w // patch_size
    tiles = x.reshape(b, c, rows, patch_size, cols, patch_size)
    tiles = tiles.permute(0, 2, 4, 1, 3, 5)
    return tiles.reshape(b, rows * cols, c * patch_size * patch_size)


_STAT_FNS = {
    "mean": lambda t: t.mean(dim=-1),
    "std": lambda t: t.std(dim=-1, unbiased=False),
    "min": lambda t: t.min(dim=-1).values,
    "max": lambda t: t.max(dim=-1).values,
}


def _stack_stats(flat: torch.Tensor, stats: Sequence[str]) -> torch.Tensor:
    try:
        columns = [_STAT_FNS[name](flat) for name in stats]
    except KeyError as exc:
        raise ConfigurationError(
            f"unknown statistic {exc.args[0]!r}; known: {sorted(_STAT_FNS)}"
        ) from None
    return torch.stack(columns, dim=-1)


class PatchStatsExtractor(SpatialExtractor):
    """Per-patch pixel statistics; spatial_dim equals the number of statistics."""

    def __init__(
        self,
        resolution: tuple[int, int],
        patch_size: int,
        stats: Sequence[str] = ("mean", "std"),
        channels: int = 3,
    ) -> None:
        super().__init__(resolution, len(stats), channels, patch_size)
        self.stats = tuple(stats)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_batch(x)
        flat = _flatten_tiles(x, self.patch_size)
        return _stack_stats(flat, self.stats)


class GlobalStatsExtractor(SpatialExtractor):
    """Whole-image pixel statistics, shape [B, len(stats)]."""

    def __init__(
        self,
        resolution: tuple[int, int],
        stats: Sequence[str] = ("mean", "std"),
        channels: int = 3,
    ) -> None:
        super().__init__(resolution, len(stats), channels, patch_size=None)
        self.stats = tuple(stats)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_batch(x)
        flat = x.reshape(x.shape[0], -1)
        return _stack_stats(flat, self.stats)


class PatchProjectionExtractor(SpatialExtractor):
    """Fixed seeded random projection of each flattened tile (non-trainable).

    Useful for shape-contract tests where an arbitrary spatial_dim is needed.
    """

    def __init__(
        self,
        resolution: tuple[int, int],
        patch_size: int,
        spatial_dim: int,
        channels: int = 3,
        seed: int = 0,
    ) -> None:
        super().__init__(resolution, spatial_dim, channels, patch_size)
        in_dim = channels * patch_size * patch_size
        rng = np.random.default_rng(seed)
        weight = rng.standard_normal((in_dim, spatial_dim)) / math.sqrt(in_dim)
        self.register_buffer("projection", torch.from_numpy(weight))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_batch(x)
        flat = _flatten_tiles(x, self.patch_size)
        return flat @ self.projection.to(flat.dtype)


class TinyConvExtractor(SpatialExtractor):
    """Small trainable extractor: a conv stack (global) or a shared tile MLP."""

    def __init__(
        self,
        resolution: tuple[int, int],
        spatial_dim: int,
        channels: int = 3,
        patch_size: Optional[int] = None,
        hidden: int = 16,
    ) -> None:
        super().__init__(resolution, spatial_dim, channels, patch_size)
        if patch_size is None:
            self.net = nn.Sequential(
                nn.Conv2d(channels, 8, kernel_size=3, stride=2, padding=1),
                nn.GELU(),
                nn.Conv2d(8, hidden, kernel_size=3, stride=2, padding=1),
                nn.GELU(),
                nn.AdaptiveAvgPool2d(1),
                nn.Flatten(),
                nn.Linear(hidden, spatial_dim),
            )
        else:
            in_dim = channels * patch_size * patch_size
            self.net = nn.Sequential(
                nn.Linear(in_dim, hidden),
                nn.GELU(),
                nn.Linear(hidden, spatial_dim),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_batch(x)
        if self.patch_size is None:
            return self.net(x)
        return self.net(_flatten_tiles(x, self.patch_size))


class SwinExtractor(SpatialExtractor):
    """Production preset: a torchvision Swin Transformer backbone.

    Emits one feature vector per final-stage window position, so for an
    H x W input the patch grid is (H/32, W/32). Weights are randomly
    initialized unless ``weights_path`` points at a state-dict checkpoint;
    pretrained or fine-tuned weights are deployment concerns, not baked in.
    """

    VARIANT_DIMS = {"tiny": 768, "small": 768, "base": 1024}

    def __init__(
        self,
        resolution: tuple[int, int],
        spatial_dim: int,
        channels: int = 3,
        patch_size: Optional[int] = None,
        variant: str = "tiny",
        weights_path: Optional[str] = None,
    ) -> None:
        if variant not in self.VARIANT_DIMS:
            raise ConfigurationError(
                f"unknown swin variant {variant!r}; known: {sorted(self.VARIANT_DIMS)}"
            )
        if channels != 3:
            raise ConfigurationError("the swin preset expects 3-channel inputs")
        if resolution[0] % 32 or resolution[1] % 32:
            raise ConfigurationError(
                f"swin needs resolutions divisible by 32, got {resolution}"
            )
        if patch_size is not None and patch_size != 32:
            raise ConfigurationError(
                f"swin's final stage fixes the patch grid at 32 pixels, got {patch_size}"
            )
        super().__init__(resolution, self.VARIANT_DIMS[variant], channels, patch_size=32)
        if self.spatial_dim != spatial_dim:
            raise ConfigurationError(
                f"swin variant {variant!r} emits spatial_dim {self.spatial_dim}, "
                f"config declares {spatial_dim}"
            )
        try:
            from torchvision import models as tv_models
        except ImportError as exc:
            raise ConfigurationError(
                "the swin extractor preset requires torchvision"
            ) from exc
        builder = {
            "tiny": tv_models.swin_t,
            "small": tv_models.swin_s,
            "base": tv_models.swin_b,
        }[variant]
        backbone = builder(weights=None)
        self.stages = backbone.features
        self.norm = backbone.norm
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            self.load_state_dict(state)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_batch(x)
        feats = self.norm(self.stages(x))  # [B, H/32, W/32, C]
        b = feats.shape[0]
        return feats.reshape(b, self.num_patches, self.spatial_dim)


ExtractorFactory = Callable[..., SpatialExtractor]

_EXTRACTORS: dict[str, ExtractorFactory] = {}


def register_extractor(name: str, factory: ExtractorFactory) -> None:
    """Register an extractor preset (production backbones hook in here)."""
    _EXTRACTORS[name] = factory


def build_extractor(
    preset: str,
    resolution: tuple[int, int],
    spatial_dim: int,
    channels: int = 3,
    patch_size: Optional[int] = None,
    **kwargs,
) -> SpatialExtractor:
    """Instantiate a registered extractor preset and verify its declared dims."""
    if preset not in _EXTRACTORS:
        raise ConfigurationError(
            f"unknown extractor preset {preset!r}; registered: {sorted(_EXTRACTORS)}"
        )
    extractor = _EXTRACTORS[preset](
        resolution=resolution,
        spatial_dim=spatial_dim,
        channels=channels,
        patch_size=patch_size,
        **kwargs,
    )
    if extractor.spatial_dim != spatial_dim:
        raise ConfigurationError(
            f"extractor preset {preset!r} produced spatial_dim {extractor.spatial_dim}, "
            f"config declares {spatial_dim}"
        )
    return extractor


def _build_patch_stats(resolution, spatial_dim, channels, patch_size, **kwargs):
    stats = kwargs.pop("stats", ("mean", "std"))
    if patch_size is None:
        raise ConfigurationError("patch_stats extractor requires a patch_size")
    if len(stats) != spatial_dim:
        raise ConfigurationError(
            f"patch_stats yields spatial_dim {len(stats)} (one per statistic), "
            f"config declares {spatial_dim}"
        )
    return PatchStatsExtractor(resolution, patch_size, stats, channels)


def _build_global_stats(resolution, spatial_dim, channels, patch_size, **kwargs):
    stats = kwargs.pop("stats", ("mean", "std"))
    if len(stats) != spatial_dim:
        raise ConfigurationError(
            f"global_stats yields spatial_dim {len(stats)} (one per statistic), "
            f"config declares {spatial_dim}"
        )
    return GlobalStatsExtractor(resolution, stats, channels)


def _build_patch_projection(resolution, spatial_dim, channels, patch_size, **kwargs):
    if patch_size is None:
        raise ConfigurationError("patch_projection extractor requires a patch_size")
    return PatchProjectionExtractor(
        resolution, patch_size, spatial_dim, channels, seed=kwargs.pop("seed", 0)
    )


def _build_tiny_conv(resolution, spatial_dim, channels, patch_size, **kwargs):
    return TinyConvExtractor(
        resolution, spatial_dim, channels, patch_size, hidden=kwargs.pop("hidden", 16)
    )


def _build_swin(resolution, spatial_dim, channels, patch_size, **kwargs):
    return SwinExtractor(
        resolution,
        spatial_dim,
        channels,
        variant=kwargs.pop("variant", "tiny"),
        weights_path=kwargs.pop("weights_path", None),
    )


register_extractor("patch_stats", _build_patch_stats)
register_extractor("global_stats", _build_global_stats)
register_extractor("patch_projection", _build_patch_projection)
register_extractor("tiny_conv", _build_tiny_conv)
register_extractor("swin", _build_swin)
