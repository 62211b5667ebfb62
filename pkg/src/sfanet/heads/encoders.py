"""Frequency encoders: magnitude/phase grids -> fixed-size feature vectors."""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigurationError
from ..freqfeat import FrequencySpectrum


class FrequencyEncoder(nn.Module):
    """Base class; encodes raw (uncompressed) magnitude and phase grids."""

    def __init__(self, input_size: Optional[tuple[int, int]], freq_dim: int) -> None:
        super().__init__()
        self.input_size = tuple(input_size) if input_size is not None else None
        self.freq_dim = freq_dim

    def check_grids(self, magnitude: torch.Tensor, phase: torch.Tensor) -> None:
        if magnitude.shape != phase.shape or magnitude.ndim != 3:
            raise ConfigurationError(
                f"expected matching [B, h, w] grids, got {tuple(magnitude.shape)} "
                f"and {tuple(phase.shape)}"
            )
        if self.input_size is not None and tuple(magnitude.shape[1:]) != self.input_size:
            raise ConfigurationError(
                f"encoder expects {self.input_size[0]}x{self.input_size[1]} grids, "
                f"got {magnitude.shape[1]}x{magnitude.shape[2]}"
            )


class ConvFrequencyEncoder(FrequencyEncoder):
    """Small trainable CNN over stacked [magnitude, phase] channels.

    Magnitude is log(1 + m) compressed by default; raw magnitudes span many
    orders and swamp the early convolutions otherwise.
    """

    def __init__(
        self,
        input_size: tuple[int, int],
        freq_dim: int,
        channels: tuple[int, int] = (8, 16),
        log_magnitude: bool = True,
    ) -> None:
        super().__init__(input_size, freq_dim)
        self.log_magnitude = log_magnitude
        c1, c2 = channels
        self.net = nn.Sequential(
            nn.Conv2d(2, c1, kernel_size=3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(c1, c2, kernel_size=3, stride=2, padding=1),
            nn.GELU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(c2, freq_dim),
        )

    def forward(self, magnitude: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
        self.check_grids(magnitude, phase)
        if self.log_magnitude:
            magnitude = torch.log1p(magnitude)
        return self.net(torch.stack([magnitude, phase], dim=1))


class MeanLogMagnitudeEncoder(FrequencyEncoder):
    """Parameter-free stub: freq_dim=1, output = mean of log(1 + magnitude)."""

    def __init__(self, input_size: Optional[tuple[int, int]] = None) -> None:
        super().__init__(input_size, freq_dim=1)

    def forward(self, magnitude: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
        self.check_grids(magnitude, phase)
        return torch.log1p(magnitude).mean(dim=(1, 2), keepdim=False).unsqueeze(1)


def encode_frequency(encoder: FrequencyEncoder, spectrum: FrequencySpectrum) -> np.ndarray:
    """Encode a single spectrum to a length-freq_dim vector (inference mode)."""
    mag = torch.from_numpy(np.asarray(spectrum.magnitude, dtype=np.float64))
    phase = torch.from_numpy(np.asarray(spectrum.phase, dtype=np.float64))
    params = list(encoder.parameters())
    if params:
        mag = mag.to(params[0].dtype)
        phase = phase.to(params[0].dtype)
    encoder.eval()
    with torch.no_grad():
        out = encoder(mag.unsqueeze(0), phase.unsqueeze(0))
    vec = out.squeeze(0).cpu().numpy()
    if vec.shape != (encoder.freq_dim,):
        raise ConfigurationError(
            f"encoder produced shape {vec.shape}, declared freq_dim {encoder.freq_dim}"
        )
    return vec
