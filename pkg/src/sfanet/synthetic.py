"""Synthetic desk-scale corpora for end-to-end exercises.

"Real" images are smoothed random fields (energy concentrated at low
frequencies). "Fake" images add a weak amplitude-modulated checkerboard,
which leaves pixel statistics nearly untouched but plants unmistakable
energy near the Nyquist corner of the spectrum.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import ImageSample, Label
from .datapipe import Manifest, save_manifest


def _smoothed_base(rng: np.random.Generator, size: int, smoothing: float) -> np.ndarray:
    field = gaussian_filter(rng.standard_normal((size, size)), sigma=smoothing)
    field = field / max(field.std(), 1e-9)
    return 128.0 + 30.0 * field


def _checkerboard(size: int) -> np.ndarray:
    xx, yy = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    return np.where((xx + yy) % 2 == 0, 1.0, -1.0)


def make_synthetic_corpus(
    n_real: int,
    n_fake: int,
    size: int = 64,
    seed: int = 0,
    smoothing: float = 2.0,
    artifact_amplitude: float = 8.0,
    modulation_sigma: float = 1.5,
) -> list[ImageSample]:
    """Generate labeled in-memory samples; reals first, then fakes."""
    rng = np.random.default_rng(seed)
    checker = _checkerboard(size)
    samples = []
    for i in range(n_real):
        gray = np.clip(_smoothed_base(rng, size, smoothing), 16, 239)
        pixels = np.repeat(np.rint(gray)[:, :, None], 3, axis=2).astype(np.uint8)
        samples.append(
            ImageSample(
                id=f"real_{i:04d}", pixels=pixels, label=Label.REAL, origin="synthetic"
            )
        )
    for i in range(n_fake):
        gray = np.clip(_smoothed_base(rng, size, smoothing), 16, 239)
        # Amplitude-modulating the checkerboard spreads its energy over a
        # band around the Nyquist corner instead of one bin.
        modulation = gaussian_filter(
            rng.standard_normal((size, size)), sigma=modulation_sigma
        )
        span = modulation.max() - modulation.min()
        modulation = 0.5 + 0.5 * (modulation - modulation.min()) / max(span, 1e-9)
        gray = gray + artifact_amplitude * checker * modulation
        pixels = np.repeat(
            np.rint(np.clip(gray, 0, 255))[:, :, None], 3, axis=2
        ).astype(np.uint8)
        samples.append(
            ImageSample(
                id=f"fake_{i:04d}", pixels=pixels, label=Label.FAKE, origin="synthetic"
            )
        )
    return samples


def write_corpus(
    samples: list[ImageSample],
    directory: "str | Path",
    manifest_name: str = "manifest.csv",
) -> Manifest:
    """Write samples as PNGs plus a manifest CSV; returns the saved manifest."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    on_disk = []
    for sample in samples:
        path = directory / f"{sample.id}.png"
        Image.fromarray(sample.pixels).save(path)
        on_disk.append(
            ImageSample(
                id=sample.id,
                path=path,
                label=sample.label,
                origin=sample.origin,
                category=sample.category,
            )
        )
    manifest = Manifest.from_samples(on_disk)
    save_manifest(manifest, directory / manifest_name)
    return manifest
