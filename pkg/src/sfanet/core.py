"""Shared domain types, label/score conventions, and the decision policy.

Conventions used everywhere else in the package:

* scores live in [0, 1] and higher means "more likely real";
* labels encode as real -> 1, fake -> 0, so a score approximates P(real);
* an image is called fake only when its score falls strictly below the
  decision threshold, i.e. a tie at the threshold resolves to real.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError

# Default operating threshold: models are biased toward "fake" by the skewed
# training data, so calling fake requires stronger evidence than 0.5.
DEFAULT_THRESHOLD = 0.3
# Preset kept for comparisons against per-model reports computed at 0.5.
BALANCED_THRESHOLD = 0.5


class Label(enum.Enum):
    """Ground-truth / predicted class of a face crop."""

    REAL = "real"
    FAKE = "fake"

    def to_int(self) -> int:
        return 1 if self is Label.REAL else 0

    @classmethod
    def from_int(cls, value: int) -> "Label":
        if value == 1:
            return cls.REAL
        if value == 0:
            return cls.FAKE
        raise InvalidInputError(f"label integer must be 0 or 1, got {value!r}")

    @classmethod
    def parse(cls, text: str) -> "Label":
        try:
            return cls(text)
        except ValueError:
            raise InvalidInputError(
                f"unknown label {text!r}; expected 'real' or 'fake'"
            ) from None

    def __str__(self) -> str:
        return self.value


class RaceGroup(enum.Enum):
    WHITE = "white"
    OTHER = "other"


class EmotionGroup(enum.Enum):
    HAPPY = "happy"
    NEGATIVE = "negative"
    NEUTRAL = "neutral"
    SCARED = "scared"


@dataclass(frozen=True)
class Category:
    """One of the eight race x emotion attribute categories."""

    race_group: RaceGroup
    emotion_group: EmotionGroup

    @property
    def name(self) -> str:
        return f"{self.race_group.value}_{self.emotion_group.value}"

    @classmethod
    def parse(cls, text: str) -> "Category":
        try:
            race_text, emotion_text = text.split("_", 1)
            return cls(RaceGroup(race_text), EmotionGroup(emotion_text))
        except ValueError:
            raise InvalidInputError(f"unknown category {text!r}") from None

    def __str__(self) -> str:
        return self.name


def all_categories() -> tuple[Category, ...]:
    """The full cartesian product of race and emotion groups (exactly 8)."""
    return tuple(
        Category(race, emotion) for race in RaceGroup for emotion in EmotionGroup
    )


@dataclass(frozen=True)
class Score:
    """A model output probability in [0, 1]; higher means more likely real."""

    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value) or not 0.0 <= self.value <= 1.0:
            raise InvalidInputError(f"score must lie in [0, 1], got {self.value!r}")

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class DecisionPolicy:
    """Threshold rule turning a score into a real/fake verdict."""

    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if not math.isfinite(self.threshold) or not 0.0 < self.threshold < 1.0:
            raise InvalidInputError(
                f"threshold must lie strictly inside (0, 1), got {self.threshold!r}"
            )

    @classmethod
    def balanced(cls) -> "DecisionPolicy":
        return cls(threshold=BALANCED_THRESHOLD)


@dataclass(frozen=True)
class ImageSample:
    """One face crop, optionally with pixels, ground truth, and attributes.

    ``pixels`` is an H x W x 3 uint8 array when present (256 x 256 x 3 is the
    canonical shape, but any positive H, W is accepted so desk-scale corpora
    can use smaller crops).
    """

    id: str
    path: Optional[Path] = None
    pixels: Optional[np.ndarray] = None
    label: Optional[Label] = None
    origin: str = ""
    category: Optional[Category] = None

    def __post_init__(self) -> None:
        if self.pixels is not None:
            px = np.asarray(self.pixels)
            if px.ndim != 3 or px.shape[2] != 3:
                raise InvalidInputError(
                    f"sample {self.id!r}: pixels must be H x W x 3, got shape {px.shape}"
                )
            if px.shape[0] < 1 or px.shape[1] < 1:
                raise InvalidInputError(
                    f"sample {self.id!r}: pixel grid must be non-empty, got {px.shape}"
                )

    def with_pixels(self, pixels: np.ndarray) -> "ImageSample":
        return replace(self, pixels=pixels)


def ensure_pixels(sample: ImageSample) -> np.ndarray:
    """Return the sample's pixel grid, reading it from disk if necessary."""
    if sample.pixels is not None:
        return sample.pixels
    if sample.path is None:
        raise InvalidInputError(f"sample {sample.id!r} has neither pixels nor a path")
    from PIL import Image

    with Image.open(sample.path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return arr


def decide(score: "Score | float", policy: DecisionPolicy) -> Label:
    """Classify a score: fake iff score < threshold, real otherwise.

    The boundary resolves to real: a tie at the threshold is not enough
    confidence to call an image fake.
    """
    value = float(score)
    if not math.isfinite(value) or not 0.0 <= value <= 1.0:
        raise InvalidInputError(f"score must lie in [0, 1], got {value!r}")
    return Label.FAKE if value < policy.threshold else Label.REAL
