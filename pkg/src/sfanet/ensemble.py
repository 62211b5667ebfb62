"""Part-gated ensemble routing and the dual-crop scoring pipeline.

The final pipeline routes each image on a six-part presence gate (both
eyebrows, both eyes, both lips): gated images are scored by the swinatten
and swinfusion models and their scores averaged; everything else falls back
to sfnet. The standalone face-crop pipeline scores the eyes and lips crops
with a model pair and answers exactly 0.5 whenever any part is missing.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .core import DecisionPolicy, ImageSample, Label, decide, ensure_pixels
from .datapipe import CropKind, extract_crops
from .errors import ConfigurationError, ConsistencyError, PipelineError, StateError
from .heads.bundle import ModelBundle

PART_NAMES = (
    "left_eyebrow",
    "right_eyebrow",
    "left_eye",
    "right_eye",
    "upper_lip",
    "lower_lip",
)

GATED_PAIR = "gated_pair"
FALLBACK = "fallback"
FACECROP = "facecrop"
FACECROP_DEFAULT = "facecrop_default"

# Returned verbatim when the face-crop pipeline cannot see all six parts:
# an indeterminate answer, not a verdict about authenticity.
INDETERMINATE_SCORE = 0.5


@dataclass(frozen=True)
class FacePartsReport:
    """Presence flags (and optional masks) for the six gated facial parts."""

    presence: dict[str, bool]
    masks: Optional[dict[str, np.ndarray]] = None
    source: str = ""
    error: Optional[str] = None

    def __post_init__(self) -> None:
        missing = set(PART_NAMES) - set(self.presence)
        if missing:
            raise ConsistencyError(f"report lacks presence flags for {sorted(missing)}")
        if self.masks is not None:
            for part, present in self.presence.items():
                mask = self.masks.get(part)
                if present and mask is not None and not np.any(mask):
                    raise ConsistencyError(
                        f"part {part!r} flagged present but its mask is empty"
                    )

    @property
    def gate(self) -> bool:
        return all(self.presence[part] for part in PART_NAMES)

    @classmethod
    def all_absent(cls, source: str, error: Optional[str] = None) -> "FacePartsReport":
        return cls({part: False for part in PART_NAMES}, None, source, error)


class FacePartsProvider(Protocol):
    """External face parser behind a minimal interface."""

    def detect(self, image: ImageSample) -> FacePartsReport: ...


class StaticPartsProvider:
    """Stub provider returning the same report shape for every image."""

    def __init__(
        self,
        present: "bool | dict[str, bool]" = True,
        masks: Optional[dict[str, np.ndarray]] = None,
        source: str = "stub-static",
    ) -> None:
        if isinstance(present, bool):
            present = {part: present for part in PART_NAMES}
        self.present = present
        self.masks = masks
        self.source = source

    def detect(self, image: ImageSample) -> FacePartsReport:
        return FacePartsReport(dict(self.present), self.masks, self.source)


class TemplatePartsProvider:
    """Stub provider synthesizing part masks at canonical face positions.

    Mask rectangles scale with the image, so crops stay meaningful at any
    resolution. ``drop_every`` (when set) marks one eye absent for a
    deterministic subset of ids, exercising the fallback path.
    """

    # (row0, row1, col0, col1) as fractions of image height/width.
    TEMPLATE = {
        "left_eyebrow": (0.28, 0.33, 0.18, 0.42),
        "right_eyebrow": (0.28, 0.33, 0.58, 0.82),
        "left_eye": (0.38, 0.45, 0.22, 0.42),
        "right_eye": (0.38, 0.45, 0.58, 0.78),
        "upper_lip": (0.64, 0.69, 0.35, 0.65),
        "lower_lip": (0.69, 0.74, 0.35, 0.65),
    }

    def __init__(self, drop_every: Optional[int] = None, source: str = "stub-template") -> None:
        self.drop_every = drop_every
        self.source = source

    def _drops(self, image_id: str) -> bool:
        if not self.drop_every:
            return False
        digest = hashlib.sha256(image_id.encode()).digest()
        return digest[0] % self.drop_every == 0

    def detect(self, image: ImageSample) -> FacePartsReport:
        pixels = ensure_pixels(image)
        height, width = pixels.shape[:2]
        presence = {}
        masks = {}
        dropped = self._drops(image.id)
        for part, (r0, r1, c0, c1) in self.TEMPLATE.items():
            if dropped and part == "left_eye":
                presence[part] = False
                continue
            mask = np.zeros((height, width), dtype=bool)
            mask[
                int(r0 * height) : max(int(r1 * height), int(r0 * height) + 1),
                int(c0 * width) : max(int(c1 * width), int(c0 * width) + 1),
            ] = True
            presence[part] = True
            masks[part] = mask
        return FacePartsReport(presence, masks, self.source)


class FailingPartsProvider:
    """Stub provider that always raises (simulates a parser crash)."""

    def __init__(self, message: str = "parser unavailable") -> None:
        self.message = message

    def detect(self, image: ImageSample) -> FacePartsReport:
        raise RuntimeError(self.message)


_PROVIDERS: dict[str, Callable[[], FacePartsProvider]] = {
    "stub_template": TemplatePartsProvider,
    "stub_full": StaticPartsProvider,
}


def register_provider(name: str, factory: Callable[[], FacePartsProvider]) -> None:
    """Register a face-parts provider (production parser adapters hook in here)."""
    _PROVIDERS[name] = factory


def build_provider(name: str) -> FacePartsProvider:
    if name not in _PROVIDERS:
        raise ConfigurationError(
            f"unknown face-parts provider {name!r}; registered: {sorted(_PROVIDERS)}"
        )
    return _PROVIDERS[name]()


def detect_parts(provider: FacePartsProvider, image: ImageSample) -> FacePartsReport:
    """Run a provider; a provider crash fails closed to an all-absent report."""
    try:
        return provider.detect(image)
    except Exception as exc:
        source = getattr(provider, "source", type(provider).__name__)
        return FacePartsReport.all_absent(source, error=str(exc))


@dataclass(frozen=True)
class PredictionRecord:
    """One image's routed scores: which path fired, per-model scores, verdict."""

    id: str
    path_taken: str
    score_fused: float
    verdict: Label
    score_swinatten: Optional[float] = None
    score_swinfusion: Optional[float] = None
    score_sfnet: Optional[float] = None
    score_eyes: Optional[float] = None
    score_lips: Optional[float] = None

    @property
    def score(self) -> float:
        return self.score_fused


@dataclass(frozen=True)
class EnsembleConfig:
    """The final pipeline's models: the gate pair plus the sfnet fallback."""

    swinatten: ModelBundle
    swinfusion: ModelBundle
    sfnet: ModelBundle
    policy: DecisionPolicy = field(default_factory=DecisionPolicy)

    def __post_init__(self) -> None:
        for role in ("swinatten", "swinfusion", "sfnet"):
            bundle = getattr(self, role)
            if bundle.name != role:
                raise ConfigurationError(
                    f"bundle for the {role} slot is named {bundle.name!r}"
                )
            if not bundle.weights_loaded:
                raise StateError(f"{role} bundle has no weights loaded")


def _resize_pixels(pixels: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    if pixels.shape[:2] == tuple(resolution):
        return pixels
    from PIL import Image

    img = Image.fromarray(pixels).resize((resolution[1], resolution[0]), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def _score_with(bundle: ModelBundle, pixels: np.ndarray, role: str) -> float:
    try:
        prepared = _resize_pixels(pixels, tuple(bundle.config.resolution))
        return float(bundle.score_images(prepared[None])[0])
    except Exception as exc:
        raise PipelineError(f"model {role!r} failed on inference: {exc}") from exc


def final_pipeline_score(
    config: EnsembleConfig,
    provider: FacePartsProvider,
    image: ImageSample,
) -> PredictionRecord:
    """Route one image: gate true -> mean of the pair, gate false -> sfnet."""
    pixels = ensure_pixels(image)
    report = detect_parts(provider, image)
    if report.gate:
        score_sa = _score_with(config.swinatten, pixels, "swinatten")
        score_sf = _score_with(config.swinfusion, pixels, "swinfusion")
        fused = (score_sa + score_sf) / 2.0
        return PredictionRecord(
            id=image.id,
            path_taken=GATED_PAIR,
            score_fused=fused,
            verdict=decide(fused, config.policy),
            score_swinatten=score_sa,
            score_swinfusion=score_sf,
        )
    score_sn = _score_with(config.sfnet, pixels, "sfnet")
    return PredictionRecord(
        id=image.id,
        path_taken=FALLBACK,
        score_fused=score_sn,
        verdict=decide(score_sn, config.policy),
        score_sfnet=score_sn,
    )


def facecrop_score(
    eyes_model: ModelBundle,
    lips_model: ModelBundle,
    provider: FacePartsProvider,
    image: ImageSample,
    policy: Optional[DecisionPolicy] = None,
) -> PredictionRecord:
    """Score the two region crops and average; answer exactly 0.5 when any
    part is missing."""
    policy = policy or DecisionPolicy()
    for role, bundle in (("eyes", eyes_model), ("lips", lips_model)):
        if not bundle.weights_loaded:
            raise StateError(f"{role} crop model has no weights loaded")
    report = detect_parts(provider, image)
    if not report.gate:
        return PredictionRecord(
            id=image.id,
            path_taken=FACECROP_DEFAULT,
            score_fused=INDETERMINATE_SCORE,
            verdict=decide(INDETERMINATE_SCORE, policy),
        )
    try:
        crops = extract_crops(image, report)
    except ConsistencyError as exc:
        raise PipelineError(
            f"crop extraction failed for gated image {image.id!r}: {exc}"
        ) from exc
    if crops.kind != CropKind.DUAL_CROP:
        raise PipelineError(f"provider produced no crops for gated image {image.id!r}")
    score_eyes = _score_with(eyes_model, crops.eyes_crop, "facecrop_eyes")
    score_lips = _score_with(lips_model, crops.lips_crop, "facecrop_lips")
    fused = (score_eyes + score_lips) / 2.0
    return PredictionRecord(
        id=image.id,
        path_taken=FACECROP,
        score_fused=fused,
        verdict=decide(fused, policy),
        score_eyes=score_eyes,
        score_lips=score_lips,
    )


# ---------------------------------------------------------------------------
# Score-file format (one row per image)
# ---------------------------------------------------------------------------

SCORE_HEADER = (
    "id",
    "path_taken",
    "score_swinatten",
    "score_swinfusion",
    "score_sfnet",
    "score_fused",
    "verdict",
)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.10g}"


def write_score_file(records: Sequence[PredictionRecord], path: "str | Path") -> None:
    """Write prediction records atomically in the fixed score-file schema."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_HEADER)
        for rec in records:
            writer.writerow(
                [
                    rec.id,
                    rec.path_taken,
                    _fmt(rec.score_swinatten),
                    _fmt(rec.score_swinfusion),
                    _fmt(rec.score_sfnet),
                    _fmt(rec.score_fused),
                    rec.verdict.value,
                ]
            )
    os.replace(tmp, path)


def read_score_file(path: "str | Path") -> list[PredictionRecord]:
    from .errors import IngestionError

    path = Path(path)
    if not path.exists():
        raise IngestionError(f"score file not found: {path}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SCORE_HEADER:
            raise IngestionError(
                f"{path}: expected header {','.join(SCORE_HEADER)}"
            )
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(SCORE_HEADER):
                raise IngestionError(
                    f"{path} row {row_no}: expected {len(SCORE_HEADER)} fields"
                )
            sid, path_taken, s_sa, s_sf, s_sn, s_fused, verdict = row
            records.append(
                PredictionRecord(
                    id=sid,
                    path_taken=path_taken,
                    score_fused=float(s_fused),
                    verdict=Label.parse(verdict),
                    score_swinatten=float(s_sa) if s_sa else None,
                    score_swinfusion=float(s_sf) if s_sf else None,
                    score_sfnet=float(s_sn) if s_sn else None,
                )
            )
    return records
