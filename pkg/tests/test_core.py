import numpy as np
import pytest

from sfanet.core import (
    Category,
    DecisionPolicy,
    ImageSample,
    Label,
    Score,
    all_categories,
    decide,
    ensure_pixels,
)
from sfanet.errors import InvalidInputError


def test_decide_reproduces_threshold_rule():
    policy = DecisionPolicy(threshold=0.3)
    assert decide(0.25, policy) is Label.FAKE
    assert decide(0.35, policy) is Label.REAL
    # the boundary resolves to real
    assert decide(0.30, policy) is Label.REAL


def test_decide_accepts_score_objects():
    assert decide(Score(0.1), DecisionPolicy()) is Label.FAKE


def test_decide_is_monotone():
    rng = np.random.default_rng(7)
    for _ in range(200):
        tau = rng.uniform(0.01, 0.99)
        policy = DecisionPolicy(threshold=tau)
        s1, s2 = sorted(rng.uniform(0, 1, size=2))
        if decide(s1, policy) is Label.REAL:
            assert decide(s2, policy) is Label.REAL


def test_decide_iff_score_at_least_threshold():
    rng = np.random.default_rng(11)
    taus = np.concatenate([rng.uniform(0.01, 0.99, 50), [0.3, 0.5]])
    for tau in taus:
        policy = DecisionPolicy(threshold=float(tau))
        for s in np.concatenate([rng.uniform(0, 1, 20), [0.0, 1.0, float(tau)]]):
            expected = Label.REAL if s >= tau else Label.FAKE
            assert decide(float(s), policy) is expected


def test_decide_rejects_out_of_range_scores():
    with pytest.raises(InvalidInputError):
        decide(1.5, DecisionPolicy())


def test_label_encoding_is_total_and_invertible():
    assert Label.REAL.to_int() == 1
    assert Label.FAKE.to_int() == 0
    for label in Label:
        assert Label.from_int(label.to_int()) is label
    with pytest.raises(InvalidInputError):
        Label.from_int(2)


def test_label_parse():
    assert Label.parse("real") is Label.REAL
    assert Label.parse("fake") is Label.FAKE
    with pytest.raises(InvalidInputError):
        Label.parse("reall")


def test_score_range_validation():
    Score(0.0)
    Score(1.0)
    for bad in (-0.01, 1.01, float("nan")):
        with pytest.raises(InvalidInputError):
            Score(bad)


def test_policy_threshold_strictly_inside_unit_interval():
    DecisionPolicy(0.5)
    assert DecisionPolicy().threshold == 0.3
    assert DecisionPolicy.balanced().threshold == 0.5
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(InvalidInputError):
            DecisionPolicy(bad)


def test_exactly_eight_categories():
    cats = all_categories()
    assert len(cats) == 8
    assert len({c.name for c in cats}) == 8
    assert Category.parse("white_happy") in cats
    with pytest.raises(InvalidInputError):
        Category.parse("green_confused")


def test_image_sample_pixel_invariants():
    ImageSample(id="ok", pixels=np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(InvalidInputError):
        ImageSample(id="bad", pixels=np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(InvalidInputError):
        ImageSample(id="bad", pixels=np.zeros((0, 4, 3), dtype=np.uint8))


def test_ensure_pixels_loads_from_disk(tmp_path):
    from PIL import Image

    pixels = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
    path = tmp_path / "img.png"
    Image.fromarray(pixels).save(path)
    sample = ImageSample(id="a", path=path)
    np.testing.assert_array_equal(ensure_pixels(sample), pixels)
    with pytest.raises(InvalidInputError):
        ensure_pixels(ImageSample(id="b"))
