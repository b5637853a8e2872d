import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gammassl.config import DOMAIN_PRESETS, DataConfig
from gammassl.datagen import IGNORE, DomainShift, DomainSpec, generate_domain, shift_distance
from gammassl.errors import ConfigError


def spec(**kw):
    base = dict(domain_id="t", seed=5)
    base.update(kw)
    return DomainSpec(**base)


def test_zero_ood_rate_has_no_ood_pixels():
    samples = generate_domain(spec(ood_rate=0.0), 8)
    assert len(samples) == 8
    assert not any(s.ood_mask.any() for s in samples)


def test_generation_is_bit_identical():
    a = generate_domain(spec(ood_rate=0.5), 6)
    b = generate_domain(spec(ood_rate=0.5), 6)
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()
        assert np.array_equal(x.labels, y.labels)
        assert np.array_equal(x.ood_mask, y.ood_mask)


def test_full_ood_rate_always_has_ood_pixels():
    samples = generate_domain(spec(ood_rate=1.0), 100)
    assert all(s.ood_mask.sum() >= 1 for s in samples)


def test_sample_depends_only_on_index():
    s = spec(ood_rate=0.5)
    whole = generate_domain(s, 10)
    tail = generate_domain(s, 3, start=7)
    for x, y in zip(whole[7:], tail):
        assert x.image.tobytes() == y.image.tobytes()


def test_ood_pixels_are_ignored_and_values_in_range():
    for s in generate_domain(spec(ood_rate=0.7, shift=DomainShift(1.0, -0.2, 0.2)), 20):
        assert np.all(s.labels[s.ood_mask] == IGNORE)
        assert np.all(s.ood_mask[s.labels == IGNORE])
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.image.shape == (64, 64, 3) and s.image.dtype == np.float32
        known = s.labels[~s.ood_mask]
        assert known.min() >= 0 and known.max() < 6


@pytest.mark.parametrize(
    "kw,field",
    [
        (dict(num_classes_known=1), "num_classes_known"),
        (dict(ood_rate=1.5), "ood_rate"),
        (dict(shift=DomainShift(brightness=0.7)), "shift.brightness"),
        (dict(shift=DomainShift(noise_sigma=0.5)), "shift.noise_sigma"),
        (dict(height=60), "patch_size"),
    ],
)
def test_invalid_spec_names_field(kw, field):
    with pytest.raises(ConfigError) as exc:
        generate_domain(spec(**kw), 1)
    assert exc.value.field == field


def test_count_must_be_positive():
    with pytest.raises(ConfigError):
        generate_domain(spec(), 0)


def test_shift_distance_identity_symmetry_and_order():
    data = DataConfig()
    src, near, far = (data.domain_spec(n) for n in ("source", "near", "far"))
    assert shift_distance(src, src) == 0.0
    assert shift_distance(near, far) == shift_distance(far, near)
    # oracle from the preset table: weights (1, 2, 3, 1) on (hue, brightness, noise, ood_rate)
    def table_distance(a, b):
        pa, pb = DOMAIN_PRESETS[a], DOMAIN_PRESETS[b]
        return math.sqrt(
            (pa.hue - pb.hue) ** 2
            + 2 * (pa.brightness - pb.brightness) ** 2
            + 3 * (pa.noise_sigma - pb.noise_sigma) ** 2
            + (pa.ood_rate - pb.ood_rate) ** 2
        )
    assert shift_distance(src, far) == pytest.approx(table_distance("source", "far"), abs=1e-12)
    assert shift_distance(src, far) > shift_distance(src, near)


shift_params = st.tuples(
    st.floats(-3, 3), st.floats(-0.5, 0.5), st.floats(0, 0.3), st.floats(0, 1)
)


@given(shift_params, shift_params)
def test_shift_distance_zero_iff_identical(a, b):
    sa = spec(shift=DomainShift(*a[:3]), ood_rate=a[3])
    sb = spec(shift=DomainShift(*b[:3]), ood_rate=b[3])
    d = shift_distance(sa, sb)
    assert d >= 0
    assert (d == 0) == (a == b)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 10_000))
def test_labels_are_known_or_ignore(seed, index):
    s = generate_domain(spec(seed=seed, ood_rate=0.5), 1, start=index)[0]
    assert set(np.unique(s.labels)) <= set(range(6)) | {IGNORE}
