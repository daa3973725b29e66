from __future__ import annotations

import math

import numpy as np
import pytest

from statsynth import errors
from statsynth.reference import (
    CATEGORIES,
    EcommerceParams,
    age_group,
    category_stats,
    derived_labels,
    discount_propensity,
    discount_score,
    ecommerce_schema,
    generate,
    lifetime_value_band,
    lifetime_value_score,
    sample_truncated_normal,
)


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _trunc_mean_var(mean, std, lo, hi):
    """Analytical mean and variance of the truncated normal."""
    a, b = (lo - mean) / std, (hi - mean) / std
    z = _cdf(b) - _cdf(a)
    m = mean + std * (_phi(a) - _phi(b)) / z
    v = std * std * (1 + (a * _phi(a) - b * _phi(b)) / z - ((_phi(a) - _phi(b)) / z) ** 2)
    return m, v


@pytest.mark.parametrize("mean,std,lo,hi", [
    (800.0, 1000.0, 0.0, 2000.0),   # rejection branch
    (24.0, 6.0, 18.0, 90.0),
    (0.0, 1.0, 3.0, 3.5),           # < 5% mass, inverse-CDF branch
    (100.0, 400.0, 0.0, 2000.0),
])
def test_truncated_normal_matches_analytic_mean(mean, std, lo, hi):
    rng = np.random.default_rng(99)
    n = 400_000
    x = sample_truncated_normal(rng, mean, std, lo, hi, n)
    assert x.min() >= lo and x.max() <= hi
    m, v = _trunc_mean_var(mean, std, lo, hi)
    se = math.sqrt(v / n)
    assert abs(float(x.mean()) - m) < 5 * se


def test_truncated_normal_edge_cases():
    rng = np.random.default_rng(1)
    assert len(sample_truncated_normal(rng, 0, 1, -1, 1, 0)) == 0
    with pytest.raises(errors.DegenerateTruncation):
        sample_truncated_normal(rng, 0.0, 1.0, 9.0, 10.0, 5)
    with pytest.raises(errors.DegenerateTruncation):
        sample_truncated_normal(rng, 0.0, -1.0, 0.0, 1.0, 5)
    with pytest.raises(errors.DegenerateTruncation):
        sample_truncated_normal(rng, 0.0, 1.0, 2.0, 1.0, 5)


def test_age_group_boundaries():
    assert age_group(34.9999) == "young"
    assert age_group(35.0) == "middle"
    assert age_group(54.9999) == "middle"
    assert age_group(55.0) == "old"
    assert age_group(18.0) == "young"
    assert age_group(90.0) == "old"


def test_params_validation():
    EcommerceParams().validate()
    with pytest.raises(errors.ConfigError):
        EcommerceParams(age_weights=(0.5, 0.5, 0.5)).validate()
    with pytest.raises(errors.ConfigError):
        EcommerceParams(age_stds=(6.0, -1.0, 10.0)).validate()
    with pytest.raises(errors.ConfigError):
        EcommerceParams(gender_weights=(0.9, 0.2)).validate()


def test_generate_respects_bounds_and_schema(ref_2k):
    schema = ecommerce_schema()
    assert ref_2k.schema == schema
    age = ref_2k.codes("user_age")
    price = ref_2k.codes("price")
    assert age.min() >= 18.0 and age.max() <= 90.0
    assert price.min() >= 0.0 and price.max() <= 2000.0


def test_generate_deterministic():
    a = generate(EcommerceParams(), 500, seed=42)
    b = generate(EcommerceParams(), 500, seed=42)
    c = generate(EcommerceParams(), 500, seed=43)
    assert a.equals(b)
    assert not a.equals(c)


def test_marginals_close_to_parameters(ref_100k):
    n = len(ref_100k)
    gender = np.bincount(ref_100k.codes("gender"), minlength=2) / n
    assert 0.5 * np.abs(gender - np.array([0.45, 0.55])).sum() < 0.01
    loc = np.bincount(ref_100k.codes("location_tier"), minlength=2) / n
    assert 0.5 * np.abs(loc - np.array([0.40, 0.60])).sum() < 0.01
    # payment marginal mixes the two location rows
    pay = np.bincount(ref_100k.codes("payment_method"), minlength=2) / n
    want = 0.40 * np.array([0.70, 0.30]) + 0.60 * np.array([0.40, 0.60])
    assert 0.5 * np.abs(pay - want).sum() < 0.01


def test_category_depends_on_band_and_gender(ref_100k):
    age = ref_100k.codes("user_age")
    gender = ref_100k.codes("gender")
    cat = ref_100k.codes("product_category")
    young_male = (age < 35.0) & (gender == 0)
    props = np.bincount(cat[young_male], minlength=4) / young_male.sum()
    assert 0.5 * np.abs(props - np.array([0.50, 0.25, 0.05, 0.20])).sum() < 0.02
    old_female = (age >= 55.0) & (gender == 1)
    props = np.bincount(cat[old_female], minlength=4) / old_female.sum()
    assert 0.5 * np.abs(props - np.array([0.10, 0.10, 0.60, 0.20])).sum() < 0.02


def test_discount_score_frozen_examples():
    # price at the category mean makes the tanh term vanish
    stats = {"Electronics": (800.0, 1000.0)}
    s = discount_score(90.0, 800.0, "Electronics", "Cash on Delivery", "Developing", stats)
    assert s == pytest.approx(1.1025, abs=1e-12)
    assert discount_propensity(90.0, 800.0, "Electronics", "Cash on Delivery", "Developing", stats) == "High"
    stats = {"Apparel": (100.0, 500.0)}
    s = discount_score(35.0, 100.0, "Apparel", "Cash on Delivery", "Developing", stats)
    assert s == pytest.approx(0.8, abs=1e-12)
    assert discount_propensity(35.0, 100.0, "Apparel", "Cash on Delivery", "Developing", stats) == "Mid"


def test_lifetime_value_frozen_examples():
    assert lifetime_value_score(35.0, 100.0, "Electronics", "Online Payment") == pytest.approx(15.6)
    assert lifetime_value_band(35.0, 100.0, "Electronics", "Online Payment") == "Mid"
    assert lifetime_value_score(35.0, 400.0, "Furniture & Appliances", "Online Payment") == pytest.approx(33.6)
    assert lifetime_value_band(35.0, 400.0, "Furniture & Appliances", "Online Payment") == "High"


def test_category_stats_matches_direct_computation(ref_2k):
    stats = category_stats(ref_2k)
    price = ref_2k.codes("price")
    cat = ref_2k.codes("product_category")
    for ci, c in enumerate(CATEGORIES):
        vals = price[cat == ci]
        assert stats[c][0] == pytest.approx(float(vals.mean()))
        assert stats[c][1] == pytest.approx(float(vals.std()))
    from statsynth.schema import Dataset
    with pytest.raises(errors.EmptyDataset):
        category_stats(Dataset.empty(ref_2k.schema))


def test_derived_labels_match_scalar_functions(ref_2k):
    stats = category_stats(ref_2k)
    disc, ltv = derived_labels(ref_2k, stats)
    assert len(disc) == len(ref_2k) and len(ltv) == len(ref_2k)
    for i in (0, 7, 100, 1999):
        rec = ref_2k.record(i)
        age, gender, loc, cat, price, pay = rec.values
        assert disc[i] == discount_propensity(age, price, cat, pay, loc, stats)
        assert ltv[i] == lifetime_value_band(age, price, cat, pay)
