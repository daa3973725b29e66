"""Seeded generator for the e-commerce reference dataset.

Sampling follows the factorization
p(age) p(gender) p(location) p(category | age band, gender)
p(price | category) p(payment | location),
with age drawn from a three-component normal mixture and age/price truncated
to their schema bounds. Each variable consumes its own RNG stream, spawned
from the master seed in schema order, so adding draws for one variable never
shifts another variable's stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, DegenerateStats, DegenerateTruncation, EmptyDataset
from .schema import Continuous, Dataset, Discrete, Variable, VariableSchema

CATEGORIES = ("Electronics", "Apparel", "Food & Beverages", "Furniture & Appliances")
GENDERS = ("Male", "Female")
LOCATIONS = ("Developed", "Developing")
PAYMENTS = ("Online Payment", "Cash on Delivery")

AGE_BANDS = ("young", "middle", "old")


def age_group(age: float) -> str:
    """Band an age: young below 35, middle in [35, 55), old at 55 and above."""
    if age < 35.0:
        return "young"
    if age < 55.0:
        return "middle"
    return "old"


def _default_category_cpt() -> dict[tuple[str, str], tuple[float, ...]]:
    return {
        ("young", "Male"): (0.50, 0.25, 0.05, 0.20),
        ("young", "Female"): (0.20, 0.50, 0.05, 0.25),
        ("middle", "Male"): (0.20, 0.10, 0.50, 0.20),
        ("middle", "Female"): (0.10, 0.20, 0.55, 0.15),
        ("old", "Male"): (0.10, 0.10, 0.65, 0.15),
        ("old", "Female"): (0.10, 0.10, 0.60, 0.20),
    }


def _default_price_params() -> dict[str, tuple[float, float]]:
    return {
        "Electronics": (800.0, 1000.0),
        "Apparel": (100.0, 500.0),
        "Food & Beverages": (100.0, 400.0),
        "Furniture & Appliances": (200.0, 500.0),
    }


def _default_payment_cpt() -> dict[str, tuple[float, float]]:
    return {"Developed": (0.70, 0.30), "Developing": (0.40, 0.60)}


@dataclass(frozen=True)
class EcommerceParams:
    """All distribution parameters of the reference population."""

    age_weights: tuple[float, ...] = (0.5, 0.35, 0.15)
    age_means: tuple[float, ...] = (24.0, 38.0, 55.0)
    age_stds: tuple[float, ...] = (6.0, 15.0, 10.0)
    age_bounds: tuple[float, float] = (18.0, 90.0)
    gender_weights: tuple[float, ...] = (0.45, 0.55)
    location_weights: tuple[float, ...] = (0.40, 0.60)
    category_cpt: Mapping[tuple[str, str], tuple[float, ...]] = field(default_factory=_default_category_cpt)
    price_params: Mapping[str, tuple[float, float]] = field(default_factory=_default_price_params)
    price_bounds: tuple[float, float] = (0.0, 2000.0)
    payment_cpt: Mapping[str, tuple[float, float]] = field(default_factory=_default_payment_cpt)

    def validate(self) -> None:
        def check_dist(name: str, weights: tuple[float, ...], size: int) -> None:
            if len(weights) != size:
                raise ConfigError(f"{name}: expected {size} weights, got {len(weights)}")
            if any(w < 0 for w in weights):
                raise ConfigError(f"{name}: negative weight")
            if abs(sum(weights) - 1.0) > 1e-9:
                raise ConfigError(f"{name}: weights sum to {sum(weights)}, not 1")

        check_dist("age_weights", self.age_weights, len(self.age_means))
        if len(self.age_stds) != len(self.age_means):
            raise ConfigError("age mixture components disagree in length")
        if any(s <= 0 for s in self.age_stds):
            raise ConfigError("age stds must be positive")
        if not self.age_bounds[0] < self.age_bounds[1]:
            raise ConfigError("age bounds must be ordered")
        check_dist("gender_weights", self.gender_weights, len(GENDERS))
        check_dist("location_weights", self.location_weights, len(LOCATIONS))
        for band in AGE_BANDS:
            for g in GENDERS:
                check_dist(f"category_cpt[{band},{g}]", tuple(self.category_cpt[(band, g)]), len(CATEGORIES))
        for c in CATEGORIES:
            mean, std = self.price_params[c]
            if std <= 0:
                raise ConfigError(f"price std for {c!r} must be positive, got {std}")
        if not self.price_bounds[0] < self.price_bounds[1]:
            raise ConfigError("price bounds must be ordered")
        for loc in LOCATIONS:
            check_dist(f"payment_cpt[{loc}]", tuple(self.payment_cpt[loc]), len(PAYMENTS))


def ecommerce_schema(params: EcommerceParams | None = None) -> VariableSchema:
    params = params or EcommerceParams()
    return VariableSchema((
        Variable("user_age", Continuous(*params.age_bounds)),
        Variable("gender", Discrete(GENDERS)),
        Variable("location_tier", Discrete(LOCATIONS)),
        Variable("product_category", Discrete(CATEGORIES)),
        Variable("price", Continuous(*params.price_bounds)),
        Variable("payment_method", Discrete(PAYMENTS)),
    ))


def sample_truncated_normal(
    rng: np.random.Generator,
    mean: float,
    std: float,
    lower: float,
    upper: float,
    size: int,
) -> np.ndarray:
    """Draw from N(mean, std) truncated to [lower, upper].

    Rejection sampling while the interval keeps at least 5% of the mass,
    inverse-CDF transform below that, error when essentially nothing is left.
    """
    if std <= 0:
        raise DegenerateTruncation(f"std must be positive, got {std}")
    if not lower < upper:
        raise DegenerateTruncation(f"empty interval [{lower}, {upper}]")
    a = (lower - mean) / std
    b = (upper - mean) / std
    mass = float(ndtr(b) - ndtr(a))
    if mass < 1e-12:
        raise DegenerateTruncation(
            f"interval [{lower}, {upper}] keeps {mass:.3e} of N({mean}, {std}^2)")
    if size == 0:
        return np.empty(0, dtype=np.float64)
    if mass < 0.05:
        u = rng.uniform(float(ndtr(a)), float(ndtr(b)), size)
        return mean + std * ndtri(u)
    out = np.empty(size, dtype=np.float64)
    filled = 0
    while filled < size:
        want = size - filled
        draw = rng.normal(mean, std, max(64, int(want / mass * 1.2) + 1))
        keep = draw[(draw >= lower) & (draw <= upper)]
        take = min(want, len(keep))
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def _choice_codes(rng: np.random.Generator, probs: np.ndarray, n: int) -> np.ndarray:
    """Inverse-CDF categorical draw; probs is (n, k) per-row distributions."""
    u = rng.random(n)
    cum = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] > cum).sum(axis=1), probs.shape[1] - 1).astype(np.int64)


def generate(params: EcommerceParams, n: int, seed: int) -> Dataset:
    """Sample n records. Deterministic for a given seed.

    Stream layout: SeedSequence(seed).spawn(6) children feed user_age,
    gender, location_tier, product_category, price and payment_method in
    that (schema) order.
    """
    params.validate()
    if n < 0:
        raise ConfigError(f"n must be non-negative, got {n}")
    schema = ecommerce_schema(params)
    streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(6)]
    rng_age, rng_gender, rng_loc, rng_cat, rng_price, rng_pay = streams

    lo, hi = params.age_bounds
    comp = _choice_codes(rng_age, np.tile(np.asarray(params.age_weights), (n, 1)), n)
    age = np.empty(n, dtype=np.float64)
    for i in range(len(params.age_weights)):
        mask = comp == i
        age[mask] = sample_truncated_normal(
            rng_age, params.age_means[i], params.age_stds[i], lo, hi, int(mask.sum()))

    gender = _choice_codes(rng_gender, np.tile(np.asarray(params.gender_weights), (n, 1)), n)
    location = _choice_codes(rng_loc, np.tile(np.asarray(params.location_weights), (n, 1)), n)

    band = np.where(age < 35.0, 0, np.where(age < 55.0, 1, 2))
    cat_probs = np.empty((n, len(CATEGORIES)), dtype=np.float64)
    for bi, band_name in enumerate(AGE_BANDS):
        for gi, g in enumerate(GENDERS):
            mask = (band == bi) & (gender == gi)
            cat_probs[mask] = params.category_cpt[(band_name, g)]
    category = _choice_codes(rng_cat, cat_probs, n)

    price = np.empty(n, dtype=np.float64)
    for ci, c in enumerate(CATEGORIES):
        mask = category == ci
        mean, std = params.price_params[c]
        price[mask] = sample_truncated_normal(
            rng_price, mean, std, params.price_bounds[0], params.price_bounds[1], int(mask.sum()))

    pay_probs = np.empty((n, len(PAYMENTS)), dtype=np.float64)
    for li, loc_name in enumerate(LOCATIONS):
        pay_probs[location == li] = params.payment_cpt[loc_name]
    payment = _choice_codes(rng_pay, pay_probs, n)

    return Dataset._from_coded(schema, (age, gender, location, category, price, payment))


# ---------------------------------------------------------------------------
# derived variables


def category_stats(data: Dataset) -> dict[str, tuple[float, float]]:
    """Empirical (mean, population std) of price per product category."""
    if len(data) == 0:
        raise EmptyDataset("cannot compute category stats on an empty dataset")
    price = data.codes("price")
    category = data.codes("product_category")
    stats: dict[str, tuple[float, float]] = {}
    for ci, c in enumerate(CATEGORIES):
        values = price[category == ci]
        if len(values) == 0:
            raise DegenerateStats(f"no records for category {c!r}")
        std = float(values.std())
        if std == 0.0:
            raise DegenerateStats(f"zero price spread for category {c!r}")
        stats[c] = (float(values.mean()), std)
    return stats


def discount_score(
    age: float,
    price: float,
    category: str,
    payment_method: str,
    location_tier: str,
    stats: Mapping[str, tuple[float, float]],
) -> float:
    mean, std = stats[category]
    z = (price - mean) / std
    return (
        -math.tanh(z)
        + 0.01 * (age - 35.0) ** 2 / 100.0
        + (0.5 if payment_method == "Cash on Delivery" else 0.0)
        + (0.3 if location_tier == "Developing" else 0.0)
    )


def discount_propensity(
    age: float,
    price: float,
    category: str,
    payment_method: str,
    location_tier: str,
    stats: Mapping[str, tuple[float, float]],
) -> str:
    """Band the discount score: High above 1, Low below -1, Mid between."""
    s = discount_score(age, price, category, payment_method, location_tier, stats)
    if s > 1.0:
        return "High"
    if s < -1.0:
        return "Low"
    return "Mid"


_CHANNEL_WEIGHT = {"Online Payment": 1.2, "Cash on Delivery": 0.85}
_CATEGORY_WEIGHT = {
    "Electronics": 1.3,
    "Apparel": 1.1,
    "Food & Beverages": 0.9,
    "Furniture & Appliances": 1.4,
}


def lifetime_value_score(age: float, price: float, category: str, payment_method: str) -> float:
    w_m = _CHANNEL_WEIGHT[payment_method]
    w_c = _CATEGORY_WEIGHT[category]
    return math.sqrt(price) * w_m / (math.log(1.0 + abs(age - 35.0)) + 1.0) * w_c


def lifetime_value_band(age: float, price: float, category: str, payment_method: str) -> str:
    """Band the lifetime-value score: High above 20, Low below 10, Mid between."""
    v = lifetime_value_score(age, price, category, payment_method)
    if v > 20.0:
        return "High"
    if v < 10.0:
        return "Low"
    return "Mid"


def derived_labels(data: Dataset, stats: Mapping[str, tuple[float, float]]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(discount_propensity, lifetime_value_band) labels for every record."""
    age = data.codes("user_age")
    price = data.codes("price")
    cat = data.column("product_category")
    pay = data.column("payment_method")
    loc = data.column("location_tier")
    disc = tuple(
        discount_propensity(age[i], price[i], cat[i], pay[i], loc[i], stats) for i in range(len(data))
    )
    ltv = tuple(lifetime_value_band(age[i], price[i], cat[i], pay[i]) for i in range(len(data)))
    return disc, ltv
