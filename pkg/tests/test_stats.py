import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from longshot.errors import DegenerateInputError, ValidationError
from longshot.stats import cosine, mutual_information, ols_fit, pearson, ranks, spearman

# ---------------------------------------------------------------------------
# Brute-force oracles, deliberately written in plain Python so they share no
# code path with the implementations they check.


def oracle_ranks(xs):
    out = []
    for x in xs:
        less = sum(1 for y in xs if y < x)
        equal = sum(1 for y in xs if y == x)
        out.append(less + (equal + 1) / 2)
    return out


def oracle_pearson(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    vx = sum((a - mx) ** 2 for a in xs)
    vy = sum((b - my) ** 2 for b in ys)
    return cov / math.sqrt(vx * vy)


def oracle_spearman(xs, ys):
    return oracle_pearson(oracle_ranks(xs), oracle_ranks(ys))


def oracle_ols(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((a - mx) ** 2 for a in xs)
    sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_res = sum((b - slope * a - intercept) ** 2 for a, b in zip(xs, ys))
    ss_tot = sum((b - my) ** 2 for b in ys)
    r2 = 0.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


# ---------------------------------------------------------------------------
# cosine


def test_cosine_orthogonal():
    assert cosine([1, 0], [0, 1]) == 0.0


def test_cosine_identity():
    assert cosine([0.6, 0.8], [0.6, 0.8]) == pytest.approx(1.0, abs=1e-12)


def test_cosine_hand_value():
    assert cosine([0.6, 0.8], [0.8, 0.6]) == pytest.approx(0.96, abs=1e-9)


def test_cosine_dimension_mismatch():
    with pytest.raises(ValidationError, match="dimension mismatch"):
        cosine([1, 0], [1, 0, 0])


def test_cosine_clamps_rounding():
    v = np.full(64, 1 / 8.0)
    assert cosine(v, v) <= 1.0


# ---------------------------------------------------------------------------
# ranks


def test_ranks_sorted_input():
    assert ranks([10, 20, 30]).tolist() == [1, 2, 3]


def test_ranks_tie_average():
    assert ranks([5, 5, 9]).tolist() == [1.5, 1.5, 3]


def test_ranks_permutation():
    assert ranks([3, 1, 2]).tolist() == [3, 1, 2]


def test_ranks_rejects_nan():
    with pytest.raises(ValidationError, match="non-finite"):
        ranks([1.0, float("nan")])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40))
def test_ranks_sum_invariant(xs):
    n = len(xs)
    assert ranks(xs).sum() == pytest.approx(n * (n + 1) / 2, abs=1e-9)


# ---------------------------------------------------------------------------
# spearman / pearson


def test_spearman_identity():
    assert spearman([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)


def test_spearman_reversal():
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_hand_value_no_ties():
    assert spearman([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6, abs=1e-9)


def test_spearman_hand_value_with_ties():
    expected = math.sqrt(3) / 2
    assert spearman([1, 1, 2], [1, 2, 3]) == pytest.approx(expected, abs=1e-9)


def test_pearson_affine():
    assert pearson([1, 2, 3], [3, 5, 7]) == pytest.approx(1.0, abs=1e-12)


def test_pearson_negation():
    assert pearson([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_hand_value():
    assert pearson([0, 1, 2], [0, 1, 1]) == pytest.approx(math.sqrt(3) / 2, abs=1e-9)


@pytest.mark.parametrize("fn", [spearman, pearson])
def test_correlation_rejects_short_input(fn):
    with pytest.raises(ValidationError, match="n >= 3"):
        fn([1, 2], [1, 2])


@pytest.mark.parametrize("fn", [spearman, pearson])
def test_correlation_rejects_constant_input(fn):
    with pytest.raises(DegenerateInputError, match="constant"):
        fn([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateInputError, match="constant"):
        fn([1, 2, 3], [2, 2, 2])


@pytest.mark.parametrize("fn", [spearman, pearson])
def test_correlation_rejects_length_mismatch(fn):
    with pytest.raises(ValidationError, match="length mismatch"):
        fn([1, 2, 3], [1, 2, 3, 4])


def _distinctish(xs):
    return len(set(xs)) >= 2


# hundredths grid: keeps the monotone maps below strictly increasing in floats
@st.composite
def paired_vectors(draw):
    n = draw(st.integers(3, 24))
    grid = st.lists(
        st.integers(-5000, 5000), min_size=n, max_size=n
    ).filter(_distinctish)
    return (
        [v / 100 for v in draw(grid)],
        [v / 100 for v in draw(grid)],
    )


@given(paired_vectors())
def test_spearman_symmetric(pair):
    xs, ys = pair
    assert spearman(xs, ys) == pytest.approx(spearman(ys, xs), abs=1e-12)
    assert abs(spearman(xs, ys)) <= 1.0
    assert abs(pearson(xs, ys)) <= 1.0


@given(paired_vectors(), st.sampled_from(["cubic", "exp", "scale"]))
def test_spearman_monotone_transform_invariance(pair, transform):
    xs, ys = pair
    maps = {
        "cubic": lambda v: v**3 + 2 * v,
        "exp": lambda v: math.exp(v / 60.0),
        "scale": lambda v: 3.5 * v + 11.0,
    }
    f = maps[transform]
    base = spearman(xs, ys)
    assert spearman([f(v) for v in xs], ys) == pytest.approx(base, abs=1e-9)
    assert spearman(xs, [f(v) for v in ys]) == pytest.approx(base, abs=1e-9)


def test_spearman_matches_oracle_on_random_vectors():
    rng = np.random.default_rng(42)
    for _ in range(300):
        n = int(rng.integers(3, 51))
        xs = rng.uniform(-10, 10, n)
        ys = rng.uniform(-10, 10, n)
        if rng.random() < 0.5:  # force ties
            xs = np.round(xs)
            ys = np.round(ys)
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        assert spearman(xs, ys) == pytest.approx(
            oracle_spearman(list(xs), list(ys)), abs=1e-12
        )


# ---------------------------------------------------------------------------
# ols_fit


def test_ols_perfect_line():
    fit = ols_fit([0, 1, 2], [1, 0.8, 0.6])
    assert fit.slope == pytest.approx(-0.2, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_ols_flat_line_r2_convention():
    fit = ols_fit([0, 1, 2], [1, 1, 1])
    assert fit.slope == 0.0
    assert fit.r_squared == 0.0


def test_ols_hand_value():
    fit = ols_fit([0, 1, 2, 3], [1, 0.7, 0.5, 0.2])
    assert fit.slope == pytest.approx(-0.26, abs=1e-9)
    assert fit.r_squared == pytest.approx(0.9941176470588235, abs=1e-9)


def test_ols_rejects_constant_x():
    with pytest.raises(DegenerateInputError, match="constant"):
        ols_fit([2, 2, 2], [1, 2, 3])


def test_ols_residuals_orthogonal_to_x():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        x = rng.uniform(0, 5, n)
        if len(set(x)) < 2:
            continue
        y = rng.uniform(-3, 3, n)
        fit = ols_fit(x, y)
        residuals = y - (fit.slope * x + fit.intercept)
        assert abs(np.sum(residuals * (x - x.mean()))) < 1e-9


# ---------------------------------------------------------------------------
# mutual_information


def test_mi_identity_two_values():
    x = np.array([0.0, 1.0] * 500)
    assert mutual_information(x, x, bins=2) == pytest.approx(1.0, abs=1e-12)


def test_mi_independent_uniform_is_small():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=10_000)
    y = rng.uniform(size=10_000)
    assert mutual_information(x, y, bins=16) <= 0.05


def test_mi_constant_convention():
    assert mutual_information([3, 3, 3, 3], [1, 2, 3, 4], bins=4) == 0.0


def test_mi_nonnegative_and_self_dominates():
    rng = np.random.default_rng(1)
    x = rng.normal(size=2000)
    y = rng.normal(size=2000)
    mi_xy = mutual_information(x, y, bins=12)
    mi_xx = mutual_information(x, x, bins=12)
    assert mi_xy >= 0.0
    assert mi_xx >= mi_xy


def test_mi_rejects_bad_bins():
    with pytest.raises(ValidationError, match="bins"):
        mutual_information([1, 2], [1, 2], bins=1)
