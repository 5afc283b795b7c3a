"""Empirical check that aggregation-based short metrics carry no information
about structure-only long metrics.

Two mechanisms are exercised: bitwise permutation invariance of the symmetric
aggregators, and near-zero estimated mutual information between the short and
long metric over ensembles where per-shot quality and the inter-shot relation
matrix are drawn independently. A coupled regime, where the relation matrix is
a noisy function of mean quality, serves as the positive control.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import stats
from .errors import ValidationError
from .rand import derive_seed

AGGREGATORS = ("mean", "median", "min", "max")
REGIMES = ("independent", "coupled")


def aggregate_short(q: Sequence[float] | np.ndarray, phi: str = "mean") -> float:
    """Symmetric aggregate of per-shot qualities.

    Values are sorted before reduction so any permutation of the input yields
    a bitwise-identical result (floating-point addition is order-sensitive).
    """
    if phi not in AGGREGATORS:
        raise ValidationError(f"unknown aggregator {phi!r}; expected one of {AGGREGATORS}")
    v = np.asarray(q, dtype=float)
    if v.size == 0:
        raise ValidationError("cannot aggregate zero qualities")
    if not np.all(np.isfinite(v)):
        raise ValidationError("qualities contain non-finite entries")
    s = np.sort(v)
    if phi == "mean":
        return float(np.sum(s) / s.size)
    if phi == "median":
        mid = s.size // 2
        return float(s[mid]) if s.size % 2 else float((s[mid - 1] + s[mid]) / 2.0)
    if phi == "min":
        return float(s[0])
    return float(s[-1])


@dataclass(frozen=True, eq=False)
class RelationMatrix:
    """Pairwise inter-shot relation values, symmetric within 1e-9."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"relation matrix must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("relation matrix contains non-finite entries")
        if np.max(np.abs(v - v.T)) > 1e-9:
            raise ValidationError("relation matrix is not symmetric within 1e-9")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return int(self.values.shape[0])


def relation_matrix(shot_embeddings: np.ndarray) -> RelationMatrix:
    """Cosine relation matrix of unit-norm shot embeddings (rows)."""
    e = np.asarray(shot_embeddings, dtype=float)
    r = np.clip(e @ e.T, -1.0, 1.0)
    r = (r + r.T) / 2.0
    np.fill_diagonal(r, 1.0)
    return RelationMatrix(r)


def structural_metric(relation: RelationMatrix) -> float:
    """Fixed structure statistic: rank correlation between the first
    super-diagonal and a strictly decreasing reference, i.e. how cleanly
    adjacency coherence decays along the video."""
    if relation.k < 4:
        raise ValidationError(f"structural metric needs K >= 4, got K = {relation.k}")
    super_diagonal = np.diag(relation.values, k=1)
    reference = np.arange(relation.k - 1, 0, -1, dtype=float)
    return stats.spearman(super_diagonal, reference)


@dataclass(frozen=True)
class EnsembleSample:
    q: np.ndarray
    relation: RelationMatrix


@dataclass(frozen=True)
class SyntheticEnsemble:
    samples: tuple[EnsembleSample, ...]
    regime: str
    k: int
    seed: int


def sample_ensemble(
    k: int,
    n: int,
    regime: str,
    seed: int,
    dim: int = 16,
    noise: float = 0.02,
) -> SyntheticEnsemble:
    """N draws of (per-shot qualities q, relation matrix R).

    independent: q iid uniform, R from unit shot embeddings drawn separately.
    coupled: the super-diagonal of R follows a monotone pattern whose direction
    tracks mean(q), plus small noise — a positive control for the MI estimator.
    """
    if regime not in REGIMES:
        raise ValidationError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if k < 4:
        raise ValidationError(f"ensembles need K >= 4, got K = {k}")
    if n < 100:
        raise ValidationError(f"ensembles need N >= 100, got N = {n}")
    rng = np.random.default_rng(derive_seed("ensemble", regime, k, n, seed))
    q = rng.uniform(size=(n, k))
    samples = []
    if regime == "independent":
        embeddings = rng.standard_normal((n, k, dim))
        embeddings /= np.linalg.norm(embeddings, axis=2, keepdims=True)
        for i in range(n):
            samples.append(EnsembleSample(q[i], relation_matrix(embeddings[i])))
    else:
        mean_q = q.mean(axis=1)
        pattern = np.linspace(0.9, 0.1, k - 1)
        deviations = rng.normal(0.0, noise, size=(n, k - 1))
        for i in range(n):
            super_diagonal = np.clip(
                mean_q[i] * pattern + (1.0 - mean_q[i]) * pattern[::-1] + deviations[i],
                -1.0,
                1.0,
            )
            r = np.eye(k)
            r[np.arange(k - 1), np.arange(1, k)] = super_diagonal
            r[np.arange(1, k), np.arange(k - 1)] = super_diagonal
            samples.append(EnsembleSample(q[i], RelationMatrix(r)))
    return SyntheticEnsemble(samples=tuple(samples), regime=regime, k=k, seed=seed)


@dataclass(frozen=True)
class OrthogonalityReport:
    regime: str
    k: int
    n: int
    bins: int
    phi: str
    mi_bits: float
    permutation_invariance_holds: bool

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "K": self.k,
            "N": self.n,
            "bins": self.bins,
            "phi": self.phi,
            "mi_bits": self.mi_bits,
            "permutation_invariance_holds": self.permutation_invariance_holds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def estimate_orthogonality(
    ensemble: SyntheticEnsemble,
    phi: str = "mean",
    bins: int = 16,
    perms_per_sample: int = 10,
    ml_metric: Callable[[RelationMatrix], float] | None = None,
) -> OrthogonalityReport:
    """Mutual information between the short and long metric over the ensemble,
    plus an exact (bitwise) permutation-invariance check of all aggregators."""
    long_metric = ml_metric or structural_metric
    perm_rng = np.random.default_rng(derive_seed("perm-check", ensemble.seed))
    short_values = np.empty(len(ensemble.samples))
    long_values = np.empty(len(ensemble.samples))
    invariance_holds = True
    for i, sample in enumerate(ensemble.samples):
        short_values[i] = aggregate_short(sample.q, phi)
        long_values[i] = long_metric(sample.relation)
        baselines = {agg: aggregate_short(sample.q, agg) for agg in AGGREGATORS}
        for _ in range(perms_per_sample):
            permuted = sample.q[perm_rng.permutation(sample.q.size)]
            for agg in AGGREGATORS:
                if aggregate_short(permuted, agg) != baselines[agg]:
                    invariance_holds = False
    mi = stats.mutual_information(short_values, long_values, bins=bins)
    return OrthogonalityReport(
        regime=ensemble.regime,
        k=ensemble.k,
        n=len(ensemble.samples),
        bins=bins,
        phi=phi,
        mi_bits=mi,
        permutation_invariance_holds=invariance_holds,
    )


def write_report(report: OrthogonalityReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json(), encoding="utf-8")
