"""POVM data types, coherent-probe response model, and comparison metrics.

A phase-insensitive photon counter is fully described by the diagonal POVM
elements theta_k^(n): the probability that Fock state |k> produces detector
outcome n.  This module holds the matrix containers (probe matrix F,
POVM matrix Pi, statistics matrix P), the forward model P = F @ Pi, the
analytic binomial-loss detector, and total-variation style distances used
to compare reconstructions against theory.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "CoherentProbe",
    "ProbeMatrix",
    "PovmMatrix",
    "StatisticsMatrix",
    "PhotonNumberDistribution",
    "PovmDistance",
    "poisson_pmf",
    "probe_matrix",
    "binomial_loss_povm",
    "detection_probabilities",
    "outcome_distribution",
    "povm_distance",
    "povm_to_json_dict",
    "povm_from_json_dict",
    "statistics_to_json_dict",
    "statistics_from_json_dict",
    "write_povm_csv",
    "write_statistics_csv",
]


def _readonly(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CoherentProbe:
    """A coherent probe state, identified by its mean photon number |alpha|^2."""

    mean_photon_number: float

    def __post_init__(self):
        if not math.isfinite(self.mean_photon_number) or self.mean_photon_number < 0:
            raise ValueError(
                f"mean_photon_number must be finite and >= 0, got {self.mean_photon_number}"
            )


@dataclass(frozen=True)
class ProbeMatrix:
    """D x M matrix of truncated photon-number distributions of D coherent probes.

    Row i holds the Poisson weights of probe i over Fock states 0..M-1.  Rows
    are deliberately not renormalized after truncation; the deficit is the
    Poisson tail beyond M and callers are expected to choose M large enough.
    """

    entries: np.ndarray
    probes: tuple
    truncation: int

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries))
        object.__setattr__(self, "probes", tuple(self.probes))
        if self.entries.ndim != 2:
            raise ValueError("probe matrix must be 2-D")
        if self.entries.shape != (len(self.probes), self.truncation):
            raise ValueError(
                f"probe matrix shape {self.entries.shape} does not match "
                f"{len(self.probes)} probes x truncation {self.truncation}"
            )
        if np.any(self.entries < 0) or np.any(self.entries > 1):
            raise ValueError("probe matrix entries must lie in [0, 1]")
        if np.any(self.entries.sum(axis=1) > 1 + 1e-9):
            raise ValueError("probe matrix rows must sum to at most 1")

    @property
    def mean_photon_numbers(self) -> np.ndarray:
        return np.array([p.mean_photon_number for p in self.probes])


@dataclass(frozen=True)
class PovmMatrix:
    """M x N matrix of diagonal POVM elements theta_k^(n).

    Row index k is the Fock basis state, column index n the detector outcome.
    Each row is a probability distribution over outcomes (completeness of the
    POVM in diagonal form).  When ``overflow_outcome`` is set, the last column
    is the saturation bucket aggregating all counts >= N-1.
    """

    entries: np.ndarray
    truncation: int
    outcomes: int
    overflow_outcome: bool = True

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries))
        if self.entries.shape != (self.truncation, self.outcomes):
            raise ValueError(
                f"POVM shape {self.entries.shape} does not match truncation "
                f"{self.truncation} x outcomes {self.outcomes}"
            )
        if np.any(self.entries < -1e-9):
            raise ValueError("POVM entries must be nonnegative")
        sums = self.entries.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            k = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(f"POVM row {k} sums to {sums[k]!r}, expected 1")


@dataclass(frozen=True)
class StatisticsMatrix:
    """D x N matrix of relative outcome frequencies, one row per probe.

    ``shot_counts`` carries the number of shots behind each row for measured
    data and is None for analytic statistics.  Analytic rows generated from a
    truncated probe matrix sum to the probe row sum (slightly below 1) rather
    than exactly 1.
    """

    entries: np.ndarray
    shot_counts: tuple | None = None
    probes: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries))
        if self.entries.ndim != 2:
            raise ValueError("statistics matrix must be 2-D")
        if np.any(self.entries < -1e-12) or np.any(self.entries > 1 + 1e-12):
            raise ValueError("statistics entries must lie in [0, 1]")
        if np.any(self.entries.sum(axis=1) > 1 + 1e-6):
            raise ValueError("statistics rows must sum to at most 1")
        if self.shot_counts is not None:
            object.__setattr__(self, "shot_counts", tuple(int(c) for c in self.shot_counts))
            if len(self.shot_counts) != self.entries.shape[0]:
                raise ValueError("shot_counts length must match the number of rows")
        if self.probes is not None:
            object.__setattr__(
                self,
                "probes",
                tuple(p if isinstance(p, CoherentProbe) else CoherentProbe(float(p)) for p in self.probes),
            )
            if len(self.probes) != self.entries.shape[0]:
                raise ValueError("probes length must match the number of rows")

    @property
    def outcomes(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class PhotonNumberDistribution:
    """Diagonal of a phase-averaged quantum state: weights over Fock states 0..M-1."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights))
        if self.weights.ndim != 1:
            raise ValueError("weights must be a vector")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.weights.sum() > 1 + 1e-9:
            raise ValueError("weights must sum to at most 1")

    @property
    def truncation(self) -> int:
        return self.weights.shape[0]


class PovmDistance(NamedTuple):
    """Per-outcome absolute-difference distances and their maximum."""

    per_outcome: np.ndarray
    max: float


def poisson_pmf(mean: float, k: int) -> float:
    """Poisson weight mean^k e^{-mean} / k!, evaluated in log space.

    Stable for means up to a few hundred and k up to several hundred, where a
    naive factorial would overflow.
    """
    if not math.isfinite(mean) or mean < 0:
        raise ValueError(f"mean must be finite and >= 0, got {mean}")
    k = int(k)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if mean == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(mean) - mean - math.lgamma(k + 1))


def probe_matrix(probes: Sequence, truncation: int) -> ProbeMatrix:
    """Build the D x M probe matrix for a list of coherent probes.

    ``probes`` may contain CoherentProbe instances or plain mean photon
    numbers.  Entry (i, k) is the k-th Poisson weight of probe i.
    """
    if truncation < 1:
        raise ValueError(f"truncation must be >= 1, got {truncation}")
    probe_objs = tuple(
        p if isinstance(p, CoherentProbe) else CoherentProbe(float(p)) for p in probes
    )
    if not probe_objs:
        raise ValueError("at least one probe is required")
    k = np.arange(truncation)
    log_fact = np.array([math.lgamma(i + 1) for i in range(truncation)])
    rows = np.empty((len(probe_objs), truncation))
    for i, probe in enumerate(probe_objs):
        mu = probe.mean_photon_number
        if mu == 0.0:
            rows[i] = 0.0
            rows[i, 0] = 1.0
        else:
            rows[i] = np.exp(k * math.log(mu) - mu - log_fact)
    return ProbeMatrix(entries=rows, probes=probe_objs, truncation=truncation)


def binomial_loss_povm(efficiency: float, outcomes: int, truncation: int) -> PovmMatrix:
    """Analytic POVM of a photon counter with independent per-photon loss.

    With survival probability ``efficiency``, k incident photons produce n
    counts with binomial weight C(k, n) eta^n (1-eta)^(k-n).  Outcomes
    0..N-2 are exact counts; the last column is the saturation bucket
    (n >= N-1) and absorbs the remaining row mass, so rows sum to 1 exactly.
    """
    if not 0.0 <= efficiency <= 1.0:
        raise ValueError(f"efficiency must lie in [0, 1], got {efficiency}")
    if outcomes < 2:
        raise ValueError(f"need at least 2 outcomes, got {outcomes}")
    if truncation < outcomes:
        raise ValueError(
            f"truncation {truncation} must be >= outcomes {outcomes}"
        )
    eta = float(efficiency)
    M, N = truncation, outcomes
    k = np.arange(M)
    entries = np.zeros((M, N))
    for n in range(N - 1):
        valid = k >= n
        kk = k[valid]
        if eta == 0.0:
            entries[valid, n] = 1.0 if n == 0 else 0.0
        elif eta == 1.0:
            entries[valid, n] = (kk == n).astype(float)
        else:
            log_choose = (
                np.array([math.lgamma(i + 1) for i in kk])
                - math.lgamma(n + 1)
                - np.array([math.lgamma(i - n + 1) for i in kk])
            )
            entries[valid, n] = np.exp(
                log_choose + n * math.log(eta) + (kk - n) * math.log1p(-eta)
            )
    partial = entries[:, : N - 1].sum(axis=1)
    entries[:, N - 1] = 1.0 - partial
    # accumulated rounding can push a partial row sum one ulp past 1
    entries[:, N - 1] = np.maximum(entries[:, N - 1], 0.0)
    return PovmMatrix(entries=entries, truncation=M, outcomes=N, overflow_outcome=True)


def detection_probabilities(povm: PovmMatrix, probes: ProbeMatrix) -> StatisticsMatrix:
    """Forward model: outcome probabilities P = F @ Pi for each probe."""
    if probes.truncation != povm.truncation:
        raise ValueError(
            f"probe truncation {probes.truncation} != POVM truncation {povm.truncation}"
        )
    entries = probes.entries @ povm.entries
    return StatisticsMatrix(entries=entries, shot_counts=None, probes=probes.probes)


def outcome_distribution(dist: PhotonNumberDistribution, povm: PovmMatrix) -> np.ndarray:
    """Outcome probabilities for an arbitrary photon-number distribution."""
    if dist.truncation != povm.truncation:
        raise ValueError(
            f"distribution truncation {dist.truncation} != POVM truncation {povm.truncation}"
        )
    return dist.weights @ povm.entries


def povm_distance(a: PovmMatrix, b: PovmMatrix) -> PovmDistance:
    """Half the summed absolute element difference, per outcome column.

    Returns the per-column values and their maximum.  Columns are indexed by
    detector outcome; the sum runs over the Fock index.
    """
    if a.entries.shape != b.entries.shape:
        raise ValueError(
            f"shape mismatch: {a.entries.shape} vs {b.entries.shape}"
        )
    per_outcome = 0.5 * np.abs(a.entries - b.entries).sum(axis=0)
    return PovmDistance(per_outcome=per_outcome, max=float(per_outcome.max()))


# ---------------------------------------------------------------------------
# serialization

def povm_to_json_dict(povm: PovmMatrix) -> dict:
    return {
        "kind": "povm",
        "truncation": povm.truncation,
        "outcomes": povm.outcomes,
        "overflow_outcome": povm.overflow_outcome,
        "entries": povm.entries.tolist(),
    }


def povm_from_json_dict(data: dict) -> PovmMatrix:
    return PovmMatrix(
        entries=np.array(data["entries"], dtype=float),
        truncation=int(data["truncation"]),
        outcomes=int(data["outcomes"]),
        overflow_outcome=bool(data["overflow_outcome"]),
    )


def statistics_to_json_dict(stats: StatisticsMatrix) -> dict:
    return {
        "kind": "statistics",
        "outcomes": stats.outcomes,
        "overflow_outcome": True,
        "entries": stats.entries.tolist(),
        "probes": None
        if stats.probes is None
        else [p.mean_photon_number for p in stats.probes],
        "shot_counts": None if stats.shot_counts is None else list(stats.shot_counts),
    }


def statistics_from_json_dict(data: dict) -> StatisticsMatrix:
    return StatisticsMatrix(
        entries=np.array(data["entries"], dtype=float),
        shot_counts=data.get("shot_counts"),
        probes=data.get("probes"),
    )


def _outcome_header(n_outcomes: int) -> list:
    return [f"n{j}" for j in range(n_outcomes)]


def write_povm_csv(povm: PovmMatrix, path, comment: str | None = None) -> None:
    """One row per Fock index k, columns n0..n{N-1}."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(_outcome_header(povm.outcomes))
        for row in povm.entries:
            writer.writerow([repr(v) for v in row])


def write_statistics_csv(stats: StatisticsMatrix, path, comment: str | None = None) -> None:
    """One row per probe, columns n0..n{N-1}."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(_outcome_header(stats.outcomes))
        for row in stats.entries:
            writer.writerow([repr(v) for v in row])


def save_json(data: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
