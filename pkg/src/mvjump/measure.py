"""Uniform empirical measures on the real line and their Wasserstein distances."""

from __future__ import annotations

import csv
import itertools
import math
from pathlib import Path

import numpy as np

ORACLE_MAX_ATOMS = 8


class UnsupportedMeasureError(ValueError):
    """Raised for measure pairs outside the equal-size / Dirac setting."""


class EmpiricalMeasure:
    """Equal-weight atoms, stored sorted and read-only.

    The Dirac mass at ``a`` is the one-atom cloud ``EmpiricalMeasure([a])``.
    """

    __slots__ = ("_atoms",)

    def __init__(self, atoms):
        arr = np.array(atoms, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("an empirical measure needs at least one atom")
        arr.sort(kind="stable")
        arr.flags.writeable = False
        self._atoms = arr

    @classmethod
    def from_sorted(cls, atoms: np.ndarray) -> EmpiricalMeasure:
        # caller guarantees non-decreasing order; no copy is made
        obj = cls.__new__(cls)
        arr = np.asarray(atoms, dtype=np.float64)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        obj._atoms = arr
        return obj

    @classmethod
    def dirac(cls, at: float = 0.0) -> EmpiricalMeasure:
        return cls([at])

    @property
    def atoms(self) -> np.ndarray:
        return self._atoms

    @property
    def n(self) -> int:
        return self._atoms.size

    def mean(self) -> float:
        return float(np.mean(self._atoms))

    def moment(self, p: float) -> float:
        return moment(self, p)

    def shifted(self, c: float) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_sorted(self._atoms + c)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return np.array_equal(self._atoms, other._atoms)

    def __hash__(self):
        return hash(self._atoms.tobytes())

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={self.n}, mean={self.mean():.6g})"


def _check_p(p: float) -> None:
    if not p > 0 or not math.isfinite(p):
        raise ValueError(f"Wasserstein order must be a positive finite number, got {p!r}")


def _finish(cost: float, p: float) -> float:
    # outer exponent 1/(1 v p): no root at all for p < 1
    return cost ** (1.0 / p) if p >= 1 else cost


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """W_p between two equal-size clouds (or a cloud and a single atom).

    On the line the monotone coupling of order statistics is optimal, so
    this is exact in O(n log n).
    """
    _check_p(p)
    x, y = mu.atoms, nu.atoms
    if x.size == y.size:
        diff = np.abs(x - y)
    elif y.size == 1:
        diff = np.abs(x - y[0])
    elif x.size == 1:
        diff = np.abs(y - x[0])
    else:
        raise UnsupportedMeasureError(
            f"clouds of different sizes ({x.size} vs {y.size}) are not supported"
        )
    return _finish(float(np.mean(diff**p)), p)


def wasserstein_oracle(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """Brute-force W_p: minimum transport cost over all n! permutation couplings.

    For equal-weight clouds of equal size the optimal coupling can be taken
    to be a permutation (Birkhoff), so this is an independent check of
    :func:`wasserstein_p` on small inputs.
    """
    if p < 1:
        raise ValueError("the permutation oracle is defined for p >= 1")
    if mu.n != nu.n:
        raise UnsupportedMeasureError("oracle needs equal-size clouds")
    if mu.n > ORACLE_MAX_ATOMS:
        raise ValueError(f"oracle refuses n={mu.n} > {ORACLE_MAX_ATOMS} (factorial cost)")
    # shuffle away the sortedness so the oracle does not lean on it
    x = mu.atoms[::-1]
    y = nu.atoms
    best = math.inf
    for perm in itertools.permutations(range(mu.n)):
        cost = sum(abs(x[i] - y[j]) ** p for i, j in enumerate(perm)) / mu.n
        best = min(best, cost)
    return best ** (1.0 / p)


def distance_to_dirac0(mu: EmpiricalMeasure, p: float) -> float:
    _check_p(p)
    return _finish(float(np.mean(np.abs(mu.atoms) ** p)), p)


def moment(mu: EmpiricalMeasure, p: float) -> float:
    _check_p(p)
    return float(np.mean(np.abs(mu.atoms) ** p))


def write_cloud_csv(path, mu: EmpiricalMeasure) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position"])
        for a in mu.atoms:
            writer.writerow([repr(float(a))])
    return path


def read_cloud_csv(path) -> EmpiricalMeasure:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "position":
            raise ValueError(f"{path}: expected a 'position' header column")
        values = [float(row[0]) for row in reader if row]
    return EmpiricalMeasure(values)
