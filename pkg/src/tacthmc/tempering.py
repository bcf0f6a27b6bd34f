"""Coupling function, confining well and the adaptive bias on the tempering variable.

The coupling ``lambda(xi)`` multiplies the potential, so the original system
runs at effective temperature ``T / lambda(xi)``. It is 1 on the plateau
``|xi| <= xi0`` and decays as ``1 / (1 + ((|xi| - xi0) / (xi1 - xi0))^n)``
outside it. The well ``[-W0, W0]`` has infinite walls and is enforced by
reflection.
"""

import bisect
import csv
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidInputError, StepTooLargeError

__all__ = [
    "TemperingProfile",
    "BiasTable",
    "coupling",
    "coupling_derivative",
    "reflect",
    "plateau_efficiency",
    "abf_lookup",
    "abf_update",
    "metadynamics_update",
    "metadynamics_force",
    "BIAS_MODES",
]

BIAS_MODES = ("abf_paper", "abf_per_bin", "metadynamics")


@dataclass(frozen=True)
class TemperingProfile:
    xi0: float = 1.0 / 3.0
    xi1: float = 1.0
    n: int = 3
    W0: float = 5.0 / 3.0
    T: float = 1.0

    def __post_init__(self):
        if not self.xi0 > 0:
            raise InvalidInputError("xi0 must be positive")
        if not self.xi1 > self.xi0:
            raise InvalidInputError("xi1 must exceed xi0")
        if int(self.n) != self.n or self.n < 2:
            # n = 1 leaves a kink in lambda at the plateau edge
            raise InvalidInputError("n must be an integer >= 2")
        if not self.W0 > self.xi0:
            raise InvalidInputError("W0 must exceed xi0")
        if not self.T > 0:
            raise InvalidInputError("T must be positive")
        if plateau_efficiency(self) > 0.25:
            warnings.warn(
                f"plateau efficiency {plateau_efficiency(self):.3f} exceeds 0.25; "
                "large |lambda'| may destabilise the xi dynamics",
                stacklevel=3,
            )

    def coupling(self, xi):
        a = abs(xi) - self.xi0
        if a <= 0.0:
            return 1.0
        return 1.0 / (1.0 + (a / (self.xi1 - self.xi0)) ** self.n)

    def coupling_derivative(self, xi):
        a = abs(xi) - self.xi0
        if a <= 0.0:
            return 0.0
        width = self.xi1 - self.xi0
        u = a / width
        un1 = u ** (self.n - 1)
        denom = 1.0 + un1 * u
        d = -self.n * un1 / (width * denom * denom)
        return d if xi > 0 else -d

    def on_plateau(self, xi):
        return abs(xi) <= self.xi0

    @property
    def efficiency(self):
        """Fraction ``xi0 / W0`` of the well on the plateau.

        Both ends are read back as the nearest short rationals first, so
        ``xi0 = 1/3, W0 = 5/3`` gives exactly ``0.2`` rather than the rounded
        quotient of two rounded floats.
        """
        return plateau_efficiency(self)

    @property
    def max_temperature(self):
        return self.T / self.coupling(self.W0)


def coupling(profile, xi):
    return profile.coupling(xi)


def coupling_derivative(profile, xi):
    return profile.coupling_derivative(xi)


def plateau_efficiency(profile):
    ratio = _as_rational(profile.xi0) / _as_rational(profile.W0)
    return float(ratio)


def _as_rational(x, max_denominator=10**6):
    approx = Fraction(x).limit_denominator(max_denominator)
    # keep the exact binary value unless the short rational rounds to the same float
    return approx if float(approx) == x else Fraction(x)


def reflect(profile, xi, r_xi):
    """Bounce ``xi`` off the wall after the move ``xi += r_xi``.

    Outside the well the momentum is reversed and the move is applied again,
    returning ``xi`` to its pre-step position.
    """
    W0 = profile.W0
    if -W0 <= xi <= W0:
        return xi, r_xi
    r_xi = -r_xi
    xi = xi + r_xi
    if not -W0 <= xi <= W0:
        # (a + r) - r can land an ulp past a pre-step position sitting on the wall
        if abs(xi) - W0 <= 4 * math.ulp(W0 + abs(r_xi)):
            return math.copysign(W0, xi), r_xi
        raise StepTooLargeError(
            f"xi={xi!r} is still outside [-{W0}, {W0}] after reflection; eta_xi is too large"
        )
    return xi, r_xi


class BiasTable:
    """Binned bias on ``xi`` over ``[-W0, W0]``.

    Bins are half-open ``[a_j, a_{j+1})`` except the last, which is closed, so
    a ``xi`` sitting on an interior edge belongs to the bin on its right.
    ``values`` hold ABF mean-force estimates or metadynamics potential heights
    depending on ``mode``.
    """

    def __init__(self, W0, J=100, mode="abf_paper"):
        if mode not in BIAS_MODES:
            raise InvalidInputError(f"unknown bias mode {mode!r}; expected one of {BIAS_MODES}")
        if int(J) != J or J < 1:
            raise InvalidInputError("J must be a positive integer")
        self.W0 = float(W0)
        self.J = int(J)
        self.mode = mode
        self.bin_width = 2.0 * self.W0 / self.J
        self.edges = np.linspace(-self.W0, self.W0, self.J + 1)
        self.centers = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.values = np.zeros(self.J)
        self.visit_counts = np.zeros(self.J, dtype=np.int64)
        self._inner_edges = self.edges[1:-1].tolist()

    @property
    def n_updates(self):
        return int(self.visit_counts.sum())

    def index(self, xi):
        if not -self.W0 <= xi <= self.W0:
            raise IndexError(f"xi={xi!r} lies outside the well [-{self.W0}, {self.W0}]")
        return bisect.bisect_right(self._inner_edges, xi)

    def lookup(self, xi):
        """Bias force on ``xi``: the stored ABF estimate, or the metadynamics gradient."""
        return self.force_at(self.index(xi), xi)

    def force_at(self, j, xi):
        if self.mode == "metadynamics":
            return _metadynamics_force(self, j, xi)
        return float(self.values[j])

    def update(self, xi, dlam, potential, k, h_A=None):
        self.deposit(self.index(xi), dlam * potential, k, h_A)

    def deposit(self, j, inst_force, k, h_A=None):
        """Record one step in bin ``j``; ``inst_force`` is ``dlam * U`` (unused by metadynamics)."""
        counts = self.visit_counts
        counts[j] += 1
        if self.mode == "metadynamics":
            if not h_A > 0:
                raise InvalidInputError("h_A must be positive")
            self.values[j] += h_A
            return
        if k < 1:
            raise InvalidInputError("step index k must be >= 1")
        n = k if self.mode == "abf_paper" else int(counts[j])
        v = self.values
        v[j] += (inst_force - v[j]) / n

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "value", "visits"])
            for c, v, n in zip(self.centers, self.values, self.visit_counts):
                writer.writerow([f"{c:.17g}", f"{v:.17g}", int(n)])

    @classmethod
    def from_csv(cls, path, mode="abf_paper", W0=None):
        """Reload a table written by :meth:`to_csv` (``W0`` is needed when J=1)."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InvalidInputError(f"{path} holds no bins")
        centers = [float(r["bin_center"]) for r in rows]
        J = len(rows)
        if W0 is None:
            if J == 1:
                raise InvalidInputError("W0 must be given for a single-bin table")
            W0 = centers[-1] + 0.5 * (centers[-1] - centers[0]) / (J - 1)
        table = cls(W0, J, mode)
        if not np.allclose(table.centers, centers, rtol=0, atol=1e-9 * table.W0):
            raise InvalidInputError(f"{path}: bin centres do not tile a symmetric well")
        table.values[:] = [float(r["value"]) for r in rows]
        table.visit_counts[:] = [int(r["visits"]) for r in rows]
        return table


def abf_lookup(table, xi):
    return float(table.values[table.index(xi)])


def abf_update(table, xi, dlam, potential, k):
    """Fold the instantaneous force ``dlam * potential`` into the bin of ``xi``.

    ``abf_paper`` weights by the global step ``1/k``; ``abf_per_bin`` uses the
    bin's own visit count, giving the running mean of the deposited forces.
    """
    if k < 1:
        raise InvalidInputError("step index k must be >= 1")
    table.deposit(table.index(xi), dlam * potential, k)


def metadynamics_update(table, xi, h_A):
    if not h_A > 0:
        raise InvalidInputError("h_A must be positive")
    j = table.index(xi)
    table.visit_counts[j] += 1
    table.values[j] += h_A


def metadynamics_force(table, xi):
    """One-sided finite difference ``-dA/dxi`` of the deposited potential.

    A missing neighbour past the outermost bins counts as equal to the edge bin.
    """
    return _metadynamics_force(table, table.index(xi), xi)


def _metadynamics_force(table, j, xi):
    v = table.values
    if xi >= table.centers[j]:
        nb = v[j + 1] if j + 1 < table.J else v[j]
        return float((v[j] - nb) / table.bin_width)
    nb = v[j - 1] if j > 0 else v[j]
    return float((nb - v[j]) / table.bin_width)


def effective_temperature(profile, xi):
    return profile.T / profile.coupling(xi)
