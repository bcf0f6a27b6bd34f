"""Sample-quality diagnostics: histograms, TV distance, autocorrelation, ESS,
thermostat marginals and tempering traces.

All functions are pure: no randomness, no global state.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, InvalidInputError

__all__ = [
    "HistogramSummary",
    "AcfSummary",
    "ThermostatReport",
    "histogram",
    "binned_mass",
    "tv_distance",
    "tv_between",
    "autocorrelation",
    "effective_sample_size",
    "integrated_autocorrelation_time",
    "thermostat_marginal_test",
    "temperature_trace",
    "xi_flatness",
    "Report",
]


@dataclass(frozen=True)
class HistogramSummary:
    edges: np.ndarray
    masses: np.ndarray
    n: int
    overflow: int = 0
    """Samples outside ``[edges[0], edges[-1]]``; they count towards ``n``."""


@dataclass(frozen=True)
class AcfSummary:
    lags: np.ndarray
    rho: np.ndarray
    truncation_lag: int
    ess: float


def histogram(samples, edges):
    """Normalised histogram; out-of-range samples go to an overflow count.

    Masses are relative to all samples, so they sum to 1 only when nothing
    overflows (the overflow fraction is the remainder).
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise InvalidInputError("need at least 2 bin edges")
    if np.any(np.diff(edges) <= 0):
        raise InvalidInputError("edges must be strictly increasing")
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise InvalidInputError("no samples")
    counts, _ = np.histogram(x, bins=edges)
    overflow = int(x.size - counts.sum())
    return HistogramSummary(edges, counts / x.size, int(x.size), overflow)


def binned_mass(density, edges, subpoints=10):
    """Mass of a 1D density per bin by midpoint quadrature on ``subpoints`` cells."""
    edges = np.asarray(edges, dtype=float)
    widths = np.diff(edges)
    offsets = (np.arange(subpoints) + 0.5) / subpoints
    pts = edges[:-1, None] + widths[:, None] * offsets[None, :]
    vals = np.asarray(density(pts.reshape(-1)), dtype=float).reshape(pts.shape)
    return vals.mean(axis=1) * widths


def tv_between(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p - q).sum())


def tv_distance(hist, density, subpoints=10):
    """``0.5 * sum |p_i - q_i|`` between a histogram and a density binned on its edges.

    The overflow mass of the histogram and the density mass outside the edges
    are compared as one extra bin.
    """
    q = binned_mass(density, hist.edges, subpoints)
    p_out = hist.overflow / hist.n
    q_out = max(0.0, 1.0 - float(q.sum()))
    return tv_between(np.append(hist.masses, p_out), np.append(q, q_out))


def autocorrelation(samples, max_lag):
    """Biased ACF estimate ``rho(k) = c_k / c_0`` for ``k = 0 .. max_lag``."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    n = x.size
    if not 1 <= max_lag < n:
        raise InvalidInputError("need 1 <= max_lag < len(samples)")
    d = x - x.mean()
    c0 = float(d @ d) / n
    if c0 <= 0.0 or not math.isfinite(c0):
        raise InvalidInputError("autocorrelation is undefined for a constant sequence")
    size = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(d, size)
    acov = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1] / n
    rho = np.clip(acov / acov[0], -1.0, 1.0)
    rho[0] = 1.0
    trunc = _truncation_lag(rho)
    lags = np.arange(max_lag + 1)
    ess = _ess_from_rho(rho, trunc, n)
    return AcfSummary(lags, rho, trunc, ess)


def _truncation_lag(rho):
    """Last lag summed: stop before the first ``k >= 1`` with ``rho(k) + rho(k+1) < 0``."""
    pair = rho[1:-1] + rho[2:]
    neg = np.flatnonzero(pair < 0)
    if neg.size:
        return int(neg[0])
    return rho.size - 1


def _ess_from_rho(rho, truncation_lag, n):
    denom = 1.0 + 2.0 * float(np.sum(rho[1:truncation_lag + 1]))
    if denom <= 1.0 / n:
        return float(n)
    return float(min(n, n / denom))


def effective_sample_size(acf, n):
    """``n / (1 + 2 sum_{k=1}^{L} rho(k))`` with ``L = acf.truncation_lag``; in ``(0, n]``."""
    return _ess_from_rho(np.asarray(acf.rho, dtype=float), acf.truncation_lag, n)


def integrated_autocorrelation_time(samples, max_lag=None):
    x = np.asarray(samples, dtype=float).reshape(-1)
    if max_lag is None:
        max_lag = min(x.size - 1, max(1, x.size // 4))
    acf = autocorrelation(x, max_lag)
    return 1.0 + 2.0 * float(np.sum(acf.rho[1:acf.truncation_lag + 1]))


@dataclass
class ThermostatReport:
    mean: float
    variance: float
    n_points: int
    stride: int
    ks_statistic: float
    ks_pvalue: float
    gaussian: bool
    expected_mean: float = None
    mean_rel_error: float = None
    mean_ok: bool = None
    alpha: float = 0.01
    expected_gaussian: bool = True
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        ok = self.gaussian if self.expected_gaussian else True
        return ok and self.mean_ok is not False


def thermostat_marginal_test(trace, expected_mean=None, expected_gaussian=True, alpha=0.01,
                             mean_rtol=0.1, min_points=100):
    """Gaussianity (KS against the fitted normal) and mean check of a thermostat trace.

    The trace is thinned by ``ceil`` of its integrated autocorrelation time.
    The KS p-value uses asymptotic critical values without correcting for the
    two fitted parameters, which makes the test conservative.
    """
    z = np.asarray(trace, dtype=float).reshape(-1)
    if z.size < min_points:
        raise InsufficientDataError(f"trace has {z.size} points, need at least {min_points}")
    if np.ptp(z) == 0:
        raise InsufficientDataError("thermostat trace is constant")
    tau = integrated_autocorrelation_time(z)
    stride = max(1, int(math.ceil(tau)))
    thinned = z[::stride]
    if thinned.size < min_points:
        raise InsufficientDataError(
            f"only {thinned.size} effective points after thinning by {stride}; need {min_points}")
    mean = float(z.mean())
    var = float(z.var())
    loc = float(thinned.mean())
    scale = float(thinned.std())
    ks = stats.kstest(thinned, "norm", args=(loc, scale), method="asymp")
    report = ThermostatReport(
        mean=mean, variance=var, n_points=int(thinned.size), stride=stride,
        ks_statistic=float(ks.statistic), ks_pvalue=float(ks.pvalue),
        gaussian=bool(ks.pvalue >= alpha), alpha=alpha, expected_gaussian=expected_gaussian,
        notes=["KS p-value not corrected for fitted mean/variance"],
    )
    if expected_mean is not None:
        report.expected_mean = float(expected_mean)
        report.mean_rel_error = abs(mean - expected_mean) / abs(expected_mean)
        report.mean_ok = bool(report.mean_rel_error <= mean_rtol)
    return report


def temperature_trace(xi, profile):
    """Effective temperatures ``T / lambda(xi_k)`` and the fraction at exactly ``T``."""
    xi = np.asarray(xi, dtype=float).reshape(-1)
    a = np.abs(xi) - profile.xi0
    inv_lam = np.where(a > 0, 1.0 + (np.maximum(a, 0.0) / (profile.xi1 - profile.xi0)) ** profile.n, 1.0)
    temps = profile.T * inv_lam
    unity = float(np.mean(a <= 0)) if xi.size else float("nan")
    return temps, unity


def xi_flatness(xi, W0, J=100):
    """TV distance between the ``xi`` histogram on ``J`` bins of ``[-W0, W0]`` and uniform."""
    edges = np.linspace(-W0, W0, J + 1)
    hist = histogram(xi, edges)
    return tv_between(np.append(hist.masses, hist.overflow / hist.n), np.append(np.full(J, 1.0 / J), 0.0))


class Report:
    """Ordered ``metric, value, threshold, pass`` rows.

    ``threshold`` is ``(op, bound)`` with op one of ``<=``, ``>=`` or ``None``
    for informational rows.
    """

    def __init__(self):
        self.rows = []

    def add(self, metric, value, op=None, bound=None):
        value = float(value)
        if op is None or bound is None:
            passed = None
        elif op == "<=":
            passed = value <= bound
        elif op == ">=":
            passed = value >= bound
        else:
            raise InvalidInputError(f"unknown comparison {op!r}")
        self.rows.append((metric, value, None if passed is None else f"{op}{bound:.17g}", passed))
        return passed

    @property
    def passed(self):
        return all(r[3] is not False for r in self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value", "threshold", "pass"])
            for metric, value, thr, ok in self.rows:
                writer.writerow([metric, f"{value:.17g}", thr or "", "" if ok is None else str(ok).lower()])

    def to_text(self):
        lines = []
        for metric, value, thr, ok in self.rows:
            line = f"{metric} = {value:.17g}"
            if thr is not None:
                line += f"  ({thr}: {'pass' if ok else 'FAIL'})"
            lines.append(line)
        return "\n".join(lines)

    @classmethod
    def from_csv(cls, path):
        rep = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                ok = None if row["pass"] == "" else row["pass"] == "true"
                rep.rows.append((row["metric"], float(row["value"]), row["threshold"] or None, ok))
        return rep
