"""Coincidence statistics, g2 histograms, Pauli expectations and CHSH estimation."""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import OptimizeWarning, brentq, curve_fit

from . import rng as _rng
from .franson import EventTable, InterferometerConfig, default_psi, simulate_franson, split_to_alice_bob
from .pairing import check_sorted, greedy_pairs
from .physics import SQRT2, TSIRELSON, EmitterParams, liouvillian_g2, separable_chsh, smax_from_g2
from .trajectories import PhotonStream, TrajectoryConfig, simulate_detections

SCHEMA_VERSION = 1


def _times(x) -> np.ndarray:
    return x.times if isinstance(x, PhotonStream) else np.asarray(x, dtype=float)


# -- coincidences -------------------------------------------------------------------


@dataclass(frozen=True)
class CoincidenceSet:
    """Matched A/B events; ``delay = t_a - t_b``."""

    ia: np.ndarray
    ib: np.ndarray
    t_a: np.ndarray
    t_b: np.ndarray
    center: float
    half_width: float

    def __len__(self) -> int:
        return self.ia.size

    @property
    def delay(self) -> np.ndarray:
        return self.t_a - self.t_b


def pair_coincidences(stream_a, stream_b, center: float, half_width: float, gate=None) -> CoincidenceSet:
    """Greedy nearest-match pairs with ``|(t_a - t_b) - center| <= half_width``."""
    ta, tb = _times(stream_a), _times(stream_b)
    ia, ib = greedy_pairs(ta, tb, center, half_width, gate)
    return CoincidenceSet(ia, ib, ta[ia], tb[ib], center, half_width)


# -- g2 histograms ------------------------------------------------------------------


@dataclass(frozen=True)
class CoincidenceHistogram:
    bin_width: float
    min_tau: float
    max_tau: float
    counts: np.ndarray
    normalization: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.counts)
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        nb = (self.max_tau - self.min_tau) / self.bin_width
        if c.size != round(nb) or abs(nb - round(nb)) > 1e-9:
            raise ValueError("bin count does not match (max_tau - min_tau)/bin_width")
        if not self.normalization > 0:
            raise ValueError("normalization must be positive")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def centers(self) -> np.ndarray:
        return self.min_tau + (np.arange(self.counts.size) + 0.5) * self.bin_width

    @property
    def g2(self) -> np.ndarray:
        return self.counts / self.normalization

    def rebin(self, factor: int) -> "CoincidenceHistogram":
        if factor < 1 or self.counts.size % factor:
            raise ValueError("factor must divide the number of bins")
        c = self.counts.reshape(-1, factor).sum(axis=1)
        return CoincidenceHistogram(self.bin_width * factor, self.min_tau, self.max_tau, c, self.normalization * factor)

    def with_normalization(self, normalization: float) -> "CoincidenceHistogram":
        return replace(self, normalization=float(normalization))

    def zero_bin(self) -> int:
        """Index of the bin containing tau = 0."""
        return int(math.floor((0.0 - self.min_tau) / self.bin_width))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau_s", "counts", "g2_normalized"])
            for t, c, g in zip(self.centers, self.counts, self.g2):
                w.writerow([repr(float(t)), int(c), repr(float(g))])


def g2_histogram(stream_a, stream_b, bin_width: float, span: float, duration: float | None = None,
                 normalization: float | None = None, gate=None, chunk: int = 200_000) -> CoincidenceHistogram:
    """Histogram of all delays ``tau = t_b - t_a`` in ``[-span, span)``.

    Without an explicit ``normalization`` and with a ``duration``, counts are
    normalised by the accidental level ``N_a N_b bin_width / duration``.
    """
    if bin_width <= 0 or span <= 0:
        raise ValueError("bin_width and span must be positive")
    nb = 2.0 * span / bin_width
    if abs(nb - round(nb)) > 1e-9:
        raise ValueError("2*span must be a multiple of bin_width")
    nb = int(round(nb))
    ta, tb = _times(stream_a), _times(stream_b)
    check_sorted(ta, "A")
    check_sorted(tb, "B")
    counts = np.zeros(nb, dtype=np.int64)
    for s in range(0, ta.size, chunk):
        a = ta[s:s + chunk]
        lo = np.searchsorted(tb, a - span, side="left")
        hi = np.searchsorted(tb, a + span, side="left")
        n = hi - lo
        tot = int(n.sum())
        if tot == 0:
            continue
        ia = np.repeat(np.arange(a.size), n)
        ib = np.repeat(lo, n) + (np.arange(tot) - np.repeat(np.cumsum(n) - n, n))
        tau = tb[ib] - a[ia]
        if gate is not None:
            same = np.asarray(gate(a[ia])) == np.asarray(gate(tb[ib]))
            tau = tau[same]
        # integer bin index from one floating division keeps re-binning exact
        k = np.floor((tau + span) / bin_width).astype(np.int64)
        k = k[(k >= 0) & (k < nb)]
        counts += np.bincount(k, minlength=nb)
    if normalization is None:
        if duration and ta.size and tb.size:
            normalization = ta.size * tb.size * bin_width / duration
        else:
            normalization = 1.0
    return CoincidenceHistogram(bin_width, -span, span, counts, normalization)


def chi2_per_dof(hist: CoincidenceHistogram, model, mask=None) -> tuple[float, int]:
    """Pearson chi-square per degree of freedom of counts against ``normalization * model(tau)``."""
    expected = hist.normalization * np.asarray(model(hist.centers), dtype=float)
    m = expected > 0 if mask is None else (mask & (expected > 0))
    chi2 = float(np.sum((hist.counts[m] - expected[m]) ** 2 / expected[m]))
    dof = int(m.sum())
    return chi2 / dof, dof


# -- baseline fit ---------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineFit:
    amplitude: float
    timescale: float
    baseline: float
    level: float
    amplitude_err: float = float("nan")
    timescale_err: float = float("nan")
    g2_zero: float = float("nan")

    def __post_init__(self):
        if not self.timescale > 0:
            raise ValueError("timescale must be positive")

    @property
    def normalization(self) -> float:
        """Counts per bin corresponding to g2 = 1 after baseline correction."""
        return self.level * self.baseline


def _baseline_model(tau, level, amp, tb):
    return level * (1.0 + amp * np.exp(-np.abs(tau) / tb))


def fit_baseline(hist: CoincidenceHistogram, fit_region_min_tau: float) -> BaselineFit:
    """Least-squares fit of ``N0 (1 + A exp(-|tau|/t_b))`` to bins with ``|tau| >= fit_region_min_tau``.

    The reported ``g2_zero`` is the zero-delay bin divided by ``N0 (1 + A)``.
    """
    tau = hist.centers
    m = np.abs(tau) >= fit_region_min_tau
    if m.sum() < 3:
        raise ValueError("fewer than 3 bins in the fit region")
    x, y = tau[m], hist.counts[m].astype(float)
    sigma = np.sqrt(np.maximum(y, 1.0))
    far = np.abs(x) >= np.quantile(np.abs(x), 0.75)
    level0 = max(float(np.mean(y[far])), 1e-12)
    near = ~far
    amp0 = max(float(np.mean(y[near])) / level0 - 1.0, 0.01)
    t0 = 0.25 * float(np.max(np.abs(x)))
    tmax = 1e3 * float(np.max(np.abs(x)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        try:
            popt, pcov = curve_fit(
                _baseline_model, x, y, p0=[level0, amp0, t0], sigma=sigma, absolute_sigma=True,
                bounds=([0.0, -0.99, hist.bin_width], [np.inf, np.inf, tmax]), maxfev=20000,
            )
        except RuntimeError as exc:
            raise RuntimeError(f"baseline fit did not converge: {exc}") from exc
    level, amp, tb = (float(v) for v in popt)
    err = np.sqrt(np.clip(np.diag(pcov), 0.0, np.inf))
    base = 1.0 + amp
    k = hist.zero_bin()
    g0 = float(hist.counts[k]) / (level * base) if 0 <= k < hist.counts.size else float("nan")
    return BaselineFit(amp, tb, base, level, float(err[1]), float(err[2]), g0)


# -- Pauli expectations and CHSH ----------------------------------------------------------


class Expectation(NamedTuple):
    value: float
    sigma: float
    n: int


def _binomial(e: float, n: int) -> Expectation:
    return Expectation(e, math.sqrt(max(1.0 - e * e, 0.0) / n), n)


def expectation_single(n1: int, n2: int) -> Expectation:
    """``(n1 - n2)/(n1 + n2)`` with binomial error ``sqrt((1 - e^2)/(n1 + n2))``."""
    n = n1 + n2
    if n <= 0:
        raise ValueError("no counts")
    return _binomial((n1 - n2) / n, n)


def expectation_joint(n11: int, n22: int, n12: int, n21: int) -> Expectation:
    n = n11 + n22 + n12 + n21
    if n <= 0:
        raise ValueError("no coincidences")
    return _binomial((n11 + n22 - n12 - n21) / n, n)


@dataclass(frozen=True)
class ChshSettings:
    phi_a: float = 0.0
    phi_a_prime: float = math.pi / 2
    phi_b: float = math.pi / 4
    phi_b_prime: float = 3 * math.pi / 4

    def combos(self) -> list[tuple[float, float]]:
        """Phase pairs in the order (a,b), (a',b), (a,b'), (a',b')."""
        return [
            (self.phi_a, self.phi_b),
            (self.phi_a_prime, self.phi_b),
            (self.phi_a, self.phi_b_prime),
            (self.phi_a_prime, self.phi_b_prime),
        ]


CHSH_SIGNS = (1.0, 1.0, -1.0, 1.0)


@dataclass(frozen=True)
class ChshResult:
    S: float
    sigma_S: float
    expectations: tuple[float, ...]
    sigmas: tuple[float, ...]
    counts: tuple[tuple[int, int, int, int], ...] = ()
    settings: ChshSettings = field(default_factory=ChshSettings)

    def __post_init__(self):
        if not 0.0 <= self.S <= 4.0 + 1e-12:
            raise ValueError("S outside [0, 4]")
        if self.sigma_S < 0:
            raise ValueError("sigma_S must be non-negative")
        if any(abs(e) > 1.0 + 1e-12 for e in self.expectations):
            raise ValueError("expectation outside [-1, 1]")

    @property
    def total_coincidences(self) -> int:
        return int(sum(sum(c) for c in self.counts))

    def to_dict(self, params: dict | None = None, windows=None, s_of_window=None) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "params": params or {},
            "settings": asdict(self.settings),
            "expectations": [
                {"phi_a": pa, "phi_b": pb, "E": e, "sigma": s, "counts": list(c) if c else None}
                for (pa, pb), e, s, c in zip(self.settings.combos(), self.expectations, self.sigmas,
                                             self.counts or [None] * 4)
            ],
            "S": self.S,
            "sigma_S": self.sigma_S,
            "windows": [] if windows is None else [float(w) for w in windows],
            "S_of_window": [] if s_of_window is None else [float(s) for s in s_of_window],
        }


def chsh_s(expectations: Sequence[float], sigmas: Sequence[float] | None = None,
           settings: ChshSettings | None = None, counts=()) -> ChshResult:
    """``S = |E(a,b) + E(a',b) - E(a,b') + E(a',b')|`` with quadrature error for independent settings."""
    e = [float(x) for x in expectations]
    if len(e) != 4:
        raise ValueError("need four expectations")
    sg = [0.0] * 4 if sigmas is None else [float(x) for x in sigmas]
    s = abs(sum(c * x for c, x in zip(CHSH_SIGNS, e)))
    sigma = math.sqrt(sum(x * x for x in sg))
    return ChshResult(s, sigma, tuple(e), tuple(sg), tuple(tuple(int(v) for v in c) for c in counts),
                      settings or ChshSettings())


def joint_counts(events: EventTable, center: float, half_width: float, gate=None) -> tuple[int, int, int, int]:
    """Coincidence counts ``(n11, n22, n12, n21)`` between the A and B outputs."""
    a = events.side == 0
    ta, pa = events.time[a], events.port[a]
    tb, pb = events.time[~a], events.port[~a]
    ia, ib = greedy_pairs(ta, tb, center, half_width, gate)
    p, q = pa[ia], pb[ib]
    return (int(np.sum((p == 1) & (q == 1))), int(np.sum((p == 2) & (q == 2))),
            int(np.sum((p == 1) & (q == 2))), int(np.sum((p == 2) & (q == 1))))


def chsh_from_events(tables: Sequence[EventTable], center: float, half_width: float,
                     settings: ChshSettings | None = None, gate=None) -> ChshResult:
    counts = [joint_counts(t, center, half_width, gate) for t in tables]
    ex = [expectation_joint(*c) for c in counts]
    return chsh_s([x.value for x in ex], [x.sigma for x in ex], settings, counts)


def simulate_setting_events(config: TrajectoryConfig, iface: InterferometerConfig, settings: ChshSettings,
                            psi_model: str = "exact", threads: int = 1) -> list[EventTable]:
    """Independent acquisition run for each of the four phase settings.

    Each run draws its own emission record, beamsplitter routing and port
    outcomes from substreams of ``config.seed`` keyed by the setting index.
    """
    psi = default_psi(config.emitter, psi_model)
    gate = config.duty_cycle.window_index if config.duty_cycle is not None else None

    def run(k: int) -> EventTable:
        seed_k = _rng.derive_seed(config.seed, _rng.SETTING, k)
        stream = simulate_detections(replace(config, seed=seed_k))
        pa, pb = settings.combos()[k]
        sa, sb = split_to_alice_bob(stream, seed_k, iface.splitter_ratio)
        return simulate_franson((sa, sb), config.emitter, iface.with_phases(pa, pb), seed_k, psi=psi, gate=gate)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, 4)) as pool:
            return list(pool.map(run, range(4)))
    return [run(k) for k in range(4)]


def simulate_chsh(config: TrajectoryConfig, iface: InterferometerConfig, half_width: float,
                  settings: ChshSettings | None = None, center: float | None = None,
                  psi_model: str = "exact", threads: int = 1) -> tuple[ChshResult, list[EventTable]]:
    settings = settings or ChshSettings()
    tables = simulate_setting_events(config, iface, settings, psi_model, threads)
    c = iface.peak_center if center is None else center
    gate = config.duty_cycle.window_index if config.duty_cycle is not None else None
    return chsh_from_events(tables, c, half_width, settings, gate), tables


# -- S versus coincidence window ------------------------------------------------------


@dataclass(frozen=True)
class ScanResult:
    windows: np.ndarray
    S: np.ndarray
    sigma_S: np.ndarray | None = None
    mode: str = "analytic"
    S_unscaled: np.ndarray | None = None
    g2_edge: np.ndarray | None = None
    g2_mean: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def crossing(self, level: float = 2.0) -> float:
        """Smallest window at which S falls to ``level`` (linear interpolation), NaN if never."""
        s = np.asarray(self.S)
        below = np.nonzero(s < level)[0]
        if below.size == 0 or below[0] == 0:
            return float("nan")
        k = below[0]
        w0, w1 = self.windows[k - 1], self.windows[k]
        s0, s1 = s[k - 1], s[k]
        return float(w0 + (s0 - level) * (w1 - w0) / (s0 - s1))

    def to_dict(self, params: dict | None = None) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "params": params or {},
            "windows": [float(w) for w in self.windows],
            "S_of_window": [float(s) for s in self.S],
            "delta_t_max": self.crossing(),
            "meta": self.meta,
        }
        if self.sigma_S is not None:
            out["sigma_S_of_window"] = [float(s) for s in self.sigma_S]
        for name in ("S_unscaled", "g2_edge", "g2_mean"):
            v = getattr(self, name)
            if v is not None:
                out[name] = [float(x) for x in v]
        return out


def _window_average_parts(params: EmitterParams, iface: InterferometerConfig, w_max: float, step: float):
    n = max(int(math.ceil(w_max / step)), 8) + 1
    grid = np.linspace(0.0, w_max, n)
    mean_delay = 0.5 * (iface.delay_a + iface.delay_b)
    g2 = liouvillian_g2(params, grid).values
    g2_delay = float(liouvillian_g2(params, np.array([0.0, mean_delay])).values[1])
    smax = smax_from_g2(g2, g2_delay)
    return grid, g2, g2_delay, smax


HIGH_SATURATION_S0 = 1.0


def analytic_window_curve(params: EmitterParams, iface: InterferometerConfig, windows,
                          rescale: bool | None = None, step: float = 5e-12) -> ScanResult:
    """S averaged over a coincidence window ``[-dt, dt]``.

    The point-wise maximal S for detection delay ``d`` is averaged with the
    weight g2(d). With ``rescale`` the curve is then mapped affinely so that
    ``2 sqrt(2)`` stays fixed and the long-window limit ``2 sqrt(2) g2(dt)/(1 + g2(dt))``
    lands on the CHSH value of uncorrelated photons with single-photon
    visibility from the Bloch equations. By default the rescale is applied
    only for saturated drive (``s0 >= 1``), where incoherent scattering
    reduces the single-photon coherence.
    """
    if rescale is None:
        rescale = params.s0 >= HIGH_SATURATION_S0
    windows = np.asarray(windows, dtype=float)
    if windows.size == 0:
        raise ValueError("no windows given")
    if np.any(np.diff(windows) <= 0) or windows[0] < 0:
        raise ValueError("windows must be non-negative and increasing")
    grid, g2, g2_delay, smax = _window_average_parts(params, iface, float(windows[-1]) or step, step)
    num = cumulative_trapezoid(g2 * smax, grid, initial=0.0)
    den = cumulative_trapezoid(g2, grid, initial=0.0)
    cum_g2 = np.interp(windows, grid, den)
    with np.errstate(invalid="ignore", divide="ignore"):
        raw = np.where(cum_g2 > 0, np.interp(windows, grid, num) / np.where(cum_g2 > 0, cum_g2, 1.0), np.nan)
    # zero-width (or zero-weight) windows: point value at the window edge
    point = smax_from_g2(np.interp(windows, grid, g2), g2_delay)
    raw = np.where(np.isnan(raw), point, raw)
    mean_delay = 0.5 * (iface.delay_a + iface.delay_b)
    meta = {"weight": "g2(delta)", "rescaled": bool(rescale), "g2_at_delay": g2_delay}
    s = raw
    if rescale:
        asym_raw = TSIRELSON * g2_delay / (1.0 + g2_delay)
        s_sep = separable_chsh(params, mean_delay)
        factor = (TSIRELSON - s_sep) / (TSIRELSON - asym_raw)
        s = TSIRELSON - (TSIRELSON - raw) * factor
        meta.update({"separable_S": s_sep, "raw_asymptote": asym_raw, "scale_factor": factor,
                     "modeling_choice": "affine rescale of the window-averaged curve to the separable-photon limit"})
    g2_mean = np.where(windows > 0, cum_g2 / np.where(windows > 0, windows, 1.0), np.interp(windows, grid, g2))
    return ScanResult(windows, s, None, "analytic", raw, np.interp(windows, grid, g2), g2_mean, meta)


def simulated_window_curve(tables: Sequence[EventTable], center: float, windows,
                           settings: ChshSettings | None = None, gate=None) -> ScanResult:
    windows = np.asarray(windows, dtype=float)
    if windows.size == 0:
        raise ValueError("no windows given")
    if np.any(np.diff(windows) <= 0) or windows[0] <= 0:
        raise ValueError("windows must be positive and increasing")
    res = [chsh_from_events(tables, center, w, settings, gate) for w in windows]
    return ScanResult(windows, np.array([r.S for r in res]), np.array([r.sigma_S for r in res]), "simulation",
                      meta={"coincidences": [r.total_coincidences for r in res]})


def s_vs_window_scan(params: EmitterParams, iface: InterferometerConfig, windows, tables=None,
                     center: float | None = None, settings: ChshSettings | None = None, **kw) -> ScanResult:
    """Analytic curve when ``tables`` is None, otherwise S from re-windowed simulated coincidences."""
    if tables is None:
        return analytic_window_curve(params, iface, windows, **kw)
    c = iface.peak_center if center is None else center
    return simulated_window_curve(tables, c, windows, settings, **kw)


def bell_violation_threshold(g2_delay: float = 1.0) -> float:
    """g2 at zero delay below which the point-wise maximal S exceeds 2: ``(sqrt(2) - 1) g2(dt)``."""
    if g2_delay < 0:
        raise ValueError("g2_delay must be non-negative")
    return (SQRT2 - 1.0) * g2_delay


def window_violation_threshold(params: EmitterParams, iface: InterferometerConfig, w_max: float = 200e-9,
                               rescale: bool | None = None) -> tuple[float, float]:
    """Window half-width where the averaged S falls to 2, and the g2 value at that window edge."""
    def f(w):
        return float(analytic_window_curve(params, iface, [w], rescale=rescale).S[0]) - 2.0

    lo = 1e-12
    if f(lo) <= 0:
        return float("nan"), float("nan")
    if f(w_max) > 0:
        return float("nan"), float("nan")
    dt = brentq(f, lo, w_max, xtol=1e-13)
    g2_edge = float(liouvillian_g2(params, np.array([0.0, dt])).values[1])
    return dt, g2_edge
