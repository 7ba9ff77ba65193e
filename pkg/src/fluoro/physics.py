"""Single-emitter physics of a coherently driven two-level atom.

Rates are angular (rad/s) and times are seconds. ``gamma`` is the
*coherence* decay rate, i.e. half the population decay rate, so the
excited-state lifetime is ``1 / (2 * gamma)``. The drive is described in its
own rotating frame: coherently scattered light is stationary and the optical
carrier never appears.

The two-level density matrix uses the basis ordering ``(|g>, |e>)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import expm, null_space
from scipy.optimize import brentq

#: Excited-state lifetime of the 85Rb D2 line used as the reference emitter.
DEFAULT_LIFETIME = 26.5e-9
DEFAULT_GAMMA = 1.0 / (2.0 * DEFAULT_LIFETIME)
DEFAULT_DETUNING = 2.0 * math.pi * 2.56e6
#: Saturation parameters of the weak and strong drive settings.
WEAK_S0 = 0.10
STRONG_S0 = 2.75

SQRT2 = math.sqrt(2.0)
TSIRELSON = 2.0 * SQRT2

SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |g><e|
SIGMA_PLUS = SIGMA_MINUS.conj().T
PROJ_E = SIGMA_PLUS @ SIGMA_MINUS


@dataclass(frozen=True)
class EmitterParams:
    """Driven two-level atom: coherence decay ``gamma``, detuning ``delta``, Rabi frequency ``rabi``."""

    gamma: float
    delta: float = 0.0
    rabi: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not (self.rabi >= 0 and math.isfinite(self.rabi)):
            raise ValueError(f"rabi must be non-negative, got {self.rabi}")
        if not math.isfinite(self.delta):
            raise ValueError("delta must be finite")

    @classmethod
    def from_s0(cls, s0: float, gamma: float = DEFAULT_GAMMA, delta: float = 0.0) -> "EmitterParams":
        """Build parameters from the on-resonance saturation ``s0 = rabi**2 / (2 gamma**2)``."""
        if s0 < 0:
            raise ValueError("s0 must be non-negative")
        return cls(gamma=gamma, delta=delta, rabi=gamma * math.sqrt(2.0 * s0))

    @property
    def s0(self) -> float:
        return self.rabi**2 / (2.0 * self.gamma**2)

    @property
    def s(self) -> float:
        return saturation(self)

    @property
    def lifetime(self) -> float:
        return 1.0 / (2.0 * self.gamma)

    def with_delta(self, delta: float) -> "EmitterParams":
        return EmitterParams(self.gamma, delta, self.rabi)


def reference_emitter(s0: float = WEAK_S0) -> EmitterParams:
    """The trapped-atom parameters (26.5 ns lifetime, 2.56 MHz detuning) at saturation ``s0``."""
    return EmitterParams.from_s0(s0, DEFAULT_GAMMA, DEFAULT_DETUNING)


@dataclass(frozen=True)
class AtomState:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (2, 2):
            raise ValueError("atom state must be 2x2")
        object.__setattr__(self, "rho", rho)

    @property
    def excited(self) -> float:
        return float(self.rho[1, 1].real)

    @property
    def coherence(self) -> complex:
        """<sigma^->, i.e. rho_eg."""
        return complex(self.rho[1, 0])

    def check(self, tol: float = 1e-10) -> None:
        if np.max(np.abs(self.rho - self.rho.conj().T)) > tol:
            raise ValueError("atom state is not Hermitian")
        if abs(np.trace(self.rho) - 1.0) > tol:
            raise ValueError("atom state trace is not 1")
        if np.linalg.eigvalsh(self.rho)[0] < -tol:
            raise ValueError("atom state is not positive")


@dataclass(frozen=True)
class CorrelationCurve:
    tau: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        values = np.asarray(self.values)
        if tau.ndim != 1 or values.shape != tau.shape:
            raise ValueError("tau and values must be 1-D arrays of equal length")
        if tau.size > 1 and np.any(np.diff(tau) <= 0):
            raise ValueError("tau grid must be strictly increasing")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "values", values)

    def to_csv(self, path: str | Path) -> None:
        """Two columns ``tau_s,value``; complex curves are written as their modulus."""
        values = self.values
        if np.iscomplexobj(values):
            values = np.abs(values)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau_s", "value"])
            for t, v in zip(self.tau, values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "CorrelationCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([float(r["tau_s"]) for r in rows]), np.array([float(r["value"]) for r in rows]))


@dataclass(frozen=True)
class PairRateReport:
    rabi_opt: float
    s0_opt: float
    np_max: float
    window: float


# -- closed forms -----------------------------------------------------------


def saturation(params: EmitterParams) -> float:
    """Detuned saturation parameter ``rabi**2 / (2 gamma**2 + 2 delta**2)``."""
    return params.rabi**2 / (2.0 * params.gamma**2 + 2.0 * params.delta**2)


def scattering_rates(params: EmitterParams) -> dict[str, float]:
    """Coherent, incoherent and total photon scattering rates (photons/s)."""
    s = saturation(params)
    g = params.gamma
    n_coh = g * s / (s + 1.0) ** 2
    n_inc = g * s**2 / (s + 1.0) ** 2
    return {"n_coh": n_coh, "n_inc": n_inc, "n_total": g * s / (s + 1.0)}


def excited_population(params: EmitterParams) -> float:
    s = saturation(params)
    return s / (2.0 * (1.0 + s))


def two_photon_wavefunction(params: EmitterParams, tau):
    """Weak-drive two-photon amplitude ``1 - exp(-(gamma - i delta)|tau|)``."""
    t = np.abs(np.asarray(tau, dtype=float))
    return 1.0 - np.exp(-(params.gamma - 1j * params.delta) * t)


def g2_weak(params: EmitterParams, tau):
    return np.abs(two_photon_wavefunction(params, tau)) ** 2


def _cos_sin_branch(q, t):
    """Return ``cos(sqrt(q) t)`` and ``sin(sqrt(q) t) / sqrt(q)`` for real ``q`` of any sign."""
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    c = np.empty(np.broadcast(q, t).shape)
    sn = np.empty_like(c)
    q, t = np.broadcast_arrays(q, t)
    osc = q > 0
    w = np.sqrt(np.abs(q))
    c[osc] = np.cos(w[osc] * t[osc])
    sn[osc] = np.sin(w[osc] * t[osc]) / w[osc]
    hyp = ~osc
    with np.errstate(invalid="ignore", divide="ignore"):
        c[hyp] = np.cosh(w[hyp] * t[hyp])
        sn[hyp] = np.sinh(w[hyp] * t[hyp]) / w[hyp]
    return c, sn


def g2_resonant_strong(gamma: float, rabi: float, tau):
    """Resonant g2 of a two-level atom at any drive strength.

    ``1 - exp(-3 gamma t / 2) (cos(W t) + 3 gamma / (2 W) sin(W t))`` with
    ``W**2 = rabi**2 - gamma**2 / 4``. Below ``rabi = gamma / 2`` the same
    expression is continued to cosh/sinh, and within ``|W**2| < 1e-6 gamma**2``
    a series in ``W**2`` replaces the 0/0 form.
    """
    t = np.abs(np.asarray(tau, dtype=float))
    q = rabi**2 - gamma**2 / 4.0
    if abs(q) < 1e-6 * gamma**2:
        qt2 = q * t**2
        c = 1.0 - qt2 / 2.0 + qt2**2 / 24.0 - qt2**3 / 720.0
        sn = t * (1.0 - qt2 / 6.0 + qt2**2 / 120.0 - qt2**3 / 5040.0)
    else:
        c, sn = _cos_sin_branch(q, t)
    return 1.0 - np.exp(-1.5 * gamma * t) * (c + 1.5 * gamma * sn)


# -- Bloch equations ----------------------------------------------------------


def _spre(a):
    return np.kron(a, np.eye(2))


def _spost(b):
    return np.kron(np.eye(2), b.T)


def liouvillian(params: EmitterParams) -> np.ndarray:
    """4x4 generator acting on the row-major vectorised density matrix."""
    h = -params.delta * PROJ_E + 0.5 * params.rabi * (SIGMA_PLUS + SIGMA_MINUS)
    c = math.sqrt(2.0 * params.gamma) * SIGMA_MINUS
    cdc = c.conj().T @ c
    return (
        -1j * (_spre(h) - _spost(h))
        + np.kron(c, c.conj())
        - 0.5 * _spre(cdc)
        - 0.5 * _spost(cdc)
    )


def steady_state(params: EmitterParams) -> AtomState:
    lv = liouvillian(params)
    ns = null_space(lv)
    rho = ns[:, 0].reshape(2, 2)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    return AtomState(rho)


def propagators(params: EmitterParams, tau) -> np.ndarray:
    """Stack of exact propagators ``exp(L tau)``, shape ``(len(tau), 4, 4)``."""
    t = np.atleast_1d(np.asarray(tau, dtype=float))
    lv = liouvillian(params)
    return expm(lv[None, :, :] * t[:, None, None])


def propagate(params: EmitterParams, state: AtomState, t: float) -> AtomState:
    vec = propagators(params, [t])[0] @ state.rho.reshape(-1)
    return AtomState(vec.reshape(2, 2))


def _check_grid(tau_grid) -> np.ndarray:
    t = np.asarray(tau_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("tau grid must be a non-empty 1-D sequence")
    if np.any(np.diff(t) <= 0):
        raise ValueError("tau grid must be strictly increasing")
    return t


def liouvillian_g2(params: EmitterParams, tau_grid) -> CorrelationCurve:
    """Normalised g2 by the quantum regression theorem.

    The atom is conditioned on an emission (``sigma^- rho_ss sigma^+``) and its
    excited population is propagated exactly. Negative delays use ``|tau|``.
    """
    t = _check_grid(tau_grid)
    ss = steady_state(params).rho
    pe = ss[1, 1].real
    if pe <= 0:
        return CorrelationCurve(t, np.ones_like(t))
    cond = (SIGMA_MINUS @ ss @ SIGMA_PLUS).reshape(-1) / pe
    out = propagators(params, np.abs(t)) @ cond
    return CorrelationCurve(t, out[:, 3].real / pe)


def liouvillian_g1(params: EmitterParams, tau_grid) -> CorrelationCurve:
    """``<sigma^+(t + tau) sigma^-(t)>`` in steady state (complex, unnormalised).

    ``g1(0)`` equals the excited population ``s / (2 (1 + s))``.
    """
    t = _check_grid(tau_grid)
    ss = steady_state(params).rho
    x = (SIGMA_MINUS @ ss).reshape(-1)
    out = propagators(params, np.abs(t)) @ x
    # Tr(sigma^+ y) = y[g, e]
    vals = out[:, 1]
    vals = np.where(t < 0, vals.conj(), vals)
    return CorrelationCurve(t, vals)


def first_order_coherence(params: EmitterParams, delta_t: float) -> complex:
    """Normalised field coherence ``g1(delta_t) / g1(0)``."""
    if params.rabi == 0:
        return 1.0 + 0j
    g1 = liouvillian_g1(params, [0.0, delta_t]).values
    return complex(g1[1] / g1[0].real)


def interferometer_rates(params: EmitterParams, delta_t: float, phi):
    """Output-port rates ``(n1, n2)`` of an unbalanced interferometer with delay ``delta_t``.

    Each port sees half of each arm, so ``n1 + n2`` equals the input rate.
    """
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    g1 = liouvillian_g1(params, [0.0, delta_t]).values
    pe, g = g1[0].real, g1[1]
    phi = np.asarray(phi, dtype=float)
    cross = np.real(np.exp(-1j * phi) * g)
    rate = 2.0 * params.gamma
    return rate * 0.5 * (pe + cross), rate * 0.5 * (pe - cross)


def visibility(params: EmitterParams, delta_t: float) -> float:
    """Single-photon fringe visibility ``(max - min) / (max + min)`` of port 1 over the phase."""
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    if params.rabi == 0:
        return 1.0
    g1 = liouvillian_g1(params, [0.0, delta_t]).values
    # n1(phi) = pe + Re(exp(-i phi) g): extremes are pe +- |g|
    return float(abs(g1[1]) / g1[0].real)


def single_expectation(params: EmitterParams, delta_t: float, phi, locked: bool = True):
    """``<sigma_phi>`` of one interferometer.

    With ``locked`` the phase origin sits on the bright fringe of the coherent
    light, so the result is ``V cos(phi)``; otherwise ``V cos(phi - arg g1)``.
    """
    c = first_order_coherence(params, delta_t)
    offset = 0.0 if locked else np.angle(c)
    return abs(c) * np.cos(np.asarray(phi, dtype=float) - offset)


def separable_expectation(params: EmitterParams, delta_t: float, phi_a, phi_b, locked: bool = True):
    """Joint expectation of independent photons: ``<sigma_A><sigma_B>``."""
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    return single_expectation(params, delta_t, phi_a, locked) * single_expectation(params, delta_t, phi_b, locked)


def separable_chsh(params: EmitterParams, delta_t: float, settings=(0.0, math.pi / 2, math.pi / 4, 3 * math.pi / 4)) -> float:
    """CHSH value reached by uncorrelated photons (large coincidence windows)."""
    a, a2, b, b2 = settings
    e = lambda x, y: float(separable_expectation(params, delta_t, x, y))
    return abs(e(a, b) + e(a2, b) - e(a, b2) + e(a2, b2))


# -- antibunching and pair rate -------------------------------------------------


def antibunching_window(gamma: float, rabi: float) -> float:
    return 0.25 / math.sqrt(rabi**2 / 2.0 + gamma**2)


def pair_rate(gamma: float, rabi):
    """Rate of entangled pairs when the coincidence window tracks the antibunching width.

    Normalised so the maximum, reached at ``rabi = 2 sqrt(2) gamma``, equals
    ``gamma / (25 sqrt(5))``.
    """
    rabi = np.asarray(rabi, dtype=float)
    return gamma**2 * rabi**4 / (64.0 * (gamma**2 + rabi**2 / 2.0) ** 2.5)


def _log_pair_rate_slope(gamma: float, rabi: float) -> float:
    return 4.0 / rabi - 2.5 * rabi / (gamma**2 + rabi**2 / 2.0)


def pair_rate_optimum(gamma: float, rabi_max: float | None = None) -> PairRateReport:
    """Locate the pair-rate maximum over ``rabi`` in ``(0, rabi_max]`` (default ``10 gamma``)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    hi = 10.0 * gamma if rabi_max is None else rabi_max
    lo = 1e-3 * gamma
    if _log_pair_rate_slope(gamma, hi) > 0:
        rabi = hi
    else:
        rabi = brentq(lambda x: _log_pair_rate_slope(gamma, x), lo, hi, xtol=1e-14 * gamma, rtol=1e-15)
    return PairRateReport(
        rabi_opt=rabi,
        s0_opt=rabi**2 / (2.0 * gamma**2),
        np_max=float(pair_rate(gamma, rabi)),
        window=antibunching_window(gamma, rabi),
    )


# -- Bell-test closed forms -------------------------------------------------------


def smax_from_g2(g2_small, g2_delay):
    """Maximal CHSH value ``2 sqrt(2) g2(dt) / (g2(delta) + g2(dt))``."""
    g2_small = np.asarray(g2_small, dtype=float)
    g2_delay = np.asarray(g2_delay, dtype=float)
    if np.any(g2_small < 0) or np.any(g2_delay < 0):
        raise ValueError("g2 values must be non-negative")
    total = g2_small + g2_delay
    if np.any(total == 0):
        raise ValueError("g2_small and g2_delay cannot both vanish")
    out = TSIRELSON * g2_delay / total
    return float(out) if out.ndim == 0 else out


def joint_expectation_analytic(phi_a, phi_b, g2_small, g2_delay):
    g2_small = np.asarray(g2_small, dtype=float)
    g2_delay = np.asarray(g2_delay, dtype=float)
    total = g2_small + g2_delay
    if np.any(total == 0):
        raise ValueError("g2_small and g2_delay cannot both vanish")
    out = (g2_delay * np.cos(np.subtract(phi_a, phi_b)) + g2_small * np.cos(np.add(phi_a, phi_b))) / total
    return float(out) if np.ndim(out) == 0 else out


def g2_function(params: EmitterParams, model: str = "exact", t_max: float | None = None,
                points: int = 4001) -> Callable:
    """Return a vectorised ``g2(tau)`` callable.

    ``model="weak"`` gives the closed weak-drive form; ``"exact"`` tabulates the
    Bloch-equation curve on ``[0, t_max]`` and interpolates it (``g2 = 1`` beyond).
    """
    if model == "weak":
        return lambda tau: g2_weak(params, tau)
    if model != "exact":
        raise ValueError(f"unknown g2 model {model!r}")
    if t_max is None:
        t_max = 40.0 / params.gamma
    grid = np.linspace(0.0, t_max, points)
    vals = liouvillian_g2(params, grid).values

    def g2(tau):
        t = np.abs(np.asarray(tau, dtype=float))
        return np.interp(t, grid, vals, right=vals[-1])

    return g2
