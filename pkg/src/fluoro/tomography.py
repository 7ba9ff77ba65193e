"""Maximum-likelihood reconstruction of the two-photon time-bin state.

Basis order is ``|s,s>, |s,l>, |l,s>, |l,l>`` with the A photon first;
``sigma_z |s> = +|s>``. Each measurement setting ``sigma_i (x) sigma_j`` is a
two-outcome POVM ``P+- = (I +- sigma_i (x) sigma_j)/2``.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize

from . import rng as _rng
from .physics import DEFAULT_DETUNING, DEFAULT_GAMMA, CorrelationCurve, EmitterParams, g2_weak

SCHEMA_VERSION = 1
BASIS_ORDER = ("ss", "sl", "ls", "ll")
PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
BELL = np.array([0.0, 1.0, 1.0, 0.0], dtype=complex) / math.sqrt(2.0)
PROB_FLOOR = 1e-12
PSEUDO_N = 1e4
_TRIL = np.tril_indices(4, -1)
_DIAG = np.diag_indices(4)


def pauli_pair(i: str, j: str) -> np.ndarray:
    if i not in PAULI or j not in PAULI:
        raise ValueError(f"invalid basis label {i}{j!s}")
    return np.kron(PAULI[i], PAULI[j])


def povm_element(i: str, j: str, sign: int) -> np.ndarray:
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return 0.5 * (np.eye(4) + sign * pauli_pair(i, j))


# -- density matrices ----------------------------------------------------------------


def check_density(rho: np.ndarray, tol: float = 1e-10) -> None:
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        raise ValueError("density matrix must be 4x4")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError("density matrix trace differs from 1")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -tol:
        raise ValueError("density matrix has a negative eigenvalue")


def t_matrix(params) -> np.ndarray:
    """Lower-triangular T from 16 reals: 4 diagonal, then 6 real and 6 imaginary parts below it."""
    t = np.asarray(params, dtype=float)
    if t.shape != (16,):
        raise ValueError("need 16 parameters")
    T = np.zeros((4, 4), dtype=complex)
    T[_DIAG] = t[:4]
    T[_TRIL] = t[4:10] + 1j * t[10:16]
    return T


def params_from_t(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T)
    return np.concatenate([T[_DIAG].real, T[_TRIL].real, T[_TRIL].imag])


def rho_from_t(params) -> np.ndarray:
    """``rho = T^dagger T / Tr(T^dagger T)``; positive semidefinite with unit trace by construction."""
    T = t_matrix(params)
    m = T.conj().T @ T
    tr = np.trace(m).real
    if tr == 0:
        raise ValueError("all-zero parameters do not define a state")
    return m / tr


def params_for_state(rho: np.ndarray, mix: float = 0.0) -> np.ndarray:
    """Triangular parameters reproducing ``(1 - mix) rho + mix I/4``."""
    a = (1.0 - mix) * np.asarray(rho, dtype=complex) + mix * np.eye(4) / 4
    j = np.eye(4)[::-1]
    low = np.linalg.cholesky(j @ a @ j)
    return params_from_t(j @ low.conj().T @ j)


def fidelity(rho: np.ndarray, target: np.ndarray = BELL) -> float:
    """``<psi|rho|psi>``, by default for ``(|s,l> + |l,s>)/sqrt(2)``."""
    return float(np.real(target.conj() @ rho @ target))


def correlation_matrix(rho: np.ndarray) -> np.ndarray:
    return np.array([[np.trace(rho @ pauli_pair(a, b)).real for b in "xyz"] for a in "xyz"])


def horodecki_chsh(rho: np.ndarray) -> float:
    """Maximal CHSH value ``2 sqrt(m1 + m2)`` over the two largest eigenvalues of ``M^T M``."""
    m = correlation_matrix(rho)
    ev = np.sort(np.linalg.eigvalsh(m.T @ m))
    return float(2.0 * math.sqrt(max(ev[-1] + ev[-2], 0.0)))


# -- records and likelihood ----------------------------------------------------------


@dataclass(frozen=True)
class MeasurementRecord:
    basis: str
    expectation: float
    N: float
    pseudo: bool = False

    def __post_init__(self):
        if len(self.basis) != 2 or any(c not in PAULI for c in self.basis):
            raise ValueError(f"invalid basis {self.basis!r}")
        if abs(self.expectation) > 1.0:
            raise ValueError("expectation must lie in [-1, 1]")
        if self.N < 0:
            raise ValueError("N must be non-negative")

    @property
    def n_plus(self) -> float:
        return self.N * (1.0 + self.expectation) / 2.0

    @property
    def n_minus(self) -> float:
        return self.N * (1.0 - self.expectation) / 2.0

    def to_dict(self) -> dict:
        d = {"basis": self.basis, "expectation": self.expectation, "N": self.N}
        if self.pseudo:
            d["pseudo"] = True
        return d


def load_records(path: str | Path | None = None) -> list[MeasurementRecord]:
    """Records from a JSON list of ``{basis, expectation, N}``; the bundled fixture by default."""
    if path is None:
        text = resources.files("fluoro").joinpath("data/timebin_records.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    if isinstance(raw, dict):
        raw = raw["records"]
    return [MeasurementRecord(r["basis"], float(r["expectation"]), float(r["N"]), bool(r.get("pseudo", False)))
            for r in raw]


def _usable(records: Sequence[MeasurementRecord]) -> list[MeasurementRecord]:
    out = []
    for r in records:
        if r.N == 0:
            warnings.warn(f"dropping record {r.basis} with N = 0", stacklevel=3)
            continue
        out.append(r)
    return out


class _Likelihood:
    """Negative log-likelihood and its analytic gradient in the triangular parameters."""

    def __init__(self, records: Sequence[MeasurementRecord]):
        recs = _usable(records)
        if not recs:
            raise ValueError("no usable records")
        self.ops = np.stack([pauli_pair(r.basis[0], r.basis[1]) for r in recs])
        self.E = np.array([r.expectation for r in recs])
        self.N = np.array([r.N for r in recs], dtype=float)

    def expectations(self, rho):
        return np.einsum("kij,ji->k", self.ops, rho).real

    def loglik(self, rho) -> float:
        e = self.expectations(rho)
        pp = np.maximum((1.0 + e) / 2.0, PROB_FLOOR)
        pm = np.maximum((1.0 - e) / 2.0, PROB_FLOOR)
        return float(np.sum(self.N / 2.0 * ((1.0 + self.E) * np.log(pp) + (1.0 - self.E) * np.log(pm))))

    def nll_and_grad(self, params):
        T = t_matrix(params)
        m = T.conj().T @ T
        tr = np.trace(m).real
        rho = m / tr
        e = self.expectations(rho)
        pp_raw, pm_raw = (1.0 + e) / 2.0, (1.0 - e) / 2.0
        pp = np.maximum(pp_raw, PROB_FLOOR)
        pm = np.maximum(pm_raw, PROB_FLOOR)
        ll = np.sum(self.N / 2.0 * ((1.0 + self.E) * np.log(pp) + (1.0 - self.E) * np.log(pm)))
        # dL/de, zero where a probability is clamped
        c = self.N / 2.0 * ((1.0 + self.E) / (2.0 * pp) * (pp_raw > PROB_FLOOR)
                            - (1.0 - self.E) / (2.0 * pm) * (pm_raw > PROB_FLOOR))
        g = np.einsum("k,kij->ij", c, self.ops)
        h = (g - np.trace(g @ rho).real * np.eye(4)) / tr
        k = (h @ T.conj().T).T  # dL = 2 Re sum_ij k_ij dT_ij
        grad = np.concatenate([2.0 * k[_DIAG].real, 2.0 * k[_TRIL].real, -2.0 * k[_TRIL].imag])
        return -float(ll), -grad


def log_likelihood(rho: np.ndarray, records: Sequence[MeasurementRecord]) -> float:
    """``sum (N/2)[(1+E) ln Tr(rho P+) + (1-E) ln Tr(rho P-)]`` with probabilities floored at 1e-12."""
    return _Likelihood(records).loglik(np.asarray(rho))


def nll_gradient(params, records: Sequence[MeasurementRecord]):
    return _Likelihood(records).nll_and_grad(params)


# -- <sigma_z sigma_z> from g2 ---------------------------------------------------------


def sigma_zz_from_g2(g2_curve, delta_t: float, window: float, points: int = 2001) -> float:
    """``-(1 - int g2(tau) / int g2(tau + delta_t))`` over ``tau`` in ``[-window, window]``.

    ``g2_curve`` is a callable or a CorrelationCurve on ``tau >= 0`` (g2 is even).
    """
    if window <= 0 or delta_t <= 0:
        raise ValueError("window and delta_t must be positive")
    if isinstance(g2_curve, CorrelationCurve):
        grid, vals = g2_curve.tau, np.real(g2_curve.values)
        if grid[0] > 0 or grid[-1] < window + delta_t:
            raise ValueError("window exceeds the domain of the g2 curve")
        g2 = lambda t: np.interp(np.abs(t), grid, vals)  # noqa: E731
    else:
        g2 = g2_curve
    tau = np.linspace(-window, window, points)
    inside = trapezoid(g2(tau), tau)
    shifted = trapezoid(g2(tau + delta_t), tau)
    if shifted <= 0:
        raise ValueError("g2 vanishes around the interferometer delay")
    return float(-(1.0 - inside / shifted))


def model_sigma_zz(gamma: float = DEFAULT_GAMMA, delta: float = DEFAULT_DETUNING, window: float = 10e-9,
                   delta_t: float = 46e-9) -> float:
    """``<sigma_z sigma_z>`` from the weak-drive g2 at the given emitter parameters."""
    p = EmitterParams(gamma, delta, 0.0)
    return sigma_zz_from_g2(lambda t: g2_weak(p, t), delta_t, window)


def augment_records(records: Sequence[MeasurementRecord], sigma_zz: float | None, n_zz: float | None = None,
                    pseudo_n: float = PSEUDO_N, zero_zx_zy: bool = True) -> list[MeasurementRecord]:
    """Add the g2-derived zz record and (optionally) zx = zy = 0 pseudo-records.

    The zz record gets the mean N of the measured records unless ``n_zz`` is given.
    """
    out = list(records)
    have = {r.basis for r in out}
    if sigma_zz is not None and "zz" not in have:
        measured = [r.N for r in out if not r.pseudo]
        n = n_zz if n_zz is not None else float(round(np.mean(measured))) if measured else pseudo_n
        out.append(MeasurementRecord("zz", float(sigma_zz), n))
    if zero_zx_zy:
        for b in ("zx", "zy"):
            if b not in have:
                out.append(MeasurementRecord(b, 0.0, pseudo_n, pseudo=True))
    return out


# -- fitting -------------------------------------------------------------------------


@dataclass(frozen=True)
class FitSettings:
    n_starts: int = 8
    seed: int = 0
    max_iter: int = 2000
    gtol: float = 1e-7
    pseudo_mode: str = "likelihood"  # or "posthoc"


@dataclass
class TomographyResult:
    rho: np.ndarray
    fidelity: float
    horodecki_S: float
    sigma_F: float | None = None
    sigma_S: float | None = None
    iterations: int = 0
    nll: float = float("nan")
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not -1e-9 <= self.fidelity <= 1.0 + 1e-9:
            raise ValueError("fidelity outside [0, 1]")
        if not 0.0 <= self.horodecki_S <= 2.0 * math.sqrt(2.0) + 1e-9:
            raise ValueError("Horodecki S outside [0, 2 sqrt 2]")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "basis_order": list(BASIS_ORDER),
            "rho": [[[float(z.real), float(z.imag)] for z in row] for row in self.rho],
            "fidelity": self.fidelity,
            "horodecki_S": self.horodecki_S,
            "sigma_F": self.sigma_F,
            "sigma_S": self.sigma_S,
            "diagnostics": {"iterations": self.iterations, "nll": self.nll, "converged": self.converged,
                            **self.diagnostics},
        }


def start_points(settings: FitSettings, extra: Sequence[np.ndarray] = ()) -> list[np.ndarray]:
    """Identity-seeded, Bell-seeded and caller-supplied starts, topped up with random ones to ``n_starts``."""
    starts = [params_from_t(np.eye(4)), params_for_state(np.outer(BELL, BELL.conj()), mix=0.1)]
    starts.extend(np.asarray(x, dtype=float) for x in extra)
    gen = _rng.substream(settings.seed, _rng.MLE_STARTS)
    while len(starts) < settings.n_starts:
        starts.append(gen.standard_normal(16))
    return starts


def _posthoc_zero(rho: np.ndarray) -> tuple[np.ndarray, bool]:
    """Remove the zx and zy correlation components; clip negative eigenvalues if that breaks positivity."""
    out = rho.copy()
    for b in ("zx", "zy"):
        op = pauli_pair(*b)
        out = out - np.trace(out @ op).real * op / 4.0
    w, v = np.linalg.eigh(out)
    clipped = bool(np.min(w) < 0)
    if clipped:
        w = np.clip(w, 0.0, None)
        out = (v * w) @ v.conj().T
        out /= np.trace(out).real
    return out, clipped


def mle_fit(records: Sequence[MeasurementRecord], init: Sequence[np.ndarray] = (),
            settings: FitSettings | None = None) -> TomographyResult:
    """Multi-start quasi-Newton minimisation of the negative log-likelihood."""
    settings = settings or FitSettings()
    recs = list(records)
    if settings.pseudo_mode == "posthoc":
        recs = [r for r in recs if not r.pseudo]
    elif settings.pseudo_mode != "likelihood":
        raise ValueError(f"unknown pseudo_mode {settings.pseudo_mode!r}")
    lik = _Likelihood(recs)
    if lik.N.size < 4:
        raise ValueError("need at least 4 informative records")
    best = None
    total_iter = 0
    for x0 in start_points(settings, init):
        res = minimize(lik.nll_and_grad, x0, jac=True, method="BFGS",
                       options={"maxiter": settings.max_iter, "gtol": settings.gtol})
        total_iter += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    rho = rho_from_t(best.x)
    diag = {"starts": settings.n_starts, "total_iterations": total_iter, "pseudo_mode": settings.pseudo_mode,
            "message": str(best.message)}
    if settings.pseudo_mode == "posthoc":
        rho, clipped = _posthoc_zero(rho)
        diag["posthoc_clipped"] = clipped
    rho = 0.5 * (rho + rho.conj().T)
    # BFGS reports precision loss once the gradient is at rounding level; treat that as converged
    converged = bool(best.success) or "precision" in str(best.message)
    return TomographyResult(rho, fidelity(rho), horodecki_chsh(rho), iterations=int(best.nit),
                            nll=float(best.fun), converged=converged, diagnostics=diag | {"params": best.x.tolist()})


def resample_records(records: Sequence[MeasurementRecord], gen: np.random.Generator,
                     noise: bool = True) -> list[MeasurementRecord]:
    """Poisson-resample the +/- counts of every non-pseudo record."""
    out = []
    for r in records:
        if r.pseudo or not noise:
            out.append(r)
            continue
        npl, nmi = gen.poisson(r.n_plus), gen.poisson(r.n_minus)
        n = npl + nmi
        out.append(MeasurementRecord(r.basis, (npl - nmi) / n if n else 0.0, float(n)))
    return out


@dataclass(frozen=True)
class BootstrapResult:
    sigma_F: float
    sigma_S: float
    fidelities: np.ndarray
    chsh: np.ndarray
    excluded: int
    retries: int


def bootstrap(records: Sequence[MeasurementRecord], fit_config: FitSettings | None = None, n_samples: int = 100,
              seed: int = 0, noise: bool = True, threads: int = 1, reference: TomographyResult | None = None,
              max_retries: int = 3) -> BootstrapResult:
    """Standard deviations of F and S_F over refits of Poisson-resampled records."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    fit_config = fit_config or FitSettings()
    # the primary fit seeds every refit, which keeps the bootstrap cheap and stable
    boot_settings = FitSettings(n_starts=3, seed=fit_config.seed, max_iter=fit_config.max_iter,
                                gtol=fit_config.gtol, pseudo_mode=fit_config.pseudo_mode)
    init = () if reference is None else (np.asarray(reference.diagnostics["params"]),)

    def one(i: int):
        retries = 0
        for attempt in range(max_retries + 1):
            gen = _rng.substream(seed, _rng.BOOTSTRAP, i, attempt)
            recs = resample_records(records, gen, noise)
            try:
                res = mle_fit(recs, init, boot_settings)
            except ValueError:
                res = None
            if res is not None and res.converged:
                return res.fidelity, res.horodecki_S, retries
            retries += 1
        return None, None, retries

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(n_samples)))
    else:
        out = [one(i) for i in range(n_samples)]
    f = np.array([o[0] for o in out if o[0] is not None])
    s = np.array([o[1] for o in out if o[1] is not None])
    excluded = sum(o[0] is None for o in out)
    retries = sum(o[2] for o in out)
    sf = float(np.std(f, ddof=1)) if f.size > 1 else float("nan")
    ss = float(np.std(s, ddof=1)) if s.size > 1 else float("nan")
    return BootstrapResult(sf, ss, f, s, excluded, retries)


def reconstruct(records: Sequence[MeasurementRecord], sigma_zz: float | None = None, n_zz: float | None = None,
                settings: FitSettings | None = None, n_bootstrap: int = 100, threads: int = 1) -> TomographyResult:
    """Full pipeline: add model records, fit, then bootstrap the uncertainties."""
    settings = settings or FitSettings()
    zz = model_sigma_zz() if sigma_zz is None else sigma_zz
    recs = augment_records(records, zz, n_zz)
    res = mle_fit(recs, settings=settings)
    res.diagnostics["sigma_zz"] = zz
    res.diagnostics["records"] = [r.to_dict() for r in recs]
    if n_bootstrap:
        b = bootstrap(recs, settings, n_bootstrap, settings.seed, threads=threads, reference=res)
        res.sigma_F, res.sigma_S = b.sigma_F, b.sigma_S
        res.diagnostics["bootstrap_excluded"] = b.excluded
        res.diagnostics["bootstrap_retries"] = b.retries
    return res
