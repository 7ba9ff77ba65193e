"""Quantum-jump generation of photon timestamp streams.

After every emission the atom restarts in the ground state, so the
inter-emission waiting times are independent draws from the no-jump survival
function of the non-Hermitian evolution. Each draw is found by bisection on
that survival curve to 1 ps.
"""

from __future__ import annotations

import csv
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as _rng
from .physics import EmitterParams, scattering_rates

TIME_TOL = 1e-12
MAGIC = b"FBT1"


@dataclass(frozen=True)
class Bunching:
    """Slow intensity modulation giving a g2 baseline ``1 + amplitude * exp(-|tau| / timescale)``."""

    amplitude: float
    timescale: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("bunching amplitude must be >= 0")
        if self.timescale <= 0:
            raise ValueError("bunching timescale must be > 0")


@dataclass(frozen=True)
class DutyCycle:
    """Alternating drive windows of length ``drive`` separated by ``dead`` time."""

    drive: float
    dead: float

    def __post_init__(self):
        if self.drive <= 0 or self.dead < 0:
            raise ValueError("duty cycle needs drive > 0 and dead >= 0")

    @property
    def period(self) -> float:
        return self.drive + self.dead

    def window_index(self, times):
        return np.floor(np.asarray(times) / self.period).astype(np.int64)

    def windows(self, duration: float):
        n = int(math.ceil(duration / self.period))
        for k in range(n):
            start = k * self.period
            stop = min(start + self.drive, duration)
            if stop > start:
                yield start, stop


@dataclass(frozen=True)
class TrajectoryConfig:
    emitter: EmitterParams
    duration: float
    seed: int = 0
    efficiency: float = 1.0
    detuning_jitter_sigma: float = 0.0
    bunching: Bunching | None = None
    duty_cycle: DutyCycle | None = None
    run_count: int = 1
    background_rate: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.detuning_jitter_sigma < 0:
            raise ValueError("detuning jitter must be >= 0")
        if self.run_count < 1:
            raise ValueError("run_count must be >= 1")
        if self.background_rate < 0:
            raise ValueError("background rate must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class PhotonStream:
    times: np.ndarray
    label: str = ""
    duration: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        if t.ndim != 1:
            raise ValueError("times must be 1-D")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("photon times must be strictly increasing")
        if t.size and t[0] < 0:
            raise ValueError("photon times must be non-negative")
        if self.duration is not None and t.size and t[-1] > self.duration:
            raise ValueError("photon times exceed the stream duration")
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return self.times.size

    @property
    def rate(self) -> float:
        if not self.duration:
            raise ValueError("stream has no duration")
        return len(self) / self.duration

    def subset(self, mask, label: str | None = None) -> "PhotonStream":
        return PhotonStream(self.times[mask], self.label if label is None else label, self.duration, dict(self.meta))

    # -- serialisation -------------------------------------------------

    def to_csv(self, path: str | Path, channel: int | str | None = None) -> None:
        ch = self.label if channel is None else channel
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "channel"])
            for t in self.times:
                w.writerow([repr(float(t)), ch])

    @classmethod
    def from_csv(cls, path: str | Path, label: str = "", duration: float | None = None) -> "PhotonStream":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and not label:
            label = rows[0]["channel"]
        return cls(np.array([float(r["time_s"]) for r in rows]), label, duration)

    def to_binary(self, path: str | Path) -> None:
        write_binary(path, self.times)

    @classmethod
    def from_binary(cls, path: str | Path, label: str = "", duration: float | None = None) -> "PhotonStream":
        return cls(read_binary(path), label, duration)


def write_binary(path: str | Path, times) -> None:
    """Little-endian ``FBT1`` file: magic, u64 count, f64 timestamps."""
    t = np.asarray(times, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", t.size))
        fh.write(t.tobytes())


def read_binary(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) != 12 or head[:4] != MAGIC:
            raise ValueError(f"{path}: not an FBT1 timestamp file")
        (n,) = struct.unpack("<Q", head[4:])
        data = fh.read()
    if len(data) != 8 * n:
        raise ValueError(f"{path}: expected {n} timestamps, found {len(data) // 8}")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


# -- no-jump evolution ------------------------------------------------------------


class WaitingTimeSampler:
    """Inverse-survival sampler of the time from a ground-state reset to the next emission."""

    def __init__(self, params: EmitterParams, grid_points: int = 20000):
        if params.rabi <= 0:
            raise ValueError("waiting times are unbounded without drive")
        self.params = params
        # -i H_eff with H_eff = H - i gamma |e><e|, basis (g, e)
        a = np.array(
            [[0.0, -0.5j * params.rabi], [-0.5j * params.rabi, 1j * params.delta - params.gamma]],
            dtype=complex,
        )
        self._a = a
        self._m = 0.5 * np.trace(a)
        self._q = np.sqrt(self._m**2 - np.linalg.det(a))
        rate = scattering_rates(params)["n_total"]
        # survival decays at least as fast as the emission rate; 45 e-folds covers u >= 2**-53
        self.t_max = 45.0 / rate + 20.0 / params.gamma
        self._grid = np.linspace(0.0, self.t_max, grid_points)
        self._surv = self.survival(self._grid)
        while self._surv[-1] > 1e-17:
            self.t_max *= 2.0
            self._grid = np.linspace(0.0, self.t_max, grid_points)
            self._surv = self.survival(self._grid)

    def amplitudes(self, t):
        """No-jump amplitudes ``(c_g, c_e)`` at times ``t`` starting from ``|g>``."""
        t = np.asarray(t, dtype=float)
        m, q, a = self._m, self._q, self._a
        qt = q * t
        ch = np.cosh(qt)
        if abs(q) * max(float(np.max(t, initial=0.0)), 1e-30) < 1e-6:
            sh = t * (1.0 + qt**2 / 6.0)
        else:
            sh = np.sinh(qt) / q
        em = np.exp(m * t)
        cg = em * (ch + sh * (a[0, 0] - m))
        ce = em * (sh * a[1, 0])
        return cg, ce

    def survival(self, t):
        cg, ce = self.amplitudes(t)
        return np.abs(cg) ** 2 + np.abs(ce) ** 2

    def density(self, t):
        """Waiting-time density ``2 gamma |c_e(t)|**2``."""
        _, ce = self.amplitudes(t)
        return 2.0 * self.params.gamma * np.abs(ce) ** 2

    def invert(self, u) -> np.ndarray:
        """Times at which the survival probability first drops to ``u``."""
        u = np.asarray(u, dtype=float)
        # survival is non-increasing; locate the bracketing grid cell
        idx = np.searchsorted(-self._surv, -u, side="left")
        idx = np.clip(idx, 1, self._grid.size - 1)
        lo = self._grid[idx - 1].copy()
        hi = self._grid[idx].copy()
        while np.any(hi - lo > TIME_TOL):
            mid = 0.5 * (lo + hi)
            above = self.survival(mid) > u
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return 0.5 * (lo + hi)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        u = 1.0 - gen.random(n)  # (0, 1]
        return self.invert(u)


def _renewal(sampler: WaitingTimeSampler, gen: np.random.Generator, start: float, stop: float) -> np.ndarray:
    """Emission times in ``[start, stop)`` for an atom reset to the ground state at ``start``."""
    rate = scattering_rates(sampler.params)["n_total"]
    chunks = []
    t = start
    while True:
        n = int(1.1 * rate * (stop - t)) + 16
        waits = sampler.sample(gen, n)
        times = t + np.cumsum(waits)
        inside = times < stop
        chunks.append(times[inside])
        if not inside.all():
            break
        t = times[-1]
    return np.concatenate(chunks) if chunks else np.empty(0)


def apply_detuning_jitter(config: TrajectoryConfig, run_count: int, seed: int) -> list[EmitterParams]:
    """Per-run emitter parameters with detuning drawn from ``N(delta, sigma)``."""
    if run_count < 1:
        raise ValueError("run_count must be >= 1")
    base = config.emitter
    sigma = config.detuning_jitter_sigma
    if sigma == 0:
        return [base] * run_count
    draws = _rng.substream(seed, _rng.JITTER).standard_normal(run_count)
    return [base.with_delta(base.delta + sigma * d) for d in draws]


def _run_emissions(params: EmitterParams, config: TrajectoryConfig, run: int, start: float, stop: float) -> np.ndarray:
    if params.rabi == 0:
        return np.empty(0)
    gen = _rng.substream(config.seed, _rng.EMISSION, run)
    sampler = WaitingTimeSampler(params)
    if config.duty_cycle is None:
        return _renewal(sampler, gen, start, stop)
    out = []
    for w0, w1 in config.duty_cycle.windows(stop - start):
        out.append(_renewal(sampler, gen, start + w0, start + w1))
    return np.concatenate(out) if out else np.empty(0)


def simulate_emissions(config: TrajectoryConfig, threads: int = 1) -> PhotonStream:
    """Emission timestamps of the driven atom (no collection losses).

    The duration is divided into ``config.run_count`` consecutive runs, each
    with its own detuning (when jitter is on) and its own random substream.
    """
    n = config.run_count
    params = apply_detuning_jitter(config, n, config.seed)
    span = config.duration / n
    bounds = [(r * span, config.duration if r == n - 1 else (r + 1) * span) for r in range(n)]
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda r: _run_emissions(params[r], config, r, *bounds[r]), range(n)))
    else:
        parts = [_run_emissions(params[r], config, r, *bounds[r]) for r in range(n)]
    times = np.concatenate(parts) if parts else np.empty(0)
    meta = {"run_detunings": [p.delta for p in params]}
    return PhotonStream(times, "emission", config.duration, meta)


def thin(stream: PhotonStream, efficiency: float, seed: int) -> PhotonStream:
    """Keep each photon independently with probability ``efficiency``."""
    if not 0.0 <= efficiency <= 1.0:
        raise ValueError("efficiency must lie in [0, 1]")
    if efficiency == 1.0:
        return stream
    keep = _rng.substream(seed, _rng.THIN).random(len(stream)) < efficiency
    return stream.subset(keep)


def telegraph_levels(amplitude: float) -> tuple[float, float]:
    """Dim-level depth and bright-state occupancy giving intensity autocorrelation ``amplitude``."""
    if amplitude <= 1.0:
        r = math.sqrt(amplitude)
        return 2.0 * r / (1.0 + r), 0.5
    return 1.0, 1.0 / (1.0 + amplitude)


def apply_bunching_envelope(stream: PhotonStream, amplitude: float, timescale: float, seed: int) -> PhotonStream:
    """Thin with a two-state (bright/dim) Markov intensity.

    The switching rates sum to ``1 / timescale`` and the levels are chosen so
    the normalised intensity autocorrelation is ``1 + amplitude * exp(-|tau| / timescale)``.
    """
    if amplitude < 0 or timescale <= 0:
        raise ValueError("need amplitude >= 0 and timescale > 0")
    if amplitude == 0 or len(stream) == 0:
        return stream
    depth, p_bright = telegraph_levels(amplitude)
    gen = _rng.substream(seed, _rng.BUNCHING)
    t_end = stream.duration if stream.duration else float(stream.times[-1])
    k_out = (1.0 - p_bright) / timescale  # bright -> dim
    k_in = p_bright / timescale  # dim -> bright
    switches = [0.0]
    bright = [bool(gen.random() < p_bright)]
    t = 0.0
    while t < t_end:
        t += gen.exponential(1.0 / (k_out if bright[-1] else k_in))
        switches.append(t)
        bright.append(not bright[-1])
    seg = np.searchsorted(np.asarray(switches), stream.times, side="right") - 1
    level = np.where(np.asarray(bright)[seg], 1.0, 1.0 - depth)
    keep = gen.random(len(stream)) < level
    return stream.subset(keep)


def add_background(stream: PhotonStream, rate: float, seed: int) -> PhotonStream:
    """Merge uniformly distributed (Poissonian) background counts into ``stream``."""
    if rate <= 0:
        return stream
    if not stream.duration:
        raise ValueError("background needs a stream duration")
    gen = _rng.substream(seed, _rng.BACKGROUND)
    n = gen.poisson(rate * stream.duration)
    extra = gen.uniform(0.0, stream.duration, n)
    times = np.unique(np.concatenate([stream.times, extra]))
    return PhotonStream(times, stream.label, stream.duration, dict(stream.meta))


def simulate_detections(config: TrajectoryConfig, threads: int = 1) -> PhotonStream:
    """Emissions followed by the bunching envelope, collection losses and background."""
    stream = simulate_emissions(config, threads)
    if config.bunching is not None:
        stream = apply_bunching_envelope(stream, config.bunching.amplitude, config.bunching.timescale, config.seed)
    stream = thin(stream, config.efficiency, config.seed)
    stream = add_background(stream, config.background_rate, config.seed)
    return replace(stream, label="detection")


def merge_streams(streams: Sequence[PhotonStream]) -> tuple[np.ndarray, np.ndarray]:
    """Time-sorted union of several streams and the index of the source stream of each event."""
    times = np.concatenate([s.times for s in streams])
    src = np.concatenate([np.full(len(s), i) for i, s in enumerate(streams)])
    order = np.argsort(times, kind="stable")
    return times[order], src[order]
