"""Beamsplitter plus two unbalanced Mach-Zehnder interferometers.

Each photon takes the short or the long arm with probability 1/2. The
short arm maps onto the outputs as ``(c1 + c2)/sqrt(2)`` and the long arm as
``exp(i phi)(c1 - c2)/sqrt(2)``. Port 1 carries the value +1, port 2 carries -1.

For a photon pair detected with delay ``d = T_b - T_a`` four emission
histories reach the same pair of detection times (both short, B long,
A long, both long). Their amplitudes ``psi`` of the emission-time difference
add coherently, which is what produces the two-photon fringes.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .physics import EmitterParams, first_order_coherence, g2_function, two_photon_wavefunction
from .pairing import greedy_pairs
from .trajectories import MAGIC, PhotonStream, read_binary

CHANNELS = {("A", 1): 0, ("A", 2): 1, ("B", 1): 2, ("B", 2): 3}
CHANNEL_NAMES = {v: f"{s}{p}" for (s, p), v in CHANNELS.items()}
SIGNS = np.array([1.0, -1.0])  # port 1, port 2


@dataclass(frozen=True)
class InterferometerConfig:
    delay_a: float = 46.1e-9
    delay_b: float = 46.7e-9
    phase_a: float = 0.0
    phase_b: float = 0.0
    splitter_ratio: float = 0.5

    def __post_init__(self):
        if self.delay_a <= 0 or self.delay_b <= 0:
            raise ValueError("interferometer delays must be positive")
        if not 0.0 < self.splitter_ratio < 1.0 and self.splitter_ratio not in (0.0, 1.0):
            raise ValueError("splitter_ratio must lie in (0, 1)")
        mismatch = abs(self.delay_a - self.delay_b)
        if mismatch > 0.05 * min(self.delay_a, self.delay_b):
            warnings.warn(f"delay mismatch {mismatch:.3g} s is large compared with the delays", stacklevel=2)

    def with_phases(self, phase_a: float, phase_b: float) -> "InterferometerConfig":
        return InterferometerConfig(self.delay_a, self.delay_b, phase_a, phase_b, self.splitter_ratio)

    @property
    def peak_center(self) -> float:
        """Centre of the Bell coincidence peak as a ``t_a - t_b`` offset.

        It lies midway between the zeros of the short-short and long-long
        paths, which sit at ``t_a - t_b = 0`` and ``delay_a - delay_b``.
        """
        return 0.5 * (self.delay_a - self.delay_b)


@dataclass(frozen=True)
class DetectionEvent:
    time: float
    side: str
    port: int

    def __post_init__(self):
        if self.side not in ("A", "B"):
            raise ValueError("side must be 'A' or 'B'")
        if self.port not in (1, 2):
            raise ValueError("port must be 1 or 2")

    @property
    def value(self) -> int:
        return 1 if self.port == 1 else -1


@dataclass(frozen=True)
class TwoPhotonOutcomeDistribution:
    """``probs[p, q]`` for A-port ``p + 1`` and B-port ``q + 1``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (2, 2) or np.any(p < -1e-15) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("outcome probabilities must be a normalised 2x2 table")
        object.__setattr__(self, "probs", p)

    @property
    def expectation(self) -> float:
        return float(SIGNS @ self.probs @ SIGNS)

    @property
    def marginal_a(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    @property
    def marginal_b(self) -> np.ndarray:
        return self.probs.sum(axis=0)


# -- event tables ----------------------------------------------------------------


@dataclass
class EventTable:
    """Column form of a DetectionEvent sequence (time-sorted)."""

    time: np.ndarray
    side: np.ndarray  # 0 = A, 1 = B
    port: np.ndarray  # 1 or 2
    paired: np.ndarray | None = None

    def __len__(self) -> int:
        return self.time.size

    @property
    def channel(self) -> np.ndarray:
        return 2 * self.side + (self.port - 1)

    def events(self) -> list[DetectionEvent]:
        return [DetectionEvent(float(t), "AB"[s], int(p)) for t, s, p in zip(self.time, self.side, self.port)]

    def times(self, side: str, port: int | None = None) -> np.ndarray:
        m = self.side == (0 if side == "A" else 1)
        if port is not None:
            m &= self.port == port
        return self.time[m]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "side", "port"])
            for t, s, p in zip(self.time, self.side, self.port):
                w.writerow([repr(float(t)), "AB"[s], int(p)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "EventTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            np.array([float(r["time_s"]) for r in rows]),
            np.array([0 if r["side"] == "A" else 1 for r in rows], dtype=np.int64),
            np.array([int(r["port"]) for r in rows], dtype=np.int64),
        )

    def to_binary(self, directory: str | Path, stem: str = "events") -> list[Path]:
        """One FBT1 timestamp file per channel, named ``<stem>_ch<k>.fbt``."""
        paths = []
        for ch in range(4):
            t = np.asarray(self.time[self.channel == ch], dtype="<f8")
            path = Path(directory) / f"{stem}_ch{ch}.fbt"
            with open(path, "wb") as fh:
                fh.write(MAGIC)
                fh.write(np.uint64(t.size).astype("<u8").tobytes())
                fh.write(t.tobytes())
            paths.append(path)
        return paths

    @classmethod
    def from_binary(cls, directory: str | Path, stem: str = "events") -> "EventTable":
        parts = []
        for ch in range(4):
            t = read_binary(Path(directory) / f"{stem}_ch{ch}.fbt")
            parts.append((t, np.full(t.size, ch // 2), np.full(t.size, ch % 2 + 1)))
        t = np.concatenate([p[0] for p in parts])
        order = np.argsort(t, kind="stable")
        return cls(t[order], np.concatenate([p[1] for p in parts])[order], np.concatenate([p[2] for p in parts])[order])


# -- operations ------------------------------------------------------------------


def split_to_alice_bob(stream: PhotonStream, seed: int, ratio: float = 0.5) -> tuple[PhotonStream, PhotonStream]:
    """Route each photon to A with probability ``ratio``, otherwise to B."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    to_a = _rng.substream(seed, _rng.SPLIT).random(len(stream)) < ratio
    return stream.subset(to_a, "A"), stream.subset(~to_a, "B")


def single_photon_port_probabilities(phase, coherence: complex) -> np.ndarray:
    """``(P1, P2) = (1 +- Re[exp(-i phase) c]) / 2``."""
    if abs(coherence) > 1.0 + 1e-9:
        raise ValueError("|coherence| must not exceed 1")
    re = np.real(np.exp(-1j * np.asarray(phase)) * coherence)
    p1 = 0.5 * (1.0 + re)
    return np.stack([p1, 1.0 - p1])


def single_photon_outcome(time: float, side: str, delay: float, phase: float, coherence: complex,
                          gen: np.random.Generator) -> DetectionEvent:
    """Route one photon through one interferometer."""
    p1 = single_photon_port_probabilities(phase, coherence)[0]
    long_arm = gen.random() < 0.5
    port = 1 if gen.random() < p1 else 2
    return DetectionEvent(time + (delay if long_arm else 0.0), side, port)


def path_amplitudes(delta, config: InterferometerConfig, psi: Callable) -> np.ndarray:
    """Amplitudes of the four histories ending at detection delay ``delta``.

    Returns shape ``(..., 4)`` ordered (short-short, B long, A long, long-long),
    each already carrying its interferometer phase.
    """
    d = np.asarray(delta, dtype=float)
    ea, eb = np.exp(1j * config.phase_a), np.exp(1j * config.phase_b)
    return np.stack(
        [
            psi(d) + 0j,
            psi(d - config.delay_b) * eb,
            psi(d + config.delay_a) * ea,
            psi(d + config.delay_a - config.delay_b) * ea * eb,
        ],
        axis=-1,
    )


def _joint_from_amplitudes(amp: np.ndarray) -> np.ndarray:
    x, u, v, y = (amp[..., k] for k in range(4))
    out = np.empty(amp.shape[:-1] + (2, 2))
    for i, ep in enumerate(SIGNS):
        for j, eq in enumerate(SIGNS):
            out[..., i, j] = np.abs(x + eq * u + ep * v + ep * eq * y) ** 2
    total = out.sum(axis=(-2, -1), keepdims=True)
    return out / total


def two_photon_outcome_distribution(tau, delta: float, config: InterferometerConfig, psi: Callable) -> TwoPhotonOutcomeDistribution:
    """Joint port probabilities for a coincidence at detection delay ``delta``.

    ``tau`` (the emission-time difference of the pair) does not enter: the
    four histories compatible with the detection times interfere, and their
    emission-time differences are fixed by ``delta`` and the delays. It is
    accepted so callers can pass the pair they sampled.
    """
    amp = path_amplitudes(delta, config, psi)
    if np.sum(np.abs(amp) ** 2) == 0:
        raise ValueError("all interfering paths have zero amplitude")
    return TwoPhotonOutcomeDistribution(_joint_from_amplitudes(amp))


def effective_coherence(delta, config: InterferometerConfig, psi: Callable) -> tuple[complex, complex]:
    """Single-photon coherences of A and B implied by the pair amplitudes.

    The marginal of the joint distribution on each side has the form
    ``(1 +- Re[exp(-i phi) c])/2`` with these ``c`` values.
    """
    amp = path_amplitudes(delta, config, psi)
    x, u, v, y = amp
    norm = np.sum(np.abs(amp) ** 2)
    # A-marginal: 2 Re(x v* + u y*) / norm, with the phase exp(i phi_a) stripped off
    ca = 2.0 * (np.conj(x) * v + np.conj(u) * y) / norm * np.exp(-1j * config.phase_a)
    cb = 2.0 * (np.conj(x) * u + np.conj(v) * y) / norm * np.exp(-1j * config.phase_b)
    return complex(np.conj(ca)), complex(np.conj(cb))


def default_psi(params: EmitterParams, model: str = "exact") -> Callable:
    """Pair amplitude as a function of emission-time difference.

    ``"weak"`` uses the closed weak-drive amplitude; ``"exact"`` uses the
    square root of the Bloch-equation g2, which drops the phase of the
    amplitude but keeps the Rabi structure at strong drive.
    """
    if model == "weak":
        return lambda t: two_photon_wavefunction(params, t)
    g2 = g2_function(params, "exact")
    return lambda t: np.sqrt(np.maximum(g2(t), 0.0))


def simulate_franson(streams: tuple[PhotonStream, PhotonStream], emitter_params: EmitterParams,
                     config: InterferometerConfig, seed: int, psi: Callable | None = None,
                     coherence: complex | None = None, guard_factor: float = 5.0, gate=None) -> EventTable:
    """Detection events at the four outputs for photon streams already split to A and B.

    Every photon gets a random arm. A and B detections closer than
    ``guard_factor`` times the mean delay are paired greedily (each photon at
    most once) and their ports drawn jointly from the two-photon distribution;
    all other photons use the single-photon port probabilities with the
    coherence ``g1(dt)/g1(0)`` of their own interferometer. ``gate`` maps
    times to drive-window indices so that pairs never straddle two windows.
    """
    sa, sb = streams
    gen = _rng.substream(seed, _rng.FRANSON)
    if psi is None:
        psi = default_psi(emitter_params)
    if coherence is None:
        ca = first_order_coherence(emitter_params, config.delay_a) if emitter_params.rabi > 0 else 1.0
        cb = first_order_coherence(emitter_params, config.delay_b) if emitter_params.rabi > 0 else 1.0
    else:
        ca = cb = coherence

    la = gen.random(len(sa)) < 0.5
    lb = gen.random(len(sb)) < 0.5
    ta = sa.times + la * config.delay_a
    tb = sb.times + lb * config.delay_b
    oa, ob = np.argsort(ta, kind="stable"), np.argsort(tb, kind="stable")
    ta, tb = ta[oa], tb[ob]

    guard = guard_factor * 0.5 * (config.delay_a + config.delay_b)
    ia, ib = greedy_pairs(ta, tb, 0.0, guard, gate)

    port_a = np.zeros(ta.size, dtype=np.int64)
    port_b = np.zeros(tb.size, dtype=np.int64)
    if ia.size:
        joint = _joint_from_amplitudes(path_amplitudes(tb[ib] - ta[ia], config, psi))
        flat = joint.reshape(-1, 4)
        cdf = np.cumsum(flat, axis=1)
        u = gen.random(ia.size)[:, None]
        k = np.minimum((u >= cdf).sum(axis=1), 3)
        port_a[ia] = k // 2 + 1
        port_b[ib] = k % 2 + 1

    single_a = port_a == 0
    single_b = port_b == 0
    p1a = single_photon_port_probabilities(config.phase_a, ca)[0]
    p1b = single_photon_port_probabilities(config.phase_b, cb)[0]
    ua = gen.random(ta.size)
    ub = gen.random(tb.size)
    port_a[single_a] = np.where(ua[single_a] < p1a, 1, 2)
    port_b[single_b] = np.where(ub[single_b] < p1b, 1, 2)

    paired_a = ~single_a
    paired_b = ~single_b
    time = np.concatenate([ta, tb])
    side = np.concatenate([np.zeros(ta.size, np.int64), np.ones(tb.size, np.int64)])
    port = np.concatenate([port_a, port_b])
    paired = np.concatenate([paired_a, paired_b])
    order = np.argsort(time, kind="stable")
    return EventTable(time[order], side[order], port[order], paired[order])


def fringe(events: EventTable, side: str) -> float:
    """Single-photon expectation ``(n1 - n2)/(n1 + n2)`` of one side."""
    n1 = events.times(side, 1).size
    n2 = events.times(side, 2).size
    if n1 + n2 == 0:
        raise ValueError("no detections")
    return (n1 - n2) / (n1 + n2)


def fit_fringe_visibility(phases: Sequence[float], expectations: Sequence[float]) -> float:
    """Amplitude of the best fit ``a cos(phi) + b sin(phi)`` to measured expectations."""
    ph = np.asarray(phases, dtype=float)
    design = np.column_stack([np.cos(ph), np.sin(ph)])
    coef, *_ = np.linalg.lstsq(design, np.asarray(expectations, dtype=float), rcond=None)
    return float(np.hypot(*coef))
