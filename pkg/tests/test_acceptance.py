"""Acceptance gates. Each test prints one ``CRITERION n: PASS/FAIL`` line."""

import math
import time

import numpy as np

from fluoro.analysis import (analytic_window_curve, chi2_per_dof, g2_histogram, simulate_chsh,
                             window_violation_threshold)
from fluoro.franson import (InterferometerConfig, effective_coherence, single_photon_port_probabilities,
                            split_to_alice_bob, two_photon_outcome_distribution)
from fluoro.physics import (EmitterParams, g2_resonant_strong, g2_weak, joint_expectation_analytic, liouvillian_g2,
                            pair_rate_optimum, reference_emitter, scattering_rates, smax_from_g2, visibility)
from fluoro.tomography import (MeasurementRecord, augment_records, check_density, horodecki_chsh, load_records,
                               mle_fit, model_sigma_zz, nll_gradient, reconstruct, rho_from_t)
from fluoro.trajectories import TrajectoryConfig, simulate_detections, simulate_emissions

GAMMA = 1 / (2 * 26.5e-9)
DELTA = 2 * math.pi * 2.56e6
TSIRELSON = 2 * math.sqrt(2)


def test_criterion_1_analytic_oracles(criterion):
    t0 = time.perf_counter()
    tau = np.linspace(0, 10 / GAMMA, 200)
    weak = EmitterParams.from_s0(1e-3, GAMMA, DELTA)
    err_weak = float(np.max(np.abs(liouvillian_g2(weak, tau).values - g2_weak(weak, tau))))
    err_strong = 0.0
    for rabi in (0.5 * GAMMA, 2 * GAMMA, 2 * math.sqrt(2) * GAMMA, 6 * GAMMA):
        p = EmitterParams(GAMMA, 0.0, rabi)
        err_strong = max(err_strong, float(np.max(np.abs(liouvillian_g2(p, tau).values
                                                        - g2_resonant_strong(GAMMA, rabi, tau)))))
    dt = time.perf_counter() - t0
    ok = err_weak < 1e-4 and err_strong < 1e-8 and dt < 1.0
    criterion(1, ok, f"weak max|d|={err_weak:.2e} (<1e-4), strong max|d|={err_strong:.2e} (<1e-8), {dt:.2f}s")
    assert ok


def test_criterion_2_bell_boundary(criterion):
    t0 = time.perf_counter()
    point = float(smax_from_g2(math.sqrt(2) - 1, 1.0))
    iface = InterferometerConfig()
    weak, _ = window_violation_threshold(reference_emitter(0.1), iface)
    strong, _ = window_violation_threshold(reference_emitter(2.75), iface)
    dt = time.perf_counter() - t0
    ok = abs(point - 2) < 1e-12 and abs(weak - 30e-9) <= 4e-9 and abs(strong - 17e-9) <= 4e-9 and dt < 10
    criterion(2, ok, f"S(sqrt2-1,1)={point:.15f}, weak dt_max={weak * 1e9:.2f} ns (30+-4), "
                     f"strong dt_max={strong * 1e9:.2f} ns (17+-4), {dt:.2f}s")
    assert ok


def test_criterion_3_visibility(criterion):
    t0 = time.perf_counter()
    v_low = visibility(reference_emitter(0.10), 46e-9)
    v_high = visibility(reference_emitter(2.75), 46e-9)
    dt = time.perf_counter() - t0
    ok = abs(v_low - 0.976) <= 0.005 and abs(v_high - 0.524) <= 0.005 and dt < 1.0
    criterion(3, ok, f"V(0.10)={v_low:.4f} (0.976+-0.005), V(2.75)={v_high:.4f} (0.524+-0.005), {dt:.2f}s")
    assert ok


def test_criterion_4_pair_rate_optimum(criterion):
    t0 = time.perf_counter()
    rep = pair_rate_optimum(GAMMA)
    e_rabi = abs(rep.rabi_opt / (2 * math.sqrt(2) * GAMMA) - 1)
    e_rate = abs(rep.np_max / (GAMMA / (25 * math.sqrt(5))) - 1)
    dt = time.perf_counter() - t0
    ok = e_rabi < 1e-6 and e_rate < 1e-9 and dt < 1.0
    criterion(4, ok, f"rel err rabi={e_rabi:.1e} (<1e-6), rate={e_rate:.1e} (<1e-9), {dt:.2f}s")
    assert ok


def test_criterion_5_chsh_weak_drive(criterion):
    t0 = time.perf_counter()
    p = reference_emitter(0.1)
    iface = InterferometerConfig()
    res, _ = simulate_chsh(TrajectoryConfig(p, duration=3.5, seed=5), iface, 10e-9)
    model = float(analytic_window_curve(p, iface, [10e-9]).S[0])
    n = res.total_coincidences
    combined = math.hypot(0.19, res.sigma_S)
    dt = time.perf_counter() - t0
    ok = (n >= 2e4 and abs(res.S - model) <= 0.10 and abs(res.S - 2.80) <= 2 * combined
          and res.S - 2 >= 4 * res.sigma_S and dt < 300)
    criterion(5, ok, f"S={res.S:.3f}+-{res.sigma_S:.3f} from {n} coincidences, model {model:.3f} (+-0.10), "
                     f"published 2.80+-0.19, {(res.S - 2) / res.sigma_S:.1f} sigma above 2, {dt:.0f}s")
    assert ok


def test_criterion_6_chsh_strong_drive(criterion):
    t0 = time.perf_counter()
    p = reference_emitter(2.75)
    res, _ = simulate_chsh(TrajectoryConfig(p, duration=0.05, seed=6), InterferometerConfig(), 3e-9)
    combined = math.hypot(0.22, res.sigma_S)
    dt = time.perf_counter() - t0
    ok = abs(res.S - 2.55) <= 2 * combined and res.S - 2 >= 2 * res.sigma_S and dt < 300
    criterion(6, ok, f"S={res.S:.3f}+-{res.sigma_S:.3f} from {res.total_coincidences} coincidences, "
                     f"published 2.55+-0.22, {(res.S - 2) / res.sigma_S:.1f} sigma above 2, {dt:.0f}s")
    assert ok


def test_criterion_7_tomography(criterion):
    t0 = time.perf_counter()
    res = reconstruct(load_records(), model_sigma_zz(), n_bootstrap=100)
    ideal = [MeasurementRecord(b, e, 1e4) for b, e in (("xx", 1.0), ("yy", 1.0), ("xy", 0.0), ("yx", 0.0),
                                                        ("zz", -1.0))]
    f_ideal = mle_fit(ideal).fidelity
    dt = time.perf_counter() - t0
    ok = (0.84 <= res.fidelity <= 0.90 and 2.49 <= res.horodecki_S <= 2.65 and 0.01 <= res.sigma_F <= 0.04
          and f_ideal >= 0.999 and dt < 120)
    criterion(7, ok, f"F={res.fidelity:.3f} [0.84,0.90], S_F={res.horodecki_S:.3f} [2.49,2.65], "
                     f"sigma_F={res.sigma_F:.3f} [0.01,0.04], ideal F={f_ideal:.4f} (>=0.999), {dt:.0f}s")
    assert ok


def test_criterion_8_monte_carlo_gates(criterion):
    t0 = time.perf_counter()
    p = reference_emitter(0.1)
    stream = simulate_emissions(TrajectoryConfig(p, duration=0.2, seed=8))
    rate = len(stream) / stream.duration
    se = math.sqrt(len(stream)) / stream.duration
    expected = scattering_rates(p)["n_total"]
    a, b = split_to_alice_bob(stream, 8)
    h = g2_histogram(a, b, 2e-9, 100e-9, stream.duration)
    grid = np.linspace(0, 100e-9, 2001)
    curve = liouvillian_g2(p, grid).values
    chi2, dof = chi2_per_dof(h, lambda t: np.interp(np.abs(t), grid, curve))
    fine = g2_histogram(a, b, 1e-9, 50e-9, stream.duration)
    g0 = float(fine.g2[fine.zero_bin()])
    dt = time.perf_counter() - t0
    ok = 0.5 <= chi2 <= 2 and dof >= 50 and abs(rate - expected) <= 3 * se and g0 < 0.05 and dt < 120
    criterion(8, ok, f"chi2/dof={chi2:.3f} on {dof} bins, rate {rate:.0f}/s vs {expected:.0f}/s "
                     f"({abs(rate - expected) / se:.1f} SE), g2(0 bin)={g0:.3f}, {dt:.0f}s")
    assert ok


def test_criterion_9_property_suites(criterion, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    density_ok = True
    for _ in range(10000):
        try:
            check_density(rho_from_t(rng.normal(size=16)))
        except ValueError:
            density_ok = False
    tsirelson_ok = True
    for _ in range(2000):
        g0, gd = rng.uniform(0, 2, 2)
        pa, pa2, pb, pb2 = rng.uniform(0, 2 * np.pi, 4)
        e = [joint_expectation_analytic(x, y, g0, gd) for x, y in ((pa, pb), (pa2, pb), (pa, pb2), (pa2, pb2))]
        s = abs(e[0] + e[1] - e[2] + e[3])
        tsirelson_ok &= s <= TSIRELSON + 1e-12
        rho = rho_from_t(rng.normal(size=16))
        tsirelson_ok &= horodecki_chsh(rho) <= TSIRELSON + 1e-12
    worst_sum = worst_marg = 0.0
    for _ in range(1000):
        cfg = InterferometerConfig(46.1e-9, 46.7e-9, *rng.uniform(0, 2 * np.pi, 2))
        c = rng.normal(size=3) + 1j * rng.normal(size=3)

        def psi(t, c=c):
            t = np.abs(np.asarray(t, dtype=float))
            return c[0] + c[1] * np.exp(-t / 26.5e-9) + c[2] * np.exp(-t / 5e-9)

        d = rng.uniform(-20e-9, 20e-9)
        dist = two_photon_outcome_distribution(0.0, d, cfg, psi)
        ca, cb = effective_coherence(d, cfg, psi)
        worst_sum = max(worst_sum, abs(dist.probs.sum() - 1))
        worst_marg = max(worst_marg,
                         float(np.max(np.abs(dist.marginal_a - single_photon_port_probabilities(cfg.phase_a, ca)))),
                         float(np.max(np.abs(dist.marginal_b - single_photon_port_probabilities(cfg.phase_b, cb)))))
    recs = augment_records(load_records(), model_sigma_zz())
    worst_grad = 0.0
    for _ in range(100):
        x = rng.normal(size=16)
        g = nll_gradient(x, recs)[1]
        fd = np.array([(nll_gradient(x + 1e-6 * e, recs)[0] - nll_gradient(x - 1e-6 * e, recs)[0]) / 2e-6
                       for e in np.eye(16)])
        worst_grad = max(worst_grad, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    cfg = TrajectoryConfig(reference_emitter(0.1), duration=0.01, seed=99)
    simulate_detections(cfg).to_binary(tmp_path / "a.fbt")
    simulate_detections(cfg).to_binary(tmp_path / "b.fbt")
    same = (tmp_path / "a.fbt").read_bytes() == (tmp_path / "b.fbt").read_bytes()
    dt = time.perf_counter() - t0
    ok = (density_ok and tsirelson_ok and worst_sum < 1e-12 and worst_marg < 1e-12 and worst_grad < 1e-5
          and same and dt < 120)
    criterion(9, ok, f"density fuzz {'ok' if density_ok else 'bad'}, Tsirelson {'ok' if tsirelson_ok else 'bad'}, "
                     f"prob-sum {worst_sum:.1e}, marginals {worst_marg:.1e}, gradient rel {worst_grad:.1e}, "
                     f"determinism {'identical' if same else 'differs'}, {dt:.0f}s")
    assert ok

