"""Figure rendering for the CLI report path (Agg backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes independent of the run
_PNG_META = {"Software": None}


def _save(fig, path, tight=True):
    if tight:
        fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_g2(path, tau, curves: dict, hist=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, vals in curves.items():
        ax.plot(np.asarray(tau) * 1e9, vals, label=label)
    if hist is not None:
        ax.step(hist.centers * 1e9, hist.g2, where="mid", lw=0.8, label="simulated")
    ax.set_xlabel(r"$\tau$ (ns)")
    ax.set_ylabel(r"$g^{(2)}(\tau)$")
    ax.legend()
    _save(fig, path)


def plot_visibility(path, s0, vis):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(s0, vis)
    ax.set_xlabel(r"$s_0$")
    ax.set_ylabel("visibility")
    ax.set_ylim(0, 1.02)
    _save(fig, path)


def plot_scan(path, windows, s_analytic, s_sim=None, sigma=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.asarray(windows) * 1e9, s_analytic, "--", label="model")
    if s_sim is not None:
        ax.errorbar(np.asarray(windows) * 1e9, s_sim, yerr=sigma, fmt="o", ms=3, label="simulation")
    ax.axhline(2.0, color="k", lw=0.8)
    ax.axhline(2.0 * np.sqrt(2.0), color="grey", lw=0.8, ls=":")
    ax.set_xlabel(r"coincidence window $\delta t$ (ns)")
    ax.set_ylabel("S")
    ax.legend()
    _save(fig, path)


def plot_chsh(path, labels, values, sigmas):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(range(len(values)), values, yerr=sigmas)
    ax.set_xticks(range(len(values)), labels)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_ylabel("joint expectation")
    _save(fig, path)


def plot_density(path, rho, labels):
    fig, axes = plt.subplots(1, 2, figsize=(8, 4), subplot_kw={"projection": "3d"})
    x, y = np.meshgrid(np.arange(4), np.arange(4))
    for ax, part, name, color in zip(axes, (rho.real, rho.imag), ("Re", "Im"), ("tab:red", "tab:blue")):
        ax.bar3d(x.ravel(), y.ravel(), np.zeros(16), 0.6, 0.6, part.T.ravel(), color=color, shade=True)
        ax.set_xticks(np.arange(4) + 0.3, labels)
        ax.set_yticks(np.arange(4) + 0.3, labels)
        ax.set_zlim(-0.1, 0.6)
        ax.set_title(rf"{name} $\rho$")
    fig.subplots_adjust(left=0.02, right=0.98, wspace=0.1)
    _save(fig, path, tight=False)


def plot_pair_rate(path, s0, rate, s0_opt, rate_opt):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(s0, rate)
    ax.plot([s0_opt], [rate_opt], "o")
    ax.set_xlabel(r"$s_0$")
    ax.set_ylabel(r"pair rate (s$^{-1}$)")
    _save(fig, path)
