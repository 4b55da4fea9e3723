"""Matplotlib renderers for the CLI report path (PNG files next to the CSVs)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_DPI = 150


def spectrum_figure(curves, path) -> None:
    """Overlay optical-depth curves; ``curves`` is [(label, detuning_MHz, od), ...]."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, det, od in curves:
        ax.plot(det, od, label=label, lw=1.2)
    ax.set_xlabel("detuning from reference transition (MHz)")
    ax.set_ylabel("optical depth")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def decay_figure(times_ns, overlap_sq, dephasing_ns, lifetime_ns, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times_ns, overlap_sq, lw=1.4)
    ax.axhline(1.0 / math.e, color="grey", ls=":", lw=0.8)
    if math.isfinite(dephasing_ns):
        ax.axvline(dephasing_ns, color="C1", ls="--", lw=1.0,
                   label=f"dephasing {dephasing_ns:.1f} ns")
    if math.isfinite(lifetime_ns):
        ax.axvline(lifetime_ns, color="C2", ls="--", lw=1.0,
                   label=f"lifetime {lifetime_ns:.1f} ns")
    ax.set_xlabel("storage time (ns)")
    ax.set_ylabel("|overlap|$^2$")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def predict_figure(rows, path) -> None:
    """Grouped no-VSP / VSP lifetime bars, one group per ladder."""
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [f"{r['species']}\n{r['ladder']}" for r in rows]
    x = range(len(rows))
    no = [r["no_vsp_ns"] for r in rows]
    ws = [r["vsp_ns"] for r in rows]
    ax.bar([i - 0.18 for i in x], no, width=0.36, label="no VSP")
    ax.bar([i + 0.18 for i in x], ws, width=0.36, label="VSP")
    for i, r in enumerate(rows):
        ax.annotate(f"x{r['beta']:.1f}", (i + 0.18, r["vsp_ns"]),
                    ha="center", va="bottom", fontsize=9)
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, fontsize=9)
    ax.set_ylabel("1/e memory lifetime (ns)")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def sweep_figure(rows, path) -> None:
    """Dephasing time (top) and peak OD (bottom) versus pump-back time."""
    powers = sorted({r["power_W"] for r in rows})
    has_tau = any("dephasing_time_s" in r for r in rows)
    nrows = 2 if has_tau else 1
    fig, axes = plt.subplots(nrows, 1, figsize=(6, 3 * nrows), sharex=True)
    axes = axes if nrows == 2 else [axes]
    for p in powers:
        sel = sorted((r for r in rows if r["power_W"] == p),
                     key=lambda r: r["duration_s"])
        t_us = [r["duration_s"] * 1e6 for r in sel]
        label = f"{p * 1e3:g} mW"
        if has_tau:
            axes[0].plot(t_us, [r["dephasing_time_s"] * 1e9 for r in sel],
                         "o-", label=label)
        axes[-1].plot(t_us, [r["peak_od"] for r in sel], "s-", label=label)
    if has_tau:
        axes[0].set_ylabel("dephasing time (ns)")
        axes[0].legend(frameon=False)
    axes[-1].set_ylabel("peak OD")
    axes[-1].set_xlabel("pump-back time (us)")
    axes[-1].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def fit_figure(det_mhz, measured, modelled, path) -> None:
    fig, axes = plt.subplots(2, 1, figsize=(6, 5), sharex=True,
                             height_ratios=[3, 1])
    axes[0].plot(det_mhz, measured, ".", ms=3, label="measured")
    axes[0].plot(det_mhz, modelled, lw=1.2, label="fit")
    axes[0].set_ylabel("optical depth")
    axes[0].legend(frameon=False)
    axes[1].plot(det_mhz, measured - modelled, lw=0.8)
    axes[1].axhline(0, color="grey", lw=0.6)
    axes[1].set_ylabel("residual")
    axes[1].set_xlabel("detuning (MHz)")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def relaxation_figure(times, values, fit_values, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, values, ".", ms=3, label="measured")
    ax.plot(times, fit_values, lw=1.2, label="fit")
    ax.set_xscale("log")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("transmission")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
