"""Matplotlib rendering for the report path (headless, file output only)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg", force=False)  # no display in batch runs
import matplotlib.pyplot as plt
import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_SAVE_KW = {"dpi": 150, "metadata": {"Software": "homogcur"}}


def _new_axes(width=6.0):
    fig, ax = plt.subplots(figsize=(width, width * GOLDEN))
    ax.grid(True, alpha=0.3)
    return fig, ax


def save_series_plot(path, T_values, ratios, psi_hom, label) -> None:
    """value/T against 1/T with the fitted extrapolation marked."""
    fig, ax = _new_axes()
    x = 1.0 / np.asarray(T_values, dtype=float)
    ax.plot(x, ratios, "o-", label="m(T)/T")
    ax.axhline(psi_hom, color="crimson", ls="--", label=f"extrapolated {psi_hom:.5g}")
    ax.set_xlabel("1/T")
    ax.set_ylabel("value / T")
    ax.set_title(label)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_table_plot(path, entries) -> None:
    """All table entries on one value/T chart."""
    fig, ax = _new_axes(7.0)
    for label, T_values, ratios, psi in entries:
        x = 1.0 / np.asarray(T_values, dtype=float)
        line, = ax.plot(x, ratios, "o-", label=label)
        ax.axhline(psi, color=line.get_color(), ls=":", alpha=0.6)
    ax.set_xlabel("1/T")
    ax.set_ylabel("value / T")
    ax.set_title("cell values and extrapolations")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_recovery_plot(path, eps_list, energies, reference) -> None:
    fig, ax = _new_axes()
    ax.plot(eps_list, energies, "s-", label="F_eps(recovery)")
    ax.axhline(reference, color="crimson", ls="--", label=f"F_hom = {reference:.5g}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("energy")
    ax.set_xscale("log")
    ax.set_title("recovery energies")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_probe_plot(path, rho_list, rows, labels, reference) -> None:
    fig, ax = _new_axes()
    for row, label in zip(rows, labels):
        ax.plot(rho_list, row, "o-", label=label)
    if not math.isnan(reference):
        ax.axhline(reference, color="crimson", ls="--", label="psi_hom reference")
    ax.set_xlabel("rho")
    ax.set_ylabel("nu(Q_rho)/rho")
    ax.set_title("local energy density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
