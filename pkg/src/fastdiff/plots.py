"""SVG figures for runs and continuation reports.

Figures are written with a fixed hash salt and no date metadata, so equal
inputs give byte-identical files unless ``timestamps=True``.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import IoError  # noqa: E402
from .radial import RadialGrid  # noqa: E402


def _save(fig, path, timestamps):
    meta = {} if timestamps else {"Date": None}
    try:
        with matplotlib.rc_context({"svg.hashsalt": "fastdiff"}):
            fig.savefig(path, format="svg", metadata=meta)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
    finally:
        plt.close(fig)
    return path


def _profiles(traj, barriers, path, timestamps):
    grid = traj.grid
    fig, ax = plt.subplots(figsize=(6, 4.5))
    idx = sorted({0, len(traj) // 4, len(traj) // 2, len(traj) - 1})
    for k in idx:
        ax.loglog(grid.centers, traj.values[k], lw=1.2, label=f"u, t={traj.times[k]:.3g}")
    if barriers:
        lower, upper = barriers
        r = grid.centers[grid.centers < lower.delta1]
        if r.size:
            from .model import barrier_lower_value, barrier_upper_value

            lo = barrier_lower_value(lower, r)
            ax.loglog(r[lo > 0], lo[lo > 0], "k--", lw=1, label="lower barrier")
            if upper is not None:
                t = traj.times[-1]
                ax.loglog(r, barrier_upper_value(upper, r, t), "k:", lw=1, label=f"upper barrier, t={t:.3g}")
    ax.set_xlabel("r")
    ax.set_ylabel("u")
    ax.legend(fontsize=7)
    return _save(fig, path, timestamps)


def _mass(traj, path, timestamps):
    fig, ax = plt.subplots(figsize=(6, 4))
    t = np.asarray(traj.times)
    ax.plot(t, traj.masses, lw=1.5, label="mass")
    expected = traj.masses[0] + traj.cumulative_outer + traj.cumulative_inner
    ax.plot(t, expected, "k--", lw=1, label="initial mass + injected")
    ax.set_xlabel("t")
    ax.set_ylabel("mass")
    ax.legend(fontsize=8)
    return _save(fig, path, timestamps)


def _qhat(qhat, q, path, timestamps):
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, series in sorted(qhat.items()):
        if series:
            ts, qs = zip(*[(s[0], s[1]) for s in series])
            ax.plot(ts, qs, marker=".", lw=1, label=f"run {j}")
    if q is not None:
        ax.axhline(q, color="k", lw=0.8)
        ax.axhspan(0.95 * q, 1.05 * q, color="0.9")
    ax.set_xlabel("t")
    ax.set_ylabel("fitted exponent")
    ax.legend(fontsize=7)
    return _save(fig, path, timestamps)


def _ab_margin(traj, m, t_min, path, timestamps):
    ks = [k for k in range(1, len(traj)) if traj.times[k] >= t_min]
    if not ks:
        return None
    excess = []
    for k in ks:
        u = traj.values[k]
        ut = (u - traj.values[k - 1]) / (traj.times[k] - traj.times[k - 1])
        excess.append((ut - u / ((1 - m) * traj.times[k])) / max(1.0, float(np.max(u))))
    excess = np.array(excess)
    fig, ax = plt.subplots(figsize=(6, 4))
    tt = np.array([traj.times[k] for k in ks])
    pc = ax.pcolormesh(tt, traj.grid.centers, excess.T, shading="nearest", cmap="viridis")
    fig.colorbar(pc, ax=ax, label="(u_t - u/((1-m)t)) / scale")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("r")
    return _save(fig, path, timestamps)


def _heatmap(traj, path, timestamps):
    grid = traj.grid
    img = grid.to_image(traj.values[-1])
    ny, nx = grid.shape
    x0, y0 = grid.origin
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(img, origin="lower", extent=(x0, x0 + nx * grid.h, y0, y0 + ny * grid.h), cmap="magma")
    fig.colorbar(im, ax=ax, label=f"u, t={traj.times[-1]:.3g}")
    ax.set_aspect("equal")
    return _save(fig, path, timestamps)


def emit_plots(traj, out_dir, *, barriers=None, qhat=None, q=None, ab_t_min=None, timestamps=False):
    """Write the figures that apply to ``traj`` and return their paths.

    Radial runs get ``profiles.svg`` (log-log, with ``barriers=(lower,
    upper)`` overlaid) and, when ``ab_t_min`` is set, ``ab_margin.svg``;
    planar runs get ``field.svg``.  Every run gets ``mass.svg``;
    ``qhat.svg`` is written when fitted exponents are given.
    """
    if not len(traj):
        raise ValueError("empty trajectory")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from None
    paths = [_mass(traj, out / "mass.svg", timestamps)]
    if isinstance(traj.grid, RadialGrid):
        paths.append(_profiles(traj, barriers, out / "profiles.svg", timestamps))
        if ab_t_min is not None:
            p = _ab_margin(traj, traj.meta["m"], ab_t_min, out / "ab_margin.svg", timestamps)
            if p is not None:
                paths.append(p)
    else:
        paths.append(_heatmap(traj, out / "field.svg", timestamps))
    if qhat:
        paths.append(_qhat(qhat, q, out / "qhat.svg", timestamps))
    return paths
