"""File emission: CSVs, key=value manifests, structure dumps, SVG charts.

All floats are written with shortest round-trip formatting (Python repr),
and nothing time- or host-dependent is emitted, so reruns of the same
configuration produce byte-identical artifacts.
"""

from __future__ import annotations

import os

import numpy as np

from ..covmodels import CovModel
from ..estimators import nonzero_pattern, support_metrics
from ..kronops import DEFAULT_SIZE_GUARD, check_size_guard


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_matrix_csv(path, M: np.ndarray) -> None:
    """Dense matrix as plain-text CSV, one row per line."""
    M = np.asarray(M)
    with open(path, "w") as fh:
        for row in M:
            fh.write(",".join(fmt(v) for v in row))
            fh.write("\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    return np.array(rows)


def write_keyvalue(path, pairs: dict) -> None:
    with open(path, "w") as fh:
        for key, value in pairs.items():
            fh.write(f"{key} = {fmt(value)}\n")


def read_keyvalue(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = value
    return out


def write_rmse_csv(path, rmse: np.ndarray, rmse_normalized: np.ndarray) -> None:
    """Long-format per-member errors: step,member_id,rmse,rmse_normalized."""
    T, n = rmse.shape
    with open(path, "w") as fh:
        fh.write("step,member_id,rmse,rmse_normalized\n")
        for k in range(T):
            for i in range(n):
                fh.write(f"{k},{i},{fmt(rmse[k, i])},{fmt(rmse_normalized[k, i])}\n")


def write_summary_csv(path, mean_rmse: np.ndarray, mean_rmse_normalized: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("step,mean_rmse,mean_rmse_normalized\n")
        for k in range(mean_rmse.shape[0]):
            fh.write(f"{k},{fmt(mean_rmse[k])},{fmt(mean_rmse_normalized[k])}\n")


def dump_structure(model: CovModel, truth_pattern, prefix, threshold: float = 0.01,
                   guard: int | None = DEFAULT_SIZE_GUARD) -> list[str]:
    """Write magnitude grid, thresholded 0/1 pattern, and support metrics.

    ``prefix`` is a path without extension; returns the files written.
    The dumped matrix is the model's natural structure side (precision for
    precision-parameterized models, covariance otherwise).
    """
    check_size_guard(model.d, guard)
    side, M = model.structure_matrix(guard)
    files = []
    mag_path = f"{prefix}_{side}_magnitude.csv"
    write_matrix_csv(mag_path, np.abs(M))
    files.append(mag_path)
    pattern = nonzero_pattern(M, threshold).astype(int)
    pat_path = f"{prefix}_{side}_pattern.csv"
    write_matrix_csv(pat_path, pattern)
    files.append(pat_path)
    if truth_pattern is not None:
        metrics = support_metrics(M, truth_pattern, threshold)
        met_path = f"{prefix}_{side}_support.txt"
        write_keyvalue(met_path, {"side": side, "threshold": repr(float(threshold)),
                                  **{k: repr(float(v)) for k, v in metrics.items()}})
        files.append(met_path)
    return files


# ---------------------------------------------------------------------------
# plot data + SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def emit_plotdata(output_dir, series: dict, n_steps: int) -> list[str]:
    """Per-estimator member traces and mean lines, plus one SVG chart.

    ``series`` maps estimator name -> list of (label, (T,) member trace)
    plus a "mean" entry computed here; returns files written.
    """
    if not series:
        raise ValueError("empty result bundle: nothing to plot")
    files = []
    means = {}
    for est, traces in sorted(series.items()):
        member_path = os.path.join(output_dir, f"plot_{est}_members.csv")
        with open(member_path, "w") as fh:
            fh.write("step,member,rmse_normalized\n")
            for label, trace in traces:
                for k in range(n_steps):
                    fh.write(f"{k},{label},{fmt(trace[k])}\n")
        files.append(member_path)
        stack = np.array([trace for _, trace in traces])
        mean = stack.mean(axis=0)
        means[est] = mean
        mean_path = os.path.join(output_dir, f"plot_{est}_mean.csv")
        with open(mean_path, "w") as fh:
            fh.write("step,mean_rmse_normalized\n")
            for k in range(n_steps):
                fh.write(f"{k},{fmt(mean[k])}\n")
        files.append(mean_path)
    svg_path = os.path.join(output_dir, "rmse_chart.svg")
    _write_svg(svg_path, series, means, n_steps)
    files.append(svg_path)
    return files


def _write_svg(path, series, means, n_steps, width=640, height=420) -> None:
    """Line chart: translucent member traces, solid mean line per estimator."""
    margin = 50
    all_vals = [v for traces in series.values() for _, tr in traces for v in tr]
    lo, hi = min(all_vals), max(all_vals)
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo

    def sx(step):
        return margin + (width - 2 * margin) * (step / max(n_steps - 1, 1))

    def sy(val):
        return height - margin - (height - 2 * margin) * ((val - lo) / span)

    def polyline(trace, color, opacity, swidth):
        pts = " ".join(f"{sx(k):.2f},{sy(v):.2f}" for k, v in enumerate(trace))
        return (f'<polyline fill="none" stroke="{color}" stroke-opacity="{opacity}" '
                f'stroke-width="{swidth}" points="{pts}"/>')

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">time step</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">normalized RMSE</text>',
    ]
    for ci, (est, traces) in enumerate(sorted(series.items())):
        color = _PALETTE[ci % len(_PALETTE)]
        for _, trace in traces:
            parts.append(polyline(trace, color, 0.15, 1))
    for ci, (est, _) in enumerate(sorted(series.items())):
        color = _PALETTE[ci % len(_PALETTE)]
        parts.append(polyline(means[est], color, 1.0, 2.5))
        parts.append(f'<text x="{width - margin + 4}" y="{margin + 16 * ci + 10}" '
                     f'font-size="11" fill="{color}">{est}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")
