"""Attention trace export: per-frame CSV and a five-panel SVG rendering.

Panels, top to bottom: (1) both flow estimates, (2) step-1 attention
weights as a feature-by-time heat map, (3) step-1 pooled output, (4) step-2
time attention, (5) a two-bin probability histogram.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .s2ap import AttentionTrace

PANEL_W = 640
PANEL_H = 96
MARGIN = 12
HEAT_MAX_COLS = 200


def write_trace_csv(trace: AttentionTrace, path):
    n_feat, n_t = trace.z_a1.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "u_filter", "u_model"]
                        + [f"z_a1_f{f}" for f in range(n_feat)]
                        + ["z_p1", "z_a2"])
        for t in range(n_t):
            writer.writerow([t, repr(trace.u_filter[t]), repr(trace.u_model[t])]
                            + [repr(v) for v in trace.z_a1[:, t]]
                            + [repr(trace.z_p1[t]), repr(trace.z_a2[t])])
        writer.writerow(["z_p2", repr(trace.z_p2)])


def _polyline(xs, ys, color):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>'


def _scale_y(values, top, height, pad=4):
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    return top + pad + (height - 2 * pad) * (hi - values) / span


def _series_panel(values_list, colors, top, title):
    n = max(len(v) for v in values_list)
    xs = np.linspace(MARGIN, MARGIN + PANEL_W, n)
    body = [f'<text x="{MARGIN}" y="{top + 12:.2f}" font-size="10">{title}</text>']
    for values, color in zip(values_list, colors):
        body.append(_polyline(xs[:len(values)], _scale_y(values, top, PANEL_H), color))
    return body


def _heat_panel(z_a1, top, title):
    n_feat, n_t = z_a1.shape
    # cap the column count to keep the SVG small; rows stay one per feature
    if n_t > HEAT_MAX_COLS:
        edges = np.linspace(0, n_t, HEAT_MAX_COLS + 1).astype(int)
        cols = np.stack([z_a1[:, a:b].mean(axis=1) for a, b in zip(edges[:-1], edges[1:])],
                        axis=1)
    else:
        cols = z_a1
    lo, hi = float(cols.min()), float(cols.max())
    span = hi - lo if hi > lo else 1.0
    cell_w = PANEL_W / cols.shape[1]
    cell_h = (PANEL_H - 16) / n_feat
    body = [f'<text x="{MARGIN}" y="{top + 12:.2f}" font-size="10">{title}</text>']
    for f in range(n_feat):
        for t in range(cols.shape[1]):
            shade = int(round(255 * (cols[f, t] - lo) / span))
            body.append(
                f'<rect x="{MARGIN + t * cell_w:.2f}" y="{top + 16 + f * cell_h:.2f}" '
                f'width="{cell_w:.2f}" height="{cell_h:.2f}" '
                f'fill="rgb({shade},{shade},{shade})"/>')
    return body


def _hist_panel(z_p2, top, title):
    body = [f'<text x="{MARGIN}" y="{top + 12:.2f}" font-size="10">{title}</text>']
    heights = [1.0 - z_p2, z_p2]
    for i, h in enumerate(heights):
        bar_h = (PANEL_H - 24) * h
        x = MARGIN + PANEL_W * (0.25 + 0.4 * i)
        body.append(f'<rect x="{x:.2f}" y="{top + PANEL_H - 4 - bar_h:.2f}" '
                    f'width="60" height="{bar_h:.2f}" fill="steelblue"/>')
        body.append(f'<text x="{x + 24:.2f}" y="{top + PANEL_H + 8:.2f}" '
                    f'font-size="10">{i}</text>')
    return body


def render_trace_svg(trace: AttentionTrace, path=None) -> str:
    """Five stacked panels mirroring the attention read-out; one <g> each."""
    panels = []
    tops = [MARGIN + i * (PANEL_H + 2 * MARGIN) for i in range(5)]
    panels.append(_series_panel([trace.u_filter, trace.u_model],
                                ["steelblue", "darkorange"], tops[0],
                                "glottal flow estimates (filter, model)"))
    panels.append(_heat_panel(trace.z_a1, tops[1], "step-1 attention weights"))
    panels.append(_series_panel([trace.z_p1], ["seagreen"], tops[2],
                                "step-1 pooled output"))
    panels.append(_series_panel([trace.z_a2], ["indianred"], tops[3],
                                "step-2 time attention"))
    panels.append(_hist_panel(trace.z_p2, tops[4],
                              f"classifier output p = {trace.z_p2:.4f}"))

    height = tops[-1] + PANEL_H + 3 * MARGIN
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" '
             f'width="{PANEL_W + 2 * MARGIN}" height="{height}">']
    for i, body in enumerate(panels, 1):
        parts.append(f'<g id="panel{i}">')
        parts.extend(body)
        parts.append("</g>")
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(svg)
    return svg
