"""Self-contained SVG line plots for simulation traces.

No plotting dependency: each figure is a fixed grid of panels, every
panel one polyline over linear axes with tick labels.  Series resolve
against the trace by name, state columns first, then outputs, so the
default panel list (x1, x2, delta_theta, u) works for every loop the
scenario runners produce.
"""

import numpy as np

from .errors import UnknownSignal, ValidationError

DEFAULT_PANELS = ("x1", "x2", "delta_theta", "u")
MAX_POINTS = 2000

_PANEL_W = 400
_PANEL_H = 260
_MARGIN_L = 58
_MARGIN_R = 14
_MARGIN_T = 28
_MARGIN_B = 36
_CELL_W = _PANEL_W + _MARGIN_L + _MARGIN_R
_CELL_H = _PANEL_H + _MARGIN_T + _MARGIN_B
_FONT = "font-family='sans-serif' font-size='11'"


def series(trace, name):
    """Resolve a named series: state column if labeled, else output."""
    if trace.state_names and name in trace.state_names:
        return trace.states[:, trace.state_names.index(name)]
    return trace.output(name)


def has_series(trace, name):
    try:
        series(trace, name)
    except UnknownSignal:
        return False
    return True


def _downsample(t, y):
    if len(t) <= MAX_POINTS:
        return t, y
    idx = np.linspace(0, len(t) - 1, MAX_POINTS).round().astype(int)
    return t[idx], y[idx]


def _span(values):
    lo = float(np.min(values))
    hi = float(np.max(values))
    if hi == lo:
        pad = max(abs(lo) * 0.1, 1.0)
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo, hi, count=5):
    return np.linspace(lo, hi, count)


def _panel_svg(t, y, label, x_off, y_off):
    """One framed panel with ticks; (x_off, y_off) is its cell corner."""
    left = x_off + _MARGIN_L
    top = y_off + _MARGIN_T
    t_lo, t_hi = _span(t)
    y_lo, y_hi = _span(y)

    def sx(v):
        return left + (v - t_lo) / (t_hi - t_lo) * _PANEL_W

    def sy(v):
        return top + (y_hi - v) / (y_hi - y_lo) * _PANEL_H

    t, y = _downsample(np.asarray(t, dtype=float), np.asarray(y, dtype=float))
    points = " ".join("%.2f,%.2f" % (sx(a), sy(b)) for a, b in zip(t, y))
    parts = [
        "<text x='%.1f' y='%.1f' %s font-weight='bold'>%s</text>"
        % (left, y_off + 18, _FONT, label),
        "<rect x='%.1f' y='%.1f' width='%d' height='%d' fill='none' "
        "stroke='#888' stroke-width='1'/>" % (left, top, _PANEL_W, _PANEL_H),
    ]
    for v in _ticks(t_lo, t_hi):
        x = sx(v)
        parts.append("<line x1='%.1f' y1='%.1f' x2='%.1f' y2='%.1f' "
                     "stroke='#888'/>" % (x, top + _PANEL_H,
                                          x, top + _PANEL_H + 4))
        parts.append("<text x='%.1f' y='%.1f' %s text-anchor='middle'>"
                     "%.4g</text>" % (x, top + _PANEL_H + 16, _FONT, v))
    for v in _ticks(y_lo, y_hi):
        yy = sy(v)
        parts.append("<line x1='%.1f' y1='%.1f' x2='%.1f' y2='%.1f' "
                     "stroke='#888'/>" % (left - 4, yy, left, yy))
        parts.append("<text x='%.1f' y='%.1f' %s text-anchor='end'>"
                     "%.4g</text>" % (left - 7, yy + 4, _FONT, v))
    parts.append("<polyline points='%s' fill='none' stroke='#1f6fb4' "
                 "stroke-width='1.2'/>" % points)
    return "\n".join(parts)


def render_figure(trace, panels=DEFAULT_PANELS, columns=2):
    """The whole figure as SVG text, one panel per named series."""
    panels = tuple(panels)
    if not panels:
        raise ValidationError("at least one panel is required", key="panels")
    for name in panels:
        series(trace, name)  # fail before emitting anything
    columns = max(1, int(columns))
    rows = (len(panels) + columns - 1) // columns
    width = columns * _CELL_W
    height = rows * _CELL_H
    parts = [
        "<svg xmlns='http://www.w3.org/2000/svg' width='%d' height='%d' "
        "viewBox='0 0 %d %d'>" % (width, height, width, height),
        "<rect x='0' y='0' width='%d' height='%d' fill='white'/>"
        % (width, height),
    ]
    for k, name in enumerate(panels):
        x_off = (k % columns) * _CELL_W
        y_off = (k // columns) * _CELL_H
        parts.append(_panel_svg(trace.times, series(trace, name), name,
                                x_off, y_off))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_figure(trace, path, panels=DEFAULT_PANELS):
    """Render and write the figure; returns the path."""
    text = render_figure(trace, panels=panels)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path
