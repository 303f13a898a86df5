"""Hand-rolled SVG emission for the CLI: trajectory views, image-plane
curves, ROC plots, confusion matrices, and reprojection overlays. Output
is deterministic (fixed float formatting, no timestamps)."""

from __future__ import annotations

import numpy as np

from .physics import NET_HEIGHT, TABLE_LENGTH, TABLE_WIDTH

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x: float) -> str:
    return f"{x:.2f}"


class Panel:
    """One plot area with data-space mapping and basic primitives."""

    def __init__(self, x0, y0, width, height, xlim, ylim, invert_y=False):
        self.x0, self.y0 = x0, y0
        self.w, self.h = width, height
        self.xlim, self.ylim = xlim, ylim
        self.invert_y = invert_y
        self.parts: list[str] = []

    def px(self, x, y):
        fx = (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0])
        fy = (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0])
        if not self.invert_y:
            fy = 1.0 - fy
        return self.x0 + fx * self.w, self.y0 + fy * self.h

    def frame(self, title="", xlabel="", ylabel=""):
        self.parts.append(
            f'<rect x="{_f(self.x0)}" y="{_f(self.y0)}" width="{_f(self.w)}" '
            f'height="{_f(self.h)}" fill="white" stroke="#444"/>')
        if title:
            self.parts.append(self.text(self.x0 + self.w / 2, self.y0 - 8,
                                        title, anchor="middle", size=13))
        if xlabel:
            self.parts.append(self.text(self.x0 + self.w / 2,
                                        self.y0 + self.h + 28, xlabel,
                                        anchor="middle"))
        if ylabel:
            x, y = self.x0 - 34, self.y0 + self.h / 2
            self.parts.append(
                f'<text x="{_f(x)}" y="{_f(y)}" font-size="11" '
                f'text-anchor="middle" transform="rotate(-90 {_f(x)} {_f(y)})" '
                f'font-family="sans-serif">{ylabel}</text>')
        for frac in (0.0, 0.5, 1.0):
            xv = self.xlim[0] + frac * (self.xlim[1] - self.xlim[0])
            yv = self.ylim[0] + frac * (self.ylim[1] - self.ylim[0])
            px, _ = self.px(xv, self.ylim[0])
            self.parts.append(self.text(px, self.y0 + self.h + 14, _f(xv),
                                        anchor="middle", size=9))
            _, py = self.px(self.xlim[0], yv)
            self.parts.append(self.text(self.x0 - 4, py + 3, _f(yv),
                                        anchor="end", size=9))

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_f(px)},{_f(py)}"
                       for px, py in (self.px(x, y) for x, y in zip(xs, ys)))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" '
                          f'stroke="{color}" stroke-width="{width}"{dash_attr}/>')

    def text(self, x, y, content, anchor="start", size=11, color="#000"):
        return (f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" '
                f'text-anchor="{anchor}" fill="{color}" '
                f'font-family="sans-serif">{content}</text>')

    def label(self, x, y, content, **kw):
        self.parts.append(self.text(x, y, content, **kw))


def _document(width, height, parts: list[str]) -> str:
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def _bounds(arrays, pad=0.06):
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    span = (hi - lo) or 1.0
    return lo - pad * span, hi + pad * span


def _legend(panel: Panel, names):
    for i, name in enumerate(names):
        y = panel.y0 + 16 + 14 * i
        x = panel.x0 + panel.w - 120
        panel.parts.append(f'<line x1="{_f(x)}" y1="{_f(y - 4)}" x2="{_f(x + 18)}" '
                           f'y2="{_f(y - 4)}" stroke="{PALETTE[i % len(PALETTE)]}" '
                           f'stroke-width="2"/>')
        panel.label(x + 24, y, name, size=10)


def trajectory_views_svg(named_trajs: dict[str, np.ndarray]) -> str:
    """Top (x-y) and side (x-z) world-frame views with the table drawn in."""
    trajs = {k: np.asarray(v, float) for k, v in named_trajs.items()}
    hl, hw = TABLE_LENGTH / 2, TABLE_WIDTH / 2
    xs = _bounds([t[:, 0] for t in trajs.values()] + [np.array([-hl, hl])])
    ys = _bounds([t[:, 1] for t in trajs.values()] + [np.array([-hw, hw])])
    zs = _bounds([t[:, 2] for t in trajs.values()] + [np.array([0.0, NET_HEIGHT])])

    top = Panel(60, 40, 420, 230, xs, ys)
    top.frame("top view", "x (m)", "y (m)")
    side = Panel(560, 40, 420, 230, xs, zs)
    side.frame("side view", "x (m)", "z (m)")

    top.polyline([-hl, hl, hl, -hl, -hl], [-hw, -hw, hw, hw, -hw], "#999", 1.0)
    top.polyline([0, 0], [-hw, hw], "#999", 1.0, dash="4,3")
    side.polyline([-hl, hl], [0, 0], "#999", 2.0)
    side.polyline([0, 0], [0, NET_HEIGHT], "#999", 2.0)

    for i, (name, t) in enumerate(trajs.items()):
        color = PALETTE[i % len(PALETTE)]
        top.polyline(t[:, 0], t[:, 1], color)
        side.polyline(t[:, 0], t[:, 2], color)
    _legend(top, list(trajs))
    return _document(1020, 320, top.parts + side.parts)


def image_plane_svg(named_tracks: dict[str, np.ndarray],
                    image_size: tuple[int, int]) -> str:
    """Pixel-space curves (v grows downward, like the image)."""
    W, H = image_size
    panel = Panel(60, 40, 560, 315, (0, W), (0, H), invert_y=True)
    panel.frame("image plane", "u (px)", "v (px)")
    for i, (name, t) in enumerate(named_tracks.items()):
        t = np.asarray(t, float)
        panel.polyline(t[:, 0], t[:, 1], PALETTE[i % len(PALETTE)])
    _legend(panel, list(named_tracks))
    return _document(680, 400, panel.parts)


def roc_svg(curve: list[tuple[float, float, float]], auc: float) -> str:
    panel = Panel(60, 40, 360, 360, (0, 1), (0, 1))
    panel.frame(f"ROC (AUC = {auc:.3f})", "false positive rate",
                "true positive rate")
    panel.polyline([0, 1], [0, 1], "#bbb", 1.0, dash="4,3")
    fprs = [0.0] + [p[0] for p in sorted(curve)] + [1.0]
    tprs = [0.0] + [p[1] for p in sorted(curve)] + [1.0]
    panel.polyline(fprs, tprs, PALETTE[0], 2.0)
    # annotate a few thresholds (Hz) along the curve
    marks = curve[:: max(1, len(curve) // 5)][:6]
    for fpr, tpr, thr in marks:
        x, y = panel.px(fpr, tpr)
        panel.parts.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="2.5" '
                           f'fill="{PALETTE[1]}"/>')
        panel.label(x + 5, y - 4, f"{thr:.1f} Hz", size=9, color="#555")
    return _document(480, 460, panel.parts)


def confusion_svg(counts) -> str:
    counts = np.asarray(counts)
    parts: list[str] = []
    size, x0, y0 = 120, 120, 70
    total = counts.sum() or 1
    labels = ("topspin", "backspin")
    panel = Panel(0, 0, 1, 1, (0, 1), (0, 1))   # text helper only
    for i in range(2):
        for j in range(2):
            x, y = x0 + j * size, y0 + i * size
            shade = int(235 - 140 * counts[i, j] / total)
            parts.append(f'<rect x="{x}" y="{y}" width="{size}" height="{size}" '
                         f'fill="rgb({shade},{shade},245)" stroke="#444"/>')
            parts.append(panel.text(x + size / 2, y + size / 2 + 5,
                                    str(int(counts[i, j])), anchor="middle",
                                    size=16))
    for j, lab in enumerate(labels):
        parts.append(panel.text(x0 + j * size + size / 2, y0 - 10,
                                f"pred {lab}", anchor="middle"))
    for i, lab in enumerate(labels):
        parts.append(panel.text(x0 - 10, y0 + i * size + size / 2,
                                f"true {lab}", anchor="end"))
    parts.append(panel.text(x0 + size, y0 - 40, "spin classification",
                            anchor="middle", size=13))
    return _document(420, 340, parts)


def reprojection_overlay_svg(annotated_2d: np.ndarray, reprojected_2d: np.ndarray,
                             image_size: tuple[int, int]) -> str:
    W, H = image_size
    panel = Panel(60, 40, 560, 315, (0, W), (0, H), invert_y=True)
    panel.frame("reprojection", "u (px)", "v (px)")
    panel.polyline(np.asarray(annotated_2d)[:, 0], np.asarray(annotated_2d)[:, 1],
                   PALETTE[0], 2.0)
    panel.polyline(np.asarray(reprojected_2d)[:, 0],
                   np.asarray(reprojected_2d)[:, 1], PALETTE[1], 2.0, dash="6,4")
    _legend(panel, ["annotated", "reprojected"])
    return _document(680, 400, panel.parts)
