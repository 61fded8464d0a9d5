"""Evaluation metrics and small self-contained SVG figures."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def eer(scores, labels) -> float:
    """Equal error rate by exact threshold sweep.

    A sample is called positive when its score is >= the threshold. The
    thresholds are +inf and every distinct score; at the one where FPR and
    FNR are closest (highest threshold on ties) the two are averaged.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = np.sort(s[y == 1])
    neg = np.sort(s[y == -1])
    if pos.size == 0 or neg.size == 0:
        raise ValueError("eer needs both positive and negative samples")
    thresholds = np.concatenate([[np.inf], np.unique(s)[::-1]])
    fnr = np.searchsorted(pos, thresholds, side="left") / pos.size
    fpr = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    k = int(np.argmin(np.abs(fpr - fnr)))
    return float((fpr[k] + fnr[k]) / 2)


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if pred.size == 0:
        raise ValueError("no predictions")
    return float(np.mean(pred == truth))


def confusion(pred, truth, classes=None) -> np.ndarray:
    """counts[i, j] = #(truth == classes[i] and pred == classes[j])."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if classes is None:
        classes = sorted(set(truth.tolist()) | set(pred.tolist()))
    index = {c: i for i, c in enumerate(classes)}
    out = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(truth.tolist(), pred.tolist()):
        out[index[t], index[p]] += 1
    return out


class _Canvas:
    def __init__(self, bounds, size=480, pad=30):
        (self.x0, self.x1), (self.y0, self.y1) = bounds
        self.size, self.pad = size, pad
        self.items = []

    def tx(self, x, y):
        span = self.size - 2 * self.pad
        px = self.pad + (x - self.x0) / (self.x1 - self.x0) * span
        py = self.size - self.pad - (y - self.y0) / (self.y1 - self.y0) * span
        return px, py

    def points(self, pts):
        return " ".join(f"{px:.2f},{py:.2f}" for px, py in (self.tx(x, y) for x, y in pts))

    def render(self, title=""):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
                f'width="{self.size}" height="{self.size}" viewBox="0 0 {self.size} {self.size}">')
        body = [head, f"<title>{escape(title)}</title>",
                f'<rect x="0" y="0" width="{self.size}" height="{self.size}" fill="white"/>']
        return "\n".join(body + self.items + ["</svg>"]) + "\n"


def _clip_box(normals, biases, bounds):
    """Polygon of the box intersected with every halfspace (Sutherland-Hodgman)."""
    (x0, x1), (y0, y1) = bounds
    poly = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    for w, b in zip(normals, biases):
        out = []
        for k in range(len(poly)):
            p, q = np.array(poly[k]), np.array(poly[(k + 1) % len(poly)])
            fp, fq = w @ p + b, w @ q + b
            if fp >= 0:
                out.append(tuple(p))
            if (fp >= 0) != (fq >= 0):
                t = fp / (fp - fq)
                out.append(tuple(p + t * (q - p)))
        poly = out
        if not poly:
            break
    return poly


def boundary_svg(model, X, labels, assignment=None, bounds=None) -> str:
    """Samples (positives coloured by component, negatives grey) and one outline per component."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2 or model.dim != 2:
        raise ValueError("boundary plots need 2-D data and a 2-D model")
    labels = np.asarray(labels)
    if bounds is None:
        lo, hi = X.min(axis=0), X.max(axis=0)
        pad = 0.1 * np.maximum(hi - lo, 1e-9)
        bounds = ((lo[0] - pad[0], hi[0] + pad[0]), (lo[1] - pad[1], hi[1] + pad[1]))
    cv = _Canvas(bounds)
    pos_idx = np.flatnonzero(labels == 1)
    comp = np.zeros(X.shape[0], dtype=int)
    if assignment is not None:
        comp[pos_idx] = np.asarray(assignment)
    for n in np.flatnonzero(labels != 1):
        px, py = cv.tx(*X[n])
        cv.items.append(f'<circle class="negative" cx="{px:.2f}" cy="{py:.2f}" r="1.5" fill="#999999"/>')
    for n in pos_idx:
        px, py = cv.tx(*X[n])
        colour = PALETTE[comp[n] % len(PALETTE)]
        cv.items.append(f'<circle class="positive" cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{colour}"/>')
    for i, c in enumerate(model.components):
        poly = _clip_box(c.normals, c.biases, bounds)
        pts = cv.points(poly + poly[:1]) if poly else ""
        colour = PALETTE[i % len(PALETTE)]
        cv.items.append(f'<polyline class="boundary" data-component="{i}" points="{pts}" '
                        f'fill="none" stroke="{colour}" stroke-width="2"/>')
    return cv.render("LHM decision regions")


def loss_curve_svg(risks) -> str:
    risks = [float(r) for r in risks]
    if not risks:
        raise ValueError("empty trace")
    n = len(risks)
    lo, hi = min(risks), max(risks)
    span = hi - lo if hi > lo else max(abs(hi), 1.0)
    cv = _Canvas(((0.5, n + 0.5), (lo - 0.05 * span, hi + 0.05 * span)))
    pts = [(t + 1, r) for t, r in enumerate(risks)]
    if n > 1:
        cv.items.append(f'<polyline class="loss" points="{cv.points(pts)}" fill="none" '
                        f'stroke="#1f77b4" stroke-width="2"/>')
    for t, r in pts:
        px, py = cv.tx(t, r)
        cv.items.append(f'<circle class="marker" cx="{px:.2f}" cy="{py:.2f}" r="3" fill="#1f77b4"/>')
    return cv.render("empirical risk per outer iteration")


def emit_plot(kind: str, *args, **kwargs) -> str:
    """``emit_plot("boundary2d", model, X, labels, assignment)`` or ``emit_plot("loss_curve", risks)``."""
    if kind == "boundary2d":
        return boundary_svg(*args, **kwargs)
    if kind == "loss_curve":
        return loss_curve_svg(*args, **kwargs)
    raise ValueError(f"unknown plot kind {kind!r}")
