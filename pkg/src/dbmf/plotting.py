"""Dependency-free SVG rendering of the ID/OOD score densities."""

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 60, "right": 20, "top": 30, "bottom": 50}
COLORS = {"ID": "#1f77b4", "OOD": "#ff7f0e"}


def plot_box():
    """(left, top, width, height) of the plotting area in pixels."""
    w = WIDTH - MARGIN["left"] - MARGIN["right"]
    h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    return MARGIN["left"], MARGIN["top"], w, h


def _ranges(curves):
    x0 = min(min(c.xs[0] for c in curves), 0.0)
    x1 = max(max(c.xs[-1] for c in curves), 1.0)
    y1 = max(float(c.ys.max()) for c in curves) * 1.05 or 1.0
    return float(x0), float(x1), 0.0, y1


def density_svg(id_curve, ood_curve, title="OOD score density"):
    curves = {"ID": id_curve, "OOD": ood_curve}
    x0, x1, y0, y1 = _ranges(list(curves.values()))
    left, top, w, h = plot_box()

    def px(x):
        return left + (x - x0) / (x1 - x0) * w

    def py(y):
        return top + h - (y - y0) / (y1 - y0) * h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<g id="plot" data-box="{left} {top} {w} {h}" '
        f'data-xrange="{x0!r} {x1!r}" data-yrange="{y0!r} {y1!r}">',
        f'<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="black"/>',
    ]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = px(t)
        out.append(f'<line x1="{x:.2f}" y1="{top + h}" x2="{x:.2f}" y2="{top + h + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + h + 20}" font-size="12" '
                   f'text-anchor="middle">{t:g}</text>')
    out.append(f'<text x="{left + w / 2:.2f}" y="{HEIGHT - 10}" font-size="13" '
               f'text-anchor="middle">OOD score (min-max rescaled)</text>')
    out.append(f'<text x="15" y="{top + h / 2:.2f}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 15 {top + h / 2:.2f})">density</text>')
    for i, (name, c) in enumerate(curves.items()):
        pts = " ".join(f"{px(x):.3f},{py(y):.3f}" for x, y in zip(c.xs.tolist(), c.ys.tolist()))
        out.append(f'<polyline id="curve-{name.lower()}" fill="none" stroke="{COLORS[name]}" '
                   f'stroke-width="2" points="{pts}"/>')
        ly = top + 15 + 18 * i
        out.append(f'<line x1="{left + w - 80}" y1="{ly}" x2="{left + w - 55}" y2="{ly}" '
                   f'stroke="{COLORS[name]}" stroke-width="2"/>')
        out.append(f'<text x="{left + w - 50}" y="{ly + 4}" font-size="12">{name}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_density_svg(id_curve, ood_curve, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(density_svg(id_curve, ood_curve))
