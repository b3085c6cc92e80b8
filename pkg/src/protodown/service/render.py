"""Plot rendering: payload -> primitive scene -> SVG (canonical) or PNG.

SVG output has deterministic element ordering (payload order). PNG is drawn
from the same primitives with matplotlib at 300 dpi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError

STATUS_COLORS = {
    "up": "#d62728",
    "down": "#1f77b4",
    "not_significant": "#9e9e9e",
}


@dataclass
class Scene:
    width: float
    height: float
    elements: list = field(default_factory=list)  # dicts: circle/rect/line/text/polyline

    def circle(self, x, y, r, fill, cls=""):
        self.elements.append({"tag": "circle", "x": x, "y": y, "r": r,
                              "fill": fill, "class": cls})

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.elements.append({"tag": "rect", "x": x, "y": y, "w": w, "h": h,
                              "fill": fill, "stroke": stroke})

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, dash=""):
        self.elements.append({"tag": "line", "x1": x1, "y1": y1, "x2": x2, "y2": y2,
                              "stroke": stroke, "width": width, "dash": dash})

    def text(self, x, y, s, size=10.0, anchor="start"):
        self.elements.append({"tag": "text", "x": x, "y": y, "s": s,
                              "size": size, "anchor": anchor})


def _f(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def scene_to_svg(scene: Scene) -> str:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(scene.width)}" '
        f'height="{_f(scene.height)}" viewBox="0 0 {_f(scene.width)} {_f(scene.height)}">'
    ]
    for e in scene.elements:
        tag = e["tag"]
        if tag == "circle":
            cls = f' class="{e["class"]}"' if e["class"] else ""
            parts.append(
                f'<circle cx="{_f(e["x"])}" cy="{_f(e["y"])}" r="{_f(e["r"])}" '
                f'fill="{e["fill"]}"{cls}/>'
            )
        elif tag == "rect":
            parts.append(
                f'<rect x="{_f(e["x"])}" y="{_f(e["y"])}" width="{_f(e["w"])}" '
                f'height="{_f(e["h"])}" fill="{e["fill"]}" stroke="{e["stroke"]}"/>'
            )
        elif tag == "line":
            dash = f' stroke-dasharray="{e["dash"]}"' if e["dash"] else ""
            parts.append(
                f'<line x1="{_f(e["x1"])}" y1="{_f(e["y1"])}" x2="{_f(e["x2"])}" '
                f'y2="{_f(e["y2"])}" stroke="{e["stroke"]}" '
                f'stroke-width="{_f(e["width"])}"{dash}/>'
            )
        elif tag == "text":
            s = (e["s"].replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
            parts.append(
                f'<text x="{_f(e["x"])}" y="{_f(e["y"])}" font-size="{_f(e["size"])}" '
                f'text-anchor="{e["anchor"]}" font-family="sans-serif">{s}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


def scene_to_png(scene: Scene, dpi: int = 300) -> bytes:
    import io

    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt
    from matplotlib.patches import Circle, Rectangle

    fig = plt.figure(figsize=(scene.width / 100, scene.height / 100), dpi=dpi)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.set_xlim(0, scene.width)
    ax.set_ylim(scene.height, 0)  # SVG y-down
    ax.axis("off")
    for e in scene.elements:
        tag = e["tag"]
        if tag == "circle":
            ax.add_patch(Circle((e["x"], e["y"]), e["r"], facecolor=e["fill"],
                                edgecolor="none"))
        elif tag == "rect":
            ec = None if e["stroke"] == "none" else e["stroke"]
            ax.add_patch(Rectangle((e["x"], e["y"]), e["w"], e["h"],
                                   facecolor=e["fill"] if e["fill"] != "none" else "none",
                                   edgecolor=ec))
        elif tag == "line":
            style = "--" if e["dash"] else "-"
            ax.plot([e["x1"], e["x2"]], [e["y1"], e["y2"]], color=e["stroke"],
                    linewidth=e["width"], linestyle=style)
        elif tag == "text":
            ha = {"start": "left", "middle": "center", "end": "right"}[e["anchor"]]
            ax.text(e["x"], e["y"], e["s"], fontsize=e["size"] * 0.75, ha=ha, va="bottom")
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=dpi)
    plt.close(fig)
    return buf.getvalue()


def _axis_range(values, pad=0.05):
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 1, hi + 1
    span = hi - lo
    return lo - pad * span, hi + pad * span


class _Mapper:
    def __init__(self, lo, hi, out_lo, out_hi):
        self.lo, self.hi, self.out_lo, self.out_hi = lo, hi, out_lo, out_hi

    def __call__(self, v):
        t = (v - self.lo) / (self.hi - self.lo)
        return self.out_lo + t * (self.out_hi - self.out_lo)


W, H, M = 640.0, 480.0, 50.0


def render_volcano(payload: dict) -> Scene:
    scene = Scene(W, H)
    points = payload["points"]
    xs = [p["x"] for p in points] + list(payload["fc_lines"]) or [0]
    ys = [p["y"] for p in points] + [payload["p_line"]] or [0]
    if not xs:
        xs, ys = [0, 1], [0, 1]
    mx = _Mapper(*_axis_range(xs), M, W - M)
    my = _Mapper(*_axis_range(ys), H - M, M)
    for fc in payload["fc_lines"]:
        scene.line(mx(fc), M, mx(fc), H - M, stroke="#888888", dash="4 3")
    scene.line(M, my(payload["p_line"]), W - M, my(payload["p_line"]),
               stroke="#888888", dash="4 3")
    for p in points:
        scene.circle(mx(p["x"]), my(p["y"]), 3.0,
                     STATUS_COLORS.get(p["status"], "#9e9e9e"), cls="point")
    scene.text(W / 2, H - 10, "log2 fold change", anchor="middle")
    scene.text(12, H / 2, "-log10 p", anchor="middle")
    return scene


def render_heatmap(payload: dict) -> Scene:
    rows = payload.get("row_order", [])
    cols = payload.get("col_order", [])
    scene = Scene(W, H)
    if not rows:
        scene.text(W / 2, H / 2, payload.get("notice", "no data"), anchor="middle")
        return scene
    values = payload["values"]
    n_r, n_c = len(rows), len(cols)
    cw = (W - 2 * M) / n_c
    ch = (H - 2 * M) / n_r
    flat = [v for row in values for v in row]
    lo, hi = min(flat), max(flat)
    span = (hi - lo) or 1.0
    for ri, r in enumerate(rows):
        for ci, c in enumerate(cols):
            t = (values[r][c] - lo) / span
            red = int(255 * t)
            blue = int(255 * (1 - t))
            fill = f"#{red:02x}40{blue:02x}"
            scene.rect(M + ci * cw, M + ri * ch, cw, ch, fill)
    return scene


def render_boxplot(payload: list) -> Scene:
    scene = Scene(W, H)
    n = len(payload)
    if n == 0:
        return scene
    all_vals = [v for b in payload for v in
                (b["min"], b["max"], *b["outliers"])]
    my = _Mapper(*_axis_range(all_vals), H - M, M)
    bw = (W - 2 * M) / n
    for i, b in enumerate(payload):
        cx = M + (i + 0.5) * bw
        half = bw * 0.3
        scene.line(cx, my(b["min"]), cx, my(b["q1"]))
        scene.line(cx, my(b["q3"]), cx, my(b["max"]))
        scene.rect(cx - half, my(b["q3"]), 2 * half, my(b["q1"]) - my(b["q3"]),
                   "#c6dbef", stroke="#333333")
        scene.line(cx - half, my(b["median"]), cx + half, my(b["median"]),
                   stroke="#000000", width=1.5)
        for o in b["outliers"]:
            scene.circle(cx, my(o), 2.0, "#d62728")
        scene.text(cx, H - 20, b["sample"], size=8, anchor="middle")
    return scene


def render_histogram(payload: dict) -> Scene:
    # payload: per-sample {bin_edges, counts}; draw the first sample or a named one
    scene = Scene(W, H)
    samples = list(payload)
    if not samples:
        return scene
    y0 = H - M
    n = len(samples)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    all_edges = [e for s in samples for e in payload[s]["bin_edges"]]
    all_counts = [c for s in samples for c in payload[s]["counts"]] or [1]
    mx = _Mapper(*_axis_range(all_edges, 0), M, W - M)
    my = _Mapper(0, max(all_counts) or 1, y0, M)
    for si, s in enumerate(samples):
        edges, counts = payload[s]["bin_edges"], payload[s]["counts"]
        pts = []
        for j, c in enumerate(counts):
            xm = (edges[j] + edges[j + 1]) / 2
            pts.append((mx(xm), my(c)))
        for a, b in zip(pts, pts[1:]):
            scene.line(a[0], a[1], b[0], b[1], stroke=colors[si % len(colors)])
    return scene


def render_qq(payload: dict) -> Scene:
    scene = Scene(W, H)
    pairs = [(t, s) for series in payload.values() if series
             for t, s in zip(series["theoretical"], series["sample"])]
    if not pairs:
        return scene
    xs = [p[0] for p in pairs]
    ys = [p[1] for p in pairs]
    mx = _Mapper(*_axis_range(xs), M, W - M)
    my = _Mapper(*_axis_range(ys), H - M, M)
    lo = max(min(xs), min(ys))
    hi = min(max(xs), max(ys))
    scene.line(mx(lo), my(lo), mx(hi), my(hi), stroke="#888888", dash="4 3")
    for t, s in pairs:
        scene.circle(mx(t), my(s), 2.0, "#1f77b4")
    return scene


def render_correlation(payload: dict) -> Scene:
    scene = Scene(W, H)
    if "error" in payload:
        scene.text(W / 2, H / 2, payload["error"], anchor="middle")
        return scene
    samples = payload["samples"]
    mat = payload["matrix"]
    n = len(samples)
    cw = (W - 2 * M) / n
    for i in range(n):
        for j in range(n):
            r = mat[i][j]
            t = (r + 1) / 2
            fill = f"#{int(255 * t):02x}{int(128 + 64 * (1 - abs(r))):02x}{int(255 * (1 - t)):02x}"
            scene.rect(M + j * cw, M + i * cw, cw, cw, fill)
    return scene


def render_pca(payload: dict) -> Scene:
    scene = Scene(W, H)
    if "error" in payload:
        scene.text(W / 2, H / 2, payload["error"], anchor="middle")
        return scene
    scores = payload["scores"]
    xs = [s[0] for s in scores]
    ys = [s[1] if len(s) > 1 else 0.0 for s in scores]
    mx = _Mapper(*_axis_range(xs), M, W - M)
    my = _Mapper(*_axis_range(ys), H - M, M)
    for name, x, y in zip(payload["samples"], xs, ys):
        scene.circle(mx(x), my(y), 4.0, "#1f77b4")
        scene.text(mx(x) + 6, my(y), name, size=8)
    pc1 = payload["explained"][0] * 100
    pc2 = payload["explained"][1] * 100 if len(payload["explained"]) > 1 else 0.0
    scene.text(W / 2, H - 10, f"PC1 ({pc1:.1f}%)", anchor="middle")
    scene.text(12, H / 2, f"PC2 ({pc2:.1f}%)", anchor="middle")
    return scene


def render_dispersion(payload: list) -> Scene:
    scene = Scene(W, H)
    if not payload:
        return scene
    xs = [r["mean"] for r in payload]
    ys = [r["sd"] for r in payload]
    mx = _Mapper(*_axis_range(xs), M, W - M)
    my = _Mapper(*_axis_range(ys), H - M, M)
    for r in payload:
        scene.circle(mx(r["mean"]), my(r["sd"]), 2.0, "#1f77b4")
    return scene


def render_imputation(payload: dict) -> Scene:
    scene = Scene(W, H)
    edges = payload["bin_edges"]
    if len(edges) < 2:
        return scene
    maxc = max(payload["observed"] + payload["imputed"]) or 1
    mx = _Mapper(edges[0], edges[-1], M, W - M)
    my = _Mapper(0, maxc, H - M, M)
    for series, color in (("observed", "#1f77b4"), ("imputed", "#d62728")):
        pts = [
            (mx((edges[j] + edges[j + 1]) / 2), my(c))
            for j, c in enumerate(payload[series])
        ]
        for a, b in zip(pts, pts[1:]):
            scene.line(a[0], a[1], b[0], b[1], stroke=color)
    return scene


def render_venn(payload: dict) -> Scene:
    scene = Scene(W, H)
    sets = payload["sets"]
    names = list(sets)
    centers = [(W / 2 - 80, H / 2), (W / 2 + 80, H / 2), (W / 2, H / 2 + 90),
               (W / 2, H / 2 - 90)][: len(names)]
    for (cx, cy), name in zip(centers, names):
        scene.elements.append({"tag": "circle", "x": cx, "y": cy, "r": 120.0,
                               "fill": "none", "class": "venn"})
        scene.text(cx, cy - 125, f"{name} ({len(sets[name])})", anchor="middle")
    for region in payload["regions"]:
        label = "&".join(region["groups"]) + f": {region['count']}"
        scene.text(W / 2, 20 + 14 * payload["regions"].index(region), label, size=9)
    return scene


def render_enrich_dot(payload: dict) -> Scene:
    scene = Scene(W, H)
    rows = payload.get("dot", [])
    if not rows:
        return scene
    xs = [r["gene_ratio"] for r in rows]
    mx = _Mapper(*_axis_range(xs), M + 120, W - M)
    n = len(rows)
    for i, r in enumerate(rows):
        y = M + (i + 0.5) * (H - 2 * M) / n
        scene.circle(mx(r["gene_ratio"]), y, 3 + r["size"], "#d62728")
        scene.text(M, y, r["term_name"][:24], size=float(payload.get("font_size", 12)) * 0.75)
    return scene


def render_enrich_bar(payload: dict) -> Scene:
    scene = Scene(W, H)
    rows = payload.get("bar", [])
    if not rows:
        return scene
    maxv = max(r["value"] for r in rows) or 1
    n = len(rows)
    for i, r in enumerate(rows):
        y = M + i * (H - 2 * M) / n
        w = (W - 2 * M - 120) * r["value"] / maxv
        scene.rect(M + 120, y + 2, w, (H - 2 * M) / n - 4, "#1f77b4")
        scene.text(M, y + (H - 2 * M) / n / 2, r["term_name"][:24],
                   size=float(payload.get("font_size", 12)) * 0.75)
    return scene


def render_enrich_manhattan(payload: dict) -> Scene:
    scene = Scene(W, H)
    rows = payload.get("manhattan", [])
    if not rows:
        return scene
    ys = [r["y"] for r in rows]
    my = _Mapper(*_axis_range(ys + [0]), H - M, M)
    n = len(rows)
    source_colors = {}
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    for i, r in enumerate(rows):
        x = M + (i + 0.5) * (W - 2 * M) / n
        if r["source"] not in source_colors:
            source_colors[r["source"]] = palette[len(source_colors) % len(palette)]
        scene.circle(x, my(r["y"]), 3.0, source_colors[r["source"]])
    return scene


RENDERERS = {
    "volcano": render_volcano,
    "heatmap": render_heatmap,
    "venn": render_venn,
    "qc.boxplot": render_boxplot,
    "qc.histogram": render_histogram,
    "qc.qq": render_qq,
    "qc.correlation": render_correlation,
    "qc.pca": render_pca,
    "qc.dispersion": render_dispersion,
    "qc.imputation": render_imputation,
    "enrichment.dot": render_enrich_dot,
    "enrichment.bar": render_enrich_bar,
    "enrichment.manhattan": render_enrich_manhattan,
}


def render_svg(artifact: str, data) -> str:
    if artifact not in RENDERERS:
        raise ConfigError(f"artifact {artifact!r} has no plot form")
    return scene_to_svg(RENDERERS[artifact](data))


def render_png(artifact: str, data, dpi: int = 300) -> bytes:
    if artifact not in RENDERERS:
        raise ConfigError(f"artifact {artifact!r} has no plot form")
    return scene_to_png(RENDERERS[artifact](data), dpi=dpi)
