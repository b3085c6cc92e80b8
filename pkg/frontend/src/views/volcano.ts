/** Volcano plot view: renders a payload to an SVG string.
 *
 * Fidelity rules: one marker per payload point, no client-side filtering,
 * sorting, or recomputation — coordinates are a linear map of the payload's
 * x/y values and every displayed number is echoed from the payload into data
 * attributes (hover shows protein_id, log2fc, p).
 */

export interface VolcanoPoint {
  protein_id: string;
  gene_names: string;
  x: number;
  y: number;
  p: number;
  p_adj: number | null;
  status: string;
}

export interface VolcanoData {
  points: VolcanoPoint[];
  exclusives: { protein_id: string; group: string }[];
  fc_lines: number[];
  p_line: number;
  use_adjusted: boolean;
}

export interface VolcanoOptions {
  width?: number;
  height?: number;
  selected?: ReadonlySet<string>;
}

const STATUS_CLASS: Record<string, string> = {
  up: "pt-up",
  down: "pt-down",
  not_significant: "pt-ns",
};

function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderVolcano(data: VolcanoData, opts: VolcanoOptions = {}): string {
  const width = opts.width ?? 640;
  const height = opts.height ?? 480;
  const pad = 40;
  const xs = data.points.map((p) => p.x).concat(data.fc_lines);
  const ys = data.points.map((p) => p.y).concat([data.p_line, 0]);
  const xMin = xs.length ? Math.min(...xs) : -1;
  const xMax = xs.length ? Math.max(...xs) : 1;
  const yMax = ys.length ? Math.max(...ys) : 1;
  const xSpan = xMax - xMin || 1;
  const ySpan = yMax || 1;
  const sx = (x: number) => pad + ((x - xMin) / xSpan) * (width - 2 * pad);
  const sy = (y: number) => height - pad - (y / ySpan) * (height - 2 * pad);

  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" data-kind="volcano" ` +
      `data-use-adjusted="${data.use_adjusted}">`,
  ];
  for (const fc of data.fc_lines) {
    parts.push(
      `<line class="fc-line" x1="${sx(fc)}" y1="${sy(0)}" x2="${sx(fc)}" ` +
        `y2="${sy(yMax)}" data-fc="${fc}"/>`,
    );
  }
  parts.push(
    `<line class="p-line" x1="${sx(xMin)}" y1="${sy(data.p_line)}" ` +
      `x2="${sx(xMax)}" y2="${sy(data.p_line)}" data-p-line="${data.p_line}"/>`,
  );
  for (const pt of data.points) {
    const cls = STATUS_CLASS[pt.status] ?? "pt-ns";
    const sel = opts.selected?.has(pt.protein_id) ? " pt-selected" : "";
    parts.push(
      `<circle class="${cls}${sel}" cx="${sx(pt.x)}" cy="${sy(pt.y)}" r="3" ` +
        `data-protein-id="${esc(pt.protein_id)}" data-log2fc="${pt.x}" ` +
        `data-p="${pt.p}" data-p-adj="${pt.p_adj}" data-status="${esc(pt.status)}">` +
        `<title>${esc(pt.protein_id)} log2fc=${pt.x} p=${pt.p}</title></circle>`,
    );
  }
  // Exclusives have no p-value; they are listed in a side strip, one marker
  // each, exactly as delivered.
  data.exclusives.forEach((ex, i) => {
    parts.push(
      `<rect class="pt-exclusive-${esc(ex.group)}" x="${width - pad + 8}" ` +
        `y="${pad + i * 10}" width="6" height="6" ` +
        `data-protein-id="${esc(ex.protein_id)}" data-group="${esc(ex.group)}"/>`,
    );
  });
  parts.push("</svg>");
  return parts.join("");
}
