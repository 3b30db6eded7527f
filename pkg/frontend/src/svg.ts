// Hand-rolled SVG emitter. Deterministic by construction: no timestamps,
// no randomness, fixed attribute order, fixed-precision coordinates, and
// arm polylines appear in sorted-label order with points in rank order.

import type { BarFigure, LineFigure } from "./figures.js";

const W = 640;
const H = 400;
const M = { left: 70, right: 160, top: 40, bottom: 50 };
const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
  "#8c564b", "#e377c2", "#7f7f7f"];

const px = (v: number) => (Math.round(v * 100) / 100).toFixed(2);

function fmtTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(2);
  return String(Math.round(v * 1000) / 1000);
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

interface Scale {
  (v: number): number;
  ticks: number[];
}

function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  if (lo === hi) {
    lo -= 1;
    hi += 1;
  }
  const f = ((v: number) => outLo + ((v - lo) / (hi - lo)) * (outHi - outLo)) as Scale;
  const step = (hi - lo) / 4;
  f.ticks = [0, 1, 2, 3, 4].map((i) => lo + i * step);
  return f;
}

function axes(xs: Scale, ys: Scale, xLabel: string, yLabel: string): string {
  const parts: string[] = [];
  const x0 = M.left;
  const x1 = W - M.right;
  const y0 = H - M.bottom;
  const y1 = M.top;
  parts.push(`<g class="axes" stroke="#333" fill="none">`);
  parts.push(`<line x1="${px(x0)}" y1="${px(y0)}" x2="${px(x1)}" y2="${px(y0)}"/>`);
  parts.push(`<line x1="${px(x0)}" y1="${px(y0)}" x2="${px(x0)}" y2="${px(y1)}"/>`);
  parts.push(`</g>`);
  parts.push(`<g class="ticks" font-size="11" fill="#333" text-anchor="middle">`);
  for (const t of xs.ticks) {
    parts.push(`<text x="${px(xs(t))}" y="${px(y0 + 18)}">${fmtTick(t)}</text>`);
  }
  parts.push(`</g>`);
  parts.push(`<g class="ticks" font-size="11" fill="#333" text-anchor="end">`);
  for (const t of ys.ticks) {
    parts.push(`<text x="${px(x0 - 6)}" y="${px(ys(t) + 4)}">${fmtTick(t)}</text>`);
  }
  parts.push(`</g>`);
  parts.push(`<text x="${px((x0 + x1) / 2)}" y="${px(H - 12)}" font-size="13" text-anchor="middle">${escapeXml(xLabel)}</text>`);
  parts.push(`<text x="16" y="${px((y0 + y1) / 2)}" font-size="13" text-anchor="middle" transform="rotate(-90 16 ${px((y0 + y1) / 2)})">${escapeXml(yLabel)}</text>`);
  return parts.join("\n");
}

function legend(labels: string[]): string {
  const parts = [`<g class="legend" font-size="12">`];
  labels.forEach((label, i) => {
    const y = M.top + 16 * i;
    const color = PALETTE[i % PALETTE.length];
    parts.push(`<rect x="${px(W - M.right + 12)}" y="${px(y - 9)}" width="12" height="3" fill="${color}"/>`);
    parts.push(`<text x="${px(W - M.right + 30)}" y="${px(y - 3)}">${escapeXml(label)}</text>`);
  });
  parts.push(`</g>`);
  return parts.join("\n");
}

function svgDoc(title: string, body: string): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}">`,
    `<title>${escapeXml(title)}</title>`,
    `<rect width="${W}" height="${H}" fill="white"/>`,
    body,
    `</svg>`,
    ``,
  ].join("\n");
}

/** Polyline figure (learning or robustness curves), one polyline per arm. */
export function renderLineFigure(fig: LineFigure): string {
  const allPts = fig.series.flatMap((s) => s.points);
  const xlo = Math.min(...allPts.map((p) => p[0]));
  const xhi = Math.max(...allPts.map((p) => p[0]));
  const ylo = Math.min(...allPts.map((p) => p[1]), 0);
  const yhi = Math.max(...allPts.map((p) => p[1]));
  const xs = linearScale(xlo, xhi, M.left, W - M.right);
  const ys = linearScale(ylo, yhi, H - M.bottom, M.top);
  const parts: string[] = [axes(xs, ys, fig.xLabel, fig.yLabel)];
  fig.series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    const pts = s.points.map(([x, y]) => `${px(xs(x))},${px(ys(y))}`).join(" ");
    parts.push(`<polyline class="arm" data-arm="${escapeXml(s.label)}" fill="none" stroke="${color}" stroke-width="1.8" points="${pts}"/>`);
  });
  parts.push(legend(fig.series.map((s) => s.label)));
  return svgDoc(fig.title, parts.join("\n"));
}

/** Grouped bars: one cluster per arm, one bar per metric within it. */
export function renderBarFigure(fig: BarFigure): string {
  const maxPerMetric = fig.metrics.map((_, j) =>
    Math.max(...fig.groups.map((g) => g.values[j] ?? 0), 1e-12),
  );
  const x0 = M.left;
  const x1 = W - M.right;
  const y0 = H - M.bottom;
  const y1 = M.top;
  const cluster = (x1 - x0) / fig.groups.length;
  const bar = (cluster * 0.7) / fig.metrics.length;
  const parts: string[] = [`<g class="bars">`];
  fig.groups.forEach((g, gi) => {
    g.values.forEach((v, j) => {
      // each metric normalized to its own max so seconds and ratios share a panel
      const h = (y0 - y1) * (v / maxPerMetric[j]!);
      const x = x0 + gi * cluster + cluster * 0.15 + j * bar;
      const color = PALETTE[j % PALETTE.length];
      parts.push(`<rect class="bar" data-arm="${escapeXml(g.label)}" data-metric="${escapeXml(fig.metrics[j]!)}" x="${px(x)}" y="${px(y0 - h)}" width="${px(bar * 0.9)}" height="${px(h)}" fill="${color}"/>`);
      parts.push(`<text x="${px(x + bar * 0.45)}" y="${px(y0 - h - 4)}" font-size="10" text-anchor="middle">${fmtTick(v)}</text>`);
    });
    parts.push(`<text x="${px(x0 + gi * cluster + cluster / 2)}" y="${px(y0 + 18)}" font-size="11" text-anchor="middle">${escapeXml(g.label)}</text>`);
  });
  parts.push(`</g>`);
  parts.push(`<line x1="${px(x0)}" y1="${px(y0)}" x2="${px(x1)}" y2="${px(y0)}" stroke="#333"/>`);
  parts.push(legend(fig.metrics));
  return svgDoc(fig.title, parts.join("\n"));
}
