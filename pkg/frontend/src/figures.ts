// Figure models: pure data extracted from a CSV, ready for the SVG layer.
// Everything here is deterministic in the input bytes; arm order is the
// sorted order of arm labels so re-renders are stable.

import { requireColumns, usableRows, type SweepRecord } from "./csv.js";

export type FigureKind = "learning_curve" | "robustness_curve" | "metric_bars";

export interface PlotJob {
  csvPath: string;
  kind: FigureKind;
  outPath: string;
  groupBy: string[];
}

export interface Series {
  label: string;
  points: Array<[number, number]>;
}

export interface LineFigure {
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
}

export interface BarGroup {
  label: string;
  values: number[]; // one per metric
}

export interface BarFigure {
  title: string;
  metrics: string[];
  groups: BarGroup[];
}

export function armLabel(rec: SweepRecord, groupBy: string[]): string {
  return groupBy.map((c) => `${c}=${rec[c]}`).join(",");
}

function groupRows(records: SweepRecord[], groupBy: string[]): Map<string, SweepRecord[]> {
  const arms = new Map<string, SweepRecord[]>();
  for (const rec of records) {
    const key = armLabel(rec, groupBy);
    const bucket = arms.get(key);
    if (bucket) bucket.push(rec);
    else arms.set(key, [rec]);
  }
  return new Map([...arms.entries()].sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0)));
}

const mean = (xs: number[]) => xs.reduce((a, b) => a + b, 0) / xs.length;

/**
 * One descending-sorted polyline per arm: x is 1-based rank, y the metric.
 * This is the robustness view: a curve that stays high across ranks means
 * the arm tolerates bad hyperparameter cells, not just its best one.
 */
export function buildRobustnessCurve(
  header: string[],
  records: SweepRecord[],
  groupBy: string[],
  metric = "final_return",
): LineFigure {
  requireColumns(header, [...groupBy, metric]);
  const rows = usableRows(records, metric);
  if (rows.length === 0) throw new Error("no usable rows for robustness curve");
  const series: Series[] = [];
  for (const [label, bucket] of groupRows(rows, groupBy)) {
    const vals = bucket.map((r) => Number(r[metric])).sort((a, b) => b - a);
    series.push({ label, points: vals.map((v, i) => [i + 1, v]) });
  }
  return { title: `${metric} sorted per arm`, xLabel: "rank", yLabel: metric, series };
}

/** Per-episode training curve; one polyline per arm (or one unlabeled). */
export function buildLearningCurve(
  header: string[],
  records: SweepRecord[],
  groupBy: string[],
  xCol = "episode",
  yCol = "return",
): LineFigure {
  requireColumns(header, [xCol, yCol]);
  const usable = records.filter(
    (r) => Number.isFinite(Number(r[xCol])) && Number.isFinite(Number(r[yCol])),
  );
  if (usable.length === 0) throw new Error("no usable rows for learning curve");
  const grouping = groupBy.filter((c) => header.includes(c));
  const arms = grouping.length > 0 ? groupRows(usable, grouping) : new Map([["return", usable]]);
  const series: Series[] = [];
  for (const [label, bucket] of arms) {
    const pts = bucket
      .map((r) => [Number(r[xCol]), Number(r[yCol])] as [number, number])
      .sort((a, b) => a[0] - b[0]);
    series.push({ label, points: pts });
  }
  return { title: `${yCol} per ${xCol}`, xLabel: xCol, yLabel: yCol, series };
}

/** Mean duration and completion per arm, e.g. blocking vs concurrent. */
export function buildMetricBars(
  header: string[],
  records: SweepRecord[],
  groupBy: string[],
  metrics = ["episode_sim_duration_s", "action_completion"],
): BarFigure {
  requireColumns(header, [...groupBy, ...metrics]);
  const rows = metrics.reduce((acc, m) => usableRows(acc, m), records);
  if (rows.length === 0) throw new Error("no usable rows for metric bars");
  const groups: BarGroup[] = [];
  for (const [label, bucket] of groupRows(rows, groupBy)) {
    groups.push({ label, values: metrics.map((m) => mean(bucket.map((r) => Number(r[m])))) });
  }
  return { title: metrics.join(" / ") + " per arm", metrics, groups };
}
