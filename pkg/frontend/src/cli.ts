// concurq-plots: render an SVG figure from a sweep or curve CSV.
//
//   node dist/cli.js --csv records.csv --kind robustness_curve \
//       --out robustness.svg --group-by use_vtg
//
// Exit codes: 0 success, 1 anything else (usage, unreadable or empty CSV,
// missing columns). Writes only the --out file; stdout gets one line.

import { readFileSync, writeFileSync } from "fs";

import { parseTable } from "./csv.js";
import {
  buildLearningCurve,
  buildMetricBars,
  buildRobustnessCurve,
  type FigureKind,
  type PlotJob,
} from "./figures.js";
import { renderBarFigure, renderLineFigure } from "./svg.js";

const KINDS: FigureKind[] = ["learning_curve", "robustness_curve", "metric_bars"];

export function parseArgs(argv: string[]): PlotJob {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const val = argv[i + 1];
    if (!key || !key.startsWith("--") || val === undefined) {
      throw new Error(`bad argument near ${key ?? "(end)"}; flags take one value`);
    }
    if (!["--csv", "--kind", "--out", "--group-by"].includes(key)) {
      throw new Error(`unknown flag ${key}`);
    }
    flags.set(key.slice(2), val);
  }
  const csvPath = flags.get("csv");
  const kind = flags.get("kind") as FigureKind | undefined;
  const outPath = flags.get("out");
  if (!csvPath || !kind || !outPath) {
    throw new Error("required: --csv <file> --kind <kind> --out <file.svg>");
  }
  if (!KINDS.includes(kind)) {
    throw new Error(`unknown figure kind ${kind}; expected one of ${KINDS.join(", ")}`);
  }
  const groupBy = (flags.get("group-by") ?? "use_vtg").split(",").filter((s) => s.length > 0);
  return { csvPath, kind, outPath, groupBy };
}

export function renderJob(job: PlotJob): string {
  const { header, records } = parseTable(readFileSync(job.csvPath, "utf8"));
  switch (job.kind) {
    case "robustness_curve":
      return renderLineFigure(buildRobustnessCurve(header, records, job.groupBy));
    case "learning_curve":
      return renderLineFigure(buildLearningCurve(header, records, job.groupBy));
    case "metric_bars":
      return renderBarFigure(buildMetricBars(header, records, job.groupBy));
  }
}

export function main(argv: string[]): number {
  try {
    const job = parseArgs(argv);
    const svg = renderJob(job);
    writeFileSync(job.outPath, svg);
    console.log(`wrote ${job.outPath}`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!)) {
  process.exit(main(process.argv.slice(2)));
}
