import { mkdtempSync, readFileSync, writeFileSync, existsSync, statSync } from "fs";
import { tmpdir } from "os";
import { dirname, join } from "path";
import { fileURLToPath } from "url";

import { describe, expect, it } from "vitest";

import { HARNESS_COLUMNS, parseTable } from "../src/csv.js";
import { buildRobustnessCurve } from "../src/figures.js";
import { renderLineFigure } from "../src/svg.js";
import { main, parseArgs, renderJob } from "../src/cli.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const FIXTURE = join(HERE, "..", "fixtures", "robustness_3row.csv");

function tmp(name: string): string {
  return join(mkdtempSync(join(tmpdir(), "concurq-plots-")), name);
}

function sweepCsv(rows: Array<{ vtg: boolean; seed: number; ret: number }>): string {
  const lines = [HARNESS_COLUMNS.join(",")];
  for (const r of rows) {
    lines.push([
      r.vtg ? "hashvtg00000" : "hashunc00000", "concurrent", "50.0", "fixed",
      String(r.vtg), "false", "false", "0", "0", "5", "0.001", String(r.seed),
      "ok", String(r.ret), "6.0", "0.5", "3000.0",
    ].join(","));
  }
  return lines.join("\n") + "\n";
}

const armPolylines = (svg: string) => svg.match(/<polyline class="arm"[^>]*>/g) ?? [];

describe("robustness figure from the 3-row fixture", () => {
  it("writes a nonzero SVG with one polyline per arm", () => {
    const out = tmp("fig.svg");
    const code = main(["--csv", FIXTURE, "--kind", "robustness_curve", "--out", out]);
    expect(code).toBe(0);
    expect(existsSync(out)).toBe(true);
    expect(statSync(out).size).toBeGreaterThan(0);
    const svg = readFileSync(out, "utf8");
    expect(svg).toContain("<svg");
    const arms = armPolylines(svg);
    expect(arms).toHaveLength(2);
    expect(svg).toContain('data-arm="use_vtg=false"');
    expect(svg).toContain('data-arm="use_vtg=true"');
  });

  it("re-renders byte-identically", () => {
    const a = tmp("a.svg");
    const b = tmp("b.svg");
    expect(main(["--csv", FIXTURE, "--kind", "robustness_curve", "--out", a])).toBe(0);
    expect(main(["--csv", FIXTURE, "--kind", "robustness_curve", "--out", b])).toBe(0);
    expect(readFileSync(a)).toEqual(readFileSync(b));
  });
});

describe("robustness figure properties", () => {
  it("draws identical arms as coincident polylines", () => {
    const csv = tmp("twin.csv");
    writeFileSync(csv, sweepCsv([
      { vtg: false, seed: 0, ret: 12.5 }, { vtg: false, seed: 1, ret: 7.25 },
      { vtg: true, seed: 0, ret: 7.25 }, { vtg: true, seed: 1, ret: 12.5 },
    ]));
    const svg = renderJob(parseArgs(["--csv", csv, "--kind", "robustness_curve",
      "--out", "unused.svg"]));
    const pts = armPolylines(svg).map((p) => /points="([^"]*)"/.exec(p)![1]);
    expect(pts).toHaveLength(2);
    expect(pts[0]).toBe(pts[1]);
  });

  it("keeps a uniformly better arm above the other at every shared rank", () => {
    const rows = [];
    for (let seed = 0; seed < 18; seed++) {
      rows.push({ vtg: false, seed, ret: 20 + (seed % 6) });
      rows.push({ vtg: true, seed, ret: 30 + ((seed * 7) % 6) });
    }
    const { header, records } = parseTable(sweepCsv(rows));
    const fig = buildRobustnessCurve(header, records, ["use_vtg"]);
    const [unc, vtg] = fig.series;
    for (let i = 0; i < Math.min(unc!.points.length, vtg!.points.length); i++) {
      expect(vtg!.points[i]![1]).toBeGreaterThan(unc!.points[i]![1]);
    }
    // pixel space flips the axis: higher return = smaller y
    const svg = renderLineFigure(fig);
    const ys = armPolylines(svg).map((p) =>
      /points="([^"]*)"/.exec(p)![1]!.split(" ").map((xy) => Number(xy.split(",")[1])));
    for (let i = 0; i < Math.min(ys[0]!.length, ys[1]!.length); i++) {
      expect(ys[1]![i]!).toBeLessThan(ys[0]![i]!);
    }
  });
});

describe("other kinds and failure modes", () => {
  it("renders metric bars grouped by execution mode", () => {
    const csv = tmp("bars.csv");
    writeFileSync(csv, sweepCsv([
      { vtg: false, seed: 0, ret: 1 }, { vtg: true, seed: 0, ret: 2 },
    ]));
    const out = tmp("bars.svg");
    expect(main(["--csv", csv, "--kind", "metric_bars", "--out", out,
      "--group-by", "execution_mode"])).toBe(0);
    const svg = readFileSync(out, "utf8");
    expect(svg).toContain('data-metric="episode_sim_duration_s"');
    expect(svg).toContain('data-metric="action_completion"');
  });

  it("renders a learning curve from a training curve CSV", () => {
    const csv = tmp("curve.csv");
    writeFileSync(csv, "episode,return,episode_sim_duration_s,action_completion\n"
      + "0,1.5,6.0,0.5\n1,2.5,6.0,0.5\n");
    const out = tmp("curve.svg");
    expect(main(["--csv", csv, "--kind", "learning_curve", "--out", out])).toBe(0);
    expect(armPolylines(readFileSync(out, "utf8"))).toHaveLength(1);
  });

  it("fails with exit 1 on empty CSV, bad kind, or unknown flag", () => {
    const empty = tmp("empty.csv");
    writeFileSync(empty, "");
    const out = tmp("never.svg");
    expect(main(["--csv", empty, "--kind", "robustness_curve", "--out", out])).toBe(1);
    expect(existsSync(out)).toBe(false);
    expect(main(["--csv", FIXTURE, "--kind", "pie", "--out", out])).toBe(1);
    expect(main(["--csv", FIXTURE, "--kind", "robustness_curve", "--out", out,
      "--shiny", "yes"])).toBe(1);
    expect(() => parseArgs(["--csv", FIXTURE])).toThrow(/required/);
  });
});
