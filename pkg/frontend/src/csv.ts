// CSV reading for the sweep harness schema. The schema is the contract
// between the training side and this package: 17 named columns, lowercase
// booleans, repr-style floats, rows sorted by (config_hash, seed).

export const HARNESS_COLUMNS = [
  "config_hash", "execution_mode", "latency_ms", "latency_schedule",
  "use_vtg", "use_prev_action", "use_t_as", "n_stack_states",
  "n_stack_actions", "n_action_bins", "learning_rate", "seed", "status",
  "final_return", "episode_sim_duration_s", "action_completion",
  "wall_clock_s",
] as const;

export type SweepRecord = Record<string, string>;

/** RFC-4180-ish parser: quoted fields, escaped quotes, CR/LF line ends. */
export function parseCsv(text: string): string[][] {
  const rows: string[][] = [];
  let row: string[] = [];
  let field = "";
  let quoted = false;
  let sawAny = false;
  for (let i = 0; i < text.length; i++) {
    const c = text[i];
    if (quoted) {
      if (c === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i++;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c === '"') {
      quoted = true;
      sawAny = true;
    } else if (c === ",") {
      row.push(field);
      field = "";
      sawAny = true;
    } else if (c === "\n" || c === "\r") {
      if (c === "\r" && text[i + 1] === "\n") i++;
      if (sawAny || field.length > 0) {
        row.push(field);
        rows.push(row);
      }
      row = [];
      field = "";
      sawAny = false;
    } else {
      field += c;
      sawAny = true;
    }
  }
  if (quoted) throw new Error("unterminated quoted field");
  if (sawAny || field.length > 0) {
    row.push(field);
    rows.push(row);
  }
  return rows;
}

/** Rows as objects keyed by the header; header must be non-empty. */
export function parseTable(text: string): { header: string[]; records: SweepRecord[] } {
  const rows = parseCsv(text);
  if (rows.length === 0) throw new Error("empty CSV");
  const header = rows[0]!;
  const records = rows.slice(1).map((r, idx) => {
    if (r.length !== header.length) {
      throw new Error(`row ${idx + 2} has ${r.length} fields, header has ${header.length}`);
    }
    const rec: SweepRecord = {};
    header.forEach((h, j) => (rec[h] = r[j]!));
    return rec;
  });
  return { header, records };
}

export function requireColumns(header: string[], needed: readonly string[]): void {
  const missing = needed.filter((c) => !header.includes(c));
  if (missing.length > 0) {
    throw new Error(`CSV is missing required columns: ${missing.join(", ")}`);
  }
}

/** Finite-metric rows with ok status; sweep CSVs carry failures inline. */
export function usableRows(records: SweepRecord[], metric: string): SweepRecord[] {
  return records.filter(
    (r) => (r["status"] ?? "ok") === "ok" && Number.isFinite(Number(r[metric])),
  );
}
