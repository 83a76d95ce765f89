/**
 * Readers for the simulator's CSV run logs.
 *
 * A run directory holds ode.csv (state/control series), pde.csv (profile
 * snapshots: t plus one column per grid node) and gains.csv (boundary kernel
 * trace). Headers are validated strictly and errors name the offending file
 * or column.
 */
import { readFileSync } from "node:fs";
import { join } from "node:path";
import Papa from "papaparse";

export interface OdeSeries {
  t: number[];
  Q: number[];
  U: number[];
  nu_in: number[];
  nu_out: number[];
  q_flux: number[];
  u0: number[];
}

export interface PdeSnapshots {
  t: number[];
  x: number[]; // node index scaled into [0, 1]; physical spacing is uniform
  values: number[][]; // one row per snapshot, one column per node
}

export interface GainsSeries {
  t: number[];
  K_DD: number[];
}

export class CsvFormatError extends Error {}

function parseTable(path: string): { header: string[]; rows: number[][] } {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch {
    throw new CsvFormatError(`missing or unreadable file: ${path}`);
  }
  const parsed = Papa.parse<string[]>(text.trim(), { skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    throw new CsvFormatError(`${path}: ${parsed.errors[0].message}`);
  }
  const data = parsed.data as string[][];
  if (data.length < 2) {
    throw new CsvFormatError(`${path}: no data rows`);
  }
  const header = data[0];
  const rows = data.slice(1).map((row, i) => {
    const nums = row.map(Number);
    if (nums.some((v) => Number.isNaN(v))) {
      throw new CsvFormatError(`${path}: non-numeric value in data row ${i + 1}`);
    }
    return nums;
  });
  return { header, rows };
}

function requireColumns(header: string[], wanted: string[], path: string): number[] {
  return wanted.map((name) => {
    const idx = header.indexOf(name);
    if (idx < 0) {
      throw new CsvFormatError(`${path}: missing column '${name}'`);
    }
    return idx;
  });
}

function column(rows: number[][], idx: number): number[] {
  return rows.map((r) => r[idx]);
}

export function readOde(runDir: string): OdeSeries {
  const path = join(runDir, "ode.csv");
  const { header, rows } = parseTable(path);
  const names = ["t", "Q", "U", "nu_in", "nu_out", "q_flux", "u0"];
  const idx = requireColumns(header, names, path);
  return {
    t: column(rows, idx[0]),
    Q: column(rows, idx[1]),
    U: column(rows, idx[2]),
    nu_in: column(rows, idx[3]),
    nu_out: column(rows, idx[4]),
    q_flux: column(rows, idx[5]),
    u0: column(rows, idx[6]),
  };
}

export function readPde(runDir: string): PdeSnapshots {
  const path = join(runDir, "pde.csv");
  const { header, rows } = parseTable(path);
  if (header[0] !== "t") {
    throw new CsvFormatError(`${path}: missing column 't'`);
  }
  const nodeNames = header.slice(1);
  nodeNames.forEach((name, i) => {
    if (name !== `x_${i}`) {
      throw new CsvFormatError(`${path}: missing column 'x_${i}'`);
    }
  });
  const n = nodeNames.length - 1;
  return {
    t: rows.map((r) => r[0]),
    x: nodeNames.map((_, i) => i / n),
    values: rows.map((r) => r.slice(1)),
  };
}

export function readGains(runDir: string): GainsSeries {
  const path = join(runDir, "gains.csv");
  const { header, rows } = parseTable(path);
  const idx = requireColumns(header, ["t", "K_DD"], path);
  return { t: column(rows, idx[0]), K_DD: column(rows, idx[1]) };
}
