#!/usr/bin/env node
/**
 * make_figures <run_dir>... --out <dir> [--q-star 0.3] [--format svg]
 *
 * Reads each run directory's CSV logs and writes the three figure families
 * into the output directory: ode_traces.svg, pde_heatmap_<run>.svg per run,
 * and kernel_trace.svg.
 */
import { mkdirSync, writeFileSync } from "node:fs";
import { basename, join } from "node:path";
import { CsvFormatError, readGains, readOde, readPde } from "./csv.js";
import {
  kernelTraceOption,
  odeTracesOption,
  pdeHeatmapOption,
  renderSvg,
} from "./figures.js";

export interface CliArgs {
  runDirs: string[];
  out: string;
  qStar: number;
  format: string;
}

export function parseArgs(argv: string[]): CliArgs {
  const runDirs: string[] = [];
  let out: string | undefined;
  let qStar = 0.3;
  let format = "svg";
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--out") {
      out = argv[++i];
    } else if (arg === "--q-star") {
      qStar = Number(argv[++i]);
    } else if (arg === "--format") {
      format = argv[++i];
    } else if (arg.startsWith("--")) {
      throw new Error(`unknown flag: ${arg}`);
    } else {
      runDirs.push(arg);
    }
  }
  if (runDirs.length === 0) {
    throw new Error("usage: make_figures <run_dir>... --out <dir>");
  }
  if (!out) {
    throw new Error("missing required --out <dir>");
  }
  if (format !== "svg") {
    throw new Error(`unsupported format '${format}': only svg is available`);
  }
  if (!Number.isFinite(qStar)) {
    throw new Error("--q-star must be a number");
  }
  return { runDirs, out, qStar, format };
}

export function makeFigures(args: CliArgs): string[] {
  mkdirSync(args.out, { recursive: true });
  const written: string[] = [];
  const named = args.runDirs.map((dir) => ({ dir, name: basename(dir) }));

  const odeRuns = named.map(({ dir, name }) => ({ name, data: readOde(dir) }));
  const odePath = join(args.out, "ode_traces.svg");
  writeFileSync(odePath, renderSvg(odeTracesOption(odeRuns, args.qStar)));
  written.push(odePath);

  for (const { dir, name } of named) {
    const snap = { name, data: readPde(dir) };
    const path = join(args.out, `pde_heatmap_${name}.svg`);
    writeFileSync(path, renderSvg(pdeHeatmapOption(snap)));
    written.push(path);
  }

  const gainRuns = named.map(({ dir, name }) => ({ name, data: readGains(dir) }));
  const kernelPath = join(args.out, "kernel_trace.svg");
  writeFileSync(kernelPath, renderSvg(kernelTraceOption(gainRuns)));
  written.push(kernelPath);
  return written;
}

export function main(argv: string[]): number {
  let args: CliArgs;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  try {
    const written = makeFigures(args);
    for (const path of written) {
      console.log(`wrote ${path}`);
    }
    return 0;
  } catch (err) {
    if (err instanceof CsvFormatError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    throw err;
  }
}

import { fileURLToPath } from "node:url";
if (process.argv[1] && fileURLToPath(import.meta.url) === process.argv[1]) {
  process.exit(main(process.argv.slice(2)));
}
