import { existsSync, mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import { readGains, readOde, readPde } from "../src/csv.js";
import {
  kernelTraceOption,
  odeTracesOption,
  pdeHeatmapOption,
  renderSvg,
} from "../src/figures.js";
import { main, makeFigures, parseArgs } from "../src/cli.js";

const FIXTURES = join(__dirname, "fixtures");
const COMP = join(FIXTURES, "run_comp");
const UNCOMP = join(FIXTURES, "run_uncomp");

describe("figure options", () => {
  it("ode traces carry one line per run plus the setpoint", () => {
    const runs = [
      { name: "a", data: readOde(COMP) },
      { name: "b", data: readOde(UNCOMP) },
    ];
    const opt = odeTracesOption(runs, 0.3) as { series: { name: string }[] };
    expect(opt.series.length).toBe(3);
    expect(opt.series.map((s) => s.name)).toContain("setpoint");
  });

  it("heatmap enumerates every space-time cell", () => {
    const snap = { name: "a", data: readPde(COMP) };
    const opt = pdeHeatmapOption(snap) as {
      series: { data: unknown[] }[];
    };
    expect(opt.series[0].data.length).toBe(
      snap.data.t.length * snap.data.x.length,
    );
  });

  it("kernel trace uses the gains series", () => {
    const runs = [{ name: "a", data: readGains(COMP) }];
    const opt = kernelTraceOption(runs) as { series: { data: number[][] }[] };
    expect(opt.series[0].data.length).toBe(runs[0].data.t.length);
  });

  it("renders standalone svg markup", () => {
    const svg = renderSvg(odeTracesOption([{ name: "a", data: readOde(COMP) }], 0.3));
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg).toContain("</svg>");
  });
});

describe("cli", () => {
  it("parses run dirs and flags", () => {
    const args = parseArgs(["d1", "d2", "--out", "o", "--q-star", "0.4"]);
    expect(args.runDirs).toEqual(["d1", "d2"]);
    expect(args.out).toBe("o");
    expect(args.qStar).toBe(0.4);
  });

  it("rejects non-svg formats", () => {
    expect(() => parseArgs(["d", "--out", "o", "--format", "png"])).toThrowError(
      /only svg/,
    );
  });

  it("requires run dirs and --out", () => {
    expect(() => parseArgs(["--out", "o"])).toThrowError(/usage/);
    expect(() => parseArgs(["d1"])).toThrowError(/--out/);
  });

  it("writes all figure families for the fixtures", () => {
    const out = mkdtempSync(join(tmpdir(), "figs-"));
    const written = makeFigures({
      runDirs: [COMP, UNCOMP],
      out,
      qStar: 0.3,
      format: "svg",
    });
    expect(written.length).toBe(4);
    for (const path of written) {
      expect(existsSync(path)).toBe(true);
      expect(readFileSync(path, "utf-8")).toContain("</svg>");
    }
    expect(existsSync(join(out, "pde_heatmap_run_comp.svg"))).toBe(true);
    expect(existsSync(join(out, "pde_heatmap_run_uncomp.svg"))).toBe(true);
  });

  it("exits nonzero and names the file when a log is missing", () => {
    const out = mkdtempSync(join(tmpdir(), "figs-"));
    const errors: string[] = [];
    const orig = console.error;
    console.error = (msg: string) => errors.push(String(msg));
    try {
      const rc = main(["/nonexistent/run", "--out", out]);
      expect(rc).toBe(1);
    } finally {
      console.error = orig;
    }
    expect(errors.join("\n")).toContain("ode.csv");
  });

  it("single run dir still produces the trace overlay", () => {
    const out = mkdtempSync(join(tmpdir(), "figs-"));
    const written = makeFigures({
      runDirs: [COMP],
      out,
      qStar: 0.3,
      format: "svg",
    });
    expect(written.length).toBe(3);
  });
});
