/**
 * The three figure families rendered from run logs: buffer-load traces per
 * scenario with the setpoint line, space-time heatmaps of the line density,
 * and the boundary kernel trace. Charts are rendered server-side to SVG.
 */
import * as echarts from "echarts";
import type { GainsSeries, OdeSeries, PdeSnapshots } from "./csv.js";

export interface NamedRun<T> {
  name: string;
  data: T;
}

const WIDTH = 860;
const HEIGHT = 520;
const PALETTE = ["#c23531", "#2f4554", "#61a0a8", "#d48265", "#91c7ae"];

export function odeTracesOption(
  runs: NamedRun<OdeSeries>[],
  qStar: number,
): echarts.EChartsCoreOption {
  const series: object[] = runs.map((run, i) => ({
    name: run.name,
    type: "line",
    showSymbol: false,
    lineStyle: { width: 2, color: PALETTE[i % PALETTE.length] },
    itemStyle: { color: PALETTE[i % PALETTE.length] },
    data: run.data.t.map((t, k) => [t, run.data.Q[k]]),
  }));
  series.push({
    name: "setpoint",
    type: "line",
    showSymbol: false,
    lineStyle: { type: "dashed", width: 1, color: "#666" },
    itemStyle: { color: "#666" },
    data: [
      [runs[0].data.t[0], qStar],
      [runs[0].data.t[runs[0].data.t.length - 1], qStar],
    ],
  });
  return {
    animation: false,
    title: { text: "Buffer load under each control scenario" },
    legend: { top: 28 },
    grid: { left: 60, right: 24, top: 64, bottom: 48 },
    xAxis: { type: "value", name: "t" },
    yAxis: { type: "value", name: "Q(t)" },
    series,
  };
}

export function pdeHeatmapOption(
  run: NamedRun<PdeSnapshots>,
  domainLength = 2.0,
): echarts.EChartsCoreOption {
  const { t, x, values } = run.data;
  const cells: [number, number, number][] = [];
  let vmax = 0;
  for (let i = 0; i < t.length; i++) {
    for (let j = 0; j < x.length; j++) {
      const v = values[i][j];
      vmax = Math.max(vmax, Math.abs(v));
      cells.push([i, j, v]);
    }
  }
  return {
    animation: false,
    title: { text: `Line density over space and time (${run.name})` },
    grid: { left: 70, right: 90, top: 48, bottom: 48 },
    xAxis: {
      type: "category",
      name: "t",
      data: t.map((v) => v.toFixed(2)),
    },
    yAxis: {
      type: "category",
      name: "x",
      data: x.map((v) => (v * domainLength).toFixed(3)),
    },
    visualMap: {
      min: 0,
      max: vmax > 0 ? vmax : 1,
      calculable: false,
      orient: "vertical",
      right: 8,
      top: "center",
      inRange: { color: ["#f7fbff", "#6baed6", "#08306b"] },
    },
    series: [
      {
        type: "heatmap",
        data: cells,
        progressive: 0,
        emphasis: { disabled: true },
      },
    ],
  };
}

export function kernelTraceOption(
  runs: NamedRun<GainsSeries>[],
): echarts.EChartsCoreOption {
  return {
    animation: false,
    title: { text: "Boundary kernel value over time" },
    legend: { top: 28 },
    grid: { left: 70, right: 24, top: 64, bottom: 48 },
    xAxis: { type: "value", name: "t" },
    yAxis: { type: "value", name: "K(D,D,t)", min: "dataMin", max: "dataMax" },
    series: runs.map((run, i) => ({
      name: run.name,
      type: "line",
      showSymbol: false,
      lineStyle: { width: 2, color: PALETTE[i % PALETTE.length] },
      itemStyle: { color: PALETTE[i % PALETTE.length] },
      data: run.data.t.map((t, k) => [t, run.data.K_DD[k]]),
    })),
  };
}

export function renderSvg(option: echarts.EChartsCoreOption): string {
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width: WIDTH,
    height: HEIGHT,
  });
  try {
    chart.setOption(option);
    return chart.renderToSVGString();
  } finally {
    chart.dispose();
  }
}
