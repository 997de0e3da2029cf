// SPDX-License-Identifier: MIT OR Apache-2.0
import init, { fitMap, epsilonSweep, promptSweep } from "./pkg/sake_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

const COLORS = {
  accuracy: "#e63946",
  generality: "#f4a261",
  specificity: "#2a9d8f",
  rs: "#264653",
  ci: "#8d99ae",
};

function covFrom(sx, sy, rho) {
  return [[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]];
}

function drawMap() {
  const req = {
    source: { mean: [-2, -1], cov: covFrom(1, 0.6, num("srho")) },
    target: { mean: [num("mx"), num("my")], cov: covFrom(num("sx"), num("sy"), num("rho")) },
    points: 300,
    seed: 7,
  };
  let res;
  try {
    res = JSON.parse(fitMap(JSON.stringify(req)));
  } catch (e) {
    $("map-out").textContent = String(e);
    return;
  }
  const c = $("map-canvas");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const scale = 40;
  const tx = (p) => [c.width / 2 + p[0] * scale, c.height / 2 - p[1] * scale];

  g.strokeStyle = "#eee";
  for (let i = -7; i <= 7; i++) {
    const [x] = tx([i, 0]);
    const [, y] = tx([0, i]);
    g.beginPath(); g.moveTo(x, 0); g.lineTo(x, c.height); g.stroke();
    g.beginPath(); g.moveTo(0, y); g.lineTo(c.width, y); g.stroke();
  }
  const dots = (pts, color, r = 2) => {
    g.fillStyle = color;
    for (const p of pts) {
      const [x, y] = tx(p);
      g.beginPath(); g.arc(x, y, r, 0, 2 * Math.PI); g.fill();
    }
  };
  g.globalAlpha = 0.35;
  dots(res.source, "#888");
  dots(res.target, "#2a9d8f");
  g.globalAlpha = 0.75;
  if ($("show-uniform").checked) dots(res.uniform_mapped, "#457b9d");
  dots(res.ot_mapped, "#e76f51");
  g.globalAlpha = 1;

  const f = (x) => x.toFixed(3).padStart(7);
  const m = (a) => `[${f(a[0][0])} ${f(a[0][1])}]\n  [${f(a[1][0])} ${f(a[1][1])}]`;
  $("map-out").textContent =
    `transport A =\n  ${m(res.ot.a)}\n  b = (${res.ot.b.map((v) => v.toFixed(3)).join(", ")})\n` +
    `uniform b = (${res.uniform.b.map((v) => v.toFixed(3)).join(", ")})`;
}

function lineChart(canvas, series, xs, opts) {
  const g = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, L = 44, R = 110, T = 12, B = 32;
  g.clearRect(0, 0, W, H);
  const [x0, x1] = [xs[0], xs[xs.length - 1]];
  const sx = (x) => {
    const t = opts.logX ? Math.log(x / x0) / Math.log(x1 / x0) : (x - x0) / (x1 - x0 || 1);
    return L + t * (W - L - R);
  };
  const sy = (y) => T + (1 - y / 100) * (H - T - B);

  g.strokeStyle = "#ccc"; g.fillStyle = "#555"; g.font = "11px system-ui";
  for (let y = 0; y <= 100; y += 25) {
    g.beginPath(); g.moveTo(L, sy(y)); g.lineTo(W - R, sy(y)); g.stroke();
    g.fillText(String(y), 12, sy(y) + 4);
  }
  for (const x of opts.ticks ?? xs) g.fillText(String(+x.toFixed(2)), sx(x) - 8, H - 12);
  g.fillText(opts.xlabel, W - R + 8, H - 12);

  let ly = T + 6;
  for (const s of series) {
    g.strokeStyle = s.color; g.lineWidth = 2; g.setLineDash(s.dash ?? []);
    g.beginPath();
    let started = false;
    s.values.forEach((v, i) => {
      if (v === null || v === undefined) return;
      const [x, y] = [sx(xs[i]), sy(v)];
      started ? g.lineTo(x, y) : g.moveTo(x, y);
      started = true;
    });
    g.stroke();
    g.setLineDash([]);
    if (s.label) {
      g.fillStyle = s.color; g.fillRect(W - R + 8, ly - 6, 10, 3);
      g.fillStyle = "#333"; g.fillText(s.label, W - R + 22, ly);
      ly += 15;
    }
  }
  g.lineWidth = 1;
}

function metricSeries(rows, keys, dash, withLabel) {
  return keys.map((k) => ({
    color: COLORS[k],
    dash,
    label: withLabel ? k : null,
    values: rows.map((r) => r.metrics[k]),
  }));
}

function runEpsilon() {
  const lo = num("e-lo"), hi = num("e-hi");
  const n = 18;
  const grid = Array.from({ length: n }, (_, i) => lo * Math.pow(hi / lo, i / (n - 1)));
  const req = { seed: num("e-seed"), edits: num("e-edits"), drift: num("e-drift"), grid, kind: "ot" };
  try {
    const res = JSON.parse(epsilonSweep(JSON.stringify(req)));
    const rows = res.ot;
    const total = Math.max(...rows.map((r) => r.scope_matched)) || 1;
    const series = metricSeries(rows, ["accuracy", "generality", "specificity", "rs"], [], true);
    series.push({
      color: "#999", dash: [3, 3], label: "% steered",
      values: rows.map((r) => (100 * r.scope_matched) / total),
    });
    lineChart($("eps-canvas"), series, grid, {
      logX: true, xlabel: "ε", ticks: grid.filter((_, i) => i % 3 === 0),
    });
  } catch (e) {
    $("status").textContent = String(e);
  }
}

function runPrompts() {
  const sizes = [2, 5, 10, 20, 35, 50, 75, 100];
  const req = { seed: num("p-seed"), edits: num("p-edits"), drift: num("p-drift"), sizes };
  try {
    const res = JSON.parse(promptSweep(JSON.stringify(req)));
    const keys = ["accuracy", "generality", "specificity"];
    const series = [
      ...metricSeries(res.ot, keys, [], true),
      ...metricSeries(res.uniform, keys, [6, 4], false),
    ];
    lineChart($("prm-canvas"), series, sizes, { xlabel: "n" });
  } catch (e) {
    $("status").textContent = String(e);
  }
}

await init();
$("status").textContent = "";
for (const id of ["mx", "my", "sx", "sy", "rho", "srho", "show-uniform"]) $(id).addEventListener("input", drawMap);
$("e-run").addEventListener("click", runEpsilon);
$("p-run").addEventListener("click", runPrompts);
drawMap();
runEpsilon();
runPrompts();
