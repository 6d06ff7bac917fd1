// Page logic for the closure lab. All numerics live in the wasm module;
// this file only drives controls and draws curves.

import init, { FullModelSim, ClosureLab } from "./pkg/qsn_wasm.js";

const $ = (id) => document.getElementById(id);

// ---------------------------------------------------------------- plotting

function clearCanvas(ctx) {
  ctx.fillStyle = "#0c0f14";
  ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
}

function drawAxes(ctx, xmin, xmax, ymin, ymax) {
  ctx.strokeStyle = "#2a3442";
  ctx.lineWidth = 1;
  ctx.strokeRect(30.5, 6.5, ctx.canvas.width - 40, ctx.canvas.height - 26);
  ctx.fillStyle = "#8b94a3";
  ctx.font = "10px system-ui";
  ctx.fillText(xmin.toPrecision(3), 26, ctx.canvas.height - 6);
  ctx.fillText(xmax.toPrecision(3), ctx.canvas.width - 34, ctx.canvas.height - 6);
  ctx.fillText(ymax.toPrecision(3), 2, 14);
  ctx.fillText(ymin.toPrecision(3), 2, ctx.canvas.height - 20);
}

function drawLine(ctx, xs, ys, xmin, xmax, ymin, ymax, color, dash = []) {
  const w = ctx.canvas.width - 40;
  const h = ctx.canvas.height - 26;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.6;
  ctx.setLineDash(dash);
  ctx.beginPath();
  for (let i = 0; i < xs.length; i++) {
    const px = 30 + ((xs[i] - xmin) / (xmax - xmin)) * w;
    const py = 6 + h - ((ys[i] - ymin) / (ymax - ymin)) * h;
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  }
  ctx.stroke();
  ctx.setLineDash([]);
}

function plotCurves(canvas, grid, rows, colors, dashes = []) {
  const ctx = canvas.getContext("2d");
  clearCanvas(ctx);
  const xmin = grid[0];
  const xmax = grid[grid.length - 1];
  let ymin = Infinity;
  let ymax = -Infinity;
  for (const r of rows) for (const v of r) { ymin = Math.min(ymin, v); ymax = Math.max(ymax, v); }
  if (!(ymax > ymin)) { ymax = ymin + 1; }
  const pad = 0.06 * (ymax - ymin);
  ymin -= pad; ymax += pad;
  drawAxes(ctx, xmin, xmax, ymin, ymax);
  rows.forEach((r, i) => drawLine(ctx, grid, r, xmin, xmax, ymin, ymax, colors[i], dashes[i] || []));
}

// diverging colormap for the field view
function fieldColor(v, lo, hi) {
  const t = Math.max(0, Math.min(1, (v - lo) / (hi - lo)));
  const r = Math.round(40 + 215 * t);
  const b = Math.round(255 - 215 * t);
  const g = Math.round(70 + 120 * (1 - Math.abs(2 * t - 1)));
  return [r, g, b];
}

// ------------------------------------------------------- full model section

let sim = null;
let simRunning = true;
let fieldRows = [];
const FIELD_HISTORY = 300;
let frame = 0;

function restartSim() {
  const hx = parseFloat($("hx").value);
  const eps = parseFloat($("eps").value);
  try {
    sim = new FullModelSim(hx, eps, $("plusf").checked, 1n);
    fieldRows = [];
    $("sim-status").textContent = "";
  } catch (e) {
    $("sim-status").textContent = `failed to start: ${e}`;
    $("sim-status").className = "status err";
    sim = null;
  }
}

function drawField() {
  const canvas = $("hovmoller");
  const ctx = canvas.getContext("2d");
  const n = sim.n_sites();
  const img = ctx.createImageData(n, FIELD_HISTORY);
  for (let row = 0; row < fieldRows.length; row++) {
    const values = fieldRows[row];
    for (let s = 0; s < n; s++) {
      const [r, g, b] = fieldColor(values[s], -10, 14);
      const o = 4 * (row * n + s);
      img.data[o] = r; img.data[o + 1] = g; img.data[o + 2] = b; img.data[o + 3] = 255;
    }
  }
  createImageBitmap(img).then((bmp) => {
    ctx.imageSmoothingEnabled = false;
    ctx.fillStyle = "#0c0f14";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.drawImage(bmp, 0, 0, canvas.width, canvas.height);
  });
}

function simFrame() {
  if (sim && simRunning) {
    try {
      const t = sim.step(4);
      $("sim-time").textContent = t.toFixed(1);
      fieldRows.push(sim.x());
      if (fieldRows.length > FIELD_HISTORY) fieldRows.shift();
      if (frame % 2 === 0) drawField();
      if (frame % 30 === 0) {
        const pdf = sim.pdf(128);
        if (pdf.length === 256) {
          plotCurves($("live-pdf"), pdf.slice(0, 128), [pdf.slice(128)], ["#57b3ff"]);
        }
      }
    } catch (e) {
      $("sim-status").textContent = `${e}`;
      $("sim-status").className = "status err";
      sim = null;
    }
  }
  frame++;
  requestAnimationFrame(simFrame);
}

// ----------------------------------------------------------- closure section

let lab = null;
let lossHistory = [];
let labBusy = false;
const TRAIN_TOTAL = 3000;
const TRAIN_CHUNK = 60;

function labStatus(msg, err = false) {
  $("lab-status").textContent = msg;
  $("lab-status").className = err ? "status err" : "status";
}

function drawLoss() {
  if (lossHistory.length < 2) return;
  const xs = lossHistory.map((_, i) => i);
  plotCurves($("loss-curve"), xs, [lossHistory], ["#ffb74d"]);
}

function labGenerate() {
  if (labBusy) return;
  labBusy = true;
  labStatus("integrating the full two-layer model…");
  setTimeout(() => {
    try {
      lab = new ClosureLab($("lab-bimodal").checked, 7n);
      const rows = lab.generate(150.0);
      lossHistory = [];
      drawLoss();
      $("lab-train").disabled = false;
      $("lab-simulate").disabled = true;
      $("pmf-j").disabled = true;
      $("pmf-site").disabled = true;
      $("lab-misclass").textContent = "–";
      labStatus(`reference ready: ${rows} records; training half fitted (bins + scaler)`);
    } catch (e) {
      labStatus(`generation failed: ${e}`, true);
    }
    labBusy = false;
  }, 30);
}

function labTrain() {
  if (!lab || labBusy) return;
  labBusy = true;
  $("lab-train").disabled = true;
  const target = lab.iterations_done() + TRAIN_TOTAL;
  const tick = () => {
    try {
      const loss = lab.train_steps(TRAIN_CHUNK);
      lossHistory.push(loss);
      drawLoss();
      const done = lab.iterations_done();
      labStatus(`training… ${done} iterations, minibatch loss ${loss.toFixed(3)}`);
      if (done < target) {
        setTimeout(tick, 0);
      } else {
        const rate = lab.misclassification();
        $("lab-misclass").textContent = `${(100 * rate).toFixed(1)}%`;
        $("lab-train").disabled = false;
        $("lab-simulate").disabled = false;
        enablePmfControls();
        labStatus(`trained ${done} iterations — ready to close the model`);
        labBusy = false;
      }
    } catch (e) {
      labStatus(`training failed: ${e}`, true);
      labBusy = false;
    }
  };
  tick();
}

function labSimulate() {
  if (!lab || labBusy) return;
  labBusy = true;
  labStatus("running the reduced model with the resampling closure…");
  setTimeout(() => {
    try {
      lab.simulate($("lab-stochastic").checked);
      const pdf = lab.pdf_overlay(128);
      const n = 128;
      plotCurves($("pdf-overlay"), pdf.slice(0, n), [pdf.slice(n, 2 * n), pdf.slice(2 * n)],
        ["#57b3ff", "#6fd98f"], [[], [6, 4]]);
      const acf = lab.acf_overlay(5.0);
      const m = acf.length / 3;
      plotCurves($("acf-overlay"), acf.slice(0, m), [acf.slice(m, 2 * m), acf.slice(2 * m)],
        ["#57b3ff", "#6fd98f"], [[], [6, 4]]);
      labStatus("closed-model statistics drawn (test half of the run)");
    } catch (e) {
      labStatus(`simulation failed: ${e}`, true);
    }
    labBusy = false;
  }, 30);
}

// ------------------------------------------------------------- pmf section

function enablePmfControls() {
  const slider = $("pmf-j");
  slider.min = 9;
  slider.max = 14990;
  slider.value = 500;
  slider.disabled = false;
  $("pmf-site").disabled = false;
  drawPmf();
}

function drawPmf() {
  if (!lab) return;
  const j = parseInt($("pmf-j").value, 10);
  const site = parseInt($("pmf-site").value, 10);
  $("pmf-j-val").textContent = j;
  $("pmf-site-val").textContent = site;
  let data;
  try {
    data = lab.pmf_at(j, site);
  } catch {
    return;
  }
  const m = data.length - 1;
  const truth = Math.round(data[m]);
  const canvas = $("pmf-bars");
  const ctx = canvas.getContext("2d");
  clearCanvas(ctx);
  const w = canvas.width - 40;
  const h = canvas.height - 30;
  const peak = Math.max(...data.slice(0, m), 1e-9);
  for (let b = 0; b < m; b++) {
    const bh = (data[b] / peak) * (h - 10);
    const bw = w / m - 6;
    const x = 30 + (b * w) / m + 3;
    ctx.fillStyle = b === truth ? "#ffb74d" : "#57b3ff";
    ctx.fillRect(x, 6 + h - bh, bw, bh);
    ctx.fillStyle = "#8b94a3";
    ctx.font = "10px system-ui";
    ctx.fillText(String(b), x + bw / 2 - 3, canvas.height - 8);
  }
  ctx.fillStyle = "#8b94a3";
  ctx.fillText(`p(bin) for site ${site}, truth in orange`, 34, 16);
}

// ------------------------------------------------------------------- wiring

init().then(() => {
  $("hx").addEventListener("input", () => { $("hx-val").textContent = $("hx").value; });
  $("eps").addEventListener("input", () => { $("eps-val").textContent = $("eps").value; });
  for (const id of ["hx", "eps", "plusf"]) $(id).addEventListener("change", restartSim);
  $("sim-restart").addEventListener("click", restartSim);
  $("sim-toggle").addEventListener("click", () => {
    simRunning = !simRunning;
    $("sim-toggle").textContent = simRunning ? "pause" : "run";
  });
  $("lab-generate").addEventListener("click", labGenerate);
  $("lab-train").addEventListener("click", labTrain);
  $("lab-simulate").addEventListener("click", labSimulate);
  $("pmf-j").addEventListener("input", drawPmf);
  $("pmf-site").addEventListener("input", drawPmf);
  restartSim();
  requestAnimationFrame(simFrame);
});
