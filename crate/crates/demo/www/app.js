import init, { rate_curves, gap, spectrum, quantities } from "./pkg/ldkrr_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(canvas, xs, ys) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const pad = 40;
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y1 - y0 < 1e-9) { y0 -= 1; y1 += 1; }
  const sx = (x) => pad + (x - x0) / (x1 - x0) * (canvas.width - 2 * pad);
  const sy = (y) => canvas.height - pad - (y - y0) / (y1 - y0) * (canvas.height - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, canvas.width - 2 * pad, canvas.height - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.fillText(x0.toFixed(2), pad, canvas.height - pad + 14);
  ctx.fillText(x1.toFixed(2), canvas.width - pad - 24, canvas.height - pad + 14);
  ctx.fillText(y1.toFixed(2), 4, pad + 4);
  ctx.fillText(y0.toFixed(2), 4, canvas.height - pad);
  return { ctx, sx, sy };
}

function line(ctx, pts, color, label, row) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
  ctx.stroke();
  ctx.fillStyle = color;
  ctx.fillText(label, 60, 56 + 14 * row);
}

function plotRates() {
  $("rc-err").textContent = "";
  try {
    const s = num("rc-s");
    const family = $("rc-family").value;
    const data = JSON.parse(rate_curves(s, num("rc-gmax"), family));
    const all = data.krr.concat(data.minimax);
    const { ctx, sx, sy } = frame($("rc-canvas"), all.map((p) => p.gamma), all.map((p) => p.d_exponent));
    line(ctx, data.krr.map((p) => [sx(p.gamma), sy(p.d_exponent)]), "#c0392b", "KRR", 0);
    line(ctx, data.minimax.map((p) => [sx(p.gamma), sy(p.d_exponent)]), "#2c6fbb", "minimax", 1);
    const g = JSON.parse(gap(s, 2, family));
    $("rc-gap").textContent = `gap at gamma = 2: ${g.gap.toFixed(3)}`;
  } catch (e) {
    $("rc-err").textContent = String(e);
  }
}

function showSpectrum() {
  try {
    const sp = JSON.parse(spectrum($("sp-profile").value, num("sp-d"), num("sp-k")));
    const rows = sp.mu.map((m, k) => `k=${k}  mu=${m.toExponential(4)}  N=${sp.mult[k]}`);
    $("sp-out").textContent = rows.join("\n") + `\ntail mass ${sp.tail_mass.toExponential(3)}`;
  } catch (e) {
    $("sp-out").textContent = String(e);
  }
}

function plotQuantities() {
  $("kq-err").textContent = "";
  try {
    const rows = JSON.parse(quantities($("kq-profile").value, num("kq-d"), num("kq-s"),
      num("kq-gamma"), num("kq-lmin"), num("kq-lmax"), 61));
    const keys = [["n1", "#c0392b"], ["n2", "#e67e22"], ["m2", "#2c6fbb"], ["q2", "#27ae60"]];
    const log = (v) => Math.log10(Math.max(v, 1e-300));
    const ys = rows.flatMap((r) => keys.map(([k]) => log(r.quantities[k])));
    const { ctx, sx, sy } = frame($("kq-canvas"), rows.map((r) => r.l), ys);
    keys.forEach(([k, color], i) =>
      line(ctx, rows.map((r) => [sx(r.l), sy(log(r.quantities[k]))]), color, `log10 ${k}`, i));
  } catch (e) {
    $("kq-err").textContent = String(e);
  }
}

await init();
$("rc-go").onclick = plotRates;
$("sp-go").onclick = showSpectrum;
$("kq-go").onclick = plotQuantities;
plotRates();
showSpectrum();
plotQuantities();
