import init, { sample_glyph, theta, warp_image, ssim, threshold_sweep } from "./pkg/siamddi_web.js";

const SIZE = 64;
const $ = (id) => document.getElementById(id);

function draw(canvas, pixels) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(SIZE, SIZE);
  pixels.forEach((v, i) => {
    const g = Math.round(v * 255);
    img.data.set([g, g, g, 255], i * 4);
  });
  ctx.putImageData(img, 0, 0);
}

let glyph;

function updateWarp() {
  const deg = +$("deg").value;
  const scale = +$("scale").value / 100;
  const tx = +$("tx").value / 100;
  const ty = +$("ty").value / 100;
  $("deg-v").value = deg;
  $("scale-v").value = scale.toFixed(2);
  $("tx-v").value = tx.toFixed(2);
  $("ty-v").value = ty.toFixed(2);
  const th = theta(deg, scale, tx, ty);
  $("theta").textContent = "[" + Array.from(th, (v) => v.toFixed(3)).join(", ") + "]";
  const warped = warp_image(glyph, SIZE, th);
  draw($("warped"), warped);
  $("ssim").value = ssim(glyph, warped).toFixed(4);
}

function plot(s) {
  const c = $("curve");
  const ctx = c.getContext("2d");
  const { width: w, height: h } = c;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, 10, w - pad - 10, h - pad - 10);
  const lo = s.thresholds[0];
  const hi = s.thresholds[s.thresholds.length - 1];
  const x = (t) => pad + ((t - lo) / (hi - lo || 1)) * (w - pad - 10);
  const y = (v) => h - pad - v * (h - pad - 10);
  const series = [["precision", "#1f77b4"], ["recall", "#d62728"], ["f1", "#2ca02c"]];
  series.forEach(([key, color], k) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    s[key].forEach((v, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, x(s.thresholds[i]), y(v)));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(key, w - 70, 24 + 14 * k);
  });
  ctx.strokeStyle = "#000";
  ctx.setLineDash([4, 3]);
  ctx.beginPath();
  ctx.moveTo(x(s.selected_threshold), 10);
  ctx.lineTo(x(s.selected_threshold), h - pad);
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.fillStyle = "#000";
  ctx.fillText(lo.toFixed(2), pad, h - 12);
  ctx.fillText(hi.toFixed(2), w - 40, h - 12);
}

function updateSweep() {
  const rows = $("pairs").value.split("\n").map((l) => l.trim()).filter(Boolean);
  try {
    const parsed = rows.map((l) => {
      const [d, y] = l.split(",").map(Number);
      if (!Number.isFinite(d) || (y !== 0 && y !== 1)) throw new Error(`bad line: ${l}`);
      return [d, y];
    });
    const d = Float64Array.from(parsed, (p) => p[0]);
    const y = Uint8Array.from(parsed, (p) => p[1]);
    const s = JSON.parse(threshold_sweep(d, y, +$("margin").value));
    $("sweep-out").textContent =
      `selected threshold ${s.selected_threshold} (F1 ${s.selected_f1.toFixed(3)}), ` +
      `contrastive loss ${s.loss.toFixed(4)}`;
    plot(s);
  } catch (e) {
    $("sweep-out").textContent = String(e.message ?? e);
  }
}

await init();
glyph = sample_glyph(SIZE);
draw($("source"), glyph);
for (const id of ["deg", "scale", "tx", "ty"]) $(id).addEventListener("input", updateWarp);
$("pairs").addEventListener("input", updateSweep);
$("margin").addEventListener("input", updateSweep);
updateWarp();
updateSweep();
