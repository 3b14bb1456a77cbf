// Demo page logic: wires the three wasm operations to canvases.
// Build the module first (from crates/wasm-demo):
//   wasm-pack build --target web --out-dir www/pkg
import init, { phase_plate, design_pattern, run_estimation, slot_names } from "./pkg/tiltshift_wasm.js";

const MAX_ORDER = 4; // 14 coefficient slots
const PHASE_RES = 140;

const $ = (id) => document.getElementById(id);

function currentCoefficients() {
  // Canonical packing for order 4:
  // re_c11 im_c11 c20 re_c22 im_c22 re_c31 im_c31 re_c33 im_c33 c40 re_c42 im_c42 re_c44 im_c44
  const nm = new Float64Array(14);
  nm[2] = parseFloat($("c20").value);
  nm[3] = parseFloat($("c22r").value);
  nm[4] = parseFloat($("c22i").value);
  nm[5] = parseFloat($("c31").value) * 1000; // um -> nm
  nm[9] = parseFloat($("c40").value) * 1000;
  return nm;
}

function drawPhase() {
  const grid = phase_plate(MAX_ORDER, currentCoefficients(), 300.0, 4.0, PHASE_RES);
  const canvas = $("phase-canvas");
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(PHASE_RES, PHASE_RES);
  for (let i = 0; i < grid.length; i++) {
    // Wrap the phase so each 2*pi period spans the gray ramp.
    const wrapped = ((grid[i] % (2 * Math.PI)) + 2 * Math.PI) % (2 * Math.PI);
    const level = Math.round((wrapped / (2 * Math.PI)) * 255);
    img.data[4 * i] = level;
    img.data[4 * i + 1] = level;
    img.data[4 * i + 2] = level;
    img.data[4 * i + 3] = 255;
  }
  // Scale the field image up to the canvas.
  const off = new OffscreenCanvas(PHASE_RES, PHASE_RES);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

const PALETTE = { greedy: "#0a6cff", rho: "#7a3fd1", lissajous: "#e8743b", random: "#1a9e77" };
let traceHistory = [];
let lastPattern = null;

function drawPattern(pattern) {
  const canvas = $("pattern-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const c = canvas.width / 2;
  const maxBound = Math.max(...pattern.bounds);
  const scale = (canvas.width / 2 - 12) / maxBound;
  ctx.strokeStyle = "#d8dbe0";
  ctx.beginPath();
  ctx.arc(c, c, maxBound * scale, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.beginPath();
  ctx.moveTo(c - 5, c); ctx.lineTo(c + 5, c); ctx.moveTo(c, c - 5); ctx.lineTo(c, c + 5);
  ctx.stroke();

  ctx.strokeStyle = PALETTE[pattern.kind] || "#333";
  ctx.fillStyle = ctx.strokeStyle;
  ctx.beginPath();
  pattern.tilts.forEach(([tx, ty], k) => {
    const x = c + tx * scale, y = c - ty * scale;
    if (k === 0) ctx.moveTo(x, y); else ctx.lineTo(x, y);
  });
  ctx.stroke();
  pattern.tilts.forEach(([tx, ty]) => {
    ctx.beginPath();
    ctx.arc(c + tx * scale, c - ty * scale, 2.2, 0, 2 * Math.PI);
    ctx.fill();
  });
}

function drawTraces() {
  const canvas = $("trace-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (traceHistory.length === 0) return;
  const all = traceHistory.flatMap((t) => t.trajectory);
  const lo = Math.log10(Math.min(...all)), hi = Math.log10(Math.max(...all));
  const n = Math.max(...traceHistory.map((t) => t.trajectory.length));
  const px = (k) => 40 + (k / (n - 1)) * (canvas.width - 52);
  const py = (v) => 8 + (1 - (Math.log10(v) - lo) / (hi - lo || 1)) * (canvas.height - 34);

  ctx.strokeStyle = "#d8dbe0";
  ctx.fillStyle = "#667";
  ctx.font = "11px system-ui";
  ctx.beginPath();
  ctx.moveTo(40, 8); ctx.lineTo(40, canvas.height - 26); ctx.lineTo(canvas.width - 10, canvas.height - 26);
  ctx.stroke();
  ctx.fillText("tr(W P) (log)", 4, 16);
  ctx.fillText("time index k", canvas.width / 2 - 26, canvas.height - 8);

  for (const t of traceHistory) {
    ctx.strokeStyle = PALETTE[t.kind] || "#333";
    ctx.beginPath();
    t.trajectory.forEach((v, k) => {
      if (k === 0) ctx.moveTo(px(k), py(v)); else ctx.lineTo(px(k), py(v));
    });
    ctx.stroke();
  }
  $("trace-legend").innerHTML = traceHistory
    .map((t) => `<span><i style="background:${PALETTE[t.kind] || "#333"}"></i>${t.kind} (final ${t.final.toExponential(2)})</span>`)
    .join("");
}

async function design() {
  const btn = $("design-btn");
  btn.disabled = true;
  btn.textContent = "designing…";
  await new Promise((r) => setTimeout(r, 20)); // let the label paint
  try {
    const kind = $("pattern-kind").value;
    const json = design_pattern(
      kind,
      MAX_ORDER,
      parseInt($("n-steps").value),
      parseFloat($("bound").value),
      5,
      parseInt($("starts").value),
      BigInt($("seed").value),
    );
    const pattern = JSON.parse(json);
    lastPattern = { json, kind };
    drawPattern(pattern);
    traceHistory = traceHistory.filter((t) => t.kind !== kind).slice(-3);
    traceHistory.push({ kind, trajectory: pattern.cost_trajectory, final: pattern.final_cost });
    drawTraces();
    $("estimate-btn").disabled = false;
  } finally {
    btn.disabled = false;
    btn.textContent = "design pattern";
  }
}

function drawEstimation(result, slotLabels) {
  const canvas = $("estimate-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const slots = result.slots;
  const w = (canvas.width - 60) / slots.length;
  const maxAbs = Math.max(
    1e-9,
    ...slots.flatMap((s) => [Math.abs(s.truth), Math.abs(s.estimate), 2 * s.predicted_std]),
  );
  const mid = (canvas.height - 40) / 2 + 10;
  const scale = (canvas.height / 2 - 36) / maxAbs;

  ctx.strokeStyle = "#d8dbe0";
  ctx.beginPath();
  ctx.moveTo(30, mid); ctx.lineTo(canvas.width - 10, mid);
  ctx.stroke();
  ctx.font = "10px system-ui";

  slots.forEach((s, j) => {
    const x = 40 + j * w + w / 2;
    // truth tick
    ctx.strokeStyle = "#1c1e21";
    ctx.beginPath();
    ctx.moveTo(x - 7, mid - s.truth * scale);
    ctx.lineTo(x + 7, mid - s.truth * scale);
    ctx.stroke();
    // estimate dot with +-2 sigma bar
    ctx.strokeStyle = "#0a6cff";
    ctx.fillStyle = "#0a6cff";
    ctx.beginPath();
    ctx.moveTo(x, mid - (s.estimate - 2 * s.predicted_std) * scale);
    ctx.lineTo(x, mid - (s.estimate + 2 * s.predicted_std) * scale);
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(x, mid - s.estimate * scale, 3, 0, 2 * Math.PI);
    ctx.fill();
    // label
    ctx.fillStyle = "#667";
    ctx.save();
    ctx.translate(x, canvas.height - 4);
    ctx.rotate(-Math.PI / 4);
    ctx.fillText(slotLabels[j] ?? s.slot, 0, 0);
    ctx.restore();
  });
  ctx.fillStyle = "#667";
  ctx.font = "11px system-ui";
  ctx.fillText("normalized state value: tick = truth, dot = estimate ± 2σ predicted", 36, 14);
}

function estimate() {
  if (!lastPattern) return;
  const result = JSON.parse(
    run_estimation(lastPattern.json, MAX_ORDER, parseFloat($("bound").value), BigInt($("sim-seed").value)),
  );
  drawEstimation(result, result.slots.map((s) => s.slot));
}

await init();

for (const id of ["c20", "c22r", "c22i", "c31", "c40"]) {
  $(id).addEventListener("input", drawPhase);
}
// live value outputs
const bindOutput = (input, output) => $(input).addEventListener("input", () => ($(output).textContent = $(input).value));
bindOutput("c20", "v-c20"); bindOutput("c22r", "v-c22r"); bindOutput("c22i", "v-c22i");
bindOutput("c31", "v-c31"); bindOutput("c40", "v-c40");
bindOutput("n-steps", "v-n"); bindOutput("bound", "v-bound"); bindOutput("starts", "v-starts");

$("design-btn").addEventListener("click", design);
$("estimate-btn").addEventListener("click", estimate);

drawPhase();
console.log("slots:", slot_names(MAX_ORDER));
