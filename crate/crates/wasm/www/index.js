import init, { detectorFields, ocsvmTrace, BoostedSurface } from "./pkg/censorml_wasm.js";

const GRID = 64;
const $ = (id) => document.getElementById(id);

function status(msg) {
  $("status").textContent = msg || "";
}

function bindRange(id, onChange) {
  const input = $(id);
  const out = $(id + "-v");
  const show = () => { out.textContent = input.value; };
  input.addEventListener("input", () => { show(); onChange(); });
  show();
  return () => Number(input.value);
}

function pointAt(canvas, ev) {
  const r = canvas.getBoundingClientRect();
  return [(ev.clientX - r.left) / r.width, 1 - (ev.clientY - r.top) / r.height];
}

// Blue for low, red for high; `lo`/`hi` bound the colour scale.
function heat(canvas, values, size, lo, hi, diverging) {
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / size;
  for (let r = 0; r < size; r++) {
    for (let c = 0; c < size; c++) {
      const v = values[r * size + c];
      let t = (v - lo) / (hi - lo || 1);
      t = Math.min(1, Math.max(0, t));
      let rgb;
      if (diverging) {
        rgb = t < 0.5 ? [255 * 2 * t, 255 * 2 * t, 255] : [255, 255 * 2 * (1 - t), 255 * 2 * (1 - t)];
      } else {
        rgb = [255, 255 * (1 - t), 255 * (1 - t) * 0.9];
      }
      ctx.fillStyle = `rgb(${rgb.map(Math.round).join(",")})`;
      ctx.fillRect(c * cell, r * cell, Math.ceil(cell), Math.ceil(cell));
    }
  }
}

function dots(canvas, pts, colour) {
  const ctx = canvas.getContext("2d");
  pts.forEach(([x, y], i) => {
    ctx.beginPath();
    ctx.arc(x * canvas.width, (1 - y) * canvas.height, 3.5, 0, Math.PI * 2);
    ctx.fillStyle = colour(i);
    ctx.fill();
    ctx.strokeStyle = "#fff";
    ctx.stroke();
  });
}

function blank(canvas, text) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#888";
  ctx.font = "13px system-ui";
  ctx.fillText(text, 12, 22);
}

function cloud(cx, cy, spread, n) {
  const out = [];
  for (let i = 0; i < n; i++) {
    const a = Math.random() * Math.PI * 2;
    const r = spread * Math.sqrt(-2 * Math.log(1 - Math.random())) / 2;
    out.push([cx + r * Math.cos(a), cy + r * Math.sin(a)]);
  }
  return out;
}

const flat = (pts) => new Float64Array(pts.flat());

// Isolation forest next to the one-class SVM.
function detectors() {
  let pts = [];
  const cont = bindRange("d-cont", draw);
  const nu = bindRange("d-nu", draw);

  function draw() {
    const [a, b] = [$("d-if"), $("d-svm")];
    if (pts.length < 4) {
      blank(a, "place at least 4 points");
      blank(b, "place at least 4 points");
      return;
    }
    try {
      const f = detectorFields(flat(pts), GRID, cont(), nu(), 7);
      const scores = f.iforest;
      heat(a, scores, GRID, Math.min(...scores), Math.max(...scores), false);
      const margins = f.ocsvm;
      const m = Math.max(...margins.map(Math.abs));
      heat(b, margins.map((v) => -v), GRID, -m, m, true);
      const fi = f.iforestFlags;
      const fo = f.ocsvmFlags;
      dots(a, pts, (i) => (fi[i] ? "#d00" : "#222"));
      dots(b, pts, (i) => (fo[i] ? "#d00" : "#222"));
      f.free();
      status();
    } catch (e) {
      status(e.message);
    }
  }

  for (const id of ["d-if", "d-svm"]) {
    $(id).addEventListener("click", (ev) => { pts.push(pointAt($(id), ev)); draw(); });
  }
  $("d-cloud").onclick = () => { pts = pts.concat(cloud(0.3 + 0.4 * Math.random(), 0.3 + 0.4 * Math.random(), 0.12, 60)); draw(); };
  $("d-clear").onclick = () => { pts = []; draw(); };
  pts = cloud(0.45, 0.5, 0.12, 80).concat([[0.9, 0.85], [0.1, 0.15]]);
  draw();
}

function curve(canvas, ys) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 36;
  ctx.clearRect(0, 0, w, h);
  if (!ys.length) return;
  const lo = Math.min(...ys), hi = Math.max(...ys);
  const x = (i) => pad + (i / Math.max(1, ys.length - 1)) * (w - 2 * pad);
  const y = (v) => h - pad - ((v - lo) / (hi - lo || 1)) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  ctx.fillText(hi.toPrecision(4), 2, pad + 4);
  ctx.fillText(lo.toPrecision(4), 2, h - pad);
  ctx.fillText("epoch " + ys.length, w - pad - 50, h - 12);
  ctx.beginPath();
  ys.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
  ctx.strokeStyle = "#1458c4";
  ctx.lineWidth = 2;
  ctx.stroke();
  ctx.lineWidth = 1;
}

// One-class SVM objective per epoch and its decision field.
function training() {
  let pts = [];
  const nu = bindRange("o-nu", draw);
  const epochs = bindRange("o-ep", draw);

  function draw() {
    const field = $("o-field");
    if (pts.length < 2) {
      blank(field, "place at least 2 points");
      curve($("o-curve"), []);
      return;
    }
    try {
      const t = ocsvmTrace(flat(pts), GRID, nu(), epochs(), 11);
      const f = t.field;
      const m = Math.max(...f.map(Math.abs));
      heat(field, f.map((v) => -v), GRID, -m, m, true);
      const inside = (p) => f[Math.min(GRID - 1, Math.floor((1 - p[1]) * GRID)) * GRID + Math.min(GRID - 1, Math.floor(p[0] * GRID))] >= 0;
      dots(field, pts, (i) => (inside(pts[i]) ? "#222" : "#d00"));
      curve($("o-curve"), Array.from(t.objective));
      $("o-info").textContent = `${t.outside} of ${pts.length} training points outside, rho = ${t.rho.toFixed(4)}`;
      t.free();
      status();
    } catch (e) {
      status(e.message);
    }
  }

  $("o-field").addEventListener("click", (ev) => { pts.push(pointAt($("o-field"), ev)); draw(); });
  $("o-cloud").onclick = () => { pts = pts.concat(cloud(0.25 + 0.5 * Math.random(), 0.25 + 0.5 * Math.random(), 0.1, 50)); draw(); };
  $("o-clear").onclick = () => { pts = []; draw(); };
  pts = cloud(0.35, 0.6, 0.1, 60).concat(cloud(0.7, 0.35, 0.08, 40));
  draw();
}

function bars(canvas, parts) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  if (!parts) {
    blank(canvas, "choose explain, then click the board");
    return;
  }
  const [base, cx, cy, margin] = parts;
  const rows = [["base", base], ["x", cx], ["y", cy], ["log-odds", margin]];
  const m = Math.max(...rows.map((r) => Math.abs(r[1])), 1e-9);
  const mid = w / 2 + 30, half = w / 2 - 50, rowH = 56;
  ctx.font = "13px system-ui";
  rows.forEach(([name, v], i) => {
    const y0 = 30 + i * rowH;
    const len = (v / m) * half;
    ctx.fillStyle = i === 3 ? "#555" : v >= 0 ? "#d23" : "#1458c4";
    ctx.fillRect(Math.min(mid, mid + len), y0, Math.abs(len), 26);
    ctx.fillStyle = "#222";
    ctx.fillText(name, 8, y0 + 18);
    ctx.fillText(v.toFixed(3), 70, y0 + 18);
  });
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(mid, 20);
  ctx.lineTo(mid, 30 + 4 * rowH);
  ctx.stroke();
  const p = 1 / (1 + Math.exp(-margin));
  ctx.fillText(`probability ${p.toFixed(3)}`, 8, h - 14);
}

// Boosted trees with per-coordinate attribution of a clicked point.
function boosted() {
  let pts = [], labels = [], model = null, probe = null;
  const trees = bindRange("g-trees", draw);
  const depth = bindRange("g-depth", draw);
  const mode = () => document.querySelector('input[name="g-mode"]:checked').value;

  function draw() {
    const field = $("g-field");
    if (model) { model.free(); model = null; }
    const classes = new Set(labels);
    if (classes.size < 2) {
      blank(field, "place points of both classes");
      bars($("g-bars"), null);
      return;
    }
    try {
      model = new BoostedSurface(flat(pts), new Uint8Array(labels), trees(), depth());
      heat(field, model.field(GRID), GRID, 0, 1, true);
      dots(field, pts, (i) => (labels[i] ? "#d00" : "#1458c4"));
      if (probe) {
        const ctx = field.getContext("2d");
        ctx.strokeStyle = "#000";
        ctx.lineWidth = 2;
        ctx.strokeRect(probe[0] * field.width - 6, (1 - probe[1]) * field.height - 6, 12, 12);
        ctx.lineWidth = 1;
        bars($("g-bars"), Array.from(model.explain(probe[0], probe[1])));
      } else {
        bars($("g-bars"), null);
      }
      status();
    } catch (e) {
      status(e.message);
    }
  }

  $("g-field").addEventListener("click", (ev) => {
    const p = pointAt($("g-field"), ev);
    const m = mode();
    if (m === "explain") {
      probe = p;
    } else {
      pts.push(p);
      labels.push(Number(m));
    }
    draw();
  });
  $("g-demo").onclick = () => {
    const clean = cloud(0.35, 0.4, 0.18, 70);
    const anomalous = cloud(0.75, 0.75, 0.1, 30);
    pts = clean.concat(anomalous);
    labels = clean.map(() => 0).concat(anomalous.map(() => 1));
    probe = [0.7, 0.6];
    draw();
  };
  $("g-clear").onclick = () => { pts = []; labels = []; probe = null; draw(); };
  $("g-demo").onclick();
}

init().then(() => {
  detectors();
  training();
  boosted();
}).catch((e) => status("failed to load the WebAssembly module: " + e));
