import init, { frame_width, frame_height, orbit_frame, detect, disparity, Assignment } from "./pkg/slamfrontkit_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function drawGray(ctx, w, h, gray) {
  const img = ctx.createImageData(w, h);
  for (let i = 0; i < w * h; i++) {
    img.data.set([gray[i], gray[i], gray[i], 255], i * 4);
  }
  ctx.putImageData(img, 0, 0);
}

function timed(f) {
  const t = performance.now();
  const out = f();
  return [out, performance.now() - t];
}

function levelColor(level, levels) {
  return `hsl(${(level / Math.max(levels, 1)) * 300}, 90%, 50%)`;
}

function runDetect(w, h) {
  const ctx = $("d-canvas").getContext("2d");
  const gray = orbit_frame(num("d-frame"), false);
  drawGray(ctx, w, h, gray);
  const levels = num("d-levels");
  let kps;
  let ms;
  try {
    [kps, ms] = timed(() => detect(w, h, gray, levels, num("d-scale"), num("d-budget"), num("d-nms")));
  } catch (e) {
    $("d-stat").textContent = String(e);
    return;
  }
  const perLevel = new Array(levels).fill(0);
  for (let i = 0; i < kps.length; i += 4) {
    const [x, y, level] = [kps[i], kps[i + 1], kps[i + 2]];
    perLevel[level]++;
    ctx.strokeStyle = levelColor(level, levels);
    ctx.beginPath();
    ctx.arc(x, y, 2 + 1.5 * level, 0, 2 * Math.PI);
    ctx.stroke();
  }
  $("d-stat").textContent = `${kps.length / 4} keypoints in ${ms.toFixed(1)} ms, per level: ${perLevel.join(" ")}`;
}

function runSgm(w, h) {
  const frame = num("s-frame");
  const left = orbit_frame(frame, false);
  const right = orbit_frame(frame, true);
  drawGray($("s-left").getContext("2d"), w, h, left);
  const dmax = num("s-dmax");
  let d;
  let ms;
  try {
    [d, ms] = timed(() => disparity(w, h, left, right, dmax, num("s-window"), num("s-dirs")));
  } catch (e) {
    $("s-stat").textContent = String(e);
    return;
  }
  const ctx = $("s-disp").getContext("2d");
  const img = ctx.createImageData(w, h);
  let valid = 0;
  for (let i = 0; i < w * h; i++) {
    if (d[i] < 0) {
      img.data.set([40, 0, 60, 255], i * 4);
      continue;
    }
    valid++;
    const v = Math.round((255 * d[i]) / dmax);
    img.data.set([v, v, 255 - v, 255], i * 4);
  }
  ctx.putImageData(img, 0, 0);
  $("s-stat").textContent = `${valid} of ${w * h} pixels valid, ${ms.toFixed(1)} ms`;
}

function runAssign() {
  let a;
  let ms;
  try {
    [a, ms] = timed(
      () => new Assignment(num("a-m"), num("a-n"), num("a-dim"), num("a-noise"), num("a-gain"), num("a-thr"), BigInt(num("a-seed"))),
    );
  } catch (e) {
    $("a-stat").textContent = String(e);
    return;
  }
  const [rows, cols] = [a.rows(), a.cols()];
  const p = a.probabilities();
  const matches = a.matches();
  const truth = a.truth();
  a.free();

  const canvas = $("a-canvas");
  const ctx = canvas.getContext("2d");
  const cell = Math.floor(Math.min(canvas.width / cols, canvas.height / rows));
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) {
      const v = Math.round(255 * (1 - p[i * cols + j]));
      ctx.fillStyle = `rgb(${v}, ${v}, ${v})`;
      ctx.fillRect(j * cell, i * cell, cell, cell);
    }
  }
  let correct = 0;
  let wrong = 0;
  ctx.lineWidth = 2;
  for (let i = 0; i < rows; i++) {
    if (truth[i] >= 0) {
      ctx.strokeStyle = "#2a2";
      ctx.strokeRect(truth[i] * cell + 2, i * cell + 2, cell - 4, cell - 4);
    }
    if (matches[i] >= 0) {
      const ok = matches[i] === truth[i];
      ok ? correct++ : wrong++;
      ctx.fillStyle = ok ? "#2a2" : "#d22";
      ctx.beginPath();
      ctx.arc((matches[i] + 0.5) * cell, (i + 0.5) * cell, cell / 6, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
  const pairs = truth.filter((t) => t >= 0).length;
  $("a-stat").textContent = `${correct} of ${pairs} true pairs matched, ${wrong} wrong, ${ms.toFixed(1)} ms`;
}

await init();
const [w, h] = [frame_width(), frame_height()];
for (const id of ["d-frame", "d-levels", "d-scale", "d-budget", "d-nms"]) $(id).addEventListener("input", () => runDetect(w, h));
for (const id of ["s-frame", "s-dmax", "s-window", "s-dirs"]) $(id).addEventListener("change", () => runSgm(w, h));
for (const id of ["a-m", "a-n", "a-dim", "a-noise", "a-gain", "a-thr", "a-seed"]) $(id).addEventListener("input", runAssign);
runDetect(w, h);
runSgm(w, h);
runAssign();
