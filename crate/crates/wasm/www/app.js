import init, { sampler_histogram, inspect, validate } from "./pkg/plcmimic_wasm.js";

const $ = (id) => document.getElementById(id);

function show(el, fn) {
  try {
    el.classList.remove("err");
    el.textContent = JSON.stringify(JSON.parse(fn()), null, 2);
  } catch (e) {
    el.classList.add("err");
    el.textContent = String(e);
  }
}

function drawHistogram(h) {
  const c = $("s-canvas");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const bins = h.weighted.length;
  const top = Math.max(...h.weighted, ...h.uniform, 1);
  const w = c.width / bins;
  const y = (v) => c.height - 20 - (v / top) * (c.height - 30);
  h.weighted.forEach((v, i) => {
    g.fillStyle = "#4a7ab8";
    g.fillRect(i * w + 1, y(v), w / 2 - 1, c.height - 20 - y(v));
  });
  h.uniform.forEach((v, i) => {
    g.fillStyle = "#bbb";
    g.fillRect(i * w + w / 2, y(v), w / 2 - 1, c.height - 20 - y(v));
  });
  // block curve, scaled to the plot height
  const ys = h.curve.map((p) => p[1]).filter(Number.isFinite);
  const lo = Math.min(...ys), hi = Math.max(...ys);
  g.strokeStyle = "#c33";
  g.beginPath();
  h.curve.forEach(([x, v], i) => {
    const px = ((x - h.x_low) / (h.x_high - h.x_low)) * c.width;
    const py = c.height - 20 - ((v - lo) / (hi - lo || 1)) * (c.height - 30);
    i ? g.lineTo(px, py) : g.moveTo(px, py);
  });
  g.stroke();
  g.fillStyle = "#333";
  g.fillText(h.x_low, 2, c.height - 5);
  g.fillText(h.x_high, c.width - 30, c.height - 5);
  $("s-legend").textContent = "blue: weighted samples, grey: uniform grid, red: block output (rescaled)";
}

function runSampler() {
  const sampler = JSON.stringify({
    n_samples: +$("s-n").value,
    x_low: +$("s-low").value,
    x_high: +$("s-high").value,
    mix_ratio: +$("s-mix").value,
    power: +$("s-power").value,
  });
  try {
    $("s-legend").classList.remove("err");
    drawHistogram(JSON.parse(sampler_histogram($("s-kind").value, sampler, +$("s-bins").value, +$("s-seed").value)));
  } catch (e) {
    $("s-legend").classList.add("err");
    $("s-legend").textContent = String(e);
  }
}

// rows for read(41), read(10001), read(35) against 40 and 10000 analog points
const D1 = '{"protocol":"modbus","digital_count":40,"analog_count":40}';
const D2 = '{"protocol":"modbus","digital_count":10000,"analog_count":10000}';
const EXC = "000100000003018302";
const VAL = "0001000000050103020000";
const READS = { 41: "000100000006010300290001", 10001: "000100000006010327110001", 35: "000100000006010300230001" };
const PRESETS = [];
for (const [addr, req] of Object.entries(READS)) {
  for (const [cfgName, cfg] of [["40 points", D1], ["10000 points", D2]]) {
    for (const [predName, pred] of [["exception", EXC], ["value", VAL]]) {
      PRESETS.push({ name: `read(${addr}), ${cfgName}, model ${predName}`, cfg, req, pred });
    }
  }
}

function loadPreset() {
  const p = PRESETS[+$("v-preset").value];
  $("v-cfg").value = p.cfg;
  $("v-req").value = p.req;
  $("v-pred").value = p.pred;
  $("v-ref").value = "";
}

await init();
PRESETS.forEach((p, i) => $("v-preset").add(new Option(p.name, i)));
$("v-preset").onchange = loadPreset;
$("s-run").onclick = runSampler;
$("i-run").onclick = () => show($("i-out"), () => inspect($("i-proto").value, $("i-req").value, $("i-resp").value));
$("v-run").onclick = () =>
  show($("v-out"), () => validate($("v-cfg").value, $("v-req").value, $("v-pred").value, $("v-ref").value, $("v-eps").value));
runSampler();
