import init, { receptive_field, memory_conv, memorization_trace } from "./pkg/tlstm_wasm.js";

const $ = (id) => document.getElementById(id);
const numbers = (text) => text.split(",").map((s) => Number(s.trim())).filter((v) => !Number.isNaN(v));

function fail(target, e) {
  target.innerHTML = `<p class="error">${e}</p>`;
}

function grid(rows, cell) {
  const table = document.createElement("table");
  table.className = "grid";
  for (let r = rows.length - 1; r >= 0; r--) {
    const tr = table.insertRow();
    rows[r].forEach((v, c) => cell(tr.insertCell(), v, r, c));
  }
  return table;
}

function runReceptiveField() {
  const out = $("rf-out");
  try {
    const v = JSON.parse(receptive_field(Number($("rf-p").value), Number($("rf-k").value), 7n));
    const top = v.reached.length - 1;
    out.innerHTML = `<p>L = ${v.depth}, output delay ${v.delay} steps, ${v.parameters} parameters.</p>`;
    out.appendChild(grid(v.reached, (td, hit, r, c) => {
      if (r === top && c === v.first_reach[top]) td.className = "first";
      else if (hit) td.className = "hit";
    }));
  } catch (e) {
    fail(out, e);
  }
}

function runMemoryConv() {
  const out = $("mc-out");
  try {
    const logits = numbers($("mc-logits").value);
    const v = JSON.parse(memory_conv(new Float64Array(numbers($("mc-cell").value)), new Float64Array(logits), logits.length));
    const fmt = (xs) => xs.map((x) => x.toFixed(3)).join("  ");
    out.innerHTML = `<pre>kernel     ${fmt(v.kernels[0])}
output     ${fmt(v.output)}
window min ${fmt(v.window_min)}
window max ${fmt(v.window_max)}</pre>`;
  } catch (e) {
    fail(out, e);
  }
}

function runTrace() {
  const out = $("tr-out");
  out.textContent = "Training…";
  setTimeout(() => {
    try {
      const v = JSON.parse(memorization_trace(Number($("tr-symbols").value), Number($("tr-iters").value), BigInt($("tr-seed").value)));
      out.innerHTML = `<pre>input     ${v.input}
target    ${v.target}
predicted ${v.predicted}
last training loss ${v.train_loss.toFixed(4)}</pre>`;
      out.appendChild(grid(v.rows, (td, x) => {
        const shade = Math.round(255 * (1 - x));
        td.style.background = `rgb(${shade}, ${shade}, 255)`;
        td.title = x.toFixed(3);
      }));
    } catch (e) {
      fail(out, e);
    }
  }, 0);
}

await init();
$("status").textContent = "Ready.";
$("rf-run").onclick = runReceptiveField;
$("mc-run").onclick = runMemoryConv;
$("tr-run").onclick = runTrace;
runReceptiveField();
runMemoryConv();
