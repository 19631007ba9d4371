import init, { simulate_cycle, optimize, diagnostics } from "./pkg/storelight_wasm.js";

const $ = (id) => document.getElementById(id);

function config() {
  const num = (id) => parseFloat($(id).value);
  return {
    d: num("d"),
    omega: num("omega"),
    gamma_s: num("gamma_s"),
    tau: num("tau"),
    trial_center: num("trial_center"),
    trial_width: num("trial_width"),
    solver: $("solver").value,
  };
}

// Draws each series as a polyline; series = [{xs, ys, color}].
function plot(canvas, series, { xLabel = "t", yMax } = {}) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const pad = 36;
  ctx.clearRect(0, 0, width, height);
  const xs = series.flatMap((s) => s.xs);
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const top = yMax ?? Math.max(1e-12, ...series.flatMap((s) => s.ys));
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (width - 2 * pad);
  const py = (y) => height - pad - (y / top) * (height - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, height - pad);
  ctx.lineTo(width - pad, height - pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.font = "12px sans-serif";
  ctx.fillText(x0.toFixed(1), pad, height - pad + 14);
  ctx.fillText(x1.toFixed(1), width - pad - 24, height - pad + 14);
  ctx.fillText(xLabel, width / 2, height - 6);
  ctx.fillText(top.toPrecision(3), 2, pad);

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = s.width ?? 1.5;
    ctx.beginPath();
    s.xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(s.ys[i])) : ctx.moveTo(px(x), py(s.ys[i]))));
    ctx.stroke();
  }
}

function traceXY(trace, shift = 0) {
  return { xs: trace.abs.map((_, k) => trace.t0 + k * trace.dt - shift), ys: trace.abs };
}

function report(el, fn) {
  el.classList.remove("error");
  try {
    fn();
  } catch (err) {
    el.textContent = String(err.message ?? err);
    el.classList.add("error");
  }
}

function runCycle() {
  const status = $("cycle-status");
  report(status, () => {
    const cfg = config();
    const r = JSON.parse(simulate_cycle(JSON.stringify(cfg)));
    const t = r.output.t0;
    plot($("cycle-plot"), [
      { ...traceXY(r.input), color: "#1f77b4" },
      { ...traceXY(r.leakage), color: "#ff7f0e" },
      { ...traceXY(r.output, t), color: "#2ca02c" },
    ]);
    status.textContent =
      `efficiency ${r.efficiency.toFixed(4)}, leakage ${r.leakage_fraction.toFixed(4)}, ` +
      `dissipated ${r.dissipated_fraction.toFixed(4)}`;
  });
}

function runOptimize() {
  const status = $("optimize-status");
  status.textContent = "running...";
  // Let the status paint before the solver blocks the main thread.
  setTimeout(() =>
    report(status, () => {
      const r = JSON.parse(optimize(JSON.stringify(config())));
      const its = r.efficiencies.map((_, k) => k);
      plot($("efficiency-plot"), [{ xs: its, ys: r.efficiencies, color: "#d62728", width: 2 }], {
        xLabel: "iteration",
        yMax: 1,
      });
      const n = r.iterations.length;
      plot(
        $("shapes-plot"),
        r.iterations.map((it, k) => {
          const shade = Math.round(200 - (170 * (k + 1)) / n);
          return { ...traceXY(it.input), color: `rgb(${shade},${shade},255)`, width: k === n - 1 ? 2.5 : 1 };
        }),
      );
      const last = r.efficiencies[n - 1];
      status.textContent = `${r.converged ? "converged" : "stopped"} after ${n} iterations, efficiency ${last.toFixed(4)}`;
    }),
  );
}

function updateDiagnostics() {
  const table = $("diagnostics");
  report(table, () => {
    const cfg = config();
    const r = JSON.parse(diagnostics(cfg.d, cfg.omega, parseFloat($("duration").value)));
    const fmt = (v) => (v === null ? "infinite" : v.toPrecision(4));
    table.innerHTML = [
      ["group velocity v<sub>g</sub>/L", r.vg_over_l],
      ["EIT bandwidth &Delta;&omega;<sub>EIT</sub>", r.delta_omega_eit],
      ["v<sub>g</sub> T<sub>s</sub> / L (pulse fits in medium when small)", r.compression_ratio],
      ["1 / (T<sub>s</sub> &Delta;&omega;<sub>EIT</sub>) (pulse fits in window when small)", r.bandwidth_ratio],
    ]
      .map(([name, v]) => `<tr><td>${name}</td><td>${fmt(v)}</td></tr>`)
      .join("");
  });
}

await init();
$("run-cycle").addEventListener("click", runCycle);
$("run-optimize").addEventListener("click", runOptimize);
for (const id of ["d", "omega", "duration"]) $(id).addEventListener("input", updateDiagnostics);
updateDiagnostics();
runCycle();
