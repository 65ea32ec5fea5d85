"""A seeded, resumable experiment: run an ED scan, then emit plot data and peak fits.

Run: python demos/05_experiment_pipeline.py [out_dir]
The same configuration can be run from the shell with
    python -m bethe_qsg ed_scan --config demo_runs/ed_scan.json --resume
"""

import json
import sys
from pathlib import Path

from bethe_qsg.driver import ExperimentConfig, ResultStore, emit_plot_data, run_experiment

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_runs")
out.mkdir(parents=True, exist_ok=True)
config = ExperimentConfig(kind="ed_scan", sizes=(8, 10, 12), gammas=tuple(0.8 + 0.2 * i for i in range(11)),
                          h=0.05, realizations=6, master_seed=3, out_dir=str(out / "ed"))
config.save(out / "ed_scan.json")
print(f"experiment {config.experiment_id}: {run_experiment(config)} new tasks")
print(f"rerun: {run_experiment(config)} new tasks (completed keys are skipped)")

paths = emit_plot_data(ResultStore(config.out_dir), "ed_s2", out / "plots")
print("wrote", ", ".join(p.name for p in paths))
fits = json.load(open(out / "plots" / "ed_s2_fits.json"))
for n in config.sizes:
    f = fits.get(f"N={n}")
    if f:
        print(f"N={n}: S2 peak at Gamma = {f['params']['x0']:.3f} +- {f['errors']['x0']:.3f}")
if "one_over_n" in fits:
    print(f"1/N extrapolation: {fits['one_over_n']['params']['gamma_c']:.3f}")
