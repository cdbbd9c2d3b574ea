"""
Sweeping alpha and the number of MC passes
==========================================

``sweep_alpha`` reruns CLUE once per weight. ``sweep_mc_samples`` trains
once and evaluates the same weights with more or fewer dropout passes.
"""

from cluelab.harness import ExperimentConfig, render_report, sweep_alpha, sweep_mc_samples

cfg = ExperimentConfig(dataset={"name": "heteroscedastic", "n": 600},
                       model={"hidden_widths": [16, 16], "activation": "relu", "dropout_rate": 0.3},
                       pretrain_epochs=20, clue_epochs=20, lr=0.03, K_train=5, K_eval=10, split=[0.7, 0.1, 0.2])

for row in sweep_alpha(cfg, [0.0, 0.25, 0.5, 0.75, 1.0]):
    m = row.report.metrics
    print(f"alpha {row.report.provenance['alpha']:.2f}  ence {m['ence']:.3f}  mse {m['mse']:.3f}")

rows = sweep_mc_samples(cfg, [1, 5, 20])
for row in rows:
    print(f"K {row.report.provenance['k_eval']:2d}  nll {row.report.metrics['nll']:.3f}")

# the same rows as the CLI would write them
print(render_report(rows, "csv"))
