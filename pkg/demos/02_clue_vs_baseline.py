"""
CLUE against a task-loss baseline
=================================

Train the same MLP twice on heteroscedastic regression: once with the task
loss only, once with a second CLUE phase that pulls the predicted variance
towards the per-sample loss.
"""

from cluelab.harness import ExperimentConfig, run_experiment

base = dict(dataset={"name": "heteroscedastic", "n": 2000},
            model={"hidden_widths": [32, 32], "activation": "relu", "dropout_rate": 0.3},
            pretrain_epochs=100, clue_epochs=100, lr=0.03, K_train=20, K_eval=20, split=[0.7, 0.1, 0.2])

for method in ("task_loss_only", "clue", "nll_head"):
    m = run_experiment(ExperimentConfig(**base, method=method)).report.metrics
    print(f"{method:15s} mse {m['mse']:.3f}  ece {m['ece']:.3f}  ence {m['ence']:.3f}  "
          f"corr(err, var) {m['corr_error_var']:.3f}  nll {m['nll']:.3f}")
