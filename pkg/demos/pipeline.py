"""End-to-end run at a small scale: data, baseline vs learned temperature, grid.

Takes a few minutes on one core. Pass --full for the default 512-pair split
used by the acceptance suite (much slower).

    python3 demos/pipeline.py [--full]
"""

import sys
import tempfile

from tempmatch.synthdata import generate_split
from tempmatch.training import (
    BETA_EVAL_SWEEP,
    ExperimentConfig,
    best_over_betas,
    evaluate,
    grid_temperature,
    load_split,
    train,
)

full = "--full" in sys.argv
n_train, epochs = (512, 60) if full else (128, 20)

out = tempfile.mkdtemp(prefix="tempmatch_demo_")
generate_split(0, n_train=n_train, n_val=64, n_test=64, out_dir=out)
train_pairs, val_pairs = load_split(out, "train"), load_split(out, "val")
print(f"{len(train_pairs)} train / {len(val_pairs)} val pairs in {out}")


def report(label, model):
    results, temps = evaluate(model, val_pairs, beta_evals=BETA_EVAL_SWEEP)
    sweep = "  ".join(f"{be:g}:{r.per_alpha[1]:.3f}" for be, r in results.items())
    be, best = best_over_betas(results, 0.1)
    print(f"{label:<22} PCK@0.1 by beta_eval  {sweep}   best {best.per_alpha[1]:.3f} "
          f"(beta_trn {temps.mean():.3f})")


base = dict(epochs=epochs, seed=0)
unit = train(ExperimentConfig(mode="unit", beta_eval=list(BETA_EVAL_SWEEP), **base),
             train_pairs, val_pairs)
report("unit temperature", unit.model)
learned = train(ExperimentConfig(mode="learned_mlp", **base), train_pairs, val_pairs)
report("learned temperature", learned.model)

print("\nmanual training temperatures, scored at beta_eval = beta_trn:")
for row in grid_temperature(ExperimentConfig(**base), [1.0, 0.3, 0.1, 0.03, 0.01],
                            train_pairs, val_pairs):
    print(f"  beta={row['beta']:<5g} PCK@0.1 {row['pck_01']:.3f} ({row['status']})")
