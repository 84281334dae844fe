"""Small end-to-end run: train the set model, score it against baselines.

Deliberately tiny (a few hundred Adam steps on a small dataset) so it
finishes in about a minute on a laptop core; expect the model to beat the
mean baseline but not by its full-size margin.
"""

import time
from functools import partial

from tripletformer import (
    TrainConfig,
    TripletformerConfig,
    build_sine_dataset,
    evaluate,
    fit_baseline,
    predict,
    preprocess,
    sample_random_missing,
    split_records,
    train,
)

records, _ = build_sine_dataset(
    n_series=120, length=20, channels=2, noise_sd=0.1, seed=0
)
raw_train, raw_val, raw_test = split_records(records, seed=0)
transformed, stats = preprocess(raw_train, records)
by_id = {r.id: r for r in transformed}
train_set = [by_id[r.id] for r in raw_train]
val_set = [by_id[r.id] for r in raw_val]
test_set = [by_id[r.id] for r in raw_test]
print(f"split {len(train_set)}/{len(val_set)}/{len(test_set)} train/val/test")

model_config = TripletformerConfig(
    channels=2, depth=1, input_embed_dim=32, attn_dim=32,
    query_embed_dim=32, cross_attn_dim=32, mlp_hidden=32,
    num_induced=8, num_heads=2,
)
train_config = TrainConfig(
    batch_size=16, learning_rate=3e-3, max_epochs=80, patience=80, seed=0
)

start = time.time()
params, history = train(model_config, train_config, train_set, val_set)
print(f"trained {len(history.train_loss)} epochs in {time.time() - start:.1f}s, "
      f"best val nll {min(history.val_nll):.4f} at epoch {history.best_epoch}")

report = evaluate(partial(predict, params), test_set, "random", 0.5, seed=0)
print(f"\ntripletformer   nll {report.nll_mean:+.4f}  mse {report.mse_mean:.4f}")

val_instances = [sample_random_missing(r, 0.5, 1) for r in val_set]
for kind in ("mean", "forward"):
    baseline = fit_baseline(kind, train_set, val_instances, channels=2)
    rep = evaluate(baseline.predict, test_set, "random", 0.5, seed=0)
    print(f"{kind:<15} nll {rep.nll_mean:+.4f}  mse {rep.mse_mean:.4f}")

print("\nlower is better; the model should already sit below both baselines.")
