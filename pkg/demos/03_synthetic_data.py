"""Data path walkthrough: dense sines -> sparse triplets -> task instances.

Prints what one record looks like at each stage so the shapes and the two
missingness patterns are easy to eyeball.
"""

import numpy as np

from tripletformer import (
    build_sine_dataset,
    preprocess,
    sample_burst_missing,
    sample_random_missing,
)

records, manifest = build_sine_dataset(
    n_series=50, length=12, channels=2, noise_sd=0.1, seed=0
)
print("generator manifest:", manifest)

r = records[0]
print(f"\nrecord {r.id}: {len(r.observations)} observations")
for obs in r.observations[:6]:
    print(f"  t={obs.t:.3f}  c={obs.c}  u={obs.u:+.3f}")
print("  ...")

# normalisation is fitted on a training subset and applied everywhere
transformed, stats = preprocess(records[:40], records)
print(f"\nper-channel train mean {np.round(stats.mean, 3)}, sd {np.round(stats.std, 3)}")
print(f"time range [{stats.time_min:.3f}, {stats.time_max:.3f}] mapped to [0, 1]")

inst = sample_random_missing(transformed[0], observed_frac=0.5, seed=1)
print(f"\nrandom missingness: {len(inst.context)} context, {len(inst.queries)} queries")
print("  context times", np.round(sorted({o.t for o in inst.context}), 3))
print("  query times  ", np.round(sorted({q.t for q in inst.queries}), 3))

inst = sample_burst_missing(transformed[0], observed_frac=0.5, seed=1)
print(f"\nburst missingness: {len(inst.context)} context, {len(inst.queries)} queries")
print("  context times", np.round(sorted({o.t for o in inst.context}), 3))
print("  query times  ", np.round(sorted({q.t for q in inst.queries}), 3))
print("(the removed run is contiguous; the model must bridge the gap)")
