"""Attention block behaviour: masking, induced points, score-op accounting.

Shows that masked keys are completely inert, that the induced block is the
composition of two ordinary blocks, and how the score cost scales with set
size for both block types.
"""

import numpy as np

from tripletformer import (
    Tensor,
    imab,
    init_imab,
    init_mab,
    mab,
    op_counters,
    spawn,
)

d, heads, induced = 32, 2, 16
rng = spawn(0, "attention-demo")
mab_params = init_mab(rng, d, heads)
imab_params = init_imab(rng, d, heads, induced)

x = rng.normal_array(0.0, 1.0, (10, d))
mask = np.ones(10, dtype=bool)
mask[7:] = False

out = mab(Tensor(x), Tensor(x), Tensor(x), mab_params, key_mask=mask)
x_wild = x.copy()
x_wild[7:] = 1e6  # garbage where the mask is False
out_wild = mab(Tensor(x), Tensor(x_wild), Tensor(x_wild), mab_params, key_mask=mask)
print("masked keys inert:", np.array_equal(out.data, out_wild.data))

# the induced block is literally mab(q, B, B) with B = mab(points, k, v)
got = imab(Tensor(x), Tensor(x), Tensor(x), imab_params)
bridge = mab(imab_params.induced_points, Tensor(x), Tensor(x), imab_params.inner)
want = mab(Tensor(x), bridge, bridge, imab_params.outer)
print("imab == mab(mab):   ", np.array_equal(got.data, want.data))

counters = op_counters()
print(f"\n{'set size':>8}  {'mab score madds':>16}  {'imab score madds':>17}  ratio")
for s in (128, 256, 512, 1024):
    xs = Tensor(rng.normal_array(0.0, 1.0, (s, d)))
    counters.reset()
    mab(xs, xs, xs, mab_params)
    mab_cost = counters.score_madds
    counters.reset()
    imab(xs, xs, xs, imab_params)
    imab_cost = counters.score_madds
    print(f"{s:8d}  {mab_cost:16,d}  {imab_cost:17,d}  {mab_cost / imab_cost:5.1f}x")

print("\nmab grows with s^2, imab with s: doubling s quadruples one")
print("and doubles the other.")
