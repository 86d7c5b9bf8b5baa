"""Why a softmax over cosine similarities needs a temperature.

Builds a correlation between two random feature maps where B contains noisy
copies of A's cells, then compares the matching distribution for one query at
several temperatures and localizes it with the kernel soft-argmax.

    python3 demos/over_smoothing.py
"""

import numpy as np

from tempmatch import autograd as ag
from tempmatch.backbone import FeatureMap
from tempmatch.localizer import LocalizerConfig, kernel_soft_argmax
from tempmatch.matcher import build_correlation

rng = np.random.default_rng(0)
channels, h, w = 16, 8, 8
a = rng.normal(size=(channels, h, w))
perm = rng.permutation(h * w)
b = (a.reshape(channels, -1)[:, perm] + 0.5 * rng.normal(size=(channels, h * w)))
b = b.reshape(channels, h, w)

corr = build_correlation(FeatureMap(a, 8), FeatureMap(b, 8))
query = 27
true_cell = int(np.argmax(perm == query))
row = corr.data.data[query]
print(f"query cell {query} truly matches cell {true_cell} "
      f"(cosine {row[true_cell]:.3f}, next best {np.sort(row)[-2]:.3f})")

for beta in (1.0, 0.3, 0.1, 0.03, 0.02):
    p = ag.softmax(ag.Tensor(row), beta).data
    top = np.sort(p)[::-1][:3]
    print(f"beta={beta:<5g} max prob {top[0]:.3f}  next {top[1]:.3f} {top[2]:.3f}  "
          f"entropy {-(p[p > 0] * np.log(p[p > 0])).sum():.2f} nats")

print("\nkernel soft-argmax of the score map (true location "
      f"{divmod(true_cell, w)}):")
for beta_eval in (1.0, 0.1, 0.02):
    loc = kernel_soft_argmax(row.reshape(h, w), LocalizerConfig(sigma=7.0, beta_eval=beta_eval))
    print(f"beta_eval={beta_eval:<5g} -> ({loc[0]:.2f}, {loc[1]:.2f})")
