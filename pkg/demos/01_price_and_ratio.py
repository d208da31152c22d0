"""Price placeholders and negotiation-outcome arithmetic.

Prices inside utterances are encoded relative to the listed price so the
decoder can generalize across scenarios; outcomes are summarized by the
sale-to-list ratio and bucketed into five training quintiles.
"""

import numpy as np

from negograph import corpus as C

listed = 40.0
print(f"listed price: ${listed}")
for price in (35.0, 40.0, 12.5):
    token = C.price_to_placeholder(price, listed)
    back = C.placeholder_to_price(token, listed)
    print(f"  ${price:<6} -> {token} -> ${back}")

print("\nround trip stays within one rounding unit:")
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(1000):
    price = rng.uniform(0, 2) * listed
    err = abs(C.placeholder_to_price(C.price_to_placeholder(price, listed), listed) - price)
    worst = max(worst, err)
print(f"  worst error over 1000 samples: {worst:.5f} (unit = {C.PLACEHOLDER_UNIT * listed})")

print("\nsale-to-list ratio (sale - target) / (listed - target):")
for sale, target in ((40, 36), (36, 36), (35, 36)):
    r = C.compute_ratio(sale, target, listed)
    print(f"  sale ${sale}, buyer target ${target} -> ratio {r:+.2f}")

print("\nratio classes are train-split quintiles:")
train_ratios = rng.normal(0.5, 0.3, size=500)
bounds = C.fit_class_boundaries(train_ratios)
print(f"  boundaries: {[round(c, 3) for c in bounds.cuts]}")
for r in (-0.5, 0.2, 0.5, 0.8, 1.5):
    print(f"  ratio {r:+.2f} -> class {C.ratio_to_class(r, bounds)}")
