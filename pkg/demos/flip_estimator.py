"""
The flip estimator
==================

A network outputs a logit per pixel; adding logistic noise and thresholding
makes every pixel a Bernoulli variable with p = F(a). For a sampled mask y
the estimate of d E[loss] / d p_i is

    y_i * (loss(y) - loss(y with pixel i set to background))

First we check unbiasedness by enumerating every mask of a small grid, then
we watch the estimate sharpen as the number of samples n grows.
"""
import numpy as np

from sizeseg import EstimatorConfig, exact_grad_wrt_probs, flip_estimate, make_rng, single_sample_grad
from sizeseg.stochastic import all_masks, outcome_probs

rng = np.random.default_rng(0)
p = rng.uniform(0.1, 0.9, (3, 3))
s = 4.0

average = sum(w * flip_estimate(y, s) for y, w in zip(all_masks(p.shape), outcome_probs(p)))
exact = exact_grad_wrt_probs(p, s)
print("exhaustive mean of the estimate\n", np.round(average, 6))
print("exact gradient\n", np.round(exact, 6))
print("max difference", np.abs(average - exact).max())

# 6x6: a soft 4x4 square with ground-truth size 4, too big to enumerate
p = np.full((6, 6), 0.2)
p[1:5, 1:5] = 0.8
np.set_printoptions(precision=1, suppress=True, linewidth=120)
for n in (1, 8, 64, 512):
    g = single_sample_grad(p, 4.0, make_rng(1), EstimatorConfig(n_samples=n))
    print(f"\nn = {n}")
    print(g)
# with few samples most pixels get exactly zero, since most flips do not
# move the size. Sampled squares usually have holes and come out smaller
# than 4, so the averaged gradient is negative: descent raises the
# probabilities, most strongly in the middle where a hole costs the most
