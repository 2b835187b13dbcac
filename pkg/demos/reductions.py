"""
Two limiting cases of the particle update
=========================================

With a zero ascent radius the update is plain SVGD. With a single particle
and a flat prior it is SAM on the training loss. Both hold to the bit (or
to rounding) and are easy to see on small problems.
"""

import numpy as np

from hilbert_flow.kernels import KernelSpec
from hilbert_flow.samplers import SamplerConfig, final_particles
from hilbert_flow.targets import DatasetSpec, GaussianTarget, LogisticPosterior, make_splits

# a correlated 2-D Gaussian and eight particles
target = GaussianTarget([1.0, -0.5], [[1.5, 0.4], [0.4, 0.8]])
common = dict(m=8, rho=0.0, lr=0.1, epochs=500, kernel=KernelSpec("rbf", bandwidth_policy="median"))

fhbi = final_particles(SamplerConfig(algo="fhbi", **common), target)
svgd = final_particles(SamplerConfig(algo="svgd", **common), target)
print("rho = 0, identical to SVGD:", np.array_equal(fhbi, svgd))

# one particle, no prior, logistic regression on three blobs
train, holdout = make_splits(DatasetSpec(centers=((-1.0, 0.0), (1.0, 0.5), (0.0, 2.0)), per_class=40), 20)
logistic = LogisticPosterior(train, holdout, prior_precision=0.0)
common = dict(m=1, rho=0.05, lr=0.2, epochs=40, batch_size=24, init_std=0.5)

a = final_particles(SamplerConfig(algo="fhbi", **common), logistic)
b = final_particles(SamplerConfig(algo="sam", **common), logistic)
print("m = 1, max distance to SAM:", np.abs(a - b).max())
