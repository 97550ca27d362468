"""
Spending a KL budget on entropy
===============================

A four-token next-word distribution, the maximum-entropy distribution
within a KL budget, and what that buys the arithmetic coder.
"""

import numpy as np

from odstega.prob import distribution_from_vector, entropy_bits, kl_bits, quantize, truncate_epsilon
from odstega.solver import delta_max, optimize_distribution, two_stage

# The model's distribution over four candidate tokens.
P = distribution_from_vector([0.4, 0.3, 0.2, 0.1])
print(f"H(P) = {entropy_bits(P):.4f} bits, uniform would be 2 bits")
print(f"budget at which the optimum becomes uniform: {delta_max(P):.4f} bits")

# With a budget of 0.0384 bits the optimum is a power tilt of P with u close to 1,
# i.e. Q proportional to sqrt(P).
res = optimize_distribution(P, 0.0384)
print("Q =", np.round(res.Q.probs, 4), f"u = {res.u:.4f}, KL = {res.achieved_kl:.6f}")
print(f"entropy gain: {entropy_bits(res.Q) - entropy_bits(P):.4f} bits per token")

# Entropy as the budget grows, up to the uniform distribution.
for delta in (0.0, 0.01, 0.0384, 0.1, 0.2, delta_max(P)):
    Q = optimize_distribution(P, delta).Q
    print(f"  delta={delta:.4f}  H(Q)={entropy_bits(Q):.4f}  KL={kl_bits(Q, P):.4f}")

# Cutting the tail first costs -log2(m) of the budget, where m is the retained mass;
# the tilt gets what is left.
P_long = distribution_from_vector([0.5, 0.25, 0.15, 0.06, 0.03, 0.01])
cut, removed = truncate_epsilon(P_long, 0.05)
ts = two_stage(P_long, 0.1, 0.05)
print(f"\ncut {removed:.2f} of the mass: {P_long.support_size} -> {cut.support_size} tokens, "
      f"cutoff cost {ts.cutoff_kl:.4f} bits, tilt budget {ts.budget:.4f} bits")
print(f"total KL {kl_bits(ts.tilt.Q, P_long):.6f} = {ts.cutoff_kl:.6f} + {ts.tilt.achieved_kl:.6f}")

# The coder works on integer counts over 2**k.
q = quantize(ts.tilt.Q, k=16)
print("counts over 2**16:", q.counts)
