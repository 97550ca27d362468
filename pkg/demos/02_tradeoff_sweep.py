"""
Bits per token against KL
=========================

Sweeps the adaptive budget scale C with a fixed tail cut and compares the
result with the truncation-only baseline (C = 0, larger tail cuts) at the
same 25-token budget. Prints the CSV and the matched-KL comparison.
"""

from odstega.bench import SweepSpec, dominance_violations, kl_monotone_in_C, rows_to_csv, run_sweep

spec = SweepSpec()
rows = run_sweep(spec)
print(rows_to_csv(rows))

od = [r for r in rows if not r.is_baseline]
base = [r for r in rows if r.is_baseline]

# Mean KL should grow with C at fixed (alpha, epsilon).
print("KL decreases along C:", kl_monotone_in_C(rows) or "none")

# Pair each OD row with baseline rows whose mean KL is within 10%.
for o in od:
    for b in base:
        if abs(b.mean_kl_bits - o.mean_kl_bits) <= 0.1 * o.mean_kl_bits:
            gain = o.mean_bits_per_token / b.mean_bits_per_token
            print(f"C={o.C:g}: {o.mean_bits_per_token:.3f} bits/token vs truncation eps={b.epsilon:g}: "
                  f"{b.mean_bits_per_token:.3f} at KL ~{o.mean_kl_bits:.3f} ({gain:.3f}x)")
print("dominance violations:", len(dominance_violations(rows)))

# The same comparison with a second-order model.
rows2 = run_sweep(SweepSpec(order=2, runs_per_point=50))
print("\norder 2:", len(kl_monotone_in_C(rows2)), "KL decreases,",
      len(dominance_violations(rows2)), "dominance violations")
