"""Run the built-in claim checks and read the report.

Every mathematical claim the library trades on (bound orderings,
collapse identities, small-power limits, the message-passing fixed
point, estimator unbiasedness, scale optimality, gradient agreement)
has a named check.  `blockgp verify` runs the same battery from the
command line; scale="full" multiplies the instance counts.
"""

from blockgp.verify import format_report, run_all

results = run_all(scale="small", seed=0)
print(format_report(results))

# Each result carries its headline numbers for programmatic use.
worst = max(results, key=lambda r: r.runtime)
print(f"\nslowest check: {worst.name} ({worst.runtime:.2f}s)")
assert all(r.passed for r in results)
