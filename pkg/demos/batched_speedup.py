"""Attribution calls and wall time of the batched statistic against one call per interval."""
from eventgc.causality import benchmark_speedup
from eventgc.npp import BasisFamily, NppModel

model = NppModel.init(5, BasisFamily(8, 10.0), 32, 32, rng=0)

# %% The naive path is timed on one (sequence, effect type) pair and scaled up,
# since every pair does the same work on equal-length synthetic sequences.
rows = benchmark_speedup(model, lengths=(10, 25, 50), batch_sizes=(1, 4, 16), ig_steps=20, reps=3)
print(f"{'n':>4} {'B':>3} {'calls':>6} {'naive calls':>11} {'speedup':>8}")
for r in rows:
    print(f"{r['n']:>4} {r['batch_size']:>3} {r['batched_calls']:>6} {r['naive_calls']:>11} {r['speedup']:>7.1f}x")
