"""Follow one trajectory with its deviation vector and match stretching jumps to X-line passages.

    python demos/chaos_run.py [t_end]
"""
import sys

from vortexline.chaos import correlate_events, distance_to_xline, stretching_numbers
from vortexline.config import DEFAULT_OMEGA
from vortexline.dynamics import integrate_with_deviation
from vortexline.wavefield import triple_superposition

t_end = float(sys.argv[1]) if len(sys.argv) > 1 else 8.0
spec = triple_superposition(DEFAULT_OMEGA)
tr = integrate_with_deviation(spec, [-0.7, -1.1, 1.3], [1.0, 0.0, 0.0], (0.0, t_end))
report = correlate_events(stretching_numbers(tr), distance_to_xline(spec, tr))
for e in sorted(report.events, key=lambda e: -abs(e.alpha_peak))[:10]:
    print(f"t={e.t_jump:6.2f}  alpha={e.alpha_peak:+.3f}  d={e.d_at_jump:.3f}  matched={e.matched}")
print(report.summary)
