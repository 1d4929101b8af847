"""Trace the nodal lines at t = 4, find their X-points and list the Hopf events.

    python demos/nodal_xpoints.py
"""
import numpy as np

from vortexline.config import DEFAULT_OMEGA
from vortexline.nodal import trace_all_lines
from vortexline.vortex import scan_line
from vortexline.wavefield import triple_superposition
from vortexline.xstruct import build_xline

spec = triple_superposition(DEFAULT_OMEGA)
lines = trace_all_lines(spec, 4.0)
for k, ln in enumerate(lines):
    xl = build_xline(spec, ln)
    d = np.array([xp.d_X if xp is not None else np.nan for xp in xl.xpoints])
    rows, events = scan_line(spec, ln)
    kind = "closed" if ln.closed else "open"
    print(f"line {k}: {len(ln)} nodes ({kind}), d_X median {np.nanmedian(d):.3g}, "
          f"max vfast {np.max(xl.vfast):.3g}, Hopf events at s = {[round(e.parameter, 4) for e in events]}")
