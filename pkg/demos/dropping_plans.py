"""How a series becomes tokens, and how tokens get dropped.

A series is turned into three blocks of patches: time, frequency magnitude
and frequency phase. A magnitude patch and the phase patch at the same bins
are always dropped together, so the model never sees half a frequency.
"""

import numpy as np

from crt.sequencing import CurriculumConfig, assemble, curriculum_ratio, make_patches, sample_drop_plan

series = np.sin(np.linspace(0, 16 * np.pi, 128))[None]
ps = make_patches(assemble(series), 8)
lay = ps.layout
print(f"time patches {lay.n_time}, magnitude patches {lay.n_freq}, phase patches {lay.n_freq}")

for ratio in (0.3, 0.6, 0.9):
    plan = sample_drop_plan(ps, ratio, seed=1)
    d = plan.dropped
    t = d[d < lay.n_time]
    m = d[(d >= lay.n_time) & (d < lay.n_time + lay.n_freq)] - lay.n_time
    print(f"ratio {ratio}: dropped time {t.tolist()} frequency pairs {m.tolist()}, kept {len(plan.kept)}")

cur = CurriculumConfig(0.3, 0.6, 50)
print("curriculum ratio at epochs 0, 10, 20, 30, 40:", [curriculum_ratio(cur, i) for i in (0, 10, 20, 30, 40)])
