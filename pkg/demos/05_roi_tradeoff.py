"""How the region of interest changes the recovered signal.

Taking the median depth change over the whole field of view mixes the
moving chest with the static backdrop, so the signal all but vanishes.
A box around the chest recovers most of the motion.  The price is
coverage: a tight box on the upper chest can miss breaths when the
subject switches to belly breathing, so choose the box with the
breathing mechanism in mind.  The gain printed below is the slope of the
recovered displacement against the true one.

    python3 demos/05_roi_tradeoff.py
"""

from __future__ import annotations

import time

import numpy as np

from breathscope.pipeline import PipelineConfig, analyze
from breathscope.synthchest import ChestModel, analysis_config, generate_sequence, synthetic_rig

model = ChestModel(amplitude=6.0, frequency=0.4)
rig = synthetic_rig()
seq, truths = generate_sequence(model, rig, (320, 240), 10.0, 8.0, noise_sigma=2.0)
truth = np.array([gt.displacement for gt in truths])

base = analysis_config(model)
for roi in ("full", base["roi"], "-40:-30:300:40:30:2000"):
    cfg = PipelineConfig.from_dict({**base, "roi": roi})
    start = time.perf_counter()
    result = analyze(seq, rig, cfg)
    gain = np.polyfit(truth, result.raw.values, 1)[0]
    print(f"roi {roi:<26} gain {gain:5.2f}  excursion {result.report['max_excursion_mm']:5.2f} mm"
          f"  grid {result.report['grid']['nx']}x{result.report['grid']['ny']}"
          f"  {time.perf_counter() - start:5.1f} s")
