"""Train with and without the contrastive term and watch the diagnostics.

Uses a smaller graph than the default so it finishes in about a minute.
With the weak default class signal the contrastive run tends to collapse:
both cosine tracks climb towards 1.  With 80% humans, a collapsed embedding
already gives most anchors a low loss, so collapse is a stable solution.
Run: python demos/train_compare.py
"""

import numpy as np

from cacl.pipeline import TrainConfig, train
from cacl.synth import SynthSpec, generate_synth, synth_synonyms

spec = SynthSpec(blocks=3, users_per_block=100, p_in=0.1, p_out=0.005)
g = generate_synth(spec, np.random.default_rng(0))
syn = synth_synonyms(spec, np.random.default_rng(1))

for label, extra in (("cacl_dynamic", {}), ("lambda=0", {"lam": 0.0})):
    _, rep = train(g, TrainConfig.desk(epochs=20, seed=0, **extra), syn)
    print(f"== {label}: test acc {rep.accuracy:.3f}  f1 {rep.f1:.3f}  mcc {rep.mcc:.3f}  (best epoch {rep.best_epoch})")
    for e in rep.epochs[::5] + rep.epochs[-1:]:
        print(
            f"  epoch {e['epoch']:2d}  k={e['k']}  entropy {e['entropy']:.3f}"
            f"  cos+ {e['cos_positive']:.3f}  cos- {e['cos_negative']:.3f}"
            f"  L_contrast {e['L_contrast']:.3f}  L_classify {e['L_classify']:.3f}"
        )
