"""Miniature estimator and keypoint-count sweeps on synthetic scenes.

Reproduces the shape of the full benchmark at small scale: per-step mean
pixel error for several robust estimators on a contaminated scene, and the
effect of the correspondence budget k.  The CLI `sweep` command runs the
full version from a JSON spec.
"""

import numpy as np

from viewalign.cli import _run_sim_episode

SCENE = dict(seed=103, noise=1.5, outlier_rate=0.1, distractors=0)

print(f"scene: noise {SCENE['noise']} px, {SCENE['outlier_rate']:.0%} planted outliers\n")
print("estimator   | per-step mean pixel error (2 repeats averaged)")
for estimator in ("ransac:5", "ransac:10", "ransac:50", "ransac:200", "magsac:50", "none"):
    runs = [
        _run_sim_episode(
            SCENE["seed"], estimator, 30, 6, SCENE["noise"], SCENE["outlier_rate"],
            SCENE["distractors"], seed=rep + 1, terminate_early=False,
        ).history
        for rep in (0, 1)
    ]
    curve = np.mean(np.array(runs), axis=0)
    print(f"{estimator:>11} | " + " ".join(f"{v:7.2f}" for v in curve))

print("\nkeypoint budget on a clean scene:")
print("  k | per-step mean pixel error")
for k in (10, 20, 30, 40):
    hist = _run_sim_episode(401, "magsac:50", k, 6, 0.0, 0.0, 0, seed=1,
                            terminate_early=False).history
    print(f" {k:>2} | " + " ".join(f"{v:7.2f}" for v in hist))
