"""
From Krippendorff's alpha to mAP
================================

Datasets with several annotators per image but without a convenient
two-annotator structure can still get a convergence interval: fit a line
from localized alpha to modified mAP on datasets where both are available,
then push the alpha bootstrap of a new dataset through it.
"""

import numpy as np

from label_convergence import infer_map, interpret_alpha, kalpha_localized, make_dataset
from label_convergence.pipeline import fit_regression, kalpha_bootstrap, regression_points

# a few reference datasets that span a range of annotation quality
references = [
    make_dataset(300, 4, jitter=j, p_miss=m, p_wrong_class=w, seed=s)
    for s, (j, m, w) in enumerate([(0.02, 0.01, 0.01), (0.08, 0.05, 0.05), (0.15, 0.10, 0.10), (0.25, 0.2, 0.15)])
]
for k, ref in enumerate(references):
    res = kalpha_localized(ref)
    print(f"reference {k}: mean alpha {res.mean_alpha:.3f} ({interpret_alpha(res.mean_alpha)})")

# one (alpha@t, mAP@t) point per replicate and IoU threshold
points = regression_points(references, replicates=50, fraction=0.10, seed=0)
model = fit_regression(points)
print(f"mAP = {model.slope:.3f} * alpha + {model.intercept:.3f}")
print(f"pearson {model.pearson:.3f}, R^2 {model.r_squared:.3f}, {model.n_points} points")

# residuals of a least-squares fit are uncorrelated with alpha
pts = np.array(points)
resid = pts[:, 1] - model.predict(pts[:, 0])
print(f"sum of residual * alpha: {np.dot(resid, pts[:, 0]):.2e}")

# three annotators per image: alpha works, the modified mAP would not
target = make_dataset(300, 4, annotators=("A", "B", "C"), jitter=0.1, p_miss=0.05, p_wrong_class=0.05, seed=42)
alpha = kalpha_bootstrap(target, replicates=200, seed=0)
print(f"target alpha {alpha.mean:.3f} [{alpha.ci_lower:.3f}, {alpha.ci_upper:.3f}]")

inferred = infer_map(model, alpha, scale=100)
print(f"inferred convergence interval [{inferred.ci_lower:.2f}, {inferred.ci_upper:.2f}]")
