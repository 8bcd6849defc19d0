"""
Binary outcome with repeated measurements per subject.

Rows from one subject share a random offset, so ordinary folds would leak
subject identity between training and test sets.  Blocked folds keep every
subject inside a single fold.
"""
import numpy as np

from lrlasso import Dataset, cv_two_stage, fit_two_stage, log_design, make_folds
from lrlasso.cv import default_lambda_grid
from lrlasso.logratio import ratio_table

rng = np.random.default_rng(0)
subjects, per_subject, p = 40, 4, 12
groups = np.repeat(np.arange(subjects), per_subject)
X = np.abs(rng.standard_normal((groups.size, p))) * np.exp(rng.normal(size=subjects))[groups, None]
eta = 2.5 * np.log(X[:, 0] / X[:, 1]) + rng.normal(scale=0.5, size=subjects)[groups]
y = (rng.random(groups.size) < 1 / (1 + np.exp(-eta))).astype(float)
d = Dataset(X, y, tuple(f"protein{j}" for j in range(p)), group_ids=groups)

W = log_design(d)
folds = make_folds(d, 8, seed=1, blocked=True)
curve = cv_two_stage(W, y, folds, default_lambda_grid(W, y, "binomial", n_lambda=10),
                     range(4), "binomial", rule="one_se")
lam, k = curve.best
theta, _ = fit_two_stage(W, y, lam, k, "binomial")
print(f"blocked CV over {folds.K} folds chose lambda={lam:.3g}, k={k}")
print(f"held-out misclassification at that point: {curve.misclassification[curve.chosen]:.3f}")
print(ratio_table(theta))
