"""Empirical Bayes estimate of per-category prior variances.

Draws weights with known first and second order variances, adds posterior
noise of known size and recovers the variances. Also checks the bias formula
for correlated noise.
"""

import numpy as np

from ebblip import bias_of_estimator, estimate_meta_prior, tau_sq_hat

rng = np.random.default_rng(1)
cats = np.array(["first_order"] * 300 + ["second_order"] * 3000)
tau = {"first_order": 0.85, "second_order": 0.24}
truth = np.array([rng.normal(0, np.sqrt(tau[c])) for c in cats])
s2 = rng.uniform(0.05, 0.2, cats.size)
noisy = truth + rng.normal(size=cats.size) * np.sqrt(s2)

for cat, est in estimate_meta_prior(noisy, s2, cats).items():
    print(f"{cat:>13}: tau^2 hat {est.tau_sq_hat:.3f} (true {tau.get(cat, float('nan')):.2f})")

# correlated posterior noise biases the centred estimator downwards
n, reps = 10, 20000
cov = np.full((n, n), 0.1) + np.eye(n) * 0.1
chol = np.linalg.cholesky(cov)
mu = rng.normal(0, np.sqrt(0.5), (reps, n))
est = tau_sq_hat(mu + rng.standard_normal((reps, n)) @ chol.T, np.full((reps, n), 0.2),
                 zero_mean=False)
print(f"observed bias {est.mean() - 0.5:+.4f}, predicted {bias_of_estimator(cov):+.4f}")
