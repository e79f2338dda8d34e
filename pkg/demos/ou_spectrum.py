# %% [markdown]
# Spectrum of the Ornstein-Uhlenbeck covariance kernel.
#
# The eigenvalues come from a transcendental equation solved by bracketed
# root finding; a Gauss-Legendre Nystrom discretization gives an independent check.

# %%
import numpy as np

from chaoslab import ou

theta, gamma, T = 1.0, 1.0, 10.0
sl = ou.kernel_spectrum_sl(theta, gamma, T, 10)
ny = ou.kernel_spectrum_nystrom(theta, gamma, T, 1600)
print(np.c_[sl.eigenvalues, ny.eigenvalues[:10]])

# %% [markdown]
# Twice the sum of squared eigenvalues is the second moment of the centered
# quadratic functional; the truncation error is covered by the tail bound.

# %%
r = ou.kernel_spectrum_sl(theta, gamma, T, 400)
print(ou.exact_f_t_moment(theta, gamma, T), 2 * np.sum(r.eigenvalues**2), 2 * r.tail_bound)

# %% [markdown]
# The fourth cumulant of the unit-variance functional shrinks roughly like 1/T.

# %%
for T in (5, 10, 20, 40, 80):
    res, m = ou.truncated_spectrum(theta, gamma, T)
    lam = res.eigenvalues[:m] / np.sqrt(2 * np.sum(res.eigenvalues[:m] ** 2))
    print(f"T={T:>3}  eigenvalues={m:>5}  kappa4=", end=" ")
    print( ou.spectral_fourth_cumulant(lam))
