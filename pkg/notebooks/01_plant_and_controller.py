# %% [markdown]
# # Plant and LQ-servo controller
#
# The quadrotor is linearised about hover. Its continuous-time A matrix is
# nilpotent (A^4 = 0), so the zero-order-hold discretisation is an exact
# finite series. Augmenting the model with three integrator states gives a
# 15-state servo problem whose infinite-horizon gain comes from the DARE.

# %%
import numpy as np

from mccfusion import (QuadrotorParams, augment, build_continuous_model, control_law,
                       discretize, integral_update, lq_gain, solve_dare, step_linear_plant,
                       step_nonlinear_plant)
from mccfusion.control import E_UWB, LqWeights, dare_residual

p = QuadrotorParams()
cont = build_continuous_model(p)
d = discretize(cont, p.dt)
print("A^4 == 0:", np.allclose(np.linalg.matrix_power(cont.A, 4), 0.0))
print("Phi shape", d.Phi.shape, "Gamma shape", d.Gamma.shape)

# %% [markdown]
# Hover is an exact fixed point of the nonlinear plant.

# %%
x = np.zeros(12)
x[0:3] = (2.0, 1.0, 1.0)
nxt = step_nonlinear_plant(x, p.hover_input(), p)
print("hover drift:", np.max(np.abs(nxt - x)))

# %% [markdown]
# ## Servo gain

# %%
aug = augment(d, E_UWB)
w = LqWeights.from_diagonals()
S = solve_dare(aug.Phi, aug.Gamma, w.Q, w.R)
gain = lq_gain(S, aug.Phi, aug.Gamma, w.R)
rho = np.max(np.abs(np.linalg.eigvals(aug.Phi - aug.Gamma @ gain.L)))
print(f"DARE residual {dare_residual(S, aug.Phi, aug.Gamma, w.Q, w.R):.2e}, spectral radius {rho:.5f}")

# %% [markdown]
# ## Step response
#
# With perfect state knowledge the integral states remove the steady-state
# error of a 1 m step in x.

# %%
hover = p.hover_input()
x, i = np.zeros(12), np.zeros(3)
r = np.array([1.0, 0.0, 0.0])
err = []
for k in range(2000):
    u = control_law(gain, x, i, hover)
    i = integral_update(i, r, d.C @ x, E_UWB)
    x = step_linear_plant(x, u - hover, d)
    err.append(np.max(np.abs(x[0:3] - r)))
for k in (100, 500, 1000, 1999):
    print(f"step {k:4d}: |error| = {err[k]:.2e}")
