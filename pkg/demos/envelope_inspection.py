"""
Envelope functions and why the certificate is out of reach
==========================================================

The guaranteed step count N(s) is built from envelope functions of the
plant.  Here we print the scalar design constants, check the envelope
inequalities on random samples and look at how quickly the certified
step count explodes.
"""

import numpy as np

from nmes_predictor import PlantModel, ReferenceSpec, build_envelopes, reference_build
from nmes_predictor.envelopes import validate_envelopes

model = PlantModel()
ref = reference_build(ReferenceSpec.sinusoid(0.5), model, tau=0.05)
env = build_envelopes(model, ref, mu=1.0, eps=0.1, r=0.05)

print("Lambda       ", np.round(ref.lambdas, 3))
print(f"K = {env.K:.4f}  c = {env.c:.3f}  gamma = {env.gamma:.3e}")
print(f"k_tilde = {env.k_tilde:.3f}  R_tilde = {env.R_tilde:.2e}  omega = {env.omega:.4f}")

# %%
# Every inequality the construction relies on, sampled 10^4 times.
rep = validate_envelopes(env, model, ref, n_samples=10_000, seed=0)
print(rep.to_csv())

# %%
# Error envelope R(s) and the smallest N for which the Euler bound applies.
# The Lyapunov level sets grow only logarithmically in the angle, so their
# inverse (and everything built on it) grows exponentially.
with np.errstate(over="ignore"):
    for s in (1e-40, 1e-20, 1e-8, 1e-3, 0.1, 1.0):
        print(f"s = {s:7.0e}   a_tau = {float(env.a_tau(s)):9.3e}   R(s) = {float(env.R_fn(s)):9.3e}"
              f"   min N = {float(env.euler_min_steps(s)):9.3e}")
