"""
How accurate is the Euler predictor?
====================================

The predictor integrates the error system over one delay interval using
the stored input history.  We compare it with a tight Runge-Kutta solution
and watch the error halve as the number of Euler steps doubles.
"""

import numpy as np

from nmes_predictor import PlantModel, ReferenceSpec, reference_build
from nmes_predictor.predictor import FunctionSegment, InputHistory, euler_chain, prediction_truth

model = PlantModel()
ref = reference_build(ReferenceSpec.sinusoid(0.5), model, tau=0.05)

# An input history that wiggles around the reference input.
t0, x0 = 1.2, np.array([0.6, -0.8])
hist = InputHistory([FunctionSegment(t0 - ref.tau, t0,
                                     lambda t: ref.v_d(t) + 0.5 * np.sin(30 * t))])
truth, est = prediction_truth(model, ref, t0, x0, hist, tol=1e-12)
print(f"x(t0 + tau) = {truth}  (error estimate {est:.1e})")

# %%
prev = None
for N in (10, 40, 160, 640, 2560):
    err = np.linalg.norm(euler_chain(model, ref, t0, x0, N, hist)[0][-1] - truth)
    ratio = "" if prev is None else f"  ratio {prev / err:.2f}"
    print(f"N = {N:5d}   error {err:.3e}{ratio}")
    prev = err
# Each 4x increase in N cuts the error by about 4: first order.
