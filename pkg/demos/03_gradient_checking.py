"""Tour of the finite-difference validation harness.

Every differentiable op carries a registered random-instance builder;
the harness drives each one through central differences and reports the
worst relative error.  Linear ops are held to 1e-7, nonlinear ops to
1e-4.  Whole computation graphs can be checked cheaply with one random
direction through all leaves at once.

Run:  python3 demos/03_gradient_checking.py
"""

import numpy as np

from aspun.autodiff import Tensor, directional_check, grad_check_all, ops

print("== per-op central-difference results ==")
print(f"{'op':20s} {'max rel err':>12s} {'tolerance':>10s}")
for name, error, tolerance, passed in grad_check_all(seed=0):
    marker = "ok" if passed else "FAIL"
    print(f"{name:20s} {error:12.3e} {tolerance:10.0e}  {marker}")

print("\n== one-direction check of a composite graph ==")
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((6, 6, 4)), requires_grad=True)
w = Tensor(rng.standard_normal((3, 3, 4, 4)), requires_grad=True)
gamma = Tensor(np.ones(4), requires_grad=True)
beta = Tensor(np.zeros(4), requires_grad=True)


def fn():
    hidden = ops.gelu(ops.conv2d(x, w, stride=1, padding=1))
    normed = ops.layer_norm(hidden, gamma, beta)
    return ops.tensor_mean(ops.mul(normed, normed))


error = directional_check(fn, [x, w, gamma, beta], seed=1)
print(f"conv -> gelu -> layer_norm -> quadratic loss: rel err {error:.3e}")

print("\n== gradients accumulate across fan-out ==")
v = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
loss = ops.tensor_sum(ops.add(v, v))
loss.backward()
print(f"d(sum(v + v))/dv = {v.grad}  (both uses contribute)")
