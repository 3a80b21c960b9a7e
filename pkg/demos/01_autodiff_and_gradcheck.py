"""Tour of the tensor core: build a tiny computation, differentiate it,
and confirm the analytic gradients against central finite differences.

Run:  python3 demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

import iclseg.autodiff as ad
from iclseg.autodiff import GradTape, grad_check, tensor

rng = np.random.default_rng(0)

# A tensor is a numpy array plus a requires_grad flag. Ops executed inside
# a GradTape record themselves; backward replays the tape in reverse.
x = tensor(rng.standard_normal((3, 4)), requires_grad=True)
w = tensor(rng.standard_normal((4, 2)), requires_grad=True)

with GradTape() as tape:
    h = ad.gelu(ad.matmul(x, w))
    loss = ad.tmean(ad.square(h))
    tape.backward(loss)

print("loss          :", f"{loss.item():.6f}")
print("dL/dw norm    :", f"{np.linalg.norm(w.grad):.6f}")

# grad_check compares against (f(x+e) - f(x-e)) / 2e elementwise and
# reports the worst relative error. Everything here is float64.
w.grad = None
err = grad_check(lambda t: ad.tmean(ad.square(ad.gelu(ad.matmul(x, t)))), w)
print("grad_check    :", f"max rel err {err:.2e}  (tolerance 1e-4)")

# Detached tensors act as constants: no gradient ever reaches them.
y = tensor([1.0, 2.0, 3.0], requires_grad=True)
with GradTape() as tape:
    tape.backward(ad.tsum(ad.square(ad.detach(y))))
print("detach        :", "grad is", y.grad, "(stays None)")

# The same machinery powers convolutions, normalization and interpolation.
img = tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
kernel = tensor(rng.standard_normal((4, 2, 3, 3)), requires_grad=True)
with GradTape() as tape:
    fm = ad.relu(ad.conv2d(img, kernel))
    up = ad.bilinear_upsample(fm, 16, 16)
    tape.backward(ad.tmean(ad.square(up)))
print("conv backward :", f"dL/dkernel norm {np.linalg.norm(kernel.grad):.6f}")
