import numpy as np

from melclean import autodiff
from melclean.autodiff import Tensor


def gradcheck(fn, tensors, h=1e-3, rtol=1e-3, atol=1e-4, max_coords=6, seed=0):
    """Central finite-difference check of fn(*tensors) -> Tensor.

    Runs in float64 (tensors are upcast) so the difference quotient probes
    the derivative rather than float32 rounding. The comparison is against
    a fixed random linear functional of the output, which keeps each
    partial derivative well scaled. For large parameters only a random
    coordinate subset is probed.
    """
    with autodiff.default_dtype(np.float64):
        t64 = [Tensor(t.data.astype(np.float64), requires_grad=True)
               for t in tensors]
        out = fn(*t64)
        rng = np.random.default_rng(seed)
        weights = rng.standard_normal(out.data.shape)
        out.backward(seed=weights)

        def loss(args):
            with autodiff.no_grad():
                return float(np.vdot(weights, fn(*args).data))

        for ti, tensor in enumerate(t64):
            flat = tensor.data.reshape(-1)
            n = flat.size
            coords = (range(n) if n <= max_coords
                      else rng.choice(n, size=max_coords, replace=False))
            for ci in coords:
                orig = flat[ci]
                flat[ci] = orig + h
                up = loss(t64)
                flat[ci] = orig - h
                down = loss(t64)
                flat[ci] = orig
                fd = (up - down) / (2 * h)
                an = tensor.grad.reshape(-1)[ci]
                err = abs(an - fd)
                tol = atol + rtol * max(abs(fd), abs(an))
                assert err <= tol, (
                    f"grad mismatch tensor {ti} coord {ci}: "
                    f"analytic {an:.8g} vs fd {fd:.8g} (err {err:.3g})")
