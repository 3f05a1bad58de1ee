"""Independent numerical oracles used across the test-suite."""

import numpy as np

from icagan_bsd.tensorcore import MlpParams, init_mlp, forward


def central_diff(fn, arrays, h=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. every entry of
    every array in ``arrays`` (perturbed in place and restored)."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            fp = fn()
            arr[idx] = old - h
            fm = fn()
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_close(a, b, rtol, atol=1e-7):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    err = np.abs(a - b)
    return bool(np.all(err <= rtol * np.maximum(np.abs(a), np.abs(b)) + atol))


def kink_free_net(rng, sizes, margin=1e-3, batch=None, tries=200):
    """A random net plus an input whose relu pre-activations all sit at least
    ``margin`` away from zero."""
    for _ in range(tries):
        params = init_mlp(sizes, rng)
        params = params.with_arrays(
            [a if a.ndim == 2 else rng.normal(0, 0.3, a.shape) for a in params.arrays()]
        )
        shape = (sizes[0],) if batch is None else (batch, sizes[0])
        x = rng.normal(size=shape)
        _, cache = forward(params, x)
        if all(np.all(np.abs(h) > margin) for h in cache.pre[:-1]):
            return params, x
    raise RuntimeError("could not find kink-free point")


def mutable_copy(params: MlpParams):
    arrays = [a.copy() for a in params.arrays()]
    return arrays, lambda: params.with_arrays(arrays)
