"""Independent reference computations shared by the unit and acceptance tests.

Nothing here imports the code paths it checks: gradients come from central
differences, metrics from explicit loops, Otsu from scoring every cut.
"""

from __future__ import annotations

import numpy as np

from urbanmask import micronet as mn
from urbanmask.optimloss import bce_loss

FD_STEP = 1e-5


def rel_err(analytic, numeric, floor=1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0


def numeric_grad(f, x, h=FD_STEP, coords=None):
    """Central-difference gradient of scalar f() w.r.t. array x (mutated in place, then restored)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out.append((up - down) / (2 * h))
    return np.array(out)


def _away_from_zero(rng, shape, margin=1e-3):
    """Normal draws nudged away from 0 so ReLU kinks are never straddled."""
    z = rng.standard_normal(shape)
    return np.where(np.abs(z) < margin, np.sign(z + 1e-300) * margin * 2, z)


def _distinct(rng, shape):
    """Values with a guaranteed gap between any two entries, so max-pool winners are stable."""
    n = int(np.prod(shape))
    return (rng.permutation(n).astype(np.float64) * 0.01 + rng.uniform(0, 1e-3)).reshape(shape)


def _check(inputs, fwd, bwd, rng):
    """Compare bwd(projection) against FD of sum(fwd() * projection) for each input array."""
    out = fwd()
    proj = rng.standard_normal(out.shape)
    analytic = bwd(proj)
    loss = lambda: float((fwd() * proj).sum())  # noqa: E731
    worst = 0.0
    for arr, grad in zip(inputs, analytic):
        worst = max(worst, rel_err(grad, numeric_grad(loss, arr)))
    return worst


def layer_case(layer: str, seed: int) -> float:
    """Worst relative error for one random 8x8 case of ``layer``."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 4))
    shape = (n, 8, 8, c)
    if layer == "conv3x3":
        x, w, b = rng.standard_normal(shape), rng.standard_normal((3, 3, c, cout)), rng.standard_normal(cout)
        return _check([x, w, b], lambda: mn.conv3x3_forward(x, w, b),
                      lambda d: mn.conv3x3_backward(x, w, d), rng)
    if layer == "conv1x1":
        x, w, b = rng.standard_normal(shape), rng.standard_normal((c, cout)), rng.standard_normal(cout)
        return _check([x, w, b], lambda: mn.conv1x1_forward(x, w, b),
                      lambda d: mn.conv1x1_backward(x, w, d), rng)
    if layer == "relu":
        z = _away_from_zero(rng, shape)
        return _check([z], lambda: mn.relu_forward(z),
                      lambda d: (mn.relu_backward(mn.relu_forward(z), d),), rng)
    if layer == "maxpool2":
        x = _distinct(rng, shape)
        return _check([x], lambda: mn.maxpool2_forward(x)[0],
                      lambda d: (mn.maxpool2_backward(mn.maxpool2_forward(x)[1], d),), rng)
    if layer == "upsample2":
        x = rng.standard_normal((n, 4, 4, c))
        return _check([x], lambda: mn.upsample2_forward(x),
                      lambda d: (mn.upsample2_backward(d),), rng)
    if layer == "concat":
        a, b = rng.standard_normal(shape), rng.standard_normal((n, 8, 8, cout))
        return _check([a, b], lambda: mn.concat_forward(a, b),
                      lambda d: mn.concat_backward(d, c), rng)
    if layer == "sigmoid":
        z = rng.standard_normal(shape) * 3
        return _check([z], lambda: mn.sigmoid_forward(z),
                      lambda d: (mn.sigmoid_backward(mn.sigmoid_forward(z), d),), rng)
    if layer == "network":
        return network_case(seed)
    raise ValueError(layer)


LAYERS = ("conv3x3", "conv1x1", "relu", "maxpool2", "upsample2", "concat", "sigmoid", "network")


def _pattern(cache) -> bytes:
    """ReLU on/off states and max-pool winners: the piecewise-linear region the net is in."""
    parts = []
    for key in sorted(cache.records):
        rec = cache.records[key]
        if isinstance(rec, tuple):
            parts.append(np.packbits(rec[1] > 0).tobytes())
        elif key.startswith("pool"):
            parts.append(rec.astype(np.uint8).tobytes())
    return b"".join(parts)


def network_case(seed: int, stride: int = 5, return_skipped: bool = False):
    """End-to-end BCE gradient of a small U-Net on an 8x8 batch, every ``stride``-th parameter.

    A coordinate whose +h or -h step changes any ReLU state or pool winner
    sits on a kink where the derivative does not exist; it is skipped.
    """
    rng = np.random.default_rng(seed)
    cfg = mn.NetConfig(in_channels=int(rng.integers(1, 4)), base_channels=2, depth=2)
    params = mn.init_params(cfg, seed)
    # small positive biases keep ReLUs active so finite differences see smooth terrain
    for name, arr in zip(params.names, params.arrays):
        if name.endswith(".bias"):
            arr[...] = rng.uniform(0.05, 0.2, arr.shape)
    x = rng.uniform(0, 1, (2, cfg.in_channels, 8, 8))
    y = (rng.uniform(size=(2, 1, 8, 8)) > 0.5).astype(np.float64)
    p, cache = mn.forward(params, cfg, x)
    base = _pattern(cache)
    _, dp = bce_loss(y, p)
    analytic = mn.backward(params, cfg, cache, dp).to_vector()
    vec = params.to_vector()

    kept, numeric, skipped = [], [], 0
    for i in range(seed % stride, vec.size, stride):
        vals, smooth = [], True
        for step in (FD_STEP, -FD_STEP):
            trial = vec.copy()
            trial[i] += step
            params.set_vector(trial)
            out, c = mn.forward(params, cfg, x)
            smooth &= _pattern(c) == base
            vals.append(bce_loss(y, out)[0])
        if not smooth:
            skipped += 1
            continue
        kept.append(i)
        numeric.append((vals[0] - vals[1]) / (2 * FD_STEP))
    params.set_vector(vec)
    err = rel_err(analytic[kept], numeric)
    return (err, skipped) if return_skipped else err


# -- metrics ---------------------------------------------------------------

def brute_counts(pred, truth):
    """Confusion counts by visiting every pixel."""
    tp = fp = fn = tn = 0
    for p, t in zip(np.asarray(pred).ravel().tolist(), np.asarray(truth).ravel().tolist()):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


# -- thresholding ------------------------------------------------------------

def otsu_exhaustive(lum):
    """Every cut t in 1..255 scored directly from the two pixel populations."""
    values = np.asarray(lum, dtype=np.float64).ravel()
    best, cuts = -1.0, []
    for t in range(1, 256):
        lo, hi = values[values < t], values[values >= t]
        if lo.size == 0 or hi.size == 0:
            continue
        w0, w1 = lo.size / values.size, hi.size / values.size
        score = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if score > best * (1 + 1e-12):
            best, cuts = score, [t]
        elif abs(score - best) <= 1e-12 * best:
            cuts.append(t)
    return best, cuts
