"""Pure numpy GRU recurrence kernel (fallback for the compiled version).

Both backends share one contract. Inputs are the precomputed input
projections ``xz, xr, xc`` of shape (B, n, H) (``x @ W + b`` for each gate),
the recurrent matrices ``vz, vr, vc`` of shape (H, H) in row-vector form
(``h @ V``), and a (B, n) float mask. Masked steps carry the hidden state
unchanged.
"""
import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(xz, xr, xc, vz, vr, vc, mask, reverse):
    B, n, H = xz.shape
    states = np.zeros((B, n, H))
    hprev = np.zeros((B, n, H))
    z = np.zeros((B, n, H))
    r = np.zeros((B, n, H))
    c = np.zeros((B, n, H))
    h = np.zeros((B, H))
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        live = mask[:, t, None] > 0
        zt = _sigmoid(xz[:, t] + h @ vz)
        rt = _sigmoid(xr[:, t] + h @ vr)
        ct = np.tanh(xc[:, t] + (rt * h) @ vc)
        hn = zt * ct + (1.0 - zt) * h
        hprev[:, t] = h
        z[:, t] = zt
        r[:, t] = rt
        c[:, t] = ct
        h = np.where(live, hn, h)
        states[:, t] = h
    return states, hprev, z, r, c


def gru_backward(dstates, hprev, z, r, c, vz, vr, vc, mask, reverse):
    """Backpropagate through the recurrence.

    ``dstates`` is the gradient w.r.t. the carried state at each step (the
    caller applies the output mask). Returns gradients for the three input
    projections and the three recurrent matrices.
    """
    B, n, H = dstates.shape
    dxz = np.zeros((B, n, H))
    dxr = np.zeros((B, n, H))
    dxc = np.zeros((B, n, H))
    dvz = np.zeros((H, H))
    dvr = np.zeros((H, H))
    dvc = np.zeros((H, H))
    dh = np.zeros((B, H))
    steps = range(n) if reverse else range(n - 1, -1, -1)
    for t in steps:
        live = mask[:, t, None] > 0
        m = live.astype(float)
        dh = dh + dstates[:, t]
        hp, zt, rt, ct = hprev[:, t], z[:, t], r[:, t], c[:, t]
        dac = dh * zt * (1.0 - ct * ct) * m
        daz = dh * (ct - hp) * zt * (1.0 - zt) * m
        drh = dac @ vc.T
        dar = drh * hp * rt * (1.0 - rt)
        dhp = dh * (1.0 - zt) + drh * rt + daz @ vz.T + dar @ vr.T
        dvc += (rt * hp).T @ dac
        dvz += hp.T @ daz
        dvr += hp.T @ dar
        dxz[:, t] = daz
        dxr[:, t] = dar
        dxc[:, t] = dac
        dh = np.where(live, dhp, dh)
    return dxz, dxr, dxc, dvz, dvr, dvc
