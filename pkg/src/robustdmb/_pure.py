"""Pure-Python twin of ``_ckernels``.

Same operations in the same order, so results are bit-identical to the
compiled backend (IEEE doubles, sequential sums, libm ``sqrt``/``exp``).
"""
import math

import numpy as np

QUADRATIC = 0
LOGISTIC = 1
SLACK = 1.0 + 8.0 * 2.220446049250313e-16  # a few ulps outside still counts as inside


def _project_list(w, radius):
    s = 0.0
    for x in w:
        s += x * x
    n = math.sqrt(s)
    if n > radius * SLACK:
        scale = radius / n
        return [x * scale for x in w]
    return w


def _softplus(a):
    if a > 0.0:
        return a + math.log1p(math.exp(-a))
    return math.log1p(math.exp(a))


def _margin(w, z):
    s = 0.0
    for k in range(len(w)):
        s += w[k] * z[k]
    return z[len(w)] * s


def _loss(kind, w, z):
    if kind == 0:
        s = 0.0
        for k in range(len(w)):
            diff = w[k] - z[k]
            s += diff * diff
        return 0.5 * s
    return _softplus(-_margin(w, z))


def _add_grad(kind, w, z, out):
    d = len(w)
    if kind == 0:
        for k in range(d):
            out[k] = out[k] + (w[k] - z[k])
        return
    m = _margin(w, z)
    if m >= 0.0:
        coef = -z[d] * (math.exp(-m) / (1.0 + math.exp(-m)))
    else:
        coef = -z[d] * (1.0 / (1.0 + math.exp(m)))
    for k in range(d):
        out[k] = out[k] + coef * z[k]


def loss(kind, w, z):
    return _loss(kind, np.asarray(w).tolist(), np.asarray(z).tolist())


def add_gradient(kind, w, z, out):
    acc = out.tolist()
    _add_grad(kind, np.asarray(w).tolist(), np.asarray(z).tolist(), acc)
    out[:] = acc


def serve(kind, pred, w, comp, z, gsum):
    zl = z.tolist()
    lp = _loss(kind, pred.tolist(), zl)
    lc = _loss(kind, comp.tolist(), zl)
    acc = gsum.tolist()
    _add_grad(kind, w.tolist(), zl, acc)
    gsum[:] = acc
    return lp, lc


def project(w, radius):
    return np.array(_project_list(np.asarray(w, dtype=np.float64).tolist(), radius))


def pg_step(w, g, eta, radius):
    wl = np.asarray(w).tolist()
    gl = np.asarray(g).tolist()
    return np.array(_project_list([wl[k] - eta * gl[k] for k in range(len(wl))], radius))


def da_point(gsum, beta, radius):
    return np.array(_project_list([-x / beta for x in np.asarray(gsum).tolist()], radius))


def mean_of(gsum, count):
    return np.array([x / count for x in np.asarray(gsum).tolist()])


def run_serial(kind, payloads, w0, comp, radius, lipschitz, diameter, sigma_eff, batch):
    n = payloads.shape[0]
    d = len(w0)
    lp = np.empty(n)
    lc = np.empty(n)
    st = np.empty(n, dtype=np.int64)
    w = np.asarray(w0, dtype=np.float64).tolist()
    c = np.asarray(comp, dtype=np.float64).tolist()
    g = [0.0] * d
    count = 0
    steps = 0
    rows = payloads.tolist()
    for i in range(n):
        z = rows[i]
        lp[i] = _loss(kind, w, z)
        lc[i] = _loss(kind, c, z)
        st[i] = steps
        _add_grad(kind, w, z, g)
        count += 1
        if count >= batch:
            steps += 1
            eta = diameter / (lipschitz * diameter + sigma_eff * math.sqrt(float(steps)))
            g = [x / count for x in g]
            w = _project_list([w[k] - eta * g[k] for k in range(d)], radius)
            g = [0.0] * d
            count = 0
    return lp, lc, st, np.array(w)
