"""Serial baseline: one processor that sees every example in order."""
from __future__ import annotations

import numpy as np

from . import kernels
from .learn import LossModel, RegretLedger, UpdateRule


def run_serial(model: LossModel, payloads: np.ndarray, rule: UpdateRule, b: int = 1):
    """Run the (mini-batch) projected-gradient rule over ``payloads``.

    With ``b > 1`` the predictor changes only after every ``b`` examples,
    using their averaged gradient. Returns ``(ledger, final_w)``.
    """
    if rule.kind != "projected-gradient" or rule.noise:
        return _run_generic(model, payloads, rule, b)
    lp, lc, st, w = kernels.run_serial(
        model.code, np.ascontiguousarray(payloads), np.ascontiguousarray(rule.w),
        np.ascontiguousarray(model.w_star), rule.radius, rule.lipschitz, rule.diameter,
        rule.sigma_eff, int(b))
    ledger = RegretLedger()
    n = payloads.shape[0]
    ledger.seq = list(range(n))
    ledger.node = [0] * n
    ledger.loss_pred = lp.tolist()
    ledger.loss_comp = lc.tolist()
    ledger.epoch = st.tolist()
    ledger.time = [float(i) for i in range(n)]
    return ledger, w


def _run_generic(model, payloads, rule, b):
    from .learn import update_step

    ledger = RegretLedger()
    comp = np.ascontiguousarray(model.w_star)
    g = np.zeros(model.dim)
    count = 0
    for i in range(payloads.shape[0]):
        lp, lc = kernels.serve(model.code, rule.w, rule.w, comp, payloads[i], g)
        ledger.add(i, 0, lp, lc, rule.steps, float(i))
        count += 1
        if count >= b:
            rule = update_step(rule, kernels.mean_of(g, count), count)
            g = np.zeros(model.dim)
            count = 0
    return ledger, rule.w
