"""Pieces shared by the simulated protocols."""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from . import kernels
from .learn import LossModel, RegretLedger, UpdateRule


class Protocol:
    """Base class: owns the payload stream, the comparator and the regret ledger.

    Subclasses implement the simulator callbacks. ``track`` enables the
    seq-id provenance ledger used by the invariant checks.
    """

    name = "protocol"

    def __init__(self, model: LossModel, payloads: np.ndarray, rule: UpdateRule, b: int,
                 *, track: bool = True):
        self.model = model
        self.kind = model.code
        self.payloads = payloads
        self.comp = np.ascontiguousarray(model.w_star, dtype=np.float64)
        self.rule0 = rule
        self.b = int(b)
        self.track = track
        self.ledger = RegretLedger()
        self.sim = None
        self.updates = []  # dict rows, one per applied update
        self.dropped = defaultdict(int)  # epoch -> discarded gradients
        self.lost_gradients = 0  # held by a node when it crashed

    def serve(self, node, seq, pred, w, gsum, epoch):
        lp, lc = kernels.serve(self.kind, pred, w, self.comp, self.payloads[seq], gsum)
        self.ledger.add(seq, node, lp, lc, epoch, self.sim.now)

    def on_system(self, payload):
        pass

    def on_crash(self, node):
        pass

    def on_recover(self, node):
        pass

    def start(self):
        """Arm initial timers; called once before the run."""

    def resolve_fault_target(self, entry):
        return entry.target
