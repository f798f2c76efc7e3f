"""Robust distributed mini-batch learning: protocols, simulator and bound checks."""
from .bounds import (admb_regret_bound, batch_size_policy, dmb_regret_bound,
                     good_period_examples_bound, mawo_mu_bound, propagation_bound,
                     serial_psi_bound)
from .config import ScenarioConfig, dump_config, parse_config
from .harness import compare_protocols, run_experiment, sweep
from .kernels import BACKEND
from .learn import (ConfigError, LossModel, ProtocolError, UpdateRule, logistic_model,
                    loss_gradient, loss_value, make_rule, project, quadratic_model,
                    update_step)
from .periods import track_good_periods
from .simnet import (FaultEntry, FaultSchedule, LinkModel, Simulator, build_topology,
                     substream)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "FaultEntry", "FaultSchedule", "LinkModel", "LossModel",
    "ProtocolError", "ScenarioConfig", "Simulator", "UpdateRule", "admb_regret_bound",
    "batch_size_policy", "build_topology", "compare_protocols", "dmb_regret_bound",
    "dump_config", "good_period_examples_bound", "logistic_model", "loss_gradient",
    "loss_value", "make_rule", "mawo_mu_bound", "parse_config", "project",
    "propagation_bound", "quadratic_model", "run_experiment", "serial_psi_bound",
    "substream", "sweep", "track_good_periods", "update_step",
]
