"""Quantile predictive regression toolkit for persistent covariates.

Estimation (quantile regression, IVX/IVZ instrumentation), structural-break
tests at unknown break dates, simulated limit-distribution critical values,
and Monte Carlo size/power experiments.
"""

__version__ = "0.1.0"

from ._qr_backend import BACKEND
from .breaktests import (
    BreakTestResult,
    known_break_wald,
    make_grid,
    sq_test,
    sw_test,
    wild_bootstrap_critvals,
)
from .ivx import (
    IvxConfig,
    IvxFit,
    build_instruments,
    dequantile,
    ivx_fit,
    ivz_fit,
    predictability_wald,
)
from .limitsim import (
    CritTable,
    LimitProcessId,
    chisq_quantile,
    load_or_simulate,
    simulate_andrews_sup,
    simulate_bb_sup,
    simulate_ou_wald_lur,
)
from .mcharness import (
    CellResult,
    ExperimentConfig,
    McReport,
    emit_tables,
    innovation_preset,
    parse_report,
    run_power,
    run_size,
)
from .qrsolve import ConvergenceError, QrFit, check_loss, psi, qr_fit
from .tsgen import (
    BreakScenario,
    InnovationSpec,
    PersistenceSpec,
    Sample,
    gen_innovations,
    gen_regressors,
    gen_sample,
)

__all__ = [
    "__version__",
    "BACKEND",
    "BreakScenario",
    "BreakTestResult",
    "CellResult",
    "ConvergenceError",
    "CritTable",
    "ExperimentConfig",
    "InnovationSpec",
    "IvxConfig",
    "IvxFit",
    "LimitProcessId",
    "McReport",
    "PersistenceSpec",
    "QrFit",
    "Sample",
    "build_instruments",
    "check_loss",
    "chisq_quantile",
    "dequantile",
    "emit_tables",
    "gen_innovations",
    "gen_regressors",
    "gen_sample",
    "innovation_preset",
    "ivx_fit",
    "ivz_fit",
    "known_break_wald",
    "load_or_simulate",
    "make_grid",
    "parse_report",
    "predictability_wald",
    "psi",
    "qr_fit",
    "run_power",
    "run_size",
    "simulate_andrews_sup",
    "simulate_bb_sup",
    "simulate_ou_wald_lur",
    "sq_test",
    "sw_test",
    "wild_bootstrap_critvals",
]
