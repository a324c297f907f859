"""Clearing of interbank networks whose obligations depend on the firms' wealths."""
from .analysis import (
    ComparisonReport,
    ConservationAudit,
    SensitivityReport,
    compare_static_dynamic,
    conservation_audit,
    sensitivity_in_assets,
    static_to_dynamic,
)
from .contracts import (
    ContingentContract,
    ContractKind,
    LiabilitySpec,
    check_insurance_tree,
    evaluate_liabilities,
    threshold_eta,
    upper_bound_matrix,
)
from .dynamic import (
    DynamicSpec,
    DynamicState,
    RemovalPolicy,
    clear_dynamic,
    clear_step,
    default_set_update,
    dynamic_conservation,
    dynamic_totals,
    net_cash_flow,
    relative_exposure,
    validate_dynamic,
)
from .errors import ContagionError, InvalidInputError, NumericalFailure, ScenarioError, StructuralError
from .network import (
    ClearingResult,
    Direction,
    FinancialNetwork,
    RelativeLiabilities,
    clear_eisenberg_noe,
    payments_from_wealth,
    total_and_relative_liabilities,
    validate_network,
)
from .scenario import RunReport, ScenarioFile, parse_scenario, run_scenario, serialize_scenario
from .stability import FundMode, StabilityFundConfig, build_stability_fund
from .static import (
    NonexistenceDiagnosis,
    NonspeculativeVerdict,
    check_nonspeculative,
    clear_static,
    clearing_map,
    detect_nonexistence,
    fictitious_default_static,
    residual,
    solve_static,
    wealth_box,
)

__all__ = [name for name in dir() if not name.startswith("_")]
