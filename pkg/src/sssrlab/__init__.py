"""Small-signal security regions and CSI-driven mode switching for
grid-following / grid-forming inverter subsystems."""

from .model import (
    OMEGA_BASE_DEFAULT,
    GFL_DIM,
    GFM_DIM,
    SystemParams,
    GflGains,
    GfmGains,
    Setpoint,
    GflState,
    GfmState,
    grid_impedance,
    power_outputs,
    gfl_derivatives,
    gfm_derivatives,
)
from .equilibrium import (
    EquilibriumError,
    EquilibriumResult,
    solve_equilibrium,
)
from .smallsignal import (
    EPS_MARGIN,
    Linearization,
    LinearModel,
    StabilityReport,
    linearize,
    stability_report,
    classify,
    margin,
)
from .csi import (
    CsiError,
    CsiMap,
    CsiWeights,
    NormContext,
    boundary_distance,
    csi_at_operating_point,
    csi_map,
    load_csi_map,
    normalize_indicator,
    save_csi_map,
)
from .gmm import (
    GmmError,
    GmmModel,
    bic,
    fit_em,
    load_gmm,
    margin_gradient,
    predict_margin,
    r_squared,
    responsibilities,
    save_gmm,
    select_k,
)
from .simulate import (
    GFL,
    GFM,
    CsiBased,
    Event,
    NoSwitch,
    Scenario,
    ScrThreshold,
    SimError,
    TraceRecord,
    bumpless_transfer,
    classify_trace,
    decide_switch,
    integrate,
    is_divergent,
    linear_response,
    load_scenario,
    load_trace,
    rk4_step,
    rmse,
    save_scenario,
    save_trace,
    simulate,
    switch_times,
    trace_arrays,
)
from .region import (
    Axis,
    BoundaryPoint,
    IsmdSample,
    NotFound,
    ParamSpace,
    Region,
    RegionError,
    fit_sssr,
    parameter_plane,
    polytope_volume,
    ray_boundary_search,
    region_contains,
    region_union_probe,
    sample_ismd,
)

__version__ = "0.1.0"
