"""Simulation and analysis of a narrow-band cavity-enhanced polarization-entangled pair source."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ContractError,
    DegenerateDataError,
    FitError,
    PairlabError,
    ParameterError,
    PhysicalityError,
    SamplingError,
)
from .polarization import (  # noqa: E402
    PSI_PLUS,
    AnalyzerSetting,
    NoiseParams,
    analyzer_projector,
    apply_noise,
    bell_psi,
    coincidence_probability,
    fidelity,
)
from .spectral import (  # noqa: E402
    CavityArmSpec,
    EtalonSpec,
    ModeComb,
    PhaseMatchEnvelope,
    apply_etalon,
    build_mode_comb,
    etalon_transmission,
    g2_analytic,
)
from .synth import DetectorSpec, EventStream, SourceRunConfig, sample_tau, synthesize  # noqa: E402
from .correlation import (  # noqa: E402
    BandwidthFit,
    CoincidenceHistogram,
    coincidence_rate,
    comb_contrast,
    fit_bandwidth,
    histogram,
)
from .entanglement import (  # noqa: E402
    CountEntry,
    CountTable,
    TomographyResult,
    brightness,
    chsh,
    fringe_scan,
    tomography_linear,
    tomography_mle,
)
