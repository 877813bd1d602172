"""Numerical laboratory for transfer cocycles over strictly ergodic dynamics.

The package studies discrete one-dimensional Schrodinger operators through
their SL(2,R) transfer cocycles: spectra via uniform hyperbolicity and
Floquet theory, the integrated density of states and its gap labels, the
fibered rotation number, interval towers over circle rotations, almost
invariant sections and the cohomological equation, conjugation of
near-rotation cocycles to exact rotations, and localized perturbations
absorbed back into Schrodinger form (gap opening).
"""

__version__ = "0.1.0"

from .base_dynamics import (
    GOLDEN_MEAN,
    ContinuedFraction,
    Rotation,
    ScalarField,
    TorusTranslation,
    circle_dist,
    system_from_config,
    wrap,
)
from .mat2 import (
    det2,
    diag_hyp,
    frobenius_norm,
    identity,
    inv_sl2,
    mat2,
    norm_minus_id,
    polar_angle,
    random_sl2,
    rotation,
    schrodinger_step,
    shear,
    sl_renormalize,
    spectral_norm,
)
from .hyperbolic import (
    AdjustmentBoundError,
    ProjInterval,
    WindingNoSolution,
    WindingSolution,
    action_dist_zero,
    disk_action,
    dist_to_zero,
    geodesic_point,
    hilbert_dist,
    hilbert_norm,
    hyp_dist,
    m_point,
    map_interval,
    norm_via_disk,
    phi_adjust,
    psi_n_adjust,
    winding_solve,
)
from .towers import (
    CertificationError,
    CertificationReport,
    Tower,
    build_rotation_tower,
    certify,
    lift_tower_through_factor,
    single_orbit_tower,
)
from .cocycles import (
    Cocycle,
    ConjugatedCocycle,
    ConstantCocycle,
    DiagFieldCocycle,
    ExponentEstimate,
    InducedCocycle,
    NotUH,
    ProductCocycle,
    RotationFieldCocycle,
    SchrodingerCocycle,
    SwapCocycle,
    TabulatedCocycle,
    TwistedDiagCocycle,
    UHCertificate,
    UHInconclusive,
    cocycle_from_config,
    conjugate,
    induced_cocycle,
    iterate,
    lyapunov_exponent,
    product_chain,
    swap_example,
    uh_test,
    unstable_winding,
)
from .rotation import (
    LockingVerdict,
    RhoEstimate,
    RhoProfile,
    classify_locking,
    free_rho,
    rho,
    rho_energy_profile,
    rho_profile,
)
from .spectrum import (
    GapRecord,
    PeriodicSpectrum,
    UHScanResult,
    butterfly_sweep,
    chambers_reconstruct,
    detect_and_label_gaps,
    free_ids,
    ids_by_eigencount,
    ids_by_rotation,
    label_fit,
    periodic_spectrum_exact,
    spectrum_by_uh_scan,
    write_butterfly_csv,
    write_gaps_csv,
    write_ids_csv,
    write_manifest,
)
from .sections import (
    AdjustedCocycle,
    CertificateError,
    CoboundarySolution,
    ConjugacyRefusal,
    DiskCocycleSkew,
    MPair,
    NumericalRefusal,
    RealShiftSkew,
    ReductionPath,
    ReductionStep,
    RotationConjugacy,
    Section,
    SectionError,
    SolverRefusal,
    almost_invariant_section,
    conjugate_to_rotations,
    reduce_uh_to_constant,
    solve_cohomological,
    write_section_csv,
)
from .gap_opening import (
    GapTrackReport,
    GapTrackRow,
    LocalizedPerturbation,
    PerturbedCocycle,
    ProjectedCocycle,
    ProjectionConjugacy,
    ProjectionRefusal,
    RhoAudit,
    SchrodingerProjection,
    expm_traceless,
    make_localized_perturbation,
    open_gap_demo,
    open_gap_demo_periodic,
    project_to_schrodinger,
    rho_constancy_audit,
    write_gap_track_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
