"""Numerical companion for u_t = Lu + q f(u) with zero data: Osgood
classification, semigroup comparison lemmas and non-uniqueness certificates."""

from .elliptic import (
    CrankNicolson,
    DiscreteSemigroup,
    Domain,
    EllipticProblem,
    ImplicitEuler,
    KappaEstimate,
    MatrixExponential,
    OrderingReport,
    build_semigroup,
    estimate_kappa,
    kernel_matrix,
    verify_kernel_ordering,
)
from .errors import (
    ConstructionError,
    HorizonExceeded,
    InconclusiveOsgood,
    KappaNotPositive,
    MonotonicityViolation,
    NonConvergence,
    OsgoodHolds,
    OsgoodLabError,
)
from .nonlinearity import (
    LogOsgood,
    LogPerturbedPower,
    Nonlinearity,
    OdeProfile,
    OsgoodClass,
    OsgoodVerdict,
    PowerLaw,
    Tabulated,
    check_osgood,
    shift_nonlinearity,
    solve_mu,
)
from .nonuniqueness import (
    ConstructionParams,
    DuhamelOperator,
    NonUniquenessCertificate,
    SpaceTimeField,
    build_subsolution,
    build_supersolution,
    certify_nonuniqueness,
    derive_params,
    duhamel,
    monotone_iterate,
    reduce_indefinite_c,
)

__version__ = "0.1.0"
