"""Calculus, almost automorphy diagnostics and dynamic equation solvers on
the quantum time scale ``q^Z ∪ {0}`` and on the integer grid."""

from .errors import (ExtractionFailed, MaxIterExceeded, NoDecay, NonContraction,
                     NonConvergent, NotRegressive, OutOfWindow, QTSError, RangeError,
                     SingularX, TailNotCertified, UnitCircleEigenvalue)
from .qcalc import (ZERO, GridFn, QPoint, TimeScale, Window, circle_minus, delta_integral,
                    mu, q_derivative, regressive_check, rho, sigma, ts_exp)
from .genseq import (NEG_INF_Q, GenInt, SeqFn, coeff_transform, from_sequence,
                     solution_equivalence_check, to_sequence, to_sequence2)
from .autom import (AAReport, ShiftSequence, aa_diagnostic, bochner_extract,
                    bochner_extract2, compose_scalar, reflect, return_check, shift,
                    sup_norm, weighted_bochner_extract)
from .lindyn import (DichotomyData, FundamentalMatrix, bounded_solution,
                     dichotomy_estimate, dichotomy_verify, fundamental_matrix, residual,
                     solution_bound_check, spectral_projection)
from .semlin import (SemilinearProblem, contraction_constant, lipschitz_probe,
                     picard_solve, psi_apply)

__version__ = "0.1.0"
