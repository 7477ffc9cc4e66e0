"""
Solver services of qnprec.

- krylov: preconditioned conjugate gradient
- problems: Bratu, PHI-2 and Matrix Market test problems
- newton: inexact Newton with updated preconditioning
- eigensolver: Newton-Grassmann leftmost eigenpair solver
- spectral_lab: spectral checks of the preconditioned operators
"""
