"""Maximum-entropy hydrodynamics of Dirac-cone (graphene) carriers.

Modules
-------
special_functions
    Fermi integrals, modified Bessel functions and their inverses.
angular_kernels
    The angular moments ``I_N^s(A, B)`` and their asymptotic forms.
closure
    Constraint inversion, closure tensors, regime functions, free energy.
field_solvers
    Finite-volume solver for the bipolar moment system.
reduced_models
    Drift-diffusion, linear-response wave equation, collimation dynamics.
cli
    Command-line harness.
"""

__version__ = "0.1.0"
