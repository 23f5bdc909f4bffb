"""Constrained stochastic transport with optimal stopping on a lattice Markov chain.

Pipeline: ``lattice`` builds the controlled chain, ``hjb`` solves the obstacle
problem for an end potential, ``transport`` pushes mass forward under the
resulting policy, and ``dualsolve`` maximises the dual over the potential.
``oracle`` gives exact answers on micro instances and ``montecarlo`` checks a
solution by path simulation.
"""
from .dualsolve import SolveReport, SolveResult, ascend, dual_value, duality_gap
from .errors import (
    ConfigError,
    DomainError,
    InfeasibleError,
    NumericalError,
    StructuralError,
    TransportError,
)
from .hjb import Policy, Potential, ValueField, extract_barrier, normalize_potential, solve_qvi
from .lattice import Lattice, TransitionKernel, build_kernel, build_lattice, make_lattice
from .model import GridMeasure, LagrangianSpec, ProblemConfig, TimeProfile, control_grid, hamiltonian
from .transport import forward_propagate, primal_cost

__all__ = [
    "ConfigError", "DomainError", "GridMeasure", "InfeasibleError", "LagrangianSpec", "Lattice",
    "NumericalError", "Policy", "Potential", "ProblemConfig", "SolveReport", "SolveResult",
    "StructuralError", "TimeProfile", "TransitionKernel", "TransportError", "ValueField", "ascend",
    "build_kernel", "build_lattice", "control_grid", "dual_value", "duality_gap", "extract_barrier",
    "forward_propagate", "hamiltonian", "make_lattice", "normalize_potential", "primal_cost", "solve_qvi",
]
