"""Sparse regression with a unit-sum constraint under joint cardinality and absolute-sum caps."""

from .core import ConstraintSpec, RegressionData, SolveReport, Status, is_feasible, negative_sum, objective
from .dfo import DfoConfig, dfo_solve
from .l1path import forward_stepwise, solve_l1_unit_sum
from .mio import BigM, big_m_from_dfo, branch_and_bound, build_model, export_model
from .ortho import project, solve_orthogonal

__version__ = "0.1.0"
