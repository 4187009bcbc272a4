"""Quantum-transformer cluster linking on a classical statevector simulator."""
from .qsim import ConfigurationError, ContractError, DegenerateInputError, NumericError

__all__ = ["ConfigurationError", "ContractError", "DegenerateInputError", "NumericError"]
