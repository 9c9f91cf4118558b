"""Commonly used type hints."""

import numpy as np
import numpy.typing as npt

#: Type for a 1D vector of integer values (positions, payments, ids).
Int1D = npt.NDArray[np.int64]
#: Type for a 1D vector of float values.
Float1D = npt.NDArray[np.float64]
#: Type for a 2D matrix of float values (one probability row per agent).
Float2D = npt.NDArray[np.float64]
#: Type for a boolean mask.
Bool1D = npt.NDArray[np.bool_]
