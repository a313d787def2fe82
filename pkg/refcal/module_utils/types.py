from typing import Callable, Dict, List, Union

import numpy as np
import numpy.typing as npt

AnyJsonType = Union[Dict[str, "AnyJsonType"], List["AnyJsonType"], str, int, float, bool, None]
TJsonObject = Dict[str, AnyJsonType]
TJsonList = List[AnyJsonType]
TJsonBareValue = Union[str, int, float, bool, None]

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]
StrArray = npt.NDArray[np.str_]

ScalarFunction = Callable[[FloatArray], float]
