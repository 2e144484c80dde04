"""Dense tensor helpers.

Tensors are plain C-contiguous numpy arrays. Training and inference run in
float32; gradient checks switch to float64 by building the model (or passing
inputs) with ``dtype=np.float64``. Every op keeps the dtype of its inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

FLOAT32 = np.dtype(np.float32)
FLOAT64 = np.dtype(np.float64)
SUPPORTED_DTYPES = (FLOAT32, FLOAT64)


def resolve_dtype(dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt not in SUPPORTED_DTYPES:
        raise InvalidArgumentError(f"unsupported dtype {dt}; use float32 or float64")
    return dt


def tensor(data, shape: Sequence[int] | None = None, dtype=FLOAT32) -> np.ndarray:
    """Build a tensor from nested sequences or a flat row-major buffer.

    When ``shape`` is given, ``data`` is read as a flat row-major buffer and
    its length must equal the product of the dimensions.
    """
    dt = resolve_dtype(dtype)
    arr = np.array(data, dtype=dt)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        check_dims(shape)
        if arr.size != int(np.prod(shape)):
            raise InvalidArgumentError(
                f"data has {arr.size} values but shape {shape} needs {int(np.prod(shape))}"
            )
        arr = arr.reshape(shape)
    else:
        check_dims(arr.shape)
    return np.ascontiguousarray(arr)


def zeros(shape: Sequence[int], dtype=FLOAT32) -> np.ndarray:
    check_dims(tuple(shape))
    return np.zeros(tuple(shape), dtype=resolve_dtype(dtype))


def check_dims(shape: tuple[int, ...]) -> None:
    if any(int(s) < 1 for s in shape):
        raise InvalidArgumentError(f"all dimensions must be >= 1, got {shape}")


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major flat offset of ``index`` inside ``shape``."""
    if len(shape) != len(index):
        raise InvalidArgumentError(f"index {tuple(index)} has wrong rank for shape {tuple(shape)}")
    flat = 0
    for dim, i in zip(shape, index):
        if not 0 <= i < dim:
            raise InvalidArgumentError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
        flat = flat * dim + i
    return flat


def unflatten_index(shape: Sequence[int], flat: int) -> tuple[int, ...]:
    size = int(np.prod(shape))
    if not 0 <= flat < size:
        raise InvalidArgumentError(f"flat index {flat} out of range for {size} elements")
    out = []
    for dim in reversed(shape):
        flat, rem = divmod(flat, dim)
        out.append(rem)
    return tuple(reversed(out))


def expect_shape(name: str, arr: np.ndarray, shape: tuple) -> None:
    """Raise if ``arr.shape`` differs from ``shape`` (``None`` entries match anything)."""
    if arr.ndim != len(shape) or any(
        want is not None and got != want for got, want in zip(arr.shape, shape)
    ):
        pretty = tuple("*" if s is None else s for s in shape)
        raise InvalidArgumentError(f"{name}: expected shape {pretty}, got {tuple(arr.shape)}")
