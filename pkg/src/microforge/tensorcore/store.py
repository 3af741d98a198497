"""Named, versioned collection of trainable tensors."""

from __future__ import annotations

import numpy as np

from .core import Tensor


class ParamStore:
    """Maps stable names to requires_grad tensors.

    Insertion order is preserved, which fixes the iteration (and therefore
    serialization and update) order everywhere.
    """

    VERSION = 1

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_arrays(self, arrays: dict) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            value = np.asarray(arrays[name], dtype=t.dtype)
            if value.shape != t.shape:
                raise ValueError(f"parameter {name!r}: shape {value.shape} != {t.shape}")
            t.data = value.copy()

    def digest(self) -> bytes:
        """Order-sensitive hash of all parameter payloads (for tests)."""
        import hashlib

        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.digest()
