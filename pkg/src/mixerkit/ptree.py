"""Parameter-tree utilities: walk dataclass/list containers of ndarrays,
deduplicating shared arrays (directions may share their transition
parameter), so counting, checkpointing, gradients, and SGD all see each
physical parameter exactly once.
"""

from __future__ import annotations

import dataclasses

import numpy as np


def named_arrays(obj, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    """(path, array) pairs in deterministic order; shared arrays appear
    once, under the first path that reaches them."""
    out: list[tuple[str, np.ndarray]] = []
    seen: set[int] = set()

    def walk(node, path):
        if isinstance(node, np.ndarray):
            if id(node) not in seen:
                seen.add(id(node))
                out.append((path, node))
        elif dataclasses.is_dataclass(node):
            for f in dataclasses.fields(node):
                walk(getattr(node, f.name), f"{path}.{f.name}" if path else f.name)
        elif isinstance(node, (list, tuple)):
            for i, item in enumerate(node):
                walk(item, f"{path}.{i}" if path else str(i))
        # scalars/None/strings carry no parameters

    walk(obj, prefix)
    return out


def count_params(obj) -> int:
    return sum(arr.size for _, arr in named_arrays(obj))


def load_named_arrays(obj, arrays: dict[str, np.ndarray]) -> None:
    """Copy values into an existing tree in place, preserving aliasing."""
    targets = dict(named_arrays(obj))
    missing = set(targets) - set(arrays)
    extra = set(arrays) - set(targets)
    if missing or extra:
        raise ValueError(f"array name mismatch: missing={sorted(missing)}, "
                         f"unexpected={sorted(extra)}")
    for name, target in targets.items():
        src = arrays[name]
        if src.shape != target.shape:
            raise ValueError(f"{name}: shape {src.shape} != expected {target.shape}")
        np.copyto(target, src)


class GradStore:
    """Gradient accumulator keyed by parameter identity.

    Contributions to a shared array (e.g. a transition parameter used by
    both scan directions) sum into one slot automatically.
    """

    def __init__(self, params_root):
        self._paths = {id(arr): name for name, arr in named_arrays(params_root)}
        self._arrays = {id(arr): arr for _, arr in named_arrays(params_root)}
        self._grads: dict[int, np.ndarray] = {}

    def add(self, param: np.ndarray, grad: np.ndarray) -> None:
        key = id(param)
        if key not in self._paths:
            raise KeyError("gradient for an array that is not in the parameter tree")
        if grad.shape != param.shape:
            raise ValueError(f"grad shape {grad.shape} != param shape {param.shape}")
        if key in self._grads:
            self._grads[key] += grad
        else:
            self._grads[key] = np.array(grad, dtype=np.float64, copy=True)

    def by_path(self) -> dict[str, np.ndarray]:
        out = {}
        for key, name in self._paths.items():
            grad = self._grads.get(key)
            out[name] = grad if grad is not None else np.zeros_like(self._arrays[key])
        return out

    def params_by_path(self) -> dict[str, np.ndarray]:
        return {name: self._arrays[key] for key, name in self._paths.items()}
