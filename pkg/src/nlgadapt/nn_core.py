"""Dense numeric kernels, parameter containers and the SGD update.

Everything runs in float64. The gradient checks in the test-suite rely on it.
"""
from __future__ import annotations

import base64
import json
from typing import Callable, Iterator, Mapping

import numpy as np

DTYPE = np.float64
PARAMSET_FORMAT_VERSION = 1


def sigmoid(x):
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=DTYPE)))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def logsumexp(z, axis=0):
    z = np.asarray(z, dtype=DTYPE)
    m = np.max(z, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def log_softmax(z, axis=0):
    z = np.asarray(z, dtype=DTYPE)
    if z.size == 0:
        raise ValueError("log_softmax of an empty vector")
    m = np.max(z, axis=axis, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(z, axis=0):
    """Numerically stable softmax along ``axis`` (columns by default)."""
    z = np.asarray(z, dtype=DTYPE)
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def sample_categorical(p, rng: np.random.Generator) -> int:
    p = np.asarray(p, dtype=DTYPE)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p must be a non-empty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"p is not a distribution (sum={p.sum():.8g})")
    return int(sample_columns(p[:, None], rng)[0])


def sample_columns(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per column of a (K, B) matrix of column distributions.

    Uses inverse-CDF sampling with a single uniform per column, so the
    number of draws taken from ``rng`` depends only on B.
    """
    cdf = np.cumsum(P, axis=0)
    u = rng.random(P.shape[1]) * cdf[-1]
    idx = np.sum(cdf <= u[None, :], axis=0)
    # guard against u landing on the (rounded) total
    return np.minimum(idx, P.shape[0] - 1)


class ParamSet:
    """Ordered collection of named float64 arrays."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, value in (arrays or {}).items():
            self._arrays[name] = np.array(value, dtype=DTYPE)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self._arrays[name] = np.asarray(value, dtype=DTYPE)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._arrays.items()}

    @property
    def size(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._arrays.items()})

    def zeros_like(self) -> "ParamSet":
        return ParamSet({k: np.zeros_like(v) for k, v in self._arrays.items()})

    def flatten(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0, dtype=DTYPE)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def unflatten(self, flat: np.ndarray) -> "ParamSet":
        """Build a ParamSet with this set's names/shapes from a flat vector."""
        flat = np.asarray(flat, dtype=DTYPE)
        if flat.size != self.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {self.size}")
        out, pos = {}, 0
        for name, v in self._arrays.items():
            out[name] = flat[pos:pos + v.size].reshape(v.shape).copy()
            pos += v.size
        return ParamSet(out)

    def _check_compatible(self, other: "ParamSet") -> None:
        if self.shapes() != other.shapes():
            raise ValueError(f"shape mismatch: {self.shapes()} vs {other.shapes()}")

    def _binary(self, other, op) -> "ParamSet":
        if isinstance(other, ParamSet):
            self._check_compatible(other)
            return ParamSet({k: op(v, other[k]) for k, v in self._arrays.items()})
        return ParamSet({k: op(v, other) for k, v in self._arrays.items()})

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def add_(self, other: "ParamSet", scale: float = 1.0) -> "ParamSet":
        """In-place ``self += scale * other``; used for gradient accumulation."""
        self._check_compatible(other)
        for k, v in self._arrays.items():
            v += scale * other[k]
        return self

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(v * v) for v in self._arrays.values())))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._arrays.values())

    def allclose(self, other: "ParamSet", **kw) -> bool:
        return self.shapes() == other.shapes() and all(
            np.allclose(v, other[k], **kw) for k, v in self._arrays.items())

    def equal(self, other: "ParamSet") -> bool:
        """Bit-exact equality."""
        return self.shapes() == other.shapes() and all(
            np.array_equal(v, other[k]) for k, v in self._arrays.items())

    # serialization: named shapes + row-major little-endian float64, base64 coded
    def to_dict(self) -> dict:
        return {
            "version": PARAMSET_FORMAT_VERSION,
            "dtype": "<f8",
            "arrays": [
                {
                    "name": k,
                    "shape": list(v.shape),
                    "data": base64.b64encode(
                        np.ascontiguousarray(v, dtype="<f8").tobytes()).decode("ascii"),
                }
                for k, v in self._arrays.items()
            ],
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ParamSet":
        if obj.get("version") != PARAMSET_FORMAT_VERSION:
            raise ValueError(f"unsupported ParamSet version {obj.get('version')!r}")
        arrays = {}
        for entry in obj["arrays"]:
            raw = base64.b64decode(entry["data"])
            arr = np.frombuffer(raw, dtype="<f8").astype(DTYPE)
            arrays[entry["name"]] = arr.reshape(entry["shape"])
        return cls(arrays)

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "ParamSet":
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:
        return f"ParamSet({', '.join(f'{k}{v.shape}' for k, v in self._arrays.items())})"


def init_uniform(shapes: Mapping[str, tuple[int, ...]], rng: np.random.Generator,
                 scale: float = 0.1) -> ParamSet:
    return ParamSet({name: rng.uniform(-scale, scale, size=shape) for name, shape in shapes.items()})


def clip_grad_norm(grads: ParamSet, max_norm: float) -> tuple[ParamSet, float]:
    """Rescale ``grads`` to l2-norm ``max_norm`` if it is larger; returns (grads, original norm)."""
    norm = grads.norm()
    if max_norm is not None and norm > max_norm:
        return grads * (max_norm / norm), norm
    return grads, norm


def sgd_step(params: ParamSet, grads: ParamSet, lr: float, l2: float = 0.0) -> ParamSet:
    """theta <- theta - lr * (grad + l2 * theta).

    Callers pass a non-zero ``l2`` only on the steps where the weight
    penalty is due.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    params._check_compatible(grads)
    return ParamSet({k: v - lr * (grads[k] + l2 * v) for k, v in params.items()})


def finite_diff_grad(cost_fn: Callable[[ParamSet], float], params: ParamSet,
                     eps: float = 1e-5) -> ParamSet:
    """Central-difference gradient of ``cost_fn`` at ``params``, one coordinate at a time."""
    flat = params.flatten()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = cost_fn(params.unflatten(flat))
        flat[i] = orig - eps
        f_minus = cost_fn(params.unflatten(flat))
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return params.unflatten(grad)


def max_relative_error(a: ParamSet | np.ndarray, b: ParamSet | np.ndarray,
                       floor: float = 1e-5) -> float:
    """max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).

    The floor keeps coordinates whose true gradient is ~0 from turning
    finite-difference round-off into a large ratio.
    """
    a = a.flatten() if isinstance(a, ParamSet) else np.ravel(a)
    b = b.flatten() if isinstance(b, ParamSet) else np.ravel(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
