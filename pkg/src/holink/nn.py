"""Trainable-parameter plumbing: registry, init, layers, Adam, checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, as_tensor, gelu, matmul, mul

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class Parameter:
    """A named trainable tensor; names are checkpoint keys."""

    name: str
    tensor: Tensor


class ParameterStore:
    """Ordered name -> Tensor registry shared by a model and its optimizer."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def parameters(self) -> list[Parameter]:
        return [Parameter(n, t) for n, t in self._params.items()]

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.values.copy() for n, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"parameter state mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, values in state.items():
            t = self._params[name]
            values = np.asarray(values, dtype=np.float64)
            if values.shape != t.values.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {values.shape}, model {t.values.shape}"
                )
            t.values = values.copy()


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Weights uniform in +-sqrt(1/fan_in); deterministic given the rng state."""
    bound = np.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def add_linear(store: ParameterStore, name: str, fan_in: int, fan_out: int,
               rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    w = store.add(f"{name}.weight", uniform_init(rng, fan_in, (fan_in, fan_out)))
    b = store.add(f"{name}.bias", np.zeros(fan_out))
    return w, b


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


@dataclass
class GegluParams:
    """Gated feed-forward weights: gate and value branches plus the out projection."""

    w_gate: Tensor
    b_gate: Tensor
    w_value: Tensor
    b_value: Tensor
    w_out: Tensor
    b_out: Tensor


def add_geglu(store: ParameterStore, name: str, width: int, expansion: int,
              rng: np.random.Generator) -> GegluParams:
    hidden = expansion * width
    wg, bg = add_linear(store, f"{name}.gate", width, hidden, rng)
    wv, bv = add_linear(store, f"{name}.value", width, hidden, rng)
    wo, bo = add_linear(store, f"{name}.out", hidden, width, rng)
    return GegluParams(wg, bg, wv, bv, wo, bo)


def geglu_ffn(x: Tensor, params: GegluParams) -> Tensor:
    """GELU-gated feed-forward: (gelu(x Wg + bg) * (x Wv + bv)) Wo + bo."""
    gate = gelu(linear(x, params.w_gate, params.b_gate))
    value = linear(x, params.w_value, params.b_value)
    return linear(mul(gate, value), params.w_out, params.b_out)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.values.shape) >= rate) / (1.0 - rate)
    return mul(x, as_tensor(keep))


class Adam:
    """Adam over a ParameterStore, with the usual bias correction."""

    def __init__(self, store: ParameterStore, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.values) for p in store.tensors()]
        self._v = [np.zeros_like(p.values) for p in store.tensors()]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1**self.t
        correct2 = 1.0 - b2**self.t
        for p, m, v in zip(self.store.tensors(), self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.values -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def zero_grad(self):
        self.store.zero_grad()


# ---------------------------------------------------------------------------
# checkpoint file format (versioned; see README)
# ---------------------------------------------------------------------------

_PARAM_PREFIX = "param/"


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict,
                    extra: dict | None = None):
    """Write a .npz checkpoint: one array per parameter plus JSON metadata.

    float64 arrays round-trip bit-exactly, so a reloaded model reproduces
    forward outputs identically.
    """
    payload = {_PARAM_PREFIX + name: np.asarray(v, dtype=np.float64)
               for name, v in params.items()}
    payload["__format_version__"] = np.array(CHECKPOINT_FORMAT_VERSION)
    payload["__config__"] = np.array(json.dumps(config, sort_keys=True))
    payload["__extra__"] = np.array(json.dumps(extra or {}, sort_keys=True))
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__format_version__"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format version {version} "
                f"(expected {CHECKPOINT_FORMAT_VERSION})"
            )
        config = json.loads(str(data["__config__"]))
        extra = json.loads(str(data["__extra__"]))
        params = {key[len(_PARAM_PREFIX):]: data[key]
                  for key in data.files if key.startswith(_PARAM_PREFIX)}
    return params, config, extra
