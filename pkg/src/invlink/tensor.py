"""Dense float64 tensors with recorded operations and reverse-mode gradients.

Every operation builds a node in an implicit computation graph (the "tape"):
a Tensor carries its forward value, the op that produced it, references to its
input tensors, and a gradient accumulator.  Calling ``backward`` on a scalar
output walks the graph in reverse topological order and accumulates exact
chain-rule gradients into every reachable tensor, summing over fan-out.

Only the small primitive set needed by the selector networks is provided:
matmul, add, concat, relu, tanh, sigmoid, log, cos, sum, scale,
elementwise mul, and clamp.  All arithmetic is double precision.
"""

from __future__ import annotations

import base64
import json
import math

import numpy as np

# When True, every primitive checks its output for NaN/inf.  Cheap enough for
# tests and debug runs; off by default in the training hot path.
CHECK_FINITE = False


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested primitive."""


class NumericError(ArithmeticError):
    """A forward value became non-finite."""


class ContractError(ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class ManifestError(ValueError):
    """A parameter manifest file is malformed or inconsistent."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A node of the recorded computation graph.

    ``value`` is a float64 ndarray, ``op`` names the primitive that produced
    it (``'leaf'`` for inputs/parameters), ``inputs`` are the parent tensors
    and ``grad`` is filled by ``backward``.  Gradients accumulate additively
    across fan-out; the graph is acyclic by construction.
    """

    __slots__ = ("value", "grad", "op", "inputs", "_backprop", "name")

    def __init__(self, data, op: str = "leaf", inputs: tuple = (), name: str = ""):
        self.value = _as_array(data)
        self.grad = None
        self.op = op
        self.inputs = inputs
        self._backprop = None
        self.name = name
        if CHECK_FINITE and not np.all(np.isfinite(self.value)):
            raise NumericError(f"non-finite value out of op '{op}'")

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.value.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(op={self.op}, shape={self.shape})"

    # -- operator sugar (thin wrappers around the primitives) ----------

    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else constant(other))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else constant(other)
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    # -- reverse pass ---------------------------------------------------

    def backward(self, params=()) -> None:
        backward(self, params)


def constant(data, name: str = "") -> Tensor:
    """A leaf tensor that takes part in the graph like any other."""
    return Tensor(data, name=name)


def parameter(data, name: str = "") -> Tensor:
    """A leaf tensor intended to receive gradients and optimizer updates."""
    return Tensor(data, name=name)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _unary(x: Tensor, op: str, value: np.ndarray, dlocal: np.ndarray) -> Tensor:
    out = Tensor(value, op=op, inputs=(x,))

    def backprop():
        x.grad += dlocal * out.grad

    out._backprop = backprop
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports (m,n)@(n,) -> (m,) and (m,n)@(n,p) -> (m,p)."""
    if a.value.ndim != 2 or b.value.ndim not in (1, 2):
        raise ShapeError(f"matmul expects 2-d @ 1/2-d, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(a.value @ b.value, op="matmul", inputs=(a, b))

    def backprop():
        g = out.grad
        if b.value.ndim == 1:
            a.grad += np.outer(g, b.value)
            b.grad += a.value.T @ g
        else:
            a.grad += g @ b.value.T
            b.grad += a.value.T @ g

    out._backprop = backprop
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.value + b.value, op="add", inputs=(a, b))

    def backprop():
        a.grad += out.grad
        b.grad += out.grad

    out._backprop = backprop
    return out


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenation of 1-d tensors along their only (last) axis."""
    if not parts:
        raise ShapeError("concat of zero tensors")
    for p in parts:
        if p.value.ndim != 1:
            raise ShapeError(f"concat expects 1-d tensors, got shape {p.shape}")
    out = Tensor(np.concatenate([p.value for p in parts]), op="concat",
                 inputs=tuple(parts))
    offsets = np.cumsum([0] + [p.size for p in parts])

    def backprop():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += out.grad[lo:hi]

    out._backprop = backprop
    return out


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is defined as 0
    mask = (x.value > 0).astype(np.float64)
    return _unary(x, "relu", x.value * mask, mask)


def tanh(x: Tensor) -> Tensor:
    v = np.tanh(x.value)
    return _unary(x, "tanh", v, 1.0 - v * v)


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable two-branch form
    v = np.where(x.value >= 0,
                 1.0 / (1.0 + np.exp(-np.clip(x.value, 0, None))),
                 np.exp(np.clip(x.value, None, 0))
                 / (1.0 + np.exp(np.clip(x.value, None, 0))))
    return _unary(x, "sigmoid", v, v * (1.0 - v))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.log(x.value)
    return _unary(x, "log", v, 1.0 / x.value)


def cos(x: Tensor) -> Tensor:
    return _unary(x, "cos", np.cos(x.value), -np.sin(x.value))


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries; returns a 0-d scalar tensor."""
    out = Tensor(np.sum(x.value), op="sum", inputs=(x,))

    def backprop():
        x.grad += np.full_like(x.value, float(out.grad))

    out._backprop = backprop
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.value * c, op="scale", inputs=(x,))

    def backprop():
        x.grad += c * out.grad

    out._backprop = backprop
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a size-1 scalar broadcast."""
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.value * b.value, op="mul", inputs=(a, b))

    def backprop():
        ga = out.grad * b.value
        gb = out.grad * a.value
        a.grad += ga.sum().reshape(a.shape) if a.size == 1 and ga.size > 1 else ga
        b.grad += gb.sum().reshape(b.shape) if b.size == 1 and gb.size > 1 else gb

    out._backprop = backprop
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through inside, zero outside."""
    mask = ((x.value >= lo) & (x.value <= hi)).astype(np.float64)
    return _unary(x, "clamp", np.clip(x.value, lo, hi), mask)


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "concat": lambda *xs: concat(list(xs)),
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log": log,
    "cos": cos,
    "sum": tsum,
    "scale": scale,
    "elementwise-mul": mul,
    "clamp": clamp,
}


def primitive_forward(kind: str, *inputs) -> Tensor:
    """Dispatch a primitive by name; raises ShapeError on non-conforming shapes."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive kind '{kind}'") from None
    return fn(*inputs)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def graph_nodes(root: Tensor) -> list[Tensor]:
    """All tensors reachable from ``root``, in reverse topological order."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def backward(loss: Tensor, params=()) -> None:
    """Fill ``grad`` of every tensor reachable from the scalar ``loss``.

    Gradients of the reachable subgraph are reset to zero first, so repeated
    passes on fresh graphs never see stale accumulator state.  Any tensor in
    ``params`` that does not lie on a path to ``loss`` ends up with an exact
    zero gradient instead of a stale or missing one.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    for p in params:
        p.grad = np.zeros_like(p.value)
    order = graph_nodes(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in order:
        if node._backprop is not None:
            node._backprop()


def relu_preactivations(root: Tensor) -> list[np.ndarray]:
    """Relu input arrays reachable from ``root``, in graph order.

    Deterministic construction order means corresponding entries align across
    repeated evaluations of the same function.
    """
    return [node.inputs[0].value for node in graph_nodes(root) if node.op == "relu"]


def min_relu_preactivation(root: Tensor) -> float:
    """Smallest |input| over every relu node reachable from ``root``
    (infinite when the graph contains no relu)."""
    best = math.inf
    for arr in relu_preactivations(root):
        if arr.size:
            best = min(best, float(np.min(np.abs(arr))))
    return best


def _grazes_kink(base: list[np.ndarray], perturbed: list[np.ndarray],
                 step: float) -> bool:
    """True when a perturbed evaluation is unusable for a central difference:
    some relu input switched sides relative to the base evaluation, or sits
    within 10*step of the kink without being structurally pinned at zero."""
    if len(base) != len(perturbed):
        return True
    for b, o in zip(base, perturbed):
        if np.any((b > 0) != (o > 0)):
            return True
        mag = np.abs(o)
        if np.any((mag > 0) & (mag < 10 * step)):
            return True
    return False


def finite_difference_check(f, params: list[Tensor], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the (mutable) parameter list to a scalar Tensor and must be
    deterministic.  For each coordinate the relative error is
    ``|analytic - central| / max(|analytic|, |central|, 1e-8)``.  A coordinate
    is excluded when either of its perturbed evaluations grazes a relu kink
    (side switch against the base evaluation, or a pre-activation magnitude
    in (0, 10*step)); exactly-zero pre-activations that stay zero are the
    structurally empty aggregations and are safe.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    out = f(params)
    if not np.all(np.isfinite(out.value)):
        raise NumericError("non-finite base evaluation in finite_difference_check")
    base_pre = relu_preactivations(out)
    backward(out, params)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = f(params)
            flat[j] = orig - step
            lo = f(params)
            flat[j] = orig
            if not (np.all(np.isfinite(hi.value)) and np.all(np.isfinite(lo.value))):
                raise NumericError("non-finite perturbed evaluation")
            if _grazes_kink(base_pre, relu_preactivations(hi), step) \
                    or _grazes_kink(base_pre, relu_preactivations(lo), step):
                continue
            central = (hi.item() - lo.item()) / (2.0 * step)
            err = abs(gflat[j] - central) / max(abs(gflat[j]), abs(central), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# parameter manifests (checkpoint files)
# ---------------------------------------------------------------------------

MANIFEST_SCHEMA = 1


def save_manifest(path, arrays: dict[str, np.ndarray], extras: dict | None = None) -> None:
    """Write named float64 arrays plus scalar extras to a JSON manifest.

    Values round-trip bit-exactly (raw little-endian bytes, base64) and the
    file bytes are a pure function of the contents, so identical state always
    produces identical files.
    """
    entries = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
        })
    doc = {"schema": MANIFEST_SCHEMA, "extras": extras or {}, "arrays": entries}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_manifest(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a manifest written by ``save_manifest``; raises ManifestError."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"unreadable manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != MANIFEST_SCHEMA:
        raise ManifestError(f"unsupported manifest schema in {path}")
    arrays: dict[str, np.ndarray] = {}
    try:
        for entry in doc["arrays"]:
            raw = base64.b64decode(entry["data"], validate=True)
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
            shape = tuple(int(s) for s in entry["shape"])
            if arr.size != int(np.prod(shape, dtype=np.int64)):
                raise ManifestError(f"shape/data mismatch for '{entry['name']}'")
            arrays[str(entry["name"])] = arr.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    return arrays, doc.get("extras", {})
