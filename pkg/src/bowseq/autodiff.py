"""Minimal reverse-mode automatic differentiation over float64 arrays.

The graph is define-by-run: every primitive eagerly computes its value,
records its parents, and stores a closure that pushes the output gradient
back into them.  Graphs are rebuilt for every forward pass; nothing is
cached between steps.

Broadcasting is deliberately restricted.  Elementwise ops require equal
shapes, with two sanctioned exceptions: a scalar combined with a tensor,
and a (1, n) row-vector bias added to an (m, n) matrix.  Anything richer
(per-row scaling, column picking, slicing) is its own primitive with an
explicit backward rule, so no gradient ever flows through an implicit
numpy broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes violate a primitive's conformance rule."""

    def __init__(self, op: str, *shapes: tuple) -> None:
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class Node:
    """One value in the computation graph.

    ``grad`` always has the same shape as ``value``.  Leaves (no parents)
    accumulate gradients across backward passes until explicitly zeroed;
    interior nodes are per-pass scratch.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "_backward")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        requires_grad: bool = False,
    ) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        kind = "leaf" if not self.parents else "op"
        return f"Node({kind}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Node:
    """Leaf that never receives a gradient."""
    return Node(value)


def parameter(value) -> Node:
    """Trainable leaf; gradients accumulate until zeroed."""
    return Node(value, requires_grad=True)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError("matmul", a.value.shape, b.value.shape)
    out = Node(a.value @ b.value, parents=(a, b))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ out.grad

    out._backward = backward
    return out


def add(a: Node, b: Node) -> Node:
    """Addition: equal shapes, scalar-with-tensor, or (1,n) bias onto (m,n)."""
    sa, sb = a.value.shape, b.value.shape
    if sa == sb:
        mode = "equal"
    elif sb == ():
        mode = "scalar_b"
    elif sa == ():
        mode = "scalar_a"
    elif len(sa) == 2 and sb == (1, sa[1]):
        mode = "bias"
    else:
        raise ShapeError("add", sa, sb)
    out = Node(a.value + b.value, parents=(a, b))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad if mode != "scalar_a" else out.grad.sum()
        if b.requires_grad:
            if mode == "equal":
                b.grad += out.grad
            elif mode == "bias":
                b.grad += out.grad.sum(axis=0, keepdims=True)
            elif mode == "scalar_b":
                b.grad += out.grad.sum()
            else:
                b.grad += out.grad

    out._backward = backward
    return out


def mul(a: Node, b: Node) -> Node:
    """Elementwise product; equal shapes or one scalar operand."""
    sa, sb = a.value.shape, b.value.shape
    if not (sa == sb or sa == () or sb == ()):
        raise ShapeError("mul", sa, sb)
    out = Node(a.value * b.value, parents=(a, b))

    def backward() -> None:
        if a.requires_grad:
            g = out.grad * b.value
            a.grad += g.sum() if sa == () and sb != () else g
        if b.requires_grad:
            g = out.grad * a.value
            b.grad += g.sum() if sb == () and sa != () else g

    out._backward = backward
    return out


def scale(a: Node, factor: float) -> Node:
    """Multiply by a non-differentiable Python scalar."""
    factor = float(factor)
    out = Node(a.value * factor, parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad * factor

    out._backward = backward
    return out


def tanh(a: Node) -> Node:
    out = Node(np.tanh(a.value), parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad * (1.0 - out.value ** 2)

    out._backward = backward
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    out = Node(_stable_sigmoid(np.atleast_1d(a.value)).reshape(a.value.shape), parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad * out.value * (1.0 - out.value)

    out._backward = backward
    return out


def log(a: Node) -> Node:
    """Natural log with the argument clamped at LOG_FLOOR.

    Inside the clamped region the gradient is 0 (the clamp is a plateau),
    which keeps finite differences and the analytic rule consistent.
    """
    clamped = np.maximum(a.value, LOG_FLOOR)
    out = Node(np.log(clamped), parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            a.grad += np.where(a.value > LOG_FLOOR, out.grad / clamped, 0.0)

    out._backward = backward
    return out


def softmax_rows(a: Node, mask: np.ndarray | None = None) -> Node:
    """Row-wise softmax of an (m, n) matrix.

    ``mask`` is a 0/1 float array of the same shape; masked entries come out
    exactly 0 and take no part in the normalization.  A fully masked row is
    an error.
    """
    if a.value.ndim != 2:
        raise ShapeError("softmax_rows", a.value.shape)
    x = a.value
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != x.shape:
            raise ShapeError("softmax_rows", x.shape, mask.shape)
        if np.any(mask.sum(axis=1) == 0.0):
            raise ValueError("softmax_rows: fully masked row")
        shifted = np.where(mask > 0, x, -np.inf)
        shifted = shifted - shifted.max(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            e = np.where(mask > 0, np.exp(shifted), 0.0)
    else:
        e = np.exp(x - x.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)
    out = Node(y, parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            g = out.grad
            inner = (g * out.value).sum(axis=1, keepdims=True)
            a.grad += out.value * (g - inner)

    out._backward = backward
    return out


def sum_rows(a: Node) -> Node:
    """(m, n) -> (m, 1) row sums."""
    if a.value.ndim != 2:
        raise ShapeError("sum_rows", a.value.shape)
    out = Node(a.value.sum(axis=1, keepdims=True), parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad

    out._backward = backward
    return out


def sum_all(a: Node) -> Node:
    """Reduce to a 0-d scalar."""
    out = Node(a.value.sum(), parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad

    out._backward = backward
    return out


def embedding_lookup(table: Node, indices: np.ndarray) -> Node:
    """Gather rows of a (V, E) table by an integer index vector."""
    if table.value.ndim != 2:
        raise ShapeError("embedding_lookup", table.value.shape)
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("embedding_lookup: indices must be a 1-d integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise IndexError(
            f"embedding_lookup: index out of range for table of {table.value.shape[0]} rows"
        )
    out = Node(table.value[idx], parents=(table,))

    def backward() -> None:
        if table.requires_grad:
            np.add.at(table.grad, idx, out.grad)

    out._backward = backward
    return out


def concat_cols(nodes: Sequence[Node]) -> Node:
    """Concatenate (m, n_i) matrices along columns."""
    nodes = list(nodes)
    if not nodes:
        raise ValueError("concat_cols: empty input")
    rows = nodes[0].value.shape[0]
    for n in nodes:
        if n.value.ndim != 2 or n.value.shape[0] != rows:
            raise ShapeError("concat_cols", *(m.value.shape for m in nodes))
    out = Node(np.concatenate([n.value for n in nodes], axis=1), parents=nodes)
    offsets = np.cumsum([0] + [n.value.shape[1] for n in nodes])

    def backward() -> None:
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad:
                n.grad += out.grad[:, lo:hi]

    out._backward = backward
    return out


def slice_cols(a: Node, start: int, stop: int) -> Node:
    """Take the column block [start, stop) of an (m, n) matrix."""
    if a.value.ndim != 2 or not (0 <= start < stop <= a.value.shape[1]):
        raise ShapeError("slice_cols", a.value.shape, (start, stop))
    out = Node(a.value[:, start:stop].copy(), parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            a.grad[:, start:stop] += out.grad

    out._backward = backward
    return out


def scale_rows(a: Node, s: Node) -> Node:
    """Scale row i of an (m, n) matrix by the (m, 1) factor s[i, 0]."""
    if (
        a.value.ndim != 2
        or s.value.ndim != 2
        or s.value.shape != (a.value.shape[0], 1)
    ):
        raise ShapeError("scale_rows", a.value.shape, s.value.shape)
    out = Node(a.value * s.value, parents=(a, s))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad * s.value
        if s.requires_grad:
            s.grad += (out.grad * a.value).sum(axis=1, keepdims=True)

    out._backward = backward
    return out


def pick_columns(a: Node, indices: np.ndarray) -> Node:
    """out[i, 0] = a[i, indices[i]] for an (m, n) matrix."""
    if a.value.ndim != 2:
        raise ShapeError("pick_columns", a.value.shape)
    idx = np.asarray(indices)
    m = a.value.shape[0]
    if idx.shape != (m,) or not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("pick_columns: indices must be a length-m integer vector")
    if idx.size and (idx.min() < 0 or idx.max() >= a.value.shape[1]):
        raise IndexError("pick_columns: column index out of range")
    rows = np.arange(m)
    out = Node(a.value[rows, idx][:, None], parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            np.add.at(a.grad, (rows, idx), out.grad[:, 0])

    out._backward = backward
    return out


def dropout(a: Node, mask: np.ndarray) -> Node:
    """Apply a precomputed inverted-dropout mask (entries 0 or 1/keep).

    Evaluation mode simply skips this op; callers draw masks only while
    training so the RNG stream is untouched otherwise.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.value.shape:
        raise ShapeError("dropout", a.value.shape, mask.shape)
    out = Node(a.value * mask, parents=(a,))

    def backward() -> None:
        if a.requires_grad:
            a.grad += out.grad * mask

    out._backward = backward
    return out


def make_dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    """Inverted-dropout mask: kept entries scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = 1.0 - rate
    return (rng.random(shape) >= rate).astype(np.float64) / keep


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Node) -> list[Node]:
    """Post-order over the requires_grad subgraph (parents before children)."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into every reachable trainable leaf.

    Interior gradients are scratch reset on every call; leaf gradients add
    up across calls until zero_gradients, so backpropagating the same root
    twice yields exactly twice the single-pass leaf gradients.
    """
    if root.value.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    for node in order:
        if node.parents:
            node.grad = np.zeros_like(node.value)
    root.grad = root.grad + np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# parameter registry and gradient checking
# ---------------------------------------------------------------------------


class ParameterStore:
    """Ordered name -> trainable leaf registry.

    Registration order is the contract for seeded initialization, checkpoint
    layout, and optimizer state, so it is preserved everywhere.
    """

    def __init__(self) -> None:
        self._params: dict[str, Node] = {}

    def create(self, name: str, value: np.ndarray) -> Node:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        node = parameter(value)
        self._params[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Node]]:
        return iter(self._params.items())

    def zero_gradients(self) -> None:
        for node in self._params.values():
            node.grad[...] = 0.0

    def entry_count(self) -> int:
        return sum(node.value.size for node in self._params.values())


@dataclass
class ParameterCheck:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    checks: list[ParameterCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    def format(self) -> str:
        lines = [f"{'parameter':<24} {'max rel err':>12}  status"]
        for c in self.checks:
            lines.append(f"{c.name:<24} {c.max_rel_error:>12.3e}  {'PASS' if c.passed else 'FAIL'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def finite_difference_check(
    loss_fn: Callable[[ParameterStore], Node],
    store: ParameterStore,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backward gradients against central finite differences.

    ``loss_fn`` must rebuild the scalar loss graph from the store's current
    values and be deterministic across calls (dropout off, no RNG draws).
    Relative error per entry is |analytic - numeric| / max(|numeric|, 1e-8);
    a parameter passes when its worst entry is under ``tolerance``.
    """
    store.zero_gradients()
    backward(loss_fn(store))
    analytic = {name: node.grad.copy() for name, node in store.items()}

    report = GradCheckReport(step=step, tolerance=tolerance)
    for name, node in store.items():
        flat = node.value.reshape(-1)
        grads = analytic[name].reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = float(loss_fn(store).value)
            flat[j] = orig - step
            f_minus = float(loss_fn(store).value)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            rel = abs(grads[j] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, rel)
        report.checks.append(ParameterCheck(name, worst, worst < tolerance))
    return report
