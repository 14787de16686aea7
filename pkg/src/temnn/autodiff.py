"""Minimal tape-based reverse-mode autodiff over float64 matrices.

Every op returns a new :class:`Tensor` holding references to its inputs and a
closure that maps the output adjoint to input adjoints. ``backward`` sorts the
reachable graph topologically and sweeps it once.
"""
from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np
from scipy.special import expit

from temnn import kernels

CHECKPOINT_FORMAT = "temnn-params"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


class Parameter(Tensor):
    __slots__ = ("group",)

    def __init__(self, value, name=None, group="weights"):
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"parameter {name} must be 2-D, got shape {value.shape}")
        super().__init__(value, name=name)
        self.requires_grad = True
        self.grad = np.zeros_like(value)
        self.group = group

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


def constant(value, name=None) -> Tensor:
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    return Tensor(v, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    axes = tuple(k for k, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _check_broadcast(op, a, b):
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- forward ops -------------------------------------------------------------

def linear(x, w, b=None) -> Tensor:
    """x @ w + b with w of shape (in, out) and b of shape (1, out)."""
    x = _as_tensor(x)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input has {x.shape[1]} columns, weight expects {w.shape[0]}")
    if b is not None and b.shape != (1, w.shape[1]):
        raise ShapeError(f"linear: bias shape {b.shape} != (1, {w.shape[1]})")
    out = x.value @ w.value
    if b is not None:
        out = out + b.value
    xv, wv = x.value, w.value

    def back(g):
        gx = g @ wv.T if x.requires_grad else None
        gw = xv.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0, keepdims=True)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents, back, "linear")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.value > 0
    return Tensor(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = expit(x.value)
    return Tensor(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def concat_cols(*tensors) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    widths = [t.shape[1] for t in ts]
    bounds = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(ts)))

    return Tensor(np.concatenate([t.value for t in ts], axis=1), tuple(ts), back, "concat_cols")


def gather_rows(x, idx) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")

    def back(g):
        return (kernels.scatter_add_rows(g, idx, n),)

    return Tensor(x.value[idx], (x,), back, "gather_rows")


def scatter_add_rows(x, idx, out_rows) -> Tensor:
    """Sum rows of x into ``out_rows`` rows by idx, accumulating in row order."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = kernels.scatter_add_rows(x.value, idx, out_rows)
    return Tensor(out, (x,), lambda g: (g[idx],), "scatter_add_rows")


def row_scale(x, s) -> Tensor:
    """Multiply row r of x by s[r] (s has shape (rows, 1))."""
    x, s = _as_tensor(x), _as_tensor(s)
    if s.shape != (x.shape[0], 1):
        raise ShapeError(f"row_scale: scale shape {s.shape} != ({x.shape[0]}, 1)")
    xv, sv = x.value, s.value
    return Tensor(xv * sv, (x, s),
                  lambda g: (g * sv, np.sum(g * xv, axis=1, keepdims=True)), "row_scale")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return Tensor(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return Tensor(a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    return Tensor(av * bv, (a, b),
                  lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)), "mul")


def mse(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.value - target.value
    n = diff.size
    val = np.array([[np.sum(diff * diff) / n]])
    return Tensor(val, (pred, target),
                  lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n), "mse")


# -- backward ----------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter's ``grad``."""
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- checks and serialization -------------------------------------------------

def _fd_samples(f, params, eps, max_entries, seed):
    """Analytic and central-difference values on (a subsample of) every entry."""
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.zero_grad()
    backward(f())
    analytic = {k: p.grad.copy() for k, p in params.items()}
    out = {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        if flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            entries = np.arange(flat.size)
        ana = analytic[name].reshape(-1)[entries]
        num = np.empty(len(entries))
        for k, e in enumerate(entries):
            orig = flat[e]
            flat[e] = orig + eps
            fp = float(f().value.ravel()[0])
            flat[e] = orig - eps
            fm = float(f().value.ravel()[0])
            flat[e] = orig
            num[k] = (fp - fm) / (2 * eps)
        out[name] = (ana, num)
    return out


def grad_check(f, params, eps=1e-6, max_entries=200, seed=0, floor=1e-6):
    """Compare analytic gradients of the scalar ``f()`` against central differences.

    ``params`` maps names to Parameters. Large parameters are checked on a random
    subsample of ``max_entries`` entries. Relative error per entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the report maps
    each name to its worst entry.
    """
    report = {}
    for name, (ana, num) in _fd_samples(f, params, eps, max_entries, seed).items():
        err = np.abs(ana - num) / np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        report[name] = float(err.max()) if err.size else 0.0
    return report


def grad_check_groups(f, params, eps=1e-6, max_entries=200, seed=0):
    """Per-group relative error ``||a - n|| / max(||a||, ||n||)`` over the sampled entries.

    Entry-wise ratios blow up on gradients near the finite-difference round-off
    level (about ``1e-16 |f| / eps``); the norm form weighs them by size.
    """
    by_group = {}
    for name, (ana, num) in _fd_samples(f, params, eps, max_entries, seed).items():
        a, n = by_group.setdefault(params[name].group, ([], []))
        a.append(ana)
        n.append(num)
    report = {}
    for group, (a, n) in by_group.items():
        a, n = np.concatenate(a), np.concatenate(n)
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        report[group] = float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0
    return report


def params_to_json(params, extra=None) -> str:
    doc = OrderedDict(format=CHECKPOINT_FORMAT, version=CHECKPOINT_VERSION)
    if extra:
        doc.update(extra)
    doc["params"] = OrderedDict(
        (name, {"shape": list(p.shape), "group": p.group,
                "values": [float(x) for x in p.value.ravel()]})
        for name, p in params.items())
    return json.dumps(doc)


def params_from_json(text: str):
    doc = json.loads(text, object_pairs_hook=OrderedDict)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    params = OrderedDict()
    for name, entry in doc["params"].items():
        vals = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        params[name] = Parameter(vals, name=name, group=entry.get("group", "weights"))
    return params, doc
