"""Small dense-tensor engine with reverse-mode gradients.

Only the operations the refinement network needs are implemented: 3D
convolution, its stride-2 transposed counterpart, nearest upsampling,
ReLU, sigmoid, binary cross entropy, concatenation, addition, and
scaling. Values are kept in float64 internally so finite-difference
checks are clean; checkpoints store float32.

The graph is a tape: each result remembers its parent tensors and a
closure that scatters the incoming gradient back to them. Backward walks
the tape in reverse topological order.
"""

from __future__ import annotations

import struct
from itertools import product
from typing import Callable

import numpy as np

from .errors import DecodeError, DomainError, ParseError, ShapeError

CHECKPOINT_MAGIC = b"VWT1"
SIGMOID_CLAMP = 30.0
BCE_EPS = 1e-7


class Tensor:
    """A float64 ndarray plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor contains non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents if requires_grad else ()
        self._backward = _backward if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self, seed: float = 1.0) -> None:
        """Propagate d(self)/d(everything) down the tape. Scalar roots only."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        self.accumulate_grad(np.full_like(self.data, seed))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor carrying Adam state. Gradient is always materialized."""

    __slots__ = ("name", "adam_m", "adam_v", "step_count")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0


def _result(data, parents: tuple, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents, _backward=backward)


# ---------------------------------------------------------------------------
# convolution

def _conv_out_dim(size: int, k: int, stride: int, pad: int, label: str) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"conv output {label} collapses: input {size}, kernel {k}, "
            f"stride {stride}, padding {pad}"
        )
    return out


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a (Cin,D,H,W) volume with a (Cout,Cin,k,k,k) kernel."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv3d input must be rank 4, got {x.shape}")
    if weight.data.ndim != 5 or weight.shape[2] != weight.shape[3] != weight.shape[4]:
        raise ShapeError(f"conv3d weight must be (Cout,Cin,k,k,k), got {weight.shape}")
    cout, cin, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    s, p = stride, padding
    od = _conv_out_dim(x.shape[1], k, s, p, "depth")
    oh = _conv_out_dim(x.shape[2], k, s, p, "height")
    ow = _conv_out_dim(x.shape[3], k, s, p, "width")

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (p, p))) if p else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    windows = windows[:, ::s, ::s, ::s]  # (Cin, od, oh, ow, k, k, k)
    cols = np.ascontiguousarray(windows.transpose(0, 4, 5, 6, 1, 2, 3))
    cols = cols.reshape(cin * k**3, od * oh * ow)
    w2 = weight.data.reshape(cout, cin * k**3)
    out = w2 @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(cout, od, oh, ow)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray) -> None:
        g2 = g.reshape(cout, od * oh * ow)
        if weight.requires_grad:
            weight.accumulate_grad((g2 @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g2.sum(axis=1))
        if x.requires_grad:
            colg = (w2.T @ g2).reshape(cin, k, k, k, od, oh, ow)
            gxp = np.zeros_like(xp)
            for a, b, c in product(range(k), repeat=3):
                gxp[:, a:a + s * od:s, b:b + s * oh:s, c:c + s * ow:s] += colg[:, a, b, c]
            if p:
                gxp = gxp[:, p:-p, p:-p, p:-p]
            x.accumulate_grad(gxp)

    return _result(out, parents, backward)


def conv3d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None,
                     stride: int = 2) -> Tensor:
    """Shape-doubling transposed conv: kernel == stride, no window overlap.

    Weight layout is (Cin, Cout, k, k, k); with the same array this op is
    the exact adjoint of conv3d at stride k, padding 0.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv3d_transpose input must be rank 4, got {x.shape}")
    if weight.data.ndim != 5:
        raise ShapeError(f"weight must be (Cin,Cout,k,k,k), got {weight.shape}")
    cin, cout, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if weight.shape[2:] != (k,) * 3 or k != stride:
        raise ShapeError(
            f"kernel {weight.shape[2:]} must be cubic and equal stride {stride}"
        )
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    d, h, w = x.shape[1], x.shape[2], x.shape[3]
    out = np.empty((cout, d * k, h * k, w * k))
    for a, b, c in product(range(k), repeat=3):
        out[:, a::k, b::k, c::k] = np.tensordot(
            weight.data[:, :, a, b, c], x.data, axes=([0], [0])
        )
    if bias is not None:
        out += bias.data[:, None, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray) -> None:
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(1, 2, 3)))
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.empty_like(weight.data) if weight.requires_grad else None
        for a, b, c in product(range(k), repeat=3):
            gs = g[:, a::k, b::k, c::k]
            if gw is not None:
                gw[:, :, a, b, c] = np.tensordot(
                    x.data, gs, axes=([1, 2, 3], [1, 2, 3])
                )
            if gx is not None:
                gx += np.tensordot(weight.data[:, :, a, b, c], gs, axes=([1], [0]))
        if gw is not None:
            weight.accumulate_grad(gw)
        if gx is not None:
            x.accumulate_grad(gx)

    return _result(out, parents, backward)


def nearest_upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Replicate each voxel into a factor^3 block; backward sums over blocks."""
    if factor < 1 or int(factor) != factor:
        raise DomainError(f"upsample factor must be a positive integer, got {factor}")
    if x.data.ndim != 4:
        raise ShapeError(f"nearest_upsample input must be rank 4, got {x.shape}")
    if factor == 1:
        return _result(x.data.copy(), (x,), lambda g: x.accumulate_grad(g))
    f = int(factor)
    c, d, h, w = x.shape
    out = np.broadcast_to(
        x.data[:, :, None, :, None, :, None], (c, d, f, h, f, w, f)
    ).reshape(c, d * f, h * f, w * f)

    def backward(g: np.ndarray) -> None:
        x.accumulate_grad(g.reshape(c, d, f, h, f, w, f).sum(axis=(2, 4, 6)))

    return _result(out.copy(), (x,), backward)


# ---------------------------------------------------------------------------
# pointwise ops

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def backward(g: np.ndarray) -> None:
        x.accumulate_grad(g * mask)

    return _result(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function on inputs clamped to +/-30; output strictly in (0,1)."""
    clamped = np.clip(x.data, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    out = 1.0 / (1.0 + np.exp(-clamped))
    inside = np.abs(x.data) < SIGMOID_CLAMP

    def backward(g: np.ndarray) -> None:
        x.accumulate_grad(g * out * (1.0 - out) * inside)

    return _result(out, (x,), backward)


def bce_loss(q: Tensor, c: Tensor) -> Tensor:
    """Mean binary cross entropy; probabilities clamped to [eps, 1-eps]."""
    if q.shape != c.shape:
        raise ShapeError(f"prediction shape {q.shape} != target shape {c.shape}")
    qc = np.clip(q.data, BCE_EPS, 1.0 - BCE_EPS)
    n = qc.size
    loss = -(c.data * np.log(qc) + (1.0 - c.data) * np.log(1.0 - qc)).sum() / n
    inside = (q.data > BCE_EPS) & (q.data < 1.0 - BCE_EPS)

    def backward(g: np.ndarray) -> None:
        gq = -(c.data / qc - (1.0 - c.data) / (1.0 - qc)) / n
        if q.requires_grad:
            q.accumulate_grad(float(g) * gq * inside)
        if c.requires_grad:
            gc = -(np.log(qc) - np.log(1.0 - qc)) / n
            c.accumulate_grad(float(g) * gc)

    return _result(loss, (q, c), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t.accumulate_grad(piece)

    return _result(out, tuple(tensors), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _result(out, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = x.data * factor

    def backward(g: np.ndarray) -> None:
        x.accumulate_grad(g * factor)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# optimization

def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def adam_step(params, lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update per parameter; grads are zeroed after."""
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# gradient verification

def grad_check(f: Callable[[], Tensor], wrt, h: float = 1e-3,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` must rebuild the scalar loss from the current values of the
    tensors in ``wrt`` each time it is called. ``max_coords`` limits the
    checked coordinates per tensor (chosen by a seeded generator) so large
    parameter sets stay affordable.
    """
    wrt = list(wrt)
    for t in wrt:
        t.zero_grad()
    f().backward()
    analytic = [t.grad.copy() for t in wrt]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ga in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = ga.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoint container

def write_checkpoint(config: dict, params: list[Parameter]) -> bytes:
    """Serialize config text and named float32 parameter blocks."""
    lines = "\n".join(f"{k}={v}" for k, v in sorted(config.items()))
    cfg = lines.encode("utf-8")
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<I", len(cfg))
    out += cfg
    out += struct.pack("<I", len(params))
    for p in params:
        name = p.name.encode("utf-8")
        if not name:
            raise DomainError("checkpoint parameters must be named")
        out += struct.pack("<H", len(name)) + name
        out += struct.pack("<B", p.data.ndim)
        out += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
        out += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
    return bytes(out)


def read_checkpoint(data: bytes) -> tuple[dict, dict]:
    """Inverse of write_checkpoint: (config dict, name -> float64 array)."""
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise ParseError("not a weight checkpoint (bad magic)")
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise DecodeError(f"checkpoint truncated reading {what} at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    cfg_text = take(cfg_len, "config").decode("utf-8")
    config = {}
    for line in cfg_text.splitlines():
        if line:
            key, _, value = line.partition("=")
            config[key] = value
    (count,) = struct.unpack("<I", take(4, "parameter count"))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
        raw = take(nbytes, f"values of {name}")
        params[name] = np.frombuffer(raw, "<f4").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes after parameters")
    return config, params
