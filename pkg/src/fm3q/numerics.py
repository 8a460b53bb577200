"""Flat-parameter dense networks with reverse-mode gradients.

The training stack needs gradients through compositions of several small
dense networks (per-agent utility networks plus a state-conditioned mixer),
so this module carries a tiny tape-based autodiff over float64 numpy arrays
instead of pulling in a deep-learning framework. All parameters of a model
live in one flat vector with a named layout, which keeps optimizer state,
target snapshots, and checkpoints trivial to manage and to diff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu", "elu", "abs", "identity")


class GradientError(RuntimeError):
    """A gradient computation cannot proceed (non-finite values, tape reuse)."""


def _act_forward(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "elu":
        return np.where(x > 0.0, x, np.expm1(x))
    if kind == "abs":
        return np.abs(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def _act_derivative(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (x > 0.0).astype(np.float64)
    if kind == "elu":
        return np.where(x > 0.0, 1.0, np.exp(x))
    if kind == "abs":
        # sign(0) == 0: the chosen subgradient of |x| at the kink.
        return np.sign(x)
    if kind == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# parameter layouts


@dataclass(frozen=True)
class ParamLayout:
    """Named, contiguous, non-overlapping slices of one flat float64 vector."""

    entries: tuple[tuple[str, int, tuple[int, ...]], ...]
    size: int

    def __post_init__(self):
        index = {}
        offset = 0
        for name, off, shape in self.entries:
            if name in index:
                raise ValueError(f"duplicate parameter name {name!r}")
            if off != offset:
                raise ValueError(f"layout entry {name!r} does not partition the vector")
            index[name] = (off, shape)
            offset += _shape_size(shape)
        if offset != self.size:
            raise ValueError("layout entries do not cover the full vector")
        object.__setattr__(self, "_index", index)

    @classmethod
    def build(cls, named_shapes) -> "ParamLayout":
        entries = []
        offset = 0
        for name, shape in named_shapes:
            shape = tuple(int(d) for d in shape)
            entries.append((name, offset, shape))
            offset += _shape_size(shape)
        return cls(tuple(entries), offset)

    @classmethod
    def merge(cls, layouts) -> "ParamLayout":
        named = []
        for layout in layouts:
            named.extend((name, shape) for name, _, shape in layout.entries)
        return cls.build(named)

    def names(self):
        return [name for name, _, _ in self.entries]

    def locate(self, name: str) -> tuple[int, tuple[int, ...]]:
        return self._index[name]

    def view(self, values: np.ndarray, name: str) -> np.ndarray:
        off, shape = self._index[name]
        return values[off : off + _shape_size(shape)].reshape(shape)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size, dtype=np.float64)

    def validate(self, values: np.ndarray) -> None:
        if values.shape != (self.size,):
            raise ValueError(f"expected flat vector of size {self.size}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains non-finite values")


def _shape_size(shape: tuple[int, ...]) -> int:
    size = 1
    for d in shape:
        size *= int(d)
    return size


# ---------------------------------------------------------------------------
# reverse-mode tape


class Var:
    """One node of a recorded forward pass."""

    __slots__ = ("value", "grad", "parents")

    def __init__(self, value, parents=()):
        self.value = value
        self.grad = None
        self.parents = parents


class Tape:
    """Forward recording; `backward` consumes it exactly once."""

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def record(self, value, parents=()) -> Var:
        node = Var(value, parents)
        self.nodes.append(node)
        return node


def backward(tape: Tape, out: Var, upstream) -> None:
    """Accumulate gradients of `out` through every recorded node."""
    if tape.consumed:
        raise GradientError("tape already consumed by a previous backward pass")
    upstream = np.asarray(upstream, dtype=np.float64)
    if np.shape(out.value) != upstream.shape:
        raise ValueError("upstream gradient shape does not match the output")
    tape.consumed = True
    out.grad = upstream
    for node in reversed(tape.nodes):
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            delta = vjp(node.grad)
            parent.grad = delta if parent.grad is None else parent.grad + delta


def t_leaf(tape: Tape, value) -> Var:
    return tape.record(np.asarray(value, dtype=np.float64))


def t_matmul_t(tape: Tape, x: Var, w: Var) -> Var:
    """x (B, i) times w (o, i) transposed, the dense-layer product."""
    value = x.value @ w.value.T
    return tape.record(
        value,
        (
            (x, lambda g, wv=w.value: g @ wv),
            (w, lambda g, xv=x.value: g.T @ xv),
        ),
    )


def t_add_row(tape: Tape, x: Var, b: Var) -> Var:
    """Add a bias row b (o,) to every row of x (B, o)."""
    return tape.record(
        x.value + b.value,
        (
            (x, lambda g: g),
            (b, lambda g: g.sum(axis=0)),
        ),
    )


def t_add(tape: Tape, x: Var, y: Var) -> Var:
    return tape.record(x.value + y.value, ((x, lambda g: g), (y, lambda g: g)))


def t_neg(tape: Tape, x: Var) -> Var:
    return tape.record(-x.value, ((x, lambda g: -g),))


def t_mul(tape: Tape, x: Var, y: Var) -> Var:
    return tape.record(
        x.value * y.value,
        (
            (x, lambda g, yv=y.value: g * yv),
            (y, lambda g, xv=x.value: g * xv),
        ),
    )


def t_act(tape: Tape, x: Var, kind: str) -> Var:
    if kind == "identity":
        return x
    deriv = _act_derivative(kind, x.value)
    return tape.record(_act_forward(kind, x.value), ((x, lambda g, d=deriv: g * d),))


def t_concat_cols(tape: Tape, xs) -> Var:
    """Concatenate (B, k_i) blocks along columns."""
    xs = list(xs)
    widths = [v.value.shape[1] for v in xs]
    parents = []
    start = 0
    for v, w in zip(xs, widths):
        parents.append((v, lambda g, s=start, e=start + w: g[:, s:e]))
        start += w
    return tape.record(np.concatenate([v.value for v in xs], axis=1), tuple(parents))


def t_reshape(tape: Tape, x: Var, shape) -> Var:
    old = x.value.shape
    return tape.record(x.value.reshape(shape), ((x, lambda g, s=old: g.reshape(s)),))


def t_bmm_vec(tape: Tape, q: Var, w: Var) -> Var:
    """Per-row vector-matrix product: q (B, K) with w (B, K, H) gives (B, H)."""
    value = np.einsum("bk,bkh->bh", q.value, w.value)
    return tape.record(
        value,
        (
            (q, lambda g, wv=w.value: np.einsum("bh,bkh->bk", g, wv)),
            (w, lambda g, qv=q.value: np.einsum("bk,bh->bkh", qv, g)),
        ),
    )


def t_sum_cols(tape: Tape, x: Var) -> Var:
    cols = x.value.shape[1]
    return tape.record(
        x.value.sum(axis=1),
        ((x, lambda g, c=cols: np.repeat(g[:, None], c, axis=1)),),
    )


def t_gather_cols(tape: Tape, x: Var, idx: np.ndarray) -> Var:
    """Pick one column per row: x (B, A) with idx (B,) gives (B,)."""
    rows = np.arange(x.value.shape[0])

    def vjp(g, rows=rows, idx=idx, shape=x.value.shape):
        out = np.zeros(shape, dtype=np.float64)
        np.add.at(out, (rows, idx), g)
        return out

    return tape.record(x.value[rows, idx], ((x, vjp),))


def t_sub_from_const(tape: Tape, c: np.ndarray, x: Var) -> Var:
    return tape.record(np.asarray(c, dtype=np.float64) - x.value, ((x, lambda g: -g),))


def t_square(tape: Tape, x: Var) -> Var:
    return tape.record(x.value * x.value, ((x, lambda g, xv=x.value: 2.0 * xv * g),))


def t_mean(tape: Tape, x: Var) -> Var:
    count = x.value.size
    return tape.record(
        np.float64(x.value.mean()),
        ((x, lambda g, n=count, s=x.value.shape: np.full(s, float(g) / n)),),
    )


class TapeParams:
    """Lazily created leaf variables for the entries of one layout."""

    def __init__(self, tape: Tape, layout: ParamLayout, values: np.ndarray):
        layout.validate(values)
        self.tape = tape
        self.layout = layout
        self.values = values
        self._leaves: dict[str, Var] = {}

    def leaf(self, name: str) -> Var:
        node = self._leaves.get(name)
        if node is None:
            node = t_leaf(self.tape, self.layout.view(self.values, name))
            self._leaves[name] = node
        return node

    def grad(self) -> np.ndarray:
        """Flat gradient vector; untouched entries stay zero."""
        flat = self.layout.zeros()
        for name, node in self._leaves.items():
            if node.grad is not None:
                off, shape = self.layout.locate(name)
                flat[off : off + _shape_size(shape)] = np.asarray(node.grad).ravel()
        return flat


# ---------------------------------------------------------------------------
# dense networks


@dataclass(frozen=True)
class DenseNet:
    """Spec of a fully connected net whose parameters live in a flat vector.

    `sizes` runs (input, hidden..., output). The hidden activation applies to
    every layer but the last, which uses the output activation.
    """

    name: str
    sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("a dense net needs at least input and output sizes")
        for kind in (self.hidden_activation, self.output_activation):
            if kind not in ACTIVATIONS:
                raise ValueError(f"unknown activation {kind!r}")

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def layer_activations(self) -> tuple[str, ...]:
        hidden = len(self.sizes) - 2
        return (self.hidden_activation,) * hidden + (self.output_activation,)

    def param_entries(self):
        entries = []
        for k in range(len(self.sizes) - 1):
            entries.append((f"{self.name}.w{k}", (self.sizes[k + 1], self.sizes[k])))
            entries.append((f"{self.name}.b{k}", (self.sizes[k + 1],)))
        return entries

    def layout(self) -> ParamLayout:
        return ParamLayout.build(self.param_entries())

    def init_into(self, layout: ParamLayout, values: np.ndarray, rng: np.random.Generator) -> None:
        """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer."""
        for k in range(len(self.sizes) - 1):
            bound = 1.0 / np.sqrt(self.sizes[k])
            w = layout.view(values, f"{self.name}.w{k}")
            b = layout.view(values, f"{self.name}.b{k}")
            w[:] = rng.uniform(-bound, bound, size=w.shape)
            b[:] = rng.uniform(-bound, bound, size=b.shape)

    def forward(self, layout: ParamLayout, values: np.ndarray, x) -> np.ndarray:
        """Plain forward pass with no tape; accepts (d,) or (B, d) input."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ValueError(
                f"{self.name}: input width {x.shape[1]} does not match {self.in_dim}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.name}: non-finite input")
        for k, act in enumerate(self.layer_activations()):
            w = layout.view(values, f"{self.name}.w{k}")
            b = layout.view(values, f"{self.name}.b{k}")
            x = _act_forward(act, x @ w.T + b)
        return x[0] if single else x

    def forward_tape(self, tape: Tape, params: TapeParams, x) -> Var:
        """Recorded forward pass; `x` may be a Var or a constant array."""
        h = x if isinstance(x, Var) else t_leaf(tape, np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if h.value.shape[1] != self.in_dim:
            raise ValueError(
                f"{self.name}: input width {h.value.shape[1]} does not match {self.in_dim}"
            )
        for k, act in enumerate(self.layer_activations()):
            w = params.leaf(f"{self.name}.w{k}")
            b = params.leaf(f"{self.name}.b{k}")
            h = t_act(tape, t_add_row(tape, t_matmul_t(tape, h, w), b), act)
        return h

    def preactivation_margin(self, layout: ParamLayout, values: np.ndarray, x) -> float:
        """Smallest |pre-activation| seen at a relu or abs unit.

        Finite-difference checks are only meaningful away from activation
        kinks; callers can resample configurations whose margin is tiny.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        margin = np.inf
        for k, act in enumerate(self.layer_activations()):
            w = layout.view(values, f"{self.name}.w{k}")
            b = layout.view(values, f"{self.name}.b{k}")
            pre = x @ w.T + b
            if act in ("relu", "abs"):
                margin = min(margin, float(np.abs(pre).min()))
            x = _act_forward(act, pre)
        return margin


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First and second moment accumulators for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_size(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float = 5e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected adaptive-moment update; returns the new vector."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))[:5]
        raise GradientError(f"non-finite gradient entries at indices {bad.tolist()}")
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# finite differences


def central_difference_error(f, x: np.ndarray, analytic: np.ndarray, eps: float, skip_tol: float = 1e-8) -> float:
    """Max relative error of `analytic` against central differences of `f`.

    Coordinates where both the analytic and numeric derivative are below
    `skip_tol` in magnitude are skipped (they carry no signal, only noise).
    """
    worst = 0.0
    probe = np.array(x, dtype=np.float64)
    for i in range(probe.size):
        keep = probe[i]
        probe[i] = keep + eps
        f_plus = f(probe)
        probe[i] = keep - eps
        f_minus = f(probe)
        probe[i] = keep
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[i])
        if abs(a) < skip_tol and abs(numeric) < skip_tol:
            continue
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric)))
    return worst


def finite_diff_check(net: DenseNet, params: np.ndarray, x, eps: float = 1e-5, layout: ParamLayout | None = None) -> float:
    """Check the tape gradient of sum(net(x)) against central differences."""
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    if layout is None:
        layout = net.layout()

    def scalar(p):
        return float(np.sum(net.forward(layout, p, x)))

    tape = Tape()
    tp = TapeParams(tape, layout, params)
    out = net.forward_tape(tape, tp, x)
    backward(tape, out, np.ones_like(out.value))
    return central_difference_error(scalar, params, tp.grad(), eps)


# ---------------------------------------------------------------------------
# checkpoint documents


def params_document(layout: ParamLayout, values: np.ndarray) -> dict:
    """Self-describing parameter document (layout table plus flat values)."""
    layout.validate(values)
    return {
        "version": CHECKPOINT_VERSION,
        "layout": [
            {"name": name, "offset": off, "shape": list(shape)}
            for name, off, shape in layout.entries
        ],
        "values": [float(v) for v in values],
    }


def parse_params_document(doc: dict) -> tuple[ParamLayout, np.ndarray]:
    if "version" not in doc:
        raise ValueError("parameter document is missing the mandatory version field")
    if doc["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported parameter document version {doc['version']!r}")
    entries = tuple(
        (e["name"], int(e["offset"]), tuple(int(d) for d in e["shape"]))
        for e in doc["layout"]
    )
    values = np.asarray(doc["values"], dtype=np.float64)
    layout = ParamLayout(entries, values.size)
    layout.validate(values)
    return layout, values
