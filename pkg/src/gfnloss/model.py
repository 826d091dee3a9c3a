"""Policy parameterisations (tabular and MLP), Adam, and checkpoints.

A model maps a batch of state inputs to its heads: forward logits over the
environment's actions, optional backward logits over parent slots, and an
optional per-state scalar (log state flow, or log F-tilde for forward-looking
variants).  ``log_z`` is a separate scalar for trajectory balance.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch

from gfnloss.errors import CheckpointMismatch, GraphNotRecorded, ShapeMismatch, SinkHasNoChildren

DTYPE = torch.float64
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: int = 2
    hidden_width: int = 64
    activation: str = "leaky_relu"


@dataclass(frozen=True)
class Heads:
    forward_logits: torch.Tensor  # [N, A]
    backward_logits: torch.Tensor | None  # [N, B]
    log_flow: torch.Tensor | None  # [N]


class PolicyModel(torch.nn.Module):
    """Shared head layout for both parameterisations.

    ``flow_head`` is ``None``, ``"state"`` (log F) or ``"forward_looking"``
    (log F-tilde); it only changes how objectives read the scalar head.
    """

    def __init__(self, kind: str, n_actions: int, n_back_actions: int, *, learned_backward: bool,
                 flow_head: str | None, total_flow: bool):
        super().__init__()
        self.kind = kind
        self.n_actions = n_actions
        self.n_back_actions = n_back_actions if learned_backward else 0
        self.learned_backward = learned_backward
        self.flow_head = flow_head
        self.out_dim = n_actions + self.n_back_actions + (1 if flow_head else 0)
        self.log_z = torch.nn.Parameter(torch.zeros((), dtype=DTYPE)) if total_flow else None

    def raw(self, inputs: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, inputs: torch.Tensor) -> Heads:
        out = self.raw(inputs)
        A, B = self.n_actions, self.n_back_actions
        return Heads(
            forward_logits=out[:, :A],
            backward_logits=out[:, A : A + B] if B else None,
            log_flow=out[:, A + B] if self.flow_head else None,
        )

    def inputs_for(self, tables, rows: np.ndarray) -> torch.Tensor:
        """Model inputs for state indices ``rows`` of an enumerated environment."""
        raise NotImplementedError

    def named_tensors(self) -> list[tuple[str, torch.Tensor]]:
        return [(n, p) for n, p in self.named_parameters()]


class TabularModel(PolicyModel):
    """One free parameter per (state, output); inputs are state indices."""

    def __init__(self, n_states: int, n_actions: int, n_back_actions: int, **kw):
        super().__init__("tabular", n_actions, n_back_actions, **kw)
        self.n_states = n_states
        self.table = torch.nn.Parameter(torch.zeros((n_states, self.out_dim), dtype=DTYPE))

    def raw(self, inputs):
        return self.table[inputs]

    def inputs_for(self, tables, rows):
        return torch.as_tensor(np.asarray(rows, dtype=np.int64))


class MlpModel(PolicyModel):
    def __init__(self, spec: MlpSpec, n_actions: int, n_back_actions: int, **kw):
        super().__init__("mlp", n_actions, n_back_actions, **kw)
        self.spec = spec
        dims = [spec.input_dim] + [spec.hidden_width] * spec.hidden_layers + [self.out_dim]
        self.layers = torch.nn.ModuleList(
            torch.nn.Linear(a, b, dtype=DTYPE) for a, b in zip(dims[:-1], dims[1:])
        )

    def raw(self, inputs):
        h = inputs
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = torch.nn.functional.leaky_relu(h, LEAKY_SLOPE)
        return h

    def inputs_for(self, tables, rows):
        return torch.as_tensor(tables.encodings[np.asarray(rows, dtype=np.int64)])


def init_parameters(model: PolicyModel, rng: np.random.Generator, scale: float | None = None) -> None:
    """Deterministic initialisation from a numpy generator.

    MLP weights and biases are uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.
    Tabular entries are zero unless ``scale`` is given, in which case they are
    normal with that standard deviation.  ``log_z`` starts at 0.
    """
    with torch.no_grad():
        if isinstance(model, MlpModel):
            for layer in model.layers:
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(layer.weight.shape))))
                layer.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(layer.bias.shape))))
        elif isinstance(model, TabularModel):
            if scale is None:
                model.table.zero_()
            else:
                model.table.copy_(torch.from_numpy(rng.normal(0.0, scale, tuple(model.table.shape))))
        if model.log_z is not None:
            model.log_z.zero_()


def masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Log-softmax over ``mask``; masked entries are exactly ``-inf``.

    Rows with no valid entry come out as all ``-inf`` without poisoning
    gradients of the other rows.
    """
    neg = torch.tensor(-math.inf, dtype=logits.dtype)
    has = mask.any(dim=-1, keepdim=True)
    masked = torch.where(mask, logits, neg)
    masked = torch.where(has, masked, torch.zeros_like(logits))
    return torch.where(mask, torch.log_softmax(masked, dim=-1), neg)


def forward_policy(model: PolicyModel, env, s) -> dict:
    """``{child: probability}`` at state ``s``; the sink is reported as ``None``."""
    children = env.children(s)
    if not children:
        raise SinkHasNoChildren(f"state {s!r} has no children")
    tables = env.tables
    row = env.index(s)
    with torch.no_grad():
        heads = model(model.inputs_for(tables, [row]))
        mask = torch.as_tensor(tables.forward_mask[[row]])
        logp = masked_log_softmax(heads.forward_logits, mask)[0]
    return {c: float(torch.exp(logp[a])) for a, c in children}


def backward_gradients(model: torch.nn.Module, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of a recorded scalar with respect to every parameter."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise GraphNotRecorded("loss was computed without a recorded graph")
    names, params = zip(*[(n, p) for n, p in model.named_parameters() if p.requires_grad])
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {n: (torch.zeros_like(p) if g is None else g) for n, p, g in zip(names, params, grads)}


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    """Moments, step counter and per-group hyperparameters.

    ``groups`` lists, for every parameter (in order), the index of its group;
    ``lrs`` holds one learning rate per group.
    """

    first_moment: list[torch.Tensor]
    second_moment: list[torch.Tensor]
    lrs: list[float]
    groups: list[int]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, params: Sequence[torch.Tensor], lrs: Sequence[float] = (1e-3,),
               groups: Sequence[int] | None = None, beta1: float = 0.9, beta2: float = 0.999,
               epsilon: float = 1e-8) -> AdamState:
        groups = list(groups) if groups is not None else [0] * len(params)
        if len(groups) != len(params):
            raise ShapeMismatch("one group index per parameter is required")
        if any(not 0 <= g < len(lrs) for g in groups):
            raise ShapeMismatch("group index without a learning rate")
        return cls(
            first_moment=[torch.zeros_like(p) for p in params],
            second_moment=[torch.zeros_like(p) for p in params],
            lrs=list(lrs),
            groups=groups,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeMismatch("params, grads and moments must have equal length")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape {tuple(p.shape)} vs grad {tuple(g.shape)} vs moment {tuple(m.shape)}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    with torch.no_grad():
        for p, g, m, v, grp in zip(params, grads, state.first_moment, state.second_moment, state.groups):
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / c2).sqrt_().add_(state.epsilon)
            p.addcdiv_(m, denom, value=-state.lrs[grp] / c1)


def clip_grad_norm(grads: list[torch.Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm > 0:
        for g in grads:
            g.mul_(max_norm / total)
    return total


# ---------------------------------------------------------- checkpoints

_MAGIC = b"GFNLCKP1"


def save_checkpoint(path, model: torch.nn.Module, config_hash: str) -> None:
    """Write named float64 tensors after a header carrying the config hash."""
    tensors = [(n, p.detach().cpu().numpy()) for n, p in model.named_parameters()]
    digest = config_hash.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, model: torch.nn.Module, config_hash: str) -> None:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise CheckpointMismatch("not a checkpoint file")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (n,) = take("<I")
    stored = data[pos : pos + n].decode("ascii")
    pos += n
    if stored != config_hash:
        raise CheckpointMismatch(f"checkpoint config hash {stored} != {config_hash}")
    (count,) = take("<I")
    params = dict(model.named_parameters())
    loaded = {}
    for _ in range(count):
        (ln,) = take("<I")
        name = data[pos : pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        loaded[name] = arr
    if set(loaded) != set(params):
        raise CheckpointMismatch(f"parameter names differ: {sorted(set(loaded) ^ set(params))}")
    with torch.no_grad():
        for name, arr in loaded.items():
            if tuple(params[name].shape) != arr.shape:
                raise CheckpointMismatch(f"{name}: shape {arr.shape} != {tuple(params[name].shape)}")
            params[name].copy_(torch.from_numpy(arr.copy()))


def parameter_digest(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().astype("<f8").tobytes())
    return h.hexdigest()


def build_model(kind: str, env, *, learned_backward: bool, flow_head: str | None, total_flow: bool,
                hidden_layers: int = 2, hidden_width: int = 64) -> PolicyModel:
    kw = dict(learned_backward=learned_backward, flow_head=flow_head, total_flow=total_flow)
    if kind == "tabular":
        return TabularModel(env.tables.n_states, env.n_actions, env.n_back_actions, **kw)
    if kind == "mlp":
        spec = MlpSpec(env.encoding_dim, hidden_layers, hidden_width)
        return MlpModel(spec, env.n_actions, env.n_back_actions, **kw)
    raise ValueError(f"unknown model kind {kind!r}")
