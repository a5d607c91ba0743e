"""Network construction and whole-network forward/backward plumbing.

A network is a flat list of steps executed in order.  Besides ordinary
layers, two marker steps implement the nested shortcuts: a save step records
the current tensor under a slot, and an add step later sums the saved tensor
into the running one.  The encoder saves the input and every pre-code layer;
the mirrored decoder adds them back innermost-first, finishing with the
input-level shortcut, then the output head.

Shortcuts are identity maps: switching them off or truncating them removes
only the marker steps, never a parameterized layer, so the parameter set of
the residual and regular variants of one spec is identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .layers import (
    ACTIVATION_KINDS,
    RESIDUAL_POST_OPS,
    Activation,
    BatchNormLayer,
    DenseLayer,
    DropoutLayer,
    ResidualAddNode,
)
from .matrix import Matrix, Rng


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of one network.

    nnode lists the encoder widths outermost to innermost; the last entry is
    the code layer.  The decoder mirrors nnode[-2::-1] and finishes with a
    layer of width nfea before the input-level shortcut.  residual is "off",
    "full", or the number of outermost shortcuts to keep.
    """

    nfea: int
    nnode: tuple[int, ...]
    k: int
    acts: tuple[str, ...] | str = "elu"
    output_activation: str = "linear"
    dropout_rate: float = 0.1
    residual: int | str = "full"
    residual_post_op: str = "activation_batchnorm"
    output_option: int = 1
    use_batchnorm: bool = True
    elu_alpha: float = 1.0
    dropout_placement: str = "code"   # "code" (innermost layer only) or "all"

    @property
    def n_shortcut_pairs(self) -> int:
        """Available identity pairs: one per hidden mirror plus the input pair."""
        return len(self.nnode)

    def act_list(self) -> tuple[str, ...]:
        if isinstance(self.acts, str):
            return (self.acts,) * len(self.nnode)
        return tuple(self.acts)

    def residual_count(self) -> int:
        if self.residual == "off":
            return 0
        if self.residual == "full":
            return self.n_shortcut_pairs
        return int(self.residual)

    def validate(self) -> None:
        if len(self.nnode) == 0:
            raise ValueError("nnode must be non-empty")
        if any(int(w) < 1 for w in self.nnode):
            raise ValueError(f"all widths must be >= 1, got {self.nnode}")
        if self.nfea < 1 or self.k < 1:
            raise ValueError(f"nfea and k must be >= 1, got nfea={self.nfea}, k={self.k}")
        acts = self.act_list()
        if len(acts) != len(self.nnode):
            raise ValueError(f"acts has {len(acts)} entries for {len(self.nnode)} layers")
        for a in acts + (self.output_activation,):
            if a not in ACTIVATION_KINDS:
                raise ValueError(f"unknown activation {a!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.residual not in ("off", "full"):
            n = int(self.residual)
            if n < 0 or n > self.n_shortcut_pairs:
                raise ValueError(f"residual count {n} out of range 0..{self.n_shortcut_pairs}")
        if self.residual_post_op not in RESIDUAL_POST_OPS:
            raise ValueError(f"unknown residual_post_op {self.residual_post_op!r}")
        if self.output_option not in (1, 2):
            raise ValueError(f"output_option must be 1 or 2, got {self.output_option}")
        if self.dropout_placement not in ("code", "all"):
            raise ValueError(f"dropout_placement must be 'code' or 'all', "
                             f"got {self.dropout_placement!r}")

    def to_dict(self) -> dict:
        return {
            "nfea": self.nfea,
            "nnode": list(self.nnode),
            "k": self.k,
            "acts": list(self.act_list()),
            "output_activation": self.output_activation,
            "dropout_rate": self.dropout_rate,
            "residual": self.residual,
            "residual_post_op": self.residual_post_op,
            "output_option": self.output_option,
            "use_batchnorm": self.use_batchnorm,
            "elu_alpha": self.elu_alpha,
            "dropout_placement": self.dropout_placement,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        residual = d.get("residual", "full")
        if not isinstance(residual, str):
            residual = int(residual)
        acts = d.get("acts", "elu")
        return cls(
            nfea=int(d["nfea"]),
            nnode=tuple(int(w) for w in d["nnode"]),
            k=int(d["k"]),
            acts=acts if isinstance(acts, str) else tuple(acts),
            output_activation=d.get("output_activation", "linear"),
            dropout_rate=float(d.get("dropout_rate", 0.1)),
            residual=residual,
            residual_post_op=d.get("residual_post_op", "activation_batchnorm"),
            output_option=int(d.get("output_option", 1)),
            use_batchnorm=bool(d.get("use_batchnorm", True)),
            elu_alpha=float(d.get("elu_alpha", 1.0)),
            dropout_placement=d.get("dropout_placement", "code"),
        )


class _Save:
    """Marker step: remember the current tensor under `slot`."""

    def __init__(self, slot: int):
        self.slot = slot


class _Add:
    """Marker step: add the tensor saved under `slot` into the current one."""

    def __init__(self, slot: int, node: ResidualAddNode):
        self.slot = slot
        self.node = node


@dataclass(frozen=True)
class ShortcutPair:
    """One wiring-table entry; slot 0 is the outermost (input-level) pair."""

    slot: int
    width: int
    save_index: int
    add_index: int


@dataclass
class Predictions:
    """Forward output: k target columns, plus the input reconstruction for option 2."""

    y: Matrix
    reconstruction: Matrix | None
    head: Matrix


@dataclass
class Param:
    """One trainable array and its gradient buffer.

    Names count only state-carrying layers, so they are stable across
    residual on/off/truncated variants of the same spec.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray

    @property
    def size(self) -> int:
        return self.value.size


class Network:
    """A realized layer graph with residual wiring and per-layer state."""

    def __init__(self, spec: NetworkSpec, steps: list, shortcuts: list[ShortcutPair], rng: Rng):
        self.spec = spec
        self.steps = steps
        self.shortcuts = shortcuts   # ordered outermost first
        self.rng = rng

    # -- forward / backward -------------------------------------------------

    def forward(self, x: Matrix, mode: str = "infer", trace: dict | None = None) -> Predictions:
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        if x.ndim != 2 or x.shape[1] != self.spec.nfea:
            raise ValueError(f"forward expects (n, {self.spec.nfea}) input, got {x.shape}")
        train = mode == "train"
        cur = x
        saved: dict[int, Matrix] = {}
        for i, step in enumerate(self.steps):
            if isinstance(step, _Save):
                saved[step.slot] = cur
            elif isinstance(step, _Add):
                cur = step.node.forward(saved[step.slot], cur, train=train)
            elif isinstance(step, DenseLayer):
                cur = step.forward(cur)
            elif isinstance(step, Activation):
                cur = step.forward(cur)
            elif isinstance(step, BatchNormLayer):
                cur = step.forward(cur, train=train)
            elif isinstance(step, DropoutLayer):
                cur = step.forward(cur, train=train, rng=self.rng)
            else:  # pragma: no cover - builder invariant
                raise TypeError(f"unknown step {step!r}")
            if trace is not None:
                trace[i] = cur
        if self.spec.output_option == 2:
            k = self.spec.k
            return Predictions(y=cur[:, :k], reconstruction=cur[:, k:], head=cur)
        return Predictions(y=cur, reconstruction=None, head=cur)

    def backward(self, head_gradient: Matrix, trace: dict | None = None) -> Matrix:
        """Backpropagate from the head; fills every parameter's grad buffer.

        Shortcut branches accumulate additively: the add step hands the
        upstream gradient to both its deep branch and its saved slot, and
        the save step merges the slot gradient back into the encode path.
        Returns the gradient with respect to the network input.
        """
        g = head_gradient
        slot_grads: dict[int, Matrix] = {}
        for i in range(len(self.steps) - 1, -1, -1):
            step = self.steps[i]
            if isinstance(step, _Add):
                d_shallow, d_deep = step.node.backward(g)
                if trace is not None:
                    trace[("add", step.slot)] = d_shallow
                if step.slot in slot_grads:
                    slot_grads[step.slot] = slot_grads[step.slot] + d_shallow
                else:
                    slot_grads[step.slot] = d_shallow
                g = d_deep
            elif isinstance(step, _Save):
                if step.slot in slot_grads:
                    g = g + slot_grads.pop(step.slot)
                if trace is not None:
                    trace[("save", step.slot)] = g
            else:
                g = step.backward(g)
        return g

    # -- parameters -----------------------------------------------------------

    def _named_stateful(self):
        """(name, layer) for every state-carrying layer, in execution order."""
        idx = 0
        for step in self.steps:
            holder = step.node if isinstance(step, _Add) else step
            if isinstance(holder, DenseLayer):
                yield f"L{idx:03d}.dense", holder
                idx += 1
            elif isinstance(holder, BatchNormLayer):
                yield f"L{idx:03d}.bn", holder
                idx += 1
            elif isinstance(holder, ResidualAddNode) and holder.params():
                yield f"L{idx:03d}.addbn", holder
                idx += 1

    def parameters(self) -> list[Param]:
        out = []
        for name, holder in self._named_stateful():
            for field_name, value, grad in holder.params():
                out.append(Param(f"{name}.{field_name}", value, grad))
        return out

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_state(self) -> dict[str, np.ndarray]:
        """Copy of all trainable arrays plus batch-norm running stats."""
        state = {p.name: p.value.copy() for p in self.parameters()}
        for name, holder in self._named_stateful():
            if isinstance(holder, BatchNormLayer):
                state[f"{name}.running_mean"] = holder.running_mean.copy()
                state[f"{name}.running_var"] = holder.running_var.copy()
        return state

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            p.value[...] = state[p.name]
        for name, holder in self._named_stateful():
            if isinstance(holder, BatchNormLayer):
                holder.running_mean[...] = state[f"{name}.running_mean"]
                holder.running_var[...] = state[f"{name}.running_var"]

    # -- structure --------------------------------------------------------------

    def truncate_residuals(self, n_outermost: int) -> "Network":
        """Keep only the n outermost shortcuts; parameters are copied over.

        Slot 0 (the input-level pair) is the outermost and is counted first.
        """
        total = len(self.shortcuts)
        if n_outermost > total:
            raise ValueError(f"cannot keep {n_outermost} shortcuts, network has {total}")
        new = build_network(replace(self.spec, residual=n_outermost), rng=Rng(0))
        new.set_state(self.get_state())
        return new

    # -- serialization -------------------------------------------------------------

    def layer_summary(self) -> list[dict]:
        rows = []
        for step in self.steps:
            if isinstance(step, _Save):
                rows.append({"kind": "save", "slot": step.slot})
            elif isinstance(step, _Add):
                rows.append({"kind": "add", "slot": step.slot})
            elif isinstance(step, DenseLayer):
                rows.append({"kind": "dense", "in": step.n_in, "out": step.n_out})
            elif isinstance(step, Activation):
                rows.append({"kind": "activation", "fn": step.kind, "alpha": step.alpha})
            elif isinstance(step, BatchNormLayer):
                rows.append({"kind": "batchnorm", "width": step.width})
            elif isinstance(step, DropoutLayer):
                rows.append({"kind": "dropout", "rate": step.rate})
        return rows

    def to_dict(self) -> dict:
        state = self.get_state()
        return {
            "format": "resae-network",
            "version": 1,
            "spec": self.spec.to_dict(),
            "layers": self.layer_summary(),
            "parameter_count": self.count_parameters(),
            "weights": {name: {"shape": list(arr.shape),
                               "data": [float(v) for v in arr.ravel()]}
                        for name, arr in sorted(state.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        if d.get("format") != "resae-network":
            raise ValueError("not a serialized network document")
        spec = NetworkSpec.from_dict(d["spec"])
        net = build_network(spec, rng=Rng(0))
        state = {}
        for name, entry in d["weights"].items():
            state[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        net.set_state(state)
        return net

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load_json(cls, path) -> "Network":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_network(spec: NetworkSpec, rng: Rng | int) -> Network:
    """Realize a spec: symmetric encoder/decoder with nested identity shortcuts.

    The encoder walks nnode saving each pre-code output (and the raw input);
    dropout follows the code layer.  The decoder mirrors nnode[-2::-1], adds
    back the matching saved tensor after each block, ends with an nfea-wide
    layer summed with the input, and the head emits k (option 1) or k + nfea
    (option 2) outputs.  The post-op stages configured for the shortcut
    additions are emitted whether or not the addition itself is wired, so
    residual count 0 is the regular network: the identical stack with all
    additions skipped.
    """
    spec.validate()
    if isinstance(rng, int):
        rng = Rng(rng)
    acts = spec.act_list()
    n_layers = len(spec.nnode)
    keep = spec.residual_count()   # slots 0..keep-1 stay wired
    steps: list = []
    save_pos: dict[int, int] = {}
    add_pos: dict[int, int] = {}
    pair_width: dict[int, int] = {0: spec.nfea}

    def dense_block(n_in: int, n_out: int, act: str) -> None:
        layer = DenseLayer(n_in, n_out)
        layer.init_weights(rng, act)
        steps.append(layer)
        steps.append(Activation(act, spec.elu_alpha))
        if spec.use_batchnorm:
            steps.append(BatchNormLayer(n_out))

    def post_op(act: str, width: int) -> None:
        if spec.residual_post_op == "none":
            return
        steps.append(Activation(act, spec.elu_alpha))
        if spec.residual_post_op == "activation_batchnorm":
            steps.append(BatchNormLayer(width))

    if keep > 0:
        save_pos[0] = len(steps)
        steps.append(_Save(0))

    # encoder
    width = spec.nfea
    for i, w in enumerate(spec.nnode):
        dense_block(width, w, acts[i])
        width = w
        if i < n_layers - 1:
            slot = i + 1
            pair_width[slot] = w
            if slot < keep:
                save_pos[slot] = len(steps)
                steps.append(_Save(slot))
            if spec.dropout_placement == "all" and spec.dropout_rate > 0.0:
                steps.append(DropoutLayer(spec.dropout_rate))
        else:
            # code layer: the one place the iterative recipe puts dropout
            if spec.dropout_rate > 0.0:
                steps.append(DropoutLayer(spec.dropout_rate))

    # decoder, innermost mirror first
    for j in range(n_layers - 2, -1, -1):
        dense_block(width, spec.nnode[j], acts[j])
        width = spec.nnode[j]
        slot = j + 1
        if slot < keep:
            add_pos[slot] = len(steps)
            steps.append(_Add(slot, ResidualAddNode(
                post_op="none",
                label=f"shortcut slot {slot} (encode width {pair_width[slot]} "
                      f"<-> decode width {width})")))
        post_op(acts[j], width)
        if spec.dropout_placement == "all" and spec.dropout_rate > 0.0:
            steps.append(DropoutLayer(spec.dropout_rate))

    # final decode layer back to the input width, then the input-level shortcut
    dense_block(width, spec.nfea, acts[0])
    if keep > 0:
        add_pos[0] = len(steps)
        steps.append(_Add(0, ResidualAddNode(
            post_op="none",
            label=f"shortcut slot 0 (input width {spec.nfea} <-> decode width {spec.nfea})")))
    post_op(acts[0], spec.nfea)

    # output head
    head_out = spec.k + (spec.nfea if spec.output_option == 2 else 0)
    head = DenseLayer(spec.nfea, head_out)
    head.init_weights(rng, spec.output_activation)
    steps.append(head)
    steps.append(Activation(spec.output_activation, spec.elu_alpha))

    shortcuts = [ShortcutPair(slot=s, width=pair_width[s],
                              save_index=save_pos[s], add_index=add_pos[s])
                 for s in sorted(save_pos)]
    if sorted(save_pos) != sorted(add_pos) or len(shortcuts) != keep:
        raise RuntimeError(f"builder wiring bookkeeping failed: saves {sorted(save_pos)}, "
                           f"adds {sorted(add_pos)}, expected {keep} pairs")
    return Network(spec, steps, shortcuts, rng)


def build_residual_network(spec: NetworkSpec, rng: Rng | int) -> Network:
    """The spec's network with every nested shortcut wired."""
    return build_network(replace(spec, residual="full"), rng)


def build_regular_network(spec: NetworkSpec, rng: Rng | int) -> Network:
    """Baseline: identical stack with every shortcut addition removed."""
    return build_network(replace(spec, residual="off"), rng)
