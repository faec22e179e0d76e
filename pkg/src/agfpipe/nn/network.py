"""Network containers: a sequential stack and a shared-trunk multi-head graph."""

import numpy as np

from ..errors import InvalidInputError, NumericError
from .layers import layer_from_spec


class Sequential:
    """A plain layer stack. Parameters are qualified as '<prefix><layer>.<param>'."""

    def __init__(self, layers, dtype=np.float32):
        self.layers = layers
        self.dtype = np.dtype(dtype)

    @classmethod
    def from_specs(cls, specs, rng, dtype=np.float32):
        net = cls([layer_from_spec(d) for d in specs], dtype=dtype)
        for layer in net.layers:
            layer.init(rng, net.dtype)
        return net

    def specs(self):
        return [layer.spec() for layer in self.layers]

    def forward(self, x, train=False, rng=None, n_layers=None):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        stop = len(self.layers) if n_layers is None else n_layers
        for layer in self.layers[:stop]:
            x = layer.forward(x, train=train, rng=rng)
            if train and not np.isfinite(x).all():
                raise NumericError(f"non-finite output from layer {layer.name!r}")
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_params(self, prefix=""):
        out = {}
        for layer in self.layers:
            for pname, arr in layer.params.items():
                out[f"{prefix}{layer.name}.{pname}"] = arr
        return out

    def named_grads(self, prefix=""):
        out = {}
        for layer in self.layers:
            for pname, arr in layer.grads.items():
                out[f"{prefix}{layer.name}.{pname}"] = arr
        return out

    def named_state(self, prefix=""):
        out = {}
        for layer in self.layers:
            for sname, arr in layer.state.items():
                out[f"{prefix}{layer.name}.{sname}"] = arr
        return out

    def clear_grads(self):
        for layer in self.layers:
            layer.grads = {}

    def param_count(self):
        return sum(arr.size for arr in self.named_params().values())


class MultiHeadNet:
    """Optional shared trunk feeding per-task branches.

    A single-task network is the degenerate case with an empty trunk. Each
    branch records the layer index after which the transfer embedding is
    taken (the activation following the penultimate dense block).
    """

    def __init__(self, shared: Sequential, branches: dict, embed_index: dict,
                 n_classes: dict, meta: dict = None):
        self.shared = shared
        self.branches = dict(sorted(branches.items()))
        self.embed_index = embed_index
        self.n_classes = n_classes
        self.meta = meta or {}

    @property
    def tasks(self):
        return sorted(self.branches)

    @property
    def dtype(self):
        return (self.branches[self.tasks[0]].dtype if self.branches
                else self.shared.dtype)

    def forward(self, x, task, train=False, rng=None):
        if task not in self.branches:
            raise InvalidInputError(f"unknown task {task!r}; have {self.tasks}")
        h = self.shared.forward(x, train=train, rng=rng) if self.shared.layers else x
        return self.branches[task].forward(h, train=train, rng=rng)

    def backward(self, dout, task):
        g = self.branches[task].backward(dout)
        if self.shared.layers:
            g = self.shared.backward(g)
        return g

    def embed(self, x, task):
        """Infer-mode activations at the branch's embedding tap."""
        h = self.shared.forward(x, train=False) if self.shared.layers else x
        return self.branches[task].forward(h, train=False,
                                           n_layers=self.embed_index[task])

    def named_params(self, task=None):
        out = self.shared.named_params("shared.")
        tasks = self.tasks if task is None else [task]
        for t in tasks:
            out.update(self.branches[t].named_params(f"task_{t}."))
        return out

    def named_grads(self, task=None):
        out = self.shared.named_grads("shared.")
        tasks = self.tasks if task is None else [task]
        for t in tasks:
            out.update(self.branches[t].named_grads(f"task_{t}."))
        return out

    def named_state(self):
        out = self.shared.named_state("shared.")
        for t in self.tasks:
            out.update(self.branches[t].named_state(f"task_{t}."))
        return out

    def clear_grads(self):
        self.shared.clear_grads()
        for b in self.branches.values():
            b.clear_grads()

    def param_count(self):
        return sum(arr.size for arr in self.named_params().values())

    def embedding_dim(self, task):
        """Width of the embedding produced by a branch's dense block."""
        for layer in reversed(self.branches[task].layers[:self.embed_index[task]]):
            spec = layer.spec()
            if spec["kind"] == "dense":
                return spec["nout"]
        raise InvalidInputError(f"branch {task!r} has no dense block before its tap")

    def descriptor(self):
        """JSON-able structure sufficient to rebuild the graph."""
        return {
            "shared": self.shared.specs(),
            "branches": {t: b.specs() for t, b in self.branches.items()},
            "embed_index": self.embed_index,
            "n_classes": self.n_classes,
            "meta": self.meta,
        }

    @classmethod
    def from_descriptor(cls, desc, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        shared = Sequential.from_specs(desc["shared"], rng, dtype)
        branches = {t: Sequential.from_specs(specs, rng, dtype)
                    for t, specs in sorted(desc["branches"].items())}
        return cls(shared, branches,
                   {t: int(i) for t, i in desc["embed_index"].items()},
                   {t: int(n) for t, n in desc["n_classes"].items()},
                   desc.get("meta", {}))

    def load_arrays(self, params: dict, state: dict):
        own_params = self.named_params()
        own_state = self.named_state()
        if set(params) != set(own_params):
            raise InvalidInputError("parameter names do not match architecture")
        for name, arr in params.items():
            own_params[name][...] = arr
        for name, arr in state.items():
            own_state[name][...] = arr
