# Licensed under the Apache License: http://www.apache.org/licenses/LICENSE-2.0

"""The neural blocks of GraFormer and the assembled model."""

import copy
import math

import numpy as np

from graformer import autodiff as ad
from graformer.exceptions import (
    ConfigError, GraformerException, GraphError, ShapeError, SnapshotError,
)
from graformer.graphops import (
    SkeletonGraph, chebyshev_basis, normalized_adjacency, rescaled_laplacian,
)
from graformer.snapshot import read_snapshot, write_snapshot

# The architectures compared in the ablation study.
VARIANTS = ("graformer", "model-c", "model-at", "model-m", "model-am", "model-t")

# Initial logits of a learnable adjacency: on the skeleton pattern, and off it.
ADJ_LOGIT_ON = 2.0
ADJ_LOGIT_OFF = -2.0

CHECKPOINT_FORMAT = "graformer-checkpoint"


class ModelConfig:
    """The shape of a GraFormerModel.

    Raises ConfigError if the settings are inconsistent.

    """
    def __init__(
        self, skeleton, layers=5, dim=96, heads=4, cheb_order=2,
        gcn_hidden_ratio=2, dropout=0.25, variant="graformer",
    ):
        if not isinstance(skeleton, SkeletonGraph):
            raise ConfigError(f"Skeleton must be a SkeletonGraph, not {skeleton!r}")
        self.skeleton = skeleton
        self.layers = int(layers)
        self.dim = int(dim)
        self.heads = int(heads)
        self.cheb_order = int(cheb_order)
        self.gcn_hidden_ratio = int(gcn_hidden_ratio)
        self.dropout = float(dropout)
        self.variant = variant

        if self.layers < 1:
            raise ConfigError(f"Need at least one layer, got {self.layers}")
        if self.dim < 1 or self.heads < 1:
            raise ConfigError(f"dim and heads must be positive, got {self.dim} and {self.heads}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} isn't divisible by {self.heads} heads")
        if self.cheb_order < 1:
            raise ConfigError(f"Chebyshev order must be at least 1, got {self.cheb_order}")
        if self.gcn_hidden_ratio < 1:
            raise ConfigError(f"gcn_hidden_ratio must be at least 1, got {self.gcn_hidden_ratio}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"Dropout must be in [0, 1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"Unknown variant {self.variant!r}, choose from: {', '.join(VARIANTS)}")

    def __repr__(self):
        return (
            f"<ModelConfig {self.variant} j={self.skeleton.joint_count} N={self.layers} "
            f"dim={self.dim} heads={self.heads} K={self.cheb_order}>"
        )

    def to_dict(self):
        """A JSON-ready description, stored in checkpoints."""
        return {
            "joint_count": self.skeleton.joint_count,
            "skeleton": {
                "name": self.skeleton.name,
                "root_index": self.skeleton.root_index,
                "edges": [list(e) for e in self.skeleton.edges],
            },
            "layers": self.layers,
            "dim": self.dim,
            "heads": self.heads,
            "cheb_order": self.cheb_order,
            "gcn_hidden_ratio": self.gcn_hidden_ratio,
            "dropout": self.dropout,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d):
        sk = d["skeleton"]
        skeleton = SkeletonGraph(d["joint_count"], sk["edges"], root_index=sk["root_index"], name=sk["name"])
        return cls(
            skeleton,
            layers=d["layers"], dim=d["dim"], heads=d["heads"], cheb_order=d["cheb_order"],
            gcn_hidden_ratio=d["gcn_hidden_ratio"], dropout=d["dropout"], variant=d["variant"],
        )


def uniform_init(rng, d_in, shape):
    """Weights uniform in +-1/sqrt(d_in)."""
    bound = 1.0 / math.sqrt(d_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """A container of named parameters and named sub-layers."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def add_parameter(self, name, values):
        p = ad.Tensor(values, requires_grad=True, name=name)
        self._params[name] = p
        return p

    def add_child(self, name, layer):
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix=""):
        """Yield (path, Tensor) for every parameter, in a stable order."""
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_parameters(self):
        """Zero every parameter, except layer norm gains, which become 1."""
        for child in self._children.values():
            child.zero_parameters()
        for p in self._params.values():
            p.values[...] = 0.0

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def count_parameters(layer):
    """The number of trainable scalars in `layer` and its sub-layers."""
    return sum(p.size for p in layer.parameters())


def _check_features(name, x, j, d):
    shape = tuple(x.shape)
    if len(shape) < 2 or shape[-2] != j or shape[-1] != d:
        raise ShapeError(f"{name}: expected (..., {j}, {d}) features, got {shape}")


class Linear(Layer):
    """X W + b."""

    def __init__(self, d_in, d_out, rng):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.weight = self.add_parameter("weight", uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = self.add_parameter("bias", np.zeros(d_out))

    def forward(self, x):
        return ad.add(ad.matmul(x, self.weight), self.bias)


class LayerNorm(Layer):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = self.add_parameter("gain", np.ones(dim))
        self.bias = self.add_parameter("bias", np.zeros(dim))

    def zero_parameters(self):
        self.gain.values[...] = 1.0
        self.bias.values[...] = 0.0

    def forward(self, x):
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class ChebGConvLayer(Layer):
    """Chebyshev graph convolution: sum_k T_k(L~) X theta_k + bias."""

    def __init__(self, d_in, d_out, k, rng, bias=True):
        super().__init__()
        if k < 1:
            raise ConfigError(f"Chebyshev order must be at least 1, got {k}")
        self.d_in, self.d_out, self.k = d_in, d_out, k
        self.weights = [
            self.add_parameter(f"weights.{i}", uniform_init(rng, d_in, (d_in, d_out)))
            for i in range(k)
        ]
        self.bias = self.add_parameter("bias", np.zeros(d_out)) if bias else None

    def propagate(self, lt, x):
        """The convolution without its bias."""
        _check_features("chebgconv", x, np.shape(lt)[0], self.d_in)
        terms = chebyshev_basis(lt, x, self.k)
        out = ad.matmul(terms[0], self.weights[0])
        for term, theta in zip(terms[1:], self.weights[1:]):
            out = ad.add(out, ad.matmul(term, theta))
        return out

    def forward(self, lt, x):
        out = self.propagate(lt, x)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out


class LamGConvLayer(Layer):
    """Graph convolution with a learnable adjacency: A^ X Theta + bias.

    A^ = normalize_rows(sigmoid(logits)), so every row of the aggregation is a
    convex combination of joints.

    """
    def __init__(self, skeleton, d_in, d_out, rng):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.joint_count = skeleton.joint_count
        pattern = normalized_adjacency(skeleton) > 0
        self.adjacency = self.add_parameter(
            "adjacency", np.where(pattern, ADJ_LOGIT_ON, ADJ_LOGIT_OFF)
        )
        self.weight = self.add_parameter("weight", uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = self.add_parameter("bias", np.zeros(d_out))

    def aggregation(self):
        """The effective aggregation matrix as a Tensor."""
        return ad.normalize_rows(ad.sigmoid(self.adjacency))

    def forward(self, x):
        _check_features("lam_gconv", x, self.joint_count, self.d_in)
        mixed = ad.matmul(self.aggregation(), x)
        return ad.add(ad.matmul(mixed, self.weight), self.bias)


def effective_adjacency(layer):
    """The post-sigmoid, row-normalized aggregation matrix of a LamGConvLayer."""
    with ad.no_grad():
        return layer.aggregation().values.copy()


class MultiHeadSelfAttention(Layer):
    """Multi-head self-attention with a fused QKV projection."""

    def __init__(self, dim, heads, rng):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} isn't divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.qkv = self.add_child("qkv", Linear(dim, 3 * dim, rng))
        self.out = self.add_child("out", Linear(dim, dim, rng))

    def attend(self, x):
        """Returns (output, attention) where attention is one Tensor per head."""
        if tuple(x.shape)[-1:] != (self.dim,):
            raise ShapeError(f"mhsa: expected features of width {self.dim}, got {tuple(x.shape)}")
        q, k, v = ad.split(self.qkv(x), 3)
        scale = 1.0 / math.sqrt(self.dim // self.heads)
        outputs, attention = [], []
        for qh, kh, vh in zip(ad.split(q, self.heads), ad.split(k, self.heads), ad.split(v, self.heads)):
            scores = ad.scale(ad.matmul(qh, ad.transpose_last_two(kh)), scale)
            weights = ad.softmax_last_axis(scores)
            attention.append(weights)
            outputs.append(ad.matmul(weights, vh))
        return self.out(ad.concat(outputs)), attention

    def forward(self, x):
        return self.attend(x)[0]


class MLP(Layer):
    """Linear, ReLU, Linear."""

    def __init__(self, dim, hidden, rng):
        super().__init__()
        self.fc1 = self.add_child("fc1", Linear(dim, hidden, rng))
        self.fc2 = self.add_child("fc2", Linear(hidden, dim, rng))

    def forward(self, x):
        return self.fc2(ad.relu(self.fc1(x)))


class GraAttention(Layer):
    """Pre-norm self-attention followed by a pre-norm LAM-GConv sub-block.

    `with_gcn=False` drops the LAM-GConv sub-block and `with_mlp=True` adds a
    transformer MLP sub-block at the end; these make the ablation variants.

    """
    def __init__(self, skeleton, dim, heads, hidden_ratio, dropout, rng, with_gcn=True, with_mlp=False):
        super().__init__()
        self.dropout = dropout
        self.ln1 = self.add_child("ln1", LayerNorm(dim))
        self.mhsa = self.add_child("mhsa", MultiHeadSelfAttention(dim, heads, rng))
        self.with_gcn = with_gcn
        self.with_mlp = with_mlp
        if with_gcn:
            hidden = hidden_ratio * dim
            self.ln2 = self.add_child("ln2", LayerNorm(dim))
            self.gcn1 = self.add_child("gcn1", LamGConvLayer(skeleton, dim, hidden, rng))
            self.gcn2 = self.add_child("gcn2", LamGConvLayer(skeleton, hidden, dim, rng))
        if with_mlp:
            self.ln3 = self.add_child("ln3", LayerNorm(dim))
            self.mlp = self.add_child("mlp", MLP(dim, 2 * dim, rng))

    def forward(self, x, training=False, rng=None):
        y = ad.add(x, ad.dropout(self.mhsa(self.ln1(x)), self.dropout, rng, training))
        if self.with_gcn:
            g = self.gcn2(ad.relu(self.gcn1(self.ln2(y))))
            y = ad.add(y, ad.dropout(g, self.dropout, rng, training))
        if self.with_mlp:
            y = ad.add(y, ad.dropout(self.mlp(self.ln3(y)), self.dropout, rng, training))
        return y


class ChebGConvBlock(Layer):
    """X + dropout(ChebGConv2(relu(ChebGConv1(LN(X)))))."""

    def __init__(self, dim, k, dropout, rng):
        super().__init__()
        self.dropout = dropout
        self.ln = self.add_child("ln", LayerNorm(dim))
        self.conv1 = self.add_child("conv1", ChebGConvLayer(dim, dim, k, rng))
        self.conv2 = self.add_child("conv2", ChebGConvLayer(dim, dim, k, rng))

    def forward(self, lt, x, training=False, rng=None):
        h = self.conv2(lt, ad.relu(self.conv1(lt, self.ln(x))))
        return ad.add(x, ad.dropout(h, self.dropout, rng, training))


class StackBlock(Layer):
    """One of the N repeated stages: an attention block and/or a ChebGConv block."""

    def __init__(self, config, rng):
        super().__init__()
        v = config.variant
        self.graatt = self.chebblock = None
        if v != "model-c":
            self.graatt = self.add_child("graatt", GraAttention(
                config.skeleton, config.dim, config.heads, config.gcn_hidden_ratio, config.dropout, rng,
                with_gcn=v not in ("model-m", "model-t"),
                with_mlp=v in ("model-am", "model-t"),
            ))
        if v not in ("model-at", "model-t"):
            self.chebblock = self.add_child("chebblock", ChebGConvBlock(
                config.dim, config.cheb_order, config.dropout, rng,
            ))

    def forward(self, lt, x, training=False, rng=None):
        if self.graatt is not None:
            x = self.graatt(x, training, rng)
        if self.chebblock is not None:
            x = self.chebblock(lt, x, training, rng)
        return x


class GraFormerModel(Layer):
    """Embedding ChebGConv, N stacked blocks, and a ChebGConv head to 3D."""

    def __init__(self, config, seed=0):
        super().__init__()
        self.config = config
        self.skeleton = config.skeleton
        self.dropout_rate = config.dropout
        self.laplacian = rescaled_laplacian(config.skeleton)
        self.laplacian.setflags(write=False)

        rng = ad.make_rng(seed)
        k = config.cheb_order
        self.embed = self.add_child("embed", ChebGConvLayer(2, config.dim, k, rng))
        self.blocks = [
            self.add_child(f"blocks.{i}", StackBlock(config, rng))
            for i in range(config.layers)
        ]
        self.head = self.add_child("head", ChebGConvLayer(config.dim, 3, k, rng))

    def __repr__(self):
        return f"<GraFormerModel {self.config!r} params={count_parameters(self)}>"

    def forward(self, x2d, training=False, rng=None):
        """Lift (batch, j, 2) or (j, 2) 2D joints to 3D."""
        j = self.skeleton.joint_count
        shape = tuple(x2d.shape)
        if len(shape) not in (2, 3) or shape[-2:] != (j, 2):
            raise ShapeError(f"model: expected (batch, {j}, 2) input, got {shape}")
        if training and self.dropout_rate > 0 and rng is None:
            raise GraformerException("model: training mode needs a random generator for dropout")
        lt = self.laplacian
        h = self.embed(lt, x2d)
        for block in self.blocks:
            h = block(lt, h, training, rng)
        return self.head(lt, h)

    def set_dropout(self, rate):
        """Use dropout `rate` in every block from now on."""
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"Dropout must be in [0, 1), got {rate}")
        self.dropout_rate = self.config.dropout = float(rate)
        for block in self.blocks:
            for part in (block.graatt, block.chebblock):
                if part is not None:
                    part.dropout = self.dropout_rate

    def predict(self, x2d):
        """Eval-mode 3D prediction as a numpy array, without recording."""
        with ad.no_grad():
            return self.forward(np.asarray(x2d, dtype=float)).values

    def parameter_breakdown(self):
        """(name, count) per component: embed, each block's parts, head."""
        rows = [("embed", count_parameters(self.embed))]
        for i, block in enumerate(self.blocks):
            for name, child in block._children.items():
                rows.append((f"blocks.{i}.{name}", count_parameters(child)))
        rows.append(("head", count_parameters(self.head)))
        return rows

    def lam_layers(self):
        """Yield (path, LamGConvLayer) for every learnable-adjacency layer."""
        for i, block in enumerate(self.blocks):
            if block.graatt is not None and block.graatt.with_gcn:
                yield f"blocks.{i}.graatt.gcn1", block.graatt.gcn1
                yield f"blocks.{i}.graatt.gcn2", block.graatt.gcn2

    def state_dict(self):
        """Copies of all parameter values, by path."""
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        """Set parameter values from `state`, which must match exactly."""
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise SnapshotError(
                f"Checkpoint doesn't fit the model: missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, p in params.items():
            values = np.asarray(state[name], dtype=float)
            if values.shape != p.shape:
                raise SnapshotError(f"Checkpoint entry {name!r} has shape {values.shape}, expected {p.shape}")
            p.values[...] = values

    def copy(self):
        """An independent model with the same configuration and values."""
        twin = copy.deepcopy(self)
        for p in twin.parameters():
            p.grad = None
        return twin


def save_checkpoint(model, path, extra=None):
    """Write `model` as a GRFK snapshot with its configuration."""
    metadata = {"format": CHECKPOINT_FORMAT, "model": model.config.to_dict()}
    if extra:
        metadata.update(extra)
    entries = [(name, p.values) for name, p in model.named_parameters()]
    write_snapshot(path, entries, metadata)


def load_checkpoint(path):
    """Read a model written by `save_checkpoint`."""
    metadata, entries = read_snapshot(path)
    if metadata.get("format") != CHECKPOINT_FORMAT or "model" not in metadata:
        raise SnapshotError(f"{path!r} isn't a graformer checkpoint")
    try:
        config = ModelConfig.from_dict(metadata["model"])
    except (KeyError, TypeError, ConfigError, GraphError) as err:
        raise SnapshotError(f"Checkpoint {path!r} has an unreadable model config: {err}") from err
    model = GraFormerModel(config)
    model.load_state_dict(entries)
    return model
