"""Encoder-decoder assembly and its ablation variants.

Pipeline (full variant, "GH"):

  per-vehicle history --embed--> RNN encoder --FC1--> sequence features
  map raster --[Conv,LeakyReLU,BatchNorm]x3--FC--FC2--> map feature
  features + map --2-layer GNN over the het graph--FC3--> interaction
  [interaction || target feature] --2-layer RNN decoder--FC4--> XY steps

Variants: "R" decodes from the target's sequence feature alone; "GR"
keeps the graph but drops the map node; "GH" is the full pipeline.
The decoder consumes the same conditioning vector at every step and
emits absolute target-frame positions.

Activations are LeakyReLU(0.1) everywhere one is applied: inside the
conv blocks, inside the GNN layers, after the embedding and after the
CNN's internal FC. FC1-FC4 outputs stay linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .geometry import RASTER_SIZE, Sample
from .graph import (
    batch_graphs,
    build_hetero_graph,
    build_homo_graph,
    gat_layer,
    gcn_layer,
)
from .layers import (
    LEAKY_SLOPE,
    BatchNorm2d,
    Linear,
    make_cell,
    run_rnn,
)
from .tensor import Tensor

VARIANTS = ("R", "GR", "GH")
DEFAULT_CNN_SPEC = ((8, 16, 4), (16, 8, 4), (32, 4, 2))


@dataclass
class ModelConfig:
    variant: str = "GH"
    state_dims: int = 4
    history_len: int = 30    # frames of history fed to the encoder
    future_len: int = 50     # frames predicted
    rnn_kind: str = "GRU"
    gnn_kind: str = "GAT"
    emb_dim: int = 64
    enc_hidden: int = 64
    dec_hidden: int = 128
    dec_layers: int = 2
    feature_dim: int = 64
    cnn_spec: tuple = DEFAULT_CNN_SPEC
    gat_heads: int = 1
    target_self_loop: bool = True
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        self.cnn_spec = tuple(tuple(layer) for layer in self.cnn_spec)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.state_dims not in (2, 4, 5):
            raise ConfigError(f"state_dims must be 2, 4 or 5, got {self.state_dims}")
        if self.rnn_kind not in ("GRU", "LSTM"):
            raise ConfigError(f"rnn_kind must be GRU or LSTM, got {self.rnn_kind!r}")
        if self.gnn_kind not in ("GCN", "GAT"):
            raise ConfigError(f"gnn_kind must be GCN or GAT, got {self.gnn_kind!r}")
        if min(self.history_len, self.future_len, self.emb_dim, self.enc_hidden,
               self.dec_hidden, self.dec_layers, self.feature_dim) < 1:
            raise ConfigError("all dimensions must be positive")
        if self.feature_dim % self.gat_heads != 0:
            raise ConfigError("feature_dim must be divisible by gat_heads")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def conv_chain(self, size: int = RASTER_SIZE) -> list[int]:
        """Spatial size after each conv layer (valid padding)."""
        sizes = []
        for _, k, s in self.cnn_spec:
            if k > size:
                raise ConfigError(f"conv kernel {k} larger than input {size}")
            size = (size - k) // s + 1
            sizes.append(size)
        return sizes

    @property
    def cnn_flat_width(self) -> int:
        side = self.conv_chain()[-1]
        return self.cnn_spec[-1][0] * side * side


class _ConvBlock:
    """Conv -> LeakyReLU -> BatchNorm."""

    def __init__(self, in_ch, out_ch, kernel, stride, rng, dtype):
        fan_in = in_ch * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        self.kernels = Tensor(
            rng.uniform(-bound, bound, (out_ch, in_ch, kernel, kernel)).astype(dtype),
            requires_grad=True,
        )
        self.bias = Tensor(
            rng.uniform(-bound, bound, out_ch).astype(dtype), requires_grad=True
        )
        self.stride = stride
        self.bn = BatchNorm2d(out_ch, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out = T.conv2d(x, self.kernels, self.bias, self.stride)
        out = T.leaky_relu(out, LEAKY_SLOPE)
        return self.bn(out, training)

    def parameters(self):
        params = {"kernels": self.kernels, "bias": self.bias}
        params.update({f"bn.{k}": v for k, v in self.bn.parameters().items()})
        return params

    def buffers(self):
        return {f"bn.{k}": v for k, v in self.bn.buffers().items()}


class _GraphLayer:
    """One GNN layer; GAT supports multiple heads via feature splits."""

    def __init__(self, kind, in_dim, out_dim, heads, rng, dtype):
        self.kind = kind
        self.heads = heads if kind == "GAT" else 1
        if kind == "GCN":
            self.linears = [Linear(in_dim, out_dim, rng, dtype)]
            self.attns = []
        else:
            head_dim = out_dim // self.heads
            self.linears = [
                Linear(in_dim, head_dim, rng, dtype) for _ in range(self.heads)
            ]
            self.attns = [
                Tensor(
                    rng.uniform(
                        -1.0 / np.sqrt(head_dim), 1.0 / np.sqrt(head_dim), 2 * head_dim
                    ).astype(dtype),
                    requires_grad=True,
                )
                for _ in range(self.heads)
            ]

    def __call__(self, graph) -> Tensor:
        if self.kind == "GCN":
            return gcn_layer(graph, self.linears[0])
        outs = [
            gat_layer(graph, lin, attn)
            for lin, attn in zip(self.linears, self.attns)
        ]
        return outs[0] if len(outs) == 1 else T.concat(outs, axis=1)

    def parameters(self):
        params = {}
        for i, lin in enumerate(self.linears):
            prefix = f"h{i}." if len(self.linears) > 1 else ""
            params[f"{prefix}weight"] = lin.weight
            params[f"{prefix}bias"] = lin.bias
        for i, attn in enumerate(self.attns):
            prefix = f"h{i}." if len(self.attns) > 1 else ""
            params[f"{prefix}attn"] = attn
        return params


class Model:
    """All parameters plus the forward paths for one config.

    Layer init order is fixed (shared encoder first), so two variants
    built from the same seed share identical sequence encoders.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        c = config
        dtype = c.np_dtype
        rng = np.random.default_rng(np.random.PCG64(c.seed))

        self.emb = Linear(c.state_dims, c.emb_dim, rng, dtype)
        self.rnn_enc = make_cell(c.rnn_kind, c.emb_dim, c.enc_hidden, rng, dtype)
        self.fc1 = Linear(c.enc_hidden, c.feature_dim, rng, dtype)

        self.conv_blocks = []
        self.cnn_fc = None
        self.fc2 = None
        if c.variant == "GH":
            in_ch = 1
            for out_ch, kernel, stride in c.cnn_spec:
                self.conv_blocks.append(
                    _ConvBlock(in_ch, out_ch, kernel, stride, rng, dtype)
                )
                in_ch = out_ch
            self.cnn_fc = Linear(c.cnn_flat_width, 2 * c.feature_dim, rng, dtype)
            self.fc2 = Linear(2 * c.feature_dim, c.feature_dim, rng, dtype)

        self.gnn_layers = []
        self.fc3 = None
        if c.variant in ("GR", "GH"):
            self.gnn_layers = [
                _GraphLayer(c.gnn_kind, c.feature_dim + 2, c.feature_dim,
                            c.gat_heads, rng, dtype),
                _GraphLayer(c.gnn_kind, c.feature_dim, c.feature_dim,
                            c.gat_heads, rng, dtype),
            ]
            self.fc3 = Linear(c.feature_dim, c.feature_dim, rng, dtype)

        dec_in = c.feature_dim if c.variant == "R" else 2 * c.feature_dim
        self.dec_cells = []
        for layer in range(c.dec_layers):
            self.dec_cells.append(make_cell(
                c.rnn_kind, dec_in if layer == 0 else c.dec_hidden,
                c.dec_hidden, rng, dtype,
            ))
        self.fc4 = Linear(c.dec_hidden, 2, rng, dtype)

    # -- parameter registry ------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}

        def put(prefix, params):
            for k, v in params.items():
                out[f"{prefix}.{k}"] = v

        put("emb", self.emb.parameters())
        put("rnn_enc", self.rnn_enc.parameters())
        put("fc1", self.fc1.parameters())
        for i, block in enumerate(self.conv_blocks):
            put(f"cnn.{i}", block.parameters())
        if self.cnn_fc is not None:
            put("cnn_fc", self.cnn_fc.parameters())
            put("fc2", self.fc2.parameters())
        for i, layer in enumerate(self.gnn_layers):
            put(f"gnn.{i}", layer.parameters())
        if self.fc3 is not None:
            put("fc3", self.fc3.parameters())
        for i, cell in enumerate(self.dec_cells):
            put(f"rnn_dec.{i}", cell.parameters())
        put("fc4", self.fc4.parameters())
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, block in enumerate(self.conv_blocks):
            for k, v in block.buffers().items():
                out[f"cnn.{i}.{k}"] = v
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        head, _, rest = name.partition(".")
        if head != "cnn":
            raise ConfigError(f"unknown buffer {name!r}")
        idx, _, key = rest.partition(".")
        bn = self.conv_blocks[int(idx)].bn
        attr = key.removeprefix("bn.")
        if attr not in ("running_mean", "running_var"):
            raise ConfigError(f"unknown buffer {name!r}")
        setattr(bn, attr, np.asarray(value, dtype=self.config.np_dtype))

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- encoders ---------------------------------------------------------------

    def encode_vehicles(self, histories: Tensor) -> Tensor:
        """[T_h, N, dims] histories -> [N, feature_dim] sequence features."""
        if histories.ndim != 3:
            raise ShapeError(f"histories must be [T_h,N,dims], got {histories.shape}")
        t_h, n, d = histories.shape
        if t_h < 1:
            raise ContractError("history must span at least one frame")
        if d != self.config.state_dims:
            raise ConfigError(
                f"model expects {self.config.state_dims}-dim states, got {d}"
            )
        flat = histories.reshape(t_h * n, d)
        emb = T.leaky_relu(self.emb(flat), LEAKY_SLOPE)
        seq = emb.reshape(t_h, n, self.config.emb_dim)
        final = run_rnn([self.rnn_enc], seq)
        return self.fc1(final[0])

    def encode_map(self, rasters: Tensor, training: bool = False) -> Tensor:
        """[B, 160, 160] rasters -> [B, feature_dim] map features."""
        if self.config.variant != "GH":
            raise ConfigError(f"variant {self.config.variant} has no map encoder")
        if rasters.ndim == 2:
            rasters = rasters.reshape(1, *rasters.shape)
        b, h, w = rasters.shape
        if (h, w) != (RASTER_SIZE, RASTER_SIZE):
            raise ContractError(f"raster must be 160x160, got {h}x{w}")
        x = rasters.reshape(b, 1, h, w)
        for block in self.conv_blocks:
            x = block(x, training)
        x = x.reshape(b, self.config.cnn_flat_width)
        x = T.leaky_relu(self.cnn_fc(x), LEAKY_SLOPE)
        return self.fc2(x)

    def encode_interaction(self, vehicle_feats: Tensor, map_feat: Tensor) -> Tensor:
        """Per-sample graph encoding: [N,f] + [f] -> [feature_dim]."""
        g = self._interaction([vehicle_feats],
                              None if map_feat is None else map_feat.reshape(1, -1))
        return g.reshape(-1)

    def _interaction(self, feats_per_sample: list[Tensor],
                     map_rows: Tensor | None) -> Tensor:
        """Batched graph encoding -> [B, feature_dim] target features."""
        graphs = []
        for i, feats in enumerate(feats_per_sample):
            if self.config.variant == "GH":
                graphs.append(build_hetero_graph(
                    feats, map_rows[i], self.config.target_self_loop
                ))
            else:
                graphs.append(build_homo_graph(feats, self.config.target_self_loop))
        batch = batch_graphs(graphs)
        h = batch
        for layer in self.gnn_layers:
            out = layer(h)
            h = _FeatureView(out, batch)
        targets = T.gather_rows(h.node_features, batch.target_indices)
        return self.fc3(targets)

    # -- decoder ----------------------------------------------------------------

    def decode_trajectory(self, conditioning: Tensor) -> Tensor:
        """[B, dec_in] conditioning -> [B, T_f, 2] absolute positions.

        The conditioning vector is fed unchanged at every step; the top
        layer's hidden state maps through FC4 to one XY pair per step.
        """
        b = conditioning.shape[0]
        dtype = conditioning.dtype
        states = []
        for cell in self.dec_cells:
            states.append(cell.zero_state(b, dtype))
        outputs = []
        for _ in range(self.config.future_len):
            x = conditioning
            for li, cell in enumerate(self.dec_cells):
                if cell.kind == "LSTM":
                    h, c = cell.step(x, *states[li])
                    states[li] = (h, c)
                else:
                    h = cell.step(x, states[li])
                    states[li] = h
                x = h
            outputs.append(self.fc4(x))
        return T.stack(outputs, axis=1)

    # -- end to end ---------------------------------------------------------------

    def _check_sample(self, sample: Sample) -> None:
        c = self.config
        if sample.t_h != c.history_len:
            raise ConfigError(
                f"sample history {sample.t_h} != model history_len {c.history_len}"
            )
        if sample.t_f != c.future_len:
            raise ConfigError(
                f"sample future {sample.t_f} != model future_len {c.future_len}"
            )
        if sample.dims != c.state_dims:
            raise ConfigError(
                f"sample dims {sample.dims} != model state_dims {c.state_dims}"
            )

    def forward_batch(self, samples: list[Sample], training: bool = False) -> Tensor:
        """Predict [B, T_f, 2] for a mini-batch of samples."""
        if not samples:
            raise ContractError("empty batch")
        for s in samples:
            self._check_sample(s)
        c = self.config
        dtype = c.np_dtype

        if c.variant == "R":
            # R never looks past the target vehicle
            stacked = np.stack([s.histories[0] for s in samples], axis=1)
            conditioning = self.encode_vehicles(Tensor(stacked.astype(dtype)))
        else:
            counts = [s.n_vehicles for s in samples]
            offsets = np.cumsum([0] + counts)
            stacked = np.concatenate(
                [s.histories.transpose(1, 0, 2) for s in samples], axis=1
            )
            all_feats = self.encode_vehicles(Tensor(stacked.astype(dtype)))
            r1 = T.gather_rows(all_feats, offsets[:-1])
            per_sample = [
                all_feats[offsets[i] : offsets[i + 1]] for i in range(len(samples))
            ]
            map_rows = None
            if c.variant == "GH":
                grids = np.stack([s.raster.grid for s in samples])
                map_rows = self.encode_map(Tensor(grids.astype(dtype)), training)
            g = self._interaction(per_sample, map_rows)
            conditioning = T.concat([g, r1], axis=1)
        return self.decode_trajectory(conditioning)


    def forward(self, sample: Sample, training: bool = False) -> Tensor:
        """Single-sample prediction [T_f, 2]."""
        return self.forward_batch([sample], training)[0]

    def predict(self, sample: Sample) -> np.ndarray:
        """Inference-mode prediction as a plain array (target frame)."""
        return np.asarray(self.forward(sample, training=False).data, dtype=np.float64)


class _FeatureView:
    """A graph with replaced node features (edges shared)."""

    def __init__(self, features: Tensor, base):
        self.node_features = features
        self.edges = base.edges
        self.n_nodes = base.n_nodes
        self.node_type = base.node_type


def ade_loss(pred: Tensor, future: np.ndarray) -> Tensor:
    """Scalar batch-mean average displacement error, differentiable."""
    gt = Tensor(np.asarray(future, dtype=pred.dtype))
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    diff = pred - gt
    sq = (diff * diff).sum(axis=-1)
    return T.sqrt(sq).mean()


def config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def config_from_dict(raw: dict) -> ModelConfig:
    raw = dict(raw)
    raw["cnn_spec"] = tuple(tuple(layer) for layer in raw.get("cnn_spec", DEFAULT_CNN_SPEC))
    return ModelConfig(**raw)
