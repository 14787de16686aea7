"""T-EMNN: invariant encoders, surface and thickness message passing, decoder.

Every MLP is Linear -> ReLU -> Linear. Processor MLPs are residual
(additive skip); the thickness-edge update is scaled by the sigmoid gate
``I_i`` so its gradient reaches the shared threshold ``tau``.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from temnn import autodiff as ad
from temnn.frame import from_invariant
from temnn.features import GraphSample

MODEL_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    layers: int = 3
    hidden_dim: int = 32
    alpha: float = 3.0
    tau_init: str | float = "median"   # "median" or a number
    use_thickness: bool = True
    coord_mode: str = "invariant"
    inverse_mode: str = "vector"
    use_t: bool = True
    use_dot: bool = True
    node_features: int = 2
    edge_features: int = 1
    condition_features: int = 4

    def validate(self):
        if self.layers < 1 or self.hidden_dim < 1:
            raise ValueError("layers and hidden_dim must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.coord_mode not in ("invariant", "original", "none"):
            raise ValueError(f"bad coord_mode {self.coord_mode!r}")
        if self.inverse_mode not in ("vector", "point"):
            raise ValueError(f"bad inverse_mode {self.inverse_mode!r}")
        if self.use_thickness and not (self.use_t or self.use_dot):
            raise ValueError("enable at least one thickness feature")
        if not (self.tau_init == "median" or isinstance(self.tau_init, (int, float))):
            raise ValueError("tau_init must be 'median' or a number")
        return self

    @property
    def thickness_features(self) -> int:
        return int(self.use_t) + int(self.use_dot)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d).validate()


def mlp_shapes(config: ModelConfig):
    """Ordered (name, in, hidden, out) for every MLP in the network."""
    d = config.hidden_dim
    shapes = [("node_enc", config.node_features, d, d),
              ("edge_enc", config.edge_features, d, d)]
    if config.coord_mode != "none":
        shapes.append(("coord_enc", 3, d, d))
    shapes.append(("cond_enc", config.condition_features, d, d))
    if config.use_thickness:
        shapes.append(("thick_enc", config.thickness_features, d, d))
    for l in range(config.layers):
        shapes.append((f"surf_edge{l}", 3 * d, d, d))
        shapes.append((f"surf_node{l}", 2 * d, d, d))
        if config.use_thickness:
            shapes.append((f"thick_edge{l}", 3 * d, d, d))
            shapes.append((f"thick_node{l}", 2 * d, d, d))
    shapes.append(("combine", 2 * d, d, d))
    shapes.append(("decode", 2 * d, d, 3))
    return shapes


def median_thickness(samples) -> float:
    t = np.concatenate([s.thickness for s in samples])
    return float(np.median(t))


def init_params(config: ModelConfig, seed: int, tau=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, scalar tau."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, n_in, n_hid, n_out in mlp_shapes(config):
        for k, (a, b) in enumerate(((n_in, n_hid), (n_hid, n_out))):
            bound = 1.0 / np.sqrt(a)
            params[f"{name}.w{k}"] = ad.Parameter(rng.uniform(-bound, bound, size=(a, b)),
                                                  name=f"{name}.w{k}")
            params[f"{name}.b{k}"] = ad.Parameter(np.zeros((1, b)), name=f"{name}.b{k}")
    if tau is None:
        if config.tau_init == "median":
            raise ValueError("tau_init='median' needs the training-split median passed as tau")
        tau = float(config.tau_init)
    params["tau"] = ad.Parameter([[float(tau)]], name="tau", group="tau")
    return params


def count_params(params) -> int:
    return int(sum(p.value.size for p in params.values()))


def mlp(params, name, x):
    h = ad.relu(ad.linear(x, params[f"{name}.w0"], params[f"{name}.b0"]))
    return ad.linear(h, params[f"{name}.w1"], params[f"{name}.b1"])


@dataclass
class Encoded:
    z: ad.Tensor
    e: ad.Tensor
    e_thick: ad.Tensor | None
    z_coord: ad.Tensor | None
    h_c: ad.Tensor


def encode(sample: GraphSample, params, config: ModelConfig) -> Encoded:
    if sample.node_features.shape[1] != config.node_features:
        raise ValueError("node feature dimension does not match the model config")
    if sample.edge_features.shape[1] != config.edge_features:
        raise ValueError("edge feature dimension does not match the model config")
    if sample.condition.size != config.condition_features:
        raise ValueError("condition dimension does not match the model config")
    z = mlp(params, "node_enc", sample.node_features)
    e = mlp(params, "edge_enc", sample.edge_features)
    z_coord = None
    if config.coord_mode != "none":
        if sample.invariant_coords is None:
            raise ValueError(f"coord_mode={config.coord_mode} but the sample has no coordinates")
        z_coord = mlp(params, "coord_enc", sample.invariant_coords)
    h_c = mlp(params, "cond_enc", sample.condition[None, :])
    e_thick = None
    if config.use_thickness:
        feats = _thickness_features(sample, config)
        e_thick = mlp(params, "thick_enc", feats)
    return Encoded(z, e, e_thick, z_coord, h_c)


def _thickness_features(sample, config):
    f = sample.thickness_features
    if f.shape[1] == config.thickness_features:
        return f
    # sample carries [t, dot]; select the enabled columns
    if f.shape[1] != 2:
        raise ValueError("thickness feature dimension does not match the model config")
    cols = [k for k, on in enumerate((config.use_t, config.use_dot)) if on]
    return f[:, cols]


def surface_step(l, z, e, sample: GraphSample, params):
    """Residual edge update, then residual node update from the summed incoming edges."""
    src = sample.directed_edges[:, 0]
    dst = sample.directed_edges[:, 1]
    z_dst = ad.gather_rows(z, dst)
    z_src = ad.gather_rows(z, src)
    e_new = ad.add(e, mlp(params, f"surf_edge{l}", ad.concat_cols(e, z_dst, z_src)))
    agg = ad.scatter_add_rows(e_new, dst, sample.n_nodes)
    z_surf = ad.add(z, mlp(params, f"surf_node{l}", ad.concat_cols(z, agg)))
    return z_surf, e_new


def thickness_gate(sample: GraphSample, params, alpha):
    """I = sigmoid(alpha (tau - t)) per thickness edge, as a (K, 1) tensor."""
    t = ad.constant(sample.thickness[:, None])
    return ad.sigmoid(ad.mul(ad.constant([[alpha]]), ad.sub(params["tau"], t)))


def thickness_step(l, z_surf, e_thick, sample: GraphSample, params, config: ModelConfig):
    if not config.use_thickness:
        return z_surf, e_thick
    nodes = sample.thickness_nodes
    partners = sample.thickness_partners
    msg = mlp(params, f"thick_edge{l}", ad.concat_cols(
        e_thick, ad.gather_rows(z_surf, nodes), ad.gather_rows(z_surf, partners)))
    e_new = ad.row_scale(msg, thickness_gate(sample, params, config.alpha))
    full = ad.scatter_add_rows(e_new, nodes, sample.n_nodes)  # zero rows for invalid nodes
    z_next = ad.add(z_surf, mlp(params, f"thick_node{l}", ad.concat_cols(z_surf, full)))
    return z_next, e_new


def decode(z, z_coord, h_c, sample: GraphSample, params, config: ModelConfig):
    n = sample.n_nodes
    if z_coord is None:
        z_coord = ad.constant(np.zeros((n, config.hidden_dim)))
    z_final = mlp(params, "combine", ad.concat_cols(z, z_coord))
    h = ad.gather_rows(h_c, np.zeros(n, dtype=np.int64))
    p_inv = mlp(params, "decode", ad.concat_cols(z_final, h))
    p_orig = from_invariant(sample.frame, p_inv.value, config.inverse_mode)
    return p_inv, p_orig


def forward(sample: GraphSample, params, config: ModelConfig):
    """Returns ``(p_inv tensor, p_orig array)``."""
    enc = encode(sample, params, config)
    z, e, e_thick = enc.z, enc.e, enc.e_thick
    for l in range(config.layers):
        z_surf, e = surface_step(l, z, e, sample, params)
        z, e_thick = thickness_step(l, z_surf, e_thick, sample, params, config)
    return decode(z, enc.z_coord, enc.h_c, sample, params, config)


def loss_fn(sample: GraphSample, params, config: ModelConfig):
    """MSE in the invariant frame against frame-rotated targets."""
    p_inv, _ = forward(sample, params, config)
    return ad.mse(p_inv, ad.constant(sample.targets_invariant()))


def predict(sample: GraphSample, params, config: ModelConfig):
    p_inv, p_orig = forward(sample, params, config)
    return p_inv.value, p_orig


def save_checkpoint(path, params, config: ModelConfig, extra=None):
    meta = {"model_version": MODEL_FORMAT_VERSION, "config": config.to_dict(),
            "tau": float(params["tau"].value[0, 0])}
    if extra:
        meta.update(extra)
    with open(path, "w") as fh:
        fh.write(ad.params_to_json(params, meta))


def load_checkpoint(path):
    with open(path) as fh:
        params, doc = ad.params_from_json(fh.read())
    if doc.get("model_version") != MODEL_FORMAT_VERSION:
        raise ValueError("unsupported model checkpoint version")
    return params, ModelConfig.from_dict(doc["config"]), doc
