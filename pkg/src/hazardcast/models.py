"""The three forecasting architectures.

Each model maps a batch of standardized daily-feature windows (B, L, F) to
six hazard log-rates (B, 6). The Poisson rate is ``exp`` of the log-rate.
Recurrent models score every hidden state against the final state with
additive attention and feed the attention-weighted context to the output
head; the transformer mean-pools its encoder outputs. Attention weights are
kept on the output so the explainer can reuse them.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_FORMAT_VERSION = 1
ARCHITECTURES = ("lstm", "bilstm", "transformer")
_LN_EPS = 1e-5


class CheckpointError(ValueError):
    """Checkpoint file malformed or from an unknown format version."""


@dataclass
class ModelConfig:
    architecture: str
    input_features: int
    hidden_size: int = 64
    attention_size: int = 32
    d_model: int = 32
    heads: int = 4
    layers: int = 2
    ffn_size: int = 64
    output_types: int = 6
    seed: int = 0
    positional_encoding: bool = True

    def __post_init__(self):
        self.architecture = self.architecture.lower()
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        for name in ("input_features", "hidden_size", "attention_size", "d_model",
                     "heads", "layers", "ffn_size", "output_types"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by heads ({self.heads})")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForecastOutput:
    """One forward pass: log-rates, rates, and a per-timestep attention summary.

    ``log_rates`` stays attached to the graph for training; ``rates`` and
    ``attention`` are plain arrays. For the transformer, ``attention`` is the
    mean over layers and heads of the attention the final query position pays
    to each timestep, and ``attention_maps`` holds the raw per-layer maps
    with shape (B, heads, L, L).
    """

    log_rates: Tensor            # (B, output_types)
    rates: np.ndarray            # (B, output_types)
    attention: np.ndarray        # (B, L), rows sum to 1
    attention_maps: list[np.ndarray] | None = None


def _uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


def _as_batch(x) -> Tensor:
    """Promote a single (L, F) window to a (1, L, F) batch; pass 3-D through."""
    if isinstance(x, Tensor):
        if x.ndim == 2:
            return ad.reshape(x, (1,) + x.shape)
        if x.ndim == 3:
            return x
        raise ad.ShapeError(f"expected a (L, F) window or (B, L, F) batch, got shape {x.shape}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3:
        raise ad.ShapeError(f"expected a (L, F) window or (B, L, F) batch, got shape {x.shape}")
    return Tensor(x)


def _run_lstm_cell(xs: list[Tensor], w_x: Tensor, w_h: Tensor, b: Tensor,
                   hidden_size: int) -> tuple[list[Tensor], Tensor]:
    """Standard LSTM over a list of (B, F) steps; returns all h_t and final h."""
    H = hidden_size
    B = xs[0].shape[0]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    states = []
    for xt in xs:
        z = xt @ w_x + h @ w_h + b                      # (B, 4H), gate order i,f,g,o
        i = z[:, 0:H].sigmoid()
        f = z[:, H:2 * H].sigmoid()
        g = z[:, 2 * H:3 * H].tanh()
        o = z[:, 3 * H:4 * H].sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        states.append(h)
    return states, h


def _stack_states(states: list[Tensor]) -> Tensor:
    """(B, H) states for t = 1..L stacked into (B, L, H)."""
    B, H = states[0].shape
    return ad.concat([ad.reshape(s, (B, 1, H)) for s in states], axis=1)


def bahdanau_attention(states: Tensor, final_state: Tensor, w_hidden: Tensor,
                       w_state: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Additive attention of every hidden state against the final state.

    score_t = v' tanh(W1 h_t + W2 s); alpha = softmax over t; c = sum alpha_t h_t.
    ``states`` is (B, L, H), ``final_state`` (B, H). Returns alpha (B, L) and
    the context vector c (B, H).
    """
    B, L, H = states.shape
    A = w_hidden.shape[1]
    proj_state = ad.reshape(final_state @ w_state, (B, 1, A))
    scores = ad.tanh(states @ w_hidden + proj_state) @ v    # (B, L, 1)
    alpha = ad.softmax(ad.reshape(scores, (B, L)), axis=1)
    context = (ad.reshape(alpha, (B, L, 1)) * states).sum(axis=1)
    return alpha, context


class _ModelBase:
    config: ModelConfig

    def __init__(self, config: ModelConfig):
        self.config = config
        self._params: dict[str, Tensor] = {}
        self._build(np.random.default_rng(config.seed))

    def _build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value)
        self._params[name] = t
        return t

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def _head(self, context: Tensor) -> Tensor:
        return context @ self._params["head.w"] + self._params["head.b"]

    def _check_features(self, x: Tensor) -> None:
        if x.shape[2] != self.config.input_features:
            raise ad.ShapeError(
                f"window has {x.shape[2]} features but the model was built for "
                f"{self.config.input_features}")

    def forward(self, x) -> ForecastOutput:
        raise NotImplementedError

    def predict_rates(self, x) -> np.ndarray:
        """Rates only, without building a graph; for evaluation and explainers."""
        with ad.no_grad():
            return self.forward(x).rates


def _rates_from(eta: Tensor) -> np.ndarray:
    return np.exp(np.minimum(eta.value, ad.EXP_CLAMP))


class LstmModel(_ModelBase):
    def _build(self, rng):
        cfg = self.config
        F, H, A = cfg.input_features, cfg.hidden_size, cfg.attention_size
        self._add_param("lstm.w_x", _uniform_init(rng, F, (F, 4 * H)))
        self._add_param("lstm.w_h", _uniform_init(rng, H, (H, 4 * H)))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0   # forget-gate bias
        self._add_param("lstm.b", b)
        self._add_param("attn.w_hidden", _uniform_init(rng, H, (H, A)))
        self._add_param("attn.w_state", _uniform_init(rng, H, (H, A)))
        self._add_param("attn.v", _uniform_init(rng, A, (A, 1)))
        self._add_param("head.w", _uniform_init(rng, H, (H, cfg.output_types)))
        self._add_param("head.b", np.zeros(cfg.output_types))

    def hidden_states(self, x) -> tuple[Tensor, Tensor]:
        """All hidden states (B, L, H) and the final state (B, H)."""
        x = _as_batch(x)
        self._check_features(x)
        L = x.shape[1]
        xs = [x[:, t, :] for t in range(L)]
        states, final = _run_lstm_cell(xs, self._params["lstm.w_x"],
                                       self._params["lstm.w_h"], self._params["lstm.b"],
                                       self.config.hidden_size)
        return _stack_states(states), final

    def forward(self, x) -> ForecastOutput:
        states, final = self.hidden_states(x)
        alpha, context = bahdanau_attention(states, final, self._params["attn.w_hidden"],
                                            self._params["attn.w_state"], self._params["attn.v"])
        eta = self._head(context)
        return ForecastOutput(eta, _rates_from(eta), alpha.value.copy())


class BiLstmModel(_ModelBase):
    def _build(self, rng):
        cfg = self.config
        F, H, A = cfg.input_features, cfg.hidden_size, cfg.attention_size
        for side in ("fwd", "bwd"):
            self._add_param(f"lstm_{side}.w_x", _uniform_init(rng, F, (F, 4 * H)))
            self._add_param(f"lstm_{side}.w_h", _uniform_init(rng, H, (H, 4 * H)))
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0
            self._add_param(f"lstm_{side}.b", b)
        self._add_param("attn.w_hidden", _uniform_init(rng, 2 * H, (2 * H, A)))
        self._add_param("attn.w_state", _uniform_init(rng, 2 * H, (2 * H, A)))
        self._add_param("attn.v", _uniform_init(rng, A, (A, 1)))
        self._add_param("head.w", _uniform_init(rng, 2 * H, (2 * H, cfg.output_types)))
        self._add_param("head.b", np.zeros(cfg.output_types))

    def hidden_states(self, x) -> tuple[Tensor, Tensor]:
        """Concatenated fwd/bwd states (B, L, 2H) and the joined final state (B, 2H).

        The backward direction reads the window reversed; its state at
        position t has therefore consumed rows t..L. The joined final state
        is (fwd at position L, bwd at position 1).
        """
        x = _as_batch(x)
        self._check_features(x)
        H = self.config.hidden_size
        L = x.shape[1]
        xs = [x[:, t, :] for t in range(L)]
        p = self._params
        fwd_states, fwd_final = _run_lstm_cell(xs, p["lstm_fwd.w_x"], p["lstm_fwd.w_h"],
                                               p["lstm_fwd.b"], H)
        bwd_states_rev, bwd_final = _run_lstm_cell(xs[::-1], p["lstm_bwd.w_x"],
                                                   p["lstm_bwd.w_h"], p["lstm_bwd.b"], H)
        bwd_states = bwd_states_rev[::-1]
        joined = [ad.concat([f, b], axis=1) for f, b in zip(fwd_states, bwd_states)]
        final = ad.concat([fwd_final, bwd_final], axis=1)
        return _stack_states(joined), final

    def forward(self, x) -> ForecastOutput:
        states, final = self.hidden_states(x)
        alpha, context = bahdanau_attention(states, final, self._params["attn.w_hidden"],
                                            self._params["attn.w_state"], self._params["attn.v"])
        eta = self._head(context)
        return ForecastOutput(eta, _rates_from(eta), alpha.value.copy())


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """The usual fixed sin/cos position table, shape (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, (2.0 * np.floor(i / 2.0)) / dim)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table


def _layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mean = x.mean(axis=2, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=2, keepdims=True)
    return centered * ad.power(var + _LN_EPS, -0.5) * gain + bias


class TransformerModel(_ModelBase):
    def _build(self, rng):
        cfg = self.config
        F, D = cfg.input_features, cfg.d_model
        self._add_param("embed.w", _uniform_init(rng, F, (F, D)))
        self._add_param("embed.b", np.zeros(D))
        for l in range(cfg.layers):
            pre = f"layer{l}."
            self._add_param(pre + "ln1.gain", np.ones(D))
            self._add_param(pre + "ln1.bias", np.zeros(D))
            for name in ("q", "k", "v", "o"):
                self._add_param(pre + f"attn.w_{name}", _uniform_init(rng, D, (D, D)))
                self._add_param(pre + f"attn.b_{name}", np.zeros(D))
            self._add_param(pre + "ln2.gain", np.ones(D))
            self._add_param(pre + "ln2.bias", np.zeros(D))
            self._add_param(pre + "ffn.w1", _uniform_init(rng, D, (D, cfg.ffn_size)))
            self._add_param(pre + "ffn.b1", np.zeros(cfg.ffn_size))
            self._add_param(pre + "ffn.w2", _uniform_init(rng, cfg.ffn_size, (cfg.ffn_size, D)))
            self._add_param(pre + "ffn.b2", np.zeros(D))
        self._add_param("head.w", _uniform_init(rng, D, (D, cfg.output_types)))
        self._add_param("head.b", np.zeros(cfg.output_types))

    def _self_attention(self, x: Tensor, layer: int) -> tuple[Tensor, np.ndarray]:
        cfg = self.config
        B, L, D = x.shape
        nh, hd = cfg.heads, D // cfg.heads
        p = self._params
        pre = f"layer{layer}.attn."

        def split_heads(t: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(t, (B, L, nh, hd)), (0, 2, 1, 3))

        q = split_heads(x @ p[pre + "w_q"] + p[pre + "b_q"])
        k = split_heads(x @ p[pre + "w_k"] + p[pre + "b_k"])
        v = split_heads(x @ p[pre + "w_v"] + p[pre + "b_v"])
        scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
        attn = ad.softmax(scores, axis=3)                       # (B, nh, L, L)
        mixed = ad.transpose(attn @ v, (0, 2, 1, 3))
        out = ad.reshape(mixed, (B, L, D)) @ p[pre + "w_o"] + p[pre + "b_o"]
        return out, attn.value.copy()

    def encode(self, x) -> tuple[Tensor, list[np.ndarray]]:
        """Encoder outputs (B, L, d_model) and per-layer attention maps."""
        x = _as_batch(x)
        self._check_features(x)
        B, L, _ = x.shape
        p = self._params
        h = x @ p["embed.w"] + p["embed.b"]
        if self.config.positional_encoding:
            h = h + Tensor(sinusoidal_positions(L, self.config.d_model))
        maps = []
        for l in range(self.config.layers):
            normed = _layer_norm(h, p[f"layer{l}.ln1.gain"], p[f"layer{l}.ln1.bias"])
            attn_out, attn_map = self._self_attention(normed, l)
            h = h + attn_out
            normed = _layer_norm(h, p[f"layer{l}.ln2.gain"], p[f"layer{l}.ln2.bias"])
            ffn = ad.tanh(normed @ p[f"layer{l}.ffn.w1"] + p[f"layer{l}.ffn.b1"])
            h = h + (ffn @ p[f"layer{l}.ffn.w2"] + p[f"layer{l}.ffn.b2"])
            maps.append(attn_map)
        return h, maps

    def forward(self, x) -> ForecastOutput:
        encoded, maps = self.encode(x)
        pooled = encoded.mean(axis=1)                           # (B, d_model)
        eta = self._head(pooled)
        # summary: attention received by each position from the final query
        # row, averaged over heads and layers; rows are softmaxed so the
        # summary still sums to 1
        summary = np.mean([m[:, :, -1, :] for m in maps], axis=(0, 2))
        return ForecastOutput(eta, _rates_from(eta), summary, attention_maps=maps)


def build_model(config: ModelConfig) -> _ModelBase:
    cls = {"lstm": LstmModel, "bilstm": BiLstmModel, "transformer": TransformerModel}
    return cls[config.architecture](config)


@dataclass
class ModelCheckpoint:
    """Everything needed to rebuild a trained model and interpret its inputs."""

    config: ModelConfig
    feature_names: list[str]
    standardizer: dict | None
    parameters: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @classmethod
    def from_model(cls, model: _ModelBase, feature_names: list[str],
                   standardizer: dict | None = None) -> "ModelCheckpoint":
        params = {name: p.value.copy() for name, p in model.parameters().items()}
        return cls(model.config, list(feature_names), standardizer, params)

    def build_model(self) -> _ModelBase:
        model = build_model(self.config)
        expected = set(model.parameters())
        got = set(self.parameters)
        if expected != got:
            raise CheckpointError(f"parameter names do not match the architecture: "
                                  f"missing {sorted(expected - got)}, unexpected {sorted(got - expected)}")
        for name, tensor in model.parameters().items():
            stored = self.parameters[name]
            if stored.shape != tensor.value.shape:
                raise CheckpointError(f"parameter {name}: stored shape {stored.shape} "
                                      f"!= expected {tensor.value.shape}")
            tensor.value[...] = stored
        return model

    def save(self, path) -> None:
        doc = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "model_config": self.config.to_dict(),
            "feature_names": self.feature_names,
            "standardizer": self.standardizer,
            "parameters": {
                name: {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
                for name, arr in self.parameters.items()
            },
        }
        Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise CheckpointError(f"not a checkpoint file: {e}") from None
        version = doc.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(f"unknown checkpoint format_version {version!r}; "
                                  f"this build reads version {CHECKPOINT_FORMAT_VERSION}")
        params = {
            name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc["parameters"].items()
        }
        return cls(ModelConfig.from_dict(doc["model_config"]), list(doc["feature_names"]),
                   doc.get("standardizer"), params)
