"""The four knee-onset architectures, parameter initialisation and checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..preprocess.inputs import N_TIMESTEPS, VARIANTS
from .layers import (TA_MODES, CnnConfig, ConfigError, GruParams, MhaParams, cnn_head, gru_batch,
                     multi_head_attention, temporal_attention)

ARCHITECTURES = ("rnn_1dcnn", "rnn_ta_1dcnn", "rnn_ca_1dcnn", "rnn_ta_ca_1dcnn")
CHECKPOINT_VERSION = 1


def has_ta(arch: str) -> bool:
    return "_ta" in arch


def has_ca(arch: str) -> bool:
    return "_ca" in arch


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "rnn_ta_ca_1dcnn"
    h_size: int = 3
    n_he: int = 1
    he_size: int | None = None  # per-head width; defaults to h_size
    cnn: CnnConfig = field(default_factory=CnnConfig)
    n_cy: int = 30
    variant: str = "combined"
    seed: int = 0
    ta_mode: str = "learned"
    n_ts: int | None = None  # overrides the variant's timestep count (toy models)

    def __post_init__(self):
        if isinstance(self.cnn, dict):
            object.__setattr__(self, "cnn", CnnConfig(**self.cnn))
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.h_size < 1 or self.n_cy < 1:
            raise ConfigError("h_size and n_cy must be positive")
        if self.n_he < 1:
            raise ConfigError("n_he must be >= 1")
        if self.n_he != 1 and not has_ca(self.architecture):
            raise ConfigError(f"{self.architecture} has no cyclic attention; n_he must be 1")
        if self.ta_mode not in TA_MODES:
            raise ConfigError(f"ta_mode must be one of {TA_MODES}")
        self.cnn.layer_plan(self.channels, self.n_cy)

    @property
    def n_v(self) -> int:
        return len(VARIANTS[self.variant])

    @property
    def timesteps(self) -> int:
        return self.n_ts or N_TIMESTEPS[self.variant]

    @property
    def head_size(self) -> int:
        return self.he_size or self.h_size

    @property
    def channels(self) -> int:
        return self.head_size if has_ca(self.architecture) else self.h_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, rng: np.random.Generator | None = None) -> dict:
    """Uniform(+-1/sqrt(fan_in)) initialisation, drawn in a fixed order from ``rng``.

    GRU biases use the hidden size as fan-in.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    h, n_v = config.h_size, config.n_v
    p = {
        "gru.w_in": _uniform(rng, (n_v, 3 * h), n_v),
        "gru.w_hid": _uniform(rng, (h, 3 * h), h),
        "gru.bias": _uniform(rng, (3 * h,), h),
    }
    if has_ta(config.architecture):
        p["ta.w_b"] = _uniform(rng, (h,), h)
    if has_ca(config.architecture):
        he = config.head_size
        for j in range(config.n_he):
            for name in ("w_q", "w_k", "w_v"):
                p[f"ca.{j}.{name}"] = _uniform(rng, (h, he), h)
        p["ca.w_o"] = _uniform(rng, (he, config.n_he * he), config.n_he * he)
    plan, flat = config.cnn.layer_plan(config.channels, config.n_cy)
    k = config.cnn.kernel
    for i, (c_in, c_out, _) in enumerate(plan):
        p[f"cnn.{i}.w"] = _uniform(rng, (c_out, c_in, k), c_in * k)
        p[f"cnn.{i}.b"] = _uniform(rng, (c_out,), c_in * k)
    widths = [flat] + ([config.cnn.dense_hidden] if config.cnn.dense_hidden > 0 else []) + [1]
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        p[f"dense.{i}.w"] = _uniform(rng, (a, b), a)
        p[f"dense.{i}.b"] = _uniform(rng, (b,), a)
    return {name: Tensor(v, requires_grad=True, name=name) for name, v in p.items()}


@dataclass
class ForwardResult:
    pred: Tensor                  # (N,) in normalised target space
    ta: np.ndarray | None = None  # (N, n_cy, n_ts)
    ca: list | None = None        # per head, (N, n_cy, n_cy) query x key


class KneeModel:
    """Parameters plus the forward pass of one architecture.

    Inputs are ``(N, n_cy, n_ts, n_v)`` arrays. Each cycle is encoded
    independently by the GRU (zero initial state), giving one context vector
    per cycle; cyclic attention mixes those before the CNN head.
    """

    def __init__(self, config: ModelConfig, params: dict | None = None,
                 target_range: tuple = (0.0, 1.0), normalizer: dict | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        self.target_range = (float(target_range[0]), float(target_range[1]))
        self.normalizer = normalizer

    # -- structure -------------------------------------------------------
    @property
    def gru(self) -> GruParams:
        p = self.params
        return GruParams(p["gru.w_in"], p["gru.w_hid"], p["gru.bias"])

    @property
    def mha(self) -> MhaParams:
        p, n = self.params, self.config.n_he
        return MhaParams([p[f"ca.{j}.w_q"] for j in range(n)], [p[f"ca.{j}.w_k"] for j in range(n)],
                         [p[f"ca.{j}.w_v"] for j in range(n)], p["ca.w_o"])

    def _convs(self):
        n = self.config.cnn.n_nonpool + self.config.cnn.n_pool
        return [(self.params[f"cnn.{i}.w"], self.params[f"cnn.{i}.b"]) for i in range(n)]

    def _dense(self):
        n = 2 if self.config.cnn.dense_hidden > 0 else 1
        return [(self.params[f"dense.{i}.w"], self.params[f"dense.{i}.b"]) for i in range(n)]

    # -- forward ---------------------------------------------------------
    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        cfg = self.config
        if x.ndim == 3:
            x = x[None]
        want = (cfg.n_cy, cfg.timesteps, cfg.n_v)
        if x.ndim != 4 or x.shape[1:] != want:
            raise ad.ShapeError(f"{cfg.architecture} expects inputs (N, {want[0]}, {want[1]}, {want[2]}), "
                                f"got {x.shape}")
        return x

    def contexts(self, x: np.ndarray):
        """Per-cycle context vectors ``(N, n_cy, h)`` and TA scores when present."""
        x = self.check_input(x)
        n, n_cy, n_ts, n_v = x.shape
        hs = gru_batch(self.gru, Tensor(x.reshape(n * n_cy, n_ts, n_v)))
        if has_ta(self.config.architecture):
            ctx, alpha = temporal_attention(hs, self.params["ta.w_b"], self.config.ta_mode)
            ta = alpha.data.reshape(n, n_cy, n_ts)
        else:
            ctx = ad.index(hs, (slice(None), -1, slice(None)))
            ta = None
        return ad.reshape(ctx, (n, n_cy, self.config.h_size)), ta

    def head(self, ctx: Tensor):
        """Cyclic attention (if any) and the CNN head on context vectors."""
        ca = None
        if has_ca(self.config.architecture):
            ctx, maps = multi_head_attention(ctx, self.mha)
            ca = [m.data for m in maps]
        return cnn_head(ctx, self._convs(), self._dense(), self.config.cnn), ca

    def forward(self, x: np.ndarray) -> ForwardResult:
        ctx, ta = self.contexts(x)
        pred, ca = self.head(ctx)
        return ForwardResult(pred, ta, ca)

    # -- target scaling --------------------------------------------------
    def scale_target(self, y) -> np.ndarray:
        lo, hi = self.target_range
        return (np.asarray(y, dtype=float) - lo) / (hi - lo if hi > lo else 1.0)

    def unscale_target(self, y) -> np.ndarray:
        lo, hi = self.target_range
        return np.asarray(y, dtype=float) * (hi - lo if hi > lo else 1.0) + lo

    def predict(self, x: np.ndarray, batch: int = 64) -> np.ndarray:
        """Knee-onset predictions in cycles."""
        x = self.check_input(x)
        out = [self.forward(x[i:i + batch]).pred.data for i in range(0, len(x), batch)]
        return self.unscale_target(np.concatenate(out) if out else np.zeros(0))

    # -- parameters ------------------------------------------------------
    def parameters(self) -> list:
        return list(self.params.values())

    def get_flat(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_flat(self, arrays: dict) -> None:
        for k, v in arrays.items():
            self.params[k].data = np.array(v, dtype=np.float64).reshape(self.params[k].shape)

    def with_config(self, **changes) -> "KneeModel":
        """Same parameters under a modified config (e.g. another ``ta_mode``)."""
        return KneeModel(replace(self.config, **changes), self.params, self.target_range, self.normalizer)

    # -- checkpoints -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "kneeattn-checkpoint",
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "target_range": list(self.target_range),
            "normalizer": self.normalizer,
            "params": {k: {"shape": list(v.shape), "data": v.data.ravel().tolist()}
                       for k, v in self.params.items()},
        }

    def checkpoint_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def from_dict(cls, doc: dict) -> "KneeModel":
        if doc.get("format") != "kneeattn-checkpoint":
            raise ValueError("not a kneeattn checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        config = ModelConfig.from_dict(doc["config"])
        expected = init_params(config, np.random.default_rng(0))
        params = {}
        for name, ref in expected.items():
            if name not in doc["params"]:
                raise ValueError(f"checkpoint lacks parameter {name}")
            entry = doc["params"][name]
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != ref.shape:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {ref.shape}")
            params[name] = Tensor(arr, requires_grad=True, name=name)
        return cls(config, params, tuple(doc["target_range"]), doc.get("normalizer"))

    @classmethod
    def load(cls, path) -> "KneeModel":
        return cls.from_dict(json.loads(Path(path).read_text()))
