"""Split-stream detector: per-stream mixing and conv features, bGRU fusion,
additive attention and window-level classification/localization heads."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import WindowGrid, default_class_config, generate_default_windows
from ..signal_io import CHANNELS, STREAM_CHANNELS
from . import layers

_HEADER_LEN = struct.Struct("<I")


@dataclass
class ModelConfig:
    streams: tuple[str, ...] = ("Ar", "LM", "SDB")
    classes: tuple[str, ...] = ("Ar", "LM", "SDB")
    f0: int = 4
    k_max: int = 4
    n_h: int = 32
    n_a: int = 32
    segment_length: float = 120.0
    fs: float = 128.0
    head: str = "dense"
    weight_decay: float = 0.0
    class_config: dict = field(default_factory=dict)
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    stream_channels: dict = field(default_factory=dict)
    dtype: str = "float64"  # compute precision; checkpoints always store float32

    def __post_init__(self):
        self.streams = tuple(self.streams)
        self.classes = tuple(self.classes)
        if not self.class_config:
            self.class_config = default_class_config(self.classes)
        self.class_config = {k: tuple(v) for k, v in self.class_config.items()}
        if tuple(self.class_config) != self.classes:
            raise ValueError("class_config must list the model classes in order")
        if not self.stream_channels:
            self.stream_channels = {s: STREAM_CHANNELS[s] for s in self.streams}
        self.stream_channels = {k: tuple(v) for k, v in self.stream_channels.items()}
        if self.head not in ("dense", "depthwise"):
            raise ValueError(f"head must be 'dense' or 'depthwise', got {self.head!r}")
        if np.dtype(self.dtype) not in (np.float32, np.float64):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.n_samples % 2**self.k_max:
            raise ValueError(f"segment of {self.n_samples} samples not divisible by 2^{self.k_max}")

    @property
    def n_samples(self) -> int:
        return int(round(self.segment_length * self.fs))

    @property
    def n_reduced(self) -> int:
        return self.n_samples // 2**self.k_max

    @property
    def n_classes(self) -> int:
        return len(self.classes) + 1

    @property
    def stream_widths(self) -> list[int]:
        return [len(self.stream_channels[s]) for s in self.streams]

    def filters(self, k: int) -> int:
        return self.f0 * 2 ** (k - 1)

    def grid(self) -> WindowGrid:
        return generate_default_windows(self.segment_length, self.class_config)

    def to_json(self) -> dict:
        d = asdict(self)
        d["streams"], d["classes"] = list(self.streams), list(self.classes)
        d["class_config"] = {k: list(v) for k, v in self.class_config.items()}
        d["stream_channels"] = {k: list(v) for k, v in self.stream_channels.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class NetworkOutput:
    s: np.ndarray  # B x N_d x K logits
    y: np.ndarray  # B x N_d x 2 encoded localization

    @property
    def probabilities(self) -> np.ndarray:
        return layers.softmax(self.s, axis=-1)


def _glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _orthogonal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((max(rows, cols), min(rows, cols))))
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


class SplitStreamNet:
    """Parameters, running normalization statistics and forward/backward passes."""

    def __init__(self, config: ModelConfig, params: dict, state: dict):
        self.config = config
        self.params = params
        self.state = state
        self.grid = config.grid()
        self._slices = {}
        for k in range(1, config.n_classes):
            idx = self.grid.windows_of(k)
            self._slices[k] = slice(int(idx[0]), int(idx[-1]) + 1)

    # -- parameter naming ------------------------------------------------------

    def _head_blocks(self, params=None):
        p = params or self.params
        return {
            k: (p[f"head.{k}.clf.w"], p[f"head.{k}.clf.b"], p[f"head.{k}.loc.w"], p[f"head.{k}.loc.b"])
            for k in self._slices
        }

    def _gru(self, direction):
        return {n: self.params[f"gru.{direction}.{n}"] for n in ("wz", "bz", "wh", "bh")}

    # -- passes ---------------------------------------------------------------

    def split_inputs(self, x: np.ndarray, channels=CHANNELS) -> list[np.ndarray]:
        """Stream inputs from a (B x) C x T matrix of conditioned channels."""
        x = np.asarray(x, dtype=self.config.dtype)
        if x.ndim == 2:
            x = x[None]
        return [x[:, [channels.index(c) for c in self.config.stream_channels[s]]] for s in self.config.streams]

    def forward(self, inputs: list[np.ndarray], training: bool = False):
        """Run the network; returns ``(NetworkOutput, cache)``.

        ``inputs`` holds one B x C_s x T array per stream.  In training mode
        running normalization statistics are updated.
        """
        cfg, p = self.config, self.params
        if len(inputs) != len(cfg.streams):
            raise ValueError(f"expected {len(cfg.streams)} stream inputs, got {len(inputs)}")
        t_len = {x.shape[-1] for x in inputs}
        if t_len != {cfg.n_samples}:
            raise ValueError(f"stream lengths {sorted(t_len)} differ from configured {cfg.n_samples}")
        cache = {"streams": []}
        feats = []
        for s, x in zip(cfg.streams, inputs):
            z, mix_cache = layers.channel_mixing(x, p[f"mix.{s}.w"], p[f"mix.{s}.b"])
            blocks = []
            for k in range(1, cfg.k_max + 1):
                key = f"{s}.{k}"
                running = (self.state[f"bn.{key}.mean"], self.state[f"bn.{key}.var"])
                z, c, (bm, bv) = layers.conv_block(
                    z, p[f"conv.{key}.w"], p[f"bn.{key}.gamma"], p[f"bn.{key}.beta"],
                    training=training, running=running, eps=cfg.bn_eps,
                )
                if training:
                    mom = cfg.bn_momentum
                    self.state[f"bn.{key}.mean"] = mom * running[0] + (1 - mom) * bm.mean(0)
                    self.state[f"bn.{key}.var"] = mom * running[1] + (1 - mom) * bv.mean(0)
                blocks.append(c)
            cache["streams"].append((mix_cache, blocks, z.shape[1]))
            feats.append(z)
        z = np.concatenate(feats, axis=1).transpose(0, 2, 1)
        h, cache["gru"] = layers.bgru_forward(z, self._gru("f"), self._gru("b"))
        c, alpha, cache["att"] = layers.additive_attention(h, p["att.wu"], p["att.wa"])
        n_d = self.grid.n_windows
        if cfg.head == "dense":
            s_out, y_out, flat = layers.dense_heads(
                c, p["head.clf.w"], p["head.clf.b"], p["head.loc.w"], p["head.loc.b"], n_d
            )
            cache["head"] = flat
        else:
            s_out, y_out = layers.depthwise_heads(c, self._head_blocks(), self._slices, n_d)
        cache["c"], cache["alpha"] = c, alpha
        return NetworkOutput(s_out, y_out), cache

    def backward(self, cache, ds: np.ndarray, dy: np.ndarray) -> dict:
        """Gradients of all parameters given loss gradients w.r.t. ``s`` and ``y``."""
        if cache is None:
            raise ValueError("backward needs the cache of a forward pass")
        cfg, p = self.config, self.params
        grads = {}
        c = cache["c"]
        if cfg.head == "dense":
            dc, g = layers.dense_heads_backward(ds, dy, cache["head"], c.shape, p["head.clf.w"], p["head.loc.w"])
            grads.update({f"head.{n}": v for n, v in g.items()})
        else:
            dc, g = layers.depthwise_heads_backward(ds, dy, c, self._head_blocks(), self._slices)
            for k, gk in g.items():
                grads.update({f"head.{k}.{n}": v for n, v in gk.items()})
        dh, g = layers.additive_attention_backward(dc, cache["att"], p["att.wu"], p["att.wa"])
        grads.update({f"att.{n}": v for n, v in g.items()})
        dz, gf, gb = layers.bgru_backward(dh, cache["gru"], self._gru("f"), self._gru("b"))
        grads.update({f"gru.f.{n}": v for n, v in gf.items()})
        grads.update({f"gru.b.{n}": v for n, v in gb.items()})
        dz = dz.transpose(0, 2, 1)
        offset = 0
        for s, (mix_cache, blocks, width) in zip(cfg.streams, cache["streams"]):
            d = dz[:, offset : offset + width]
            offset += width
            for k in range(cfg.k_max, 0, -1):
                key = f"{s}.{k}"
                d, g = layers.conv_block_backward(d, blocks[k - 1], p[f"conv.{key}.w"], p[f"bn.{key}.gamma"])
                grads[f"conv.{key}.w"], grads[f"bn.{key}.gamma"], grads[f"bn.{key}.beta"] = g["w"], g["gamma"], g["beta"]
            _, g = layers.channel_mixing_backward(d, mix_cache, p[f"mix.{s}.w"])
            grads[f"mix.{s}.w"], grads[f"mix.{s}.b"] = g["w"], g["b"]
        return grads

    def predict(self, x: np.ndarray) -> NetworkOutput:
        out, _ = self.forward(self.split_inputs(x), training=False)
        return out

    # -- persistence -----------------------------------------------------------

    def save(self, path, seed: int | None = None, epoch: int | None = None, extra: dict | None = None) -> None:
        """Write a checkpoint: JSON manifest then float32 tensor blocks.

        Tensors follow the order listed in the manifest (parameters sorted by
        name, then running statistics).
        """
        tensors = [("param", n, self.params[n]) for n in sorted(self.params)]
        tensors += [("state", n, self.state[n]) for n in sorted(self.state)]
        header = {
            "config": self.config.to_json(),
            "seed": seed,
            "epoch": epoch,
            "extra": extra or {},
            "tensors": [{"kind": k, "name": n, "shape": list(v.shape)} for k, n, v in tensors],
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as f:
            f.write(_HEADER_LEN.pack(len(blob)))
            f.write(blob)
            for _, _, v in tensors:
                f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> tuple["SplitStreamNet", dict]:
        raw = Path(path).read_bytes()
        (hlen,) = _HEADER_LEN.unpack_from(raw, 0)
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
        pos = 4 + hlen
        params, state = {}, {}
        for t in header["tensors"]:
            n = int(np.prod(t["shape"]))
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(t["shape"])
            pos += 4 * n
            (params if t["kind"] == "param" else state)[t["name"]] = arr
        if pos != len(raw):
            raise ValueError(f"{path}: {len(raw) - pos} trailing bytes after tensor blocks")
        config = ModelConfig.from_json(header["config"])
        params = {k: v.astype(config.dtype) for k, v in params.items()}
        state = {k: v.astype(config.dtype) for k, v in state.items()}
        return cls(config, params, state), {k: header[k] for k in ("seed", "epoch", "extra")}


def model_init(config: ModelConfig, rng: np.random.Generator | int = 0) -> SplitStreamNet:
    """Glorot-uniform conv/affine weights, orthogonal GRU matrices.

    Biases are zero except the GRU update gates, whose biases spread the
    units' memory timescales over the reduced sequence length.
    """
    rng = np.random.default_rng(rng)
    cfg = config
    params, state = {}, {}
    for s, c in zip(cfg.streams, cfg.stream_widths):
        params[f"mix.{s}.w"] = _glorot(rng, (c, c), c, c)
        params[f"mix.{s}.b"] = np.zeros(c)
        f_in = c
        for k in range(1, cfg.k_max + 1):
            f_out = cfg.filters(k)
            key = f"{s}.{k}"
            params[f"conv.{key}.w"] = _glorot(rng, (f_out, f_in, 3), 3 * f_in, 3 * f_out)
            params[f"bn.{key}.gamma"] = np.ones(f_out)
            params[f"bn.{key}.beta"] = np.zeros(f_out)
            state[f"bn.{key}.mean"] = np.zeros(f_out)
            state[f"bn.{key}.var"] = np.ones(f_out)
            f_in = f_out
    n_in = len(cfg.streams) * cfg.filters(cfg.k_max)
    n_h = cfg.n_h
    for d in ("f", "b"):
        params[f"gru.{d}.wz"] = np.concatenate([_orthogonal(rng, n_h, n_in) for _ in range(3)])
        # update-gate bias log(tau - 1), tau ~ U(2, T'): a spread of memory timescales
        bz = np.zeros(3 * n_h)
        bz[:n_h] = np.log(rng.uniform(1.0, max(cfg.n_reduced - 1, 2), n_h))
        params[f"gru.{d}.bz"] = bz
        params[f"gru.{d}.wh"] = np.concatenate([_orthogonal(rng, n_h, n_h) for _ in range(3)])
        params[f"gru.{d}.bh"] = np.zeros(3 * n_h)
    k_all = cfg.n_classes
    params["att.wu"] = _glorot(rng, (2 * n_h, cfg.n_a), 2 * n_h, cfg.n_a)
    params["att.wa"] = _glorot(rng, (cfg.n_a, k_all), cfg.n_a, k_all)
    grid = cfg.grid()
    if cfg.head == "dense":
        d_in, n_d = 2 * n_h * k_all, grid.n_windows
        params["head.clf.w"] = _glorot(rng, (d_in, n_d * k_all), d_in, n_d * k_all)
        params["head.clf.b"] = np.zeros(n_d * k_all)
        params["head.loc.w"] = _glorot(rng, (d_in, n_d * 2), d_in, n_d * 2)
        params["head.loc.b"] = np.zeros(n_d * 2)
    else:
        for k in range(1, k_all):
            n_k = len(grid.windows_of(k))
            params[f"head.{k}.clf.w"] = _glorot(rng, (2 * n_h, n_k * k_all), 2 * n_h, n_k * k_all)
            params[f"head.{k}.clf.b"] = np.zeros(n_k * k_all)
            params[f"head.{k}.loc.w"] = _glorot(rng, (2 * n_h, n_k * 2), 2 * n_h, n_k * 2)
            params[f"head.{k}.loc.b"] = np.zeros(n_k * 2)
    params = {k: v.astype(cfg.dtype) for k, v in params.items()}
    state = {k: v.astype(cfg.dtype) for k, v in state.items()}
    return SplitStreamNet(cfg, params, state)
