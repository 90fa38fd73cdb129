"""Dense actor/critic and discriminator networks with manual backprop.

The architecture is static and small, so gradients are computed by explicit
reverse-mode passes over the fixed graph instead of a general autodiff tape:
per-component encoders, a fusion layer and two core layers (all tanh), with
scalar heads on top. The policy and the two value heads share one backbone;
the discriminator owns a second backbone of the same shape.

Parameters live in one flat float64 vector addressed through a ParamLayout,
so gradients are plain aligned vectors and optimizer state is trivial.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .constants import DS_CAP

OBS_DIM = 262
# route, corridor, neighbors, ego block widths of the observation vector
COMPONENT_SPLIT = (60, 80, 70, 52)
SIGMA_MIN = 1e-3
SIGMA_MAX = 1.0
LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_MAGIC = b"DRVLRN01"
EXPERT_STUB_MAGIC = b"DRVEXPRT"


@dataclass
class Architecture:
    """Layer widths; the component split must cover the observation vector."""

    encoder_width: int = 64
    fusion_width: int = 256
    core_widths: tuple[int, int] = (128, 128)
    split: tuple[int, ...] = COMPONENT_SPLIT

    def __post_init__(self):
        if sum(self.split) != OBS_DIM:
            raise ValueError("component split must sum to the observation dimension")

    def descriptor(self) -> str:
        return f"enc{self.encoder_width}-fus{self.fusion_width}-core{self.core_widths}-split{self.split}"


class ParamLayout:
    """Maps named parameter blocks into one flat vector."""

    def __init__(self):
        self._slots: dict[str, tuple[int, tuple[int, ...]]] = {}
        self.size = 0

    def register(self, name: str, shape: tuple[int, ...]) -> None:
        if name in self._slots:
            raise ValueError(f"duplicate parameter block {name!r}")
        self._slots[name] = (self.size, shape)
        self.size += int(np.prod(shape))

    def view(self, vec: np.ndarray, name: str) -> np.ndarray:
        off, shape = self._slots[name]
        return vec[off : off + int(np.prod(shape))].reshape(shape)

    def slice_of(self, name: str) -> slice:
        off, shape = self._slots[name]
        return slice(off, off + int(np.prod(shape)))

    def names(self):
        return self._slots.keys()


@dataclass
class _Linear:
    w: str
    b: str
    n_in: int
    n_out: int
    tanh: bool


class _Backbone:
    """Component encoders -> fusion -> two core layers, all tanh."""

    def __init__(self, layout: ParamLayout, prefix: str, split, arch: Architecture):
        self.split = tuple(split)
        self.layers: list[_Linear] = []
        enc_w = arch.encoder_width
        for i, n_in in enumerate(self.split):
            self.layers.append(self._reg(layout, f"{prefix}.enc{i}", n_in, enc_w, True))
        concat = enc_w * len(self.split)
        self.layers.append(self._reg(layout, f"{prefix}.fusion", concat, arch.fusion_width, True))
        self.layers.append(self._reg(layout, f"{prefix}.core0", arch.fusion_width, arch.core_widths[0], True))
        self.layers.append(self._reg(layout, f"{prefix}.core1", arch.core_widths[0], arch.core_widths[1], True))
        self.out_dim = arch.core_widths[1]

    @staticmethod
    def _reg(layout, name, n_in, n_out, tanh):
        layout.register(name + ".w", (n_out, n_in))
        layout.register(name + ".b", (n_out,))
        return _Linear(name + ".w", name + ".b", n_in, n_out, tanh)

    def forward(self, layout, params, x, cache=None):
        offs = np.cumsum((0,) + self.split)
        outs = []
        n_enc = len(self.split)
        for i in range(n_enc):
            xi = x[:, offs[i] : offs[i + 1]]
            outs.append(self._fwd_layer(layout, params, self.layers[i], xi, cache))
        h = np.concatenate(outs, axis=1)
        if cache is not None:
            cache.append(h)  # concat input to fusion
        for layer in self.layers[n_enc:]:
            h = self._fwd_layer(layout, params, layer, h, cache)
        return h

    @staticmethod
    def _fwd_layer(layout, params, layer, x, cache):
        z = x @ layout.view(params, layer.w).T + layout.view(params, layer.b)
        a = np.tanh(z) if layer.tanh else z
        if cache is not None:
            cache.append((x, a))
        return a

    def backward(self, layout, params, grad, cache, d_out):
        n_enc = len(self.split)
        # deep layers, reverse order
        for layer in reversed(self.layers[n_enc:]):
            x, a = cache.pop()
            d_out = self._bwd_layer(layout, params, grad, layer, x, a, d_out)
        concat = cache.pop()
        assert concat.shape[1] == d_out.shape[1]
        enc_w = self.layers[0].n_out
        for i in reversed(range(n_enc)):
            x, a = cache.pop()
            d_slice = d_out[:, i * enc_w : (i + 1) * enc_w]
            self._bwd_layer(layout, params, grad, self.layers[i], x, a, d_slice)

    @staticmethod
    def _bwd_layer(layout, params, grad, layer, x, a, d_a):
        dz = d_a * (1.0 - a * a) if layer.tanh else d_a
        layout.view(grad, layer.w)[...] += dz.T @ x
        layout.view(grad, layer.b)[...] += dz.sum(axis=0)
        return dz @ layout.view(params, layer.w)


class DriveNets:
    """Policy + dual value heads on a shared backbone, plus a discriminator.

    Forward passes are pure; pass ``want_cache=True`` to record the
    intermediates needed by the matching backward call. Backward methods
    accumulate into a caller-supplied gradient vector (or a fresh one).
    """

    def __init__(self, arch: Architecture | None = None):
        self.arch = arch or Architecture()
        self.layout = ParamLayout()
        self.backbone = _Backbone(self.layout, "pi", self.arch.split, self.arch)
        h = self.backbone.out_dim
        self.layout.register("head.mu.w", (h,))
        self.layout.register("head.mu.b", (1,))
        self.layout.register("head.vS.w", (h,))
        self.layout.register("head.vS.b", (1,))
        self.layout.register("head.vD.w", (h,))
        self.layout.register("head.vD.b", (1,))
        self.layout.register("log_std", (1,))
        disc_split = self.arch.split[:-1] + (self.arch.split[-1] + 1,)
        self.disc_backbone = _Backbone(self.layout, "disc", disc_split, self.arch)
        self.layout.register("head.disc.w", (h,))
        self.layout.register("head.disc.b", (1,))
        self.n_params = self.layout.size

    # -- initialization ---------------------------------------------------
    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        params = np.zeros(self.n_params)
        for name in self.layout.names():
            if name.endswith(".w"):
                v = self.layout.view(params, name)
                n_in = v.shape[-1]
                v[...] = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=v.shape)
        for head in ("mu", "vS", "vD", "disc"):
            self.layout.view(params, f"head.{head}.w")[...] *= 0.1
        self.layout.view(params, "log_std")[...] = math.log(0.5)
        return params

    def param_slices(self, prefix: str) -> list[slice]:
        return [self.layout.slice_of(n) for n in self.layout.names() if n.startswith(prefix)]

    def backbone_mask(self) -> np.ndarray:
        """Boolean mask of the shared policy-backbone block."""
        mask = np.zeros(self.n_params, dtype=bool)
        for sl in self.param_slices("pi."):
            mask[sl] = True
        return mask

    # -- forward ----------------------------------------------------------
    @staticmethod
    def _as_batch(obs):
        obs = np.asarray(obs, dtype=float)
        return (obs[None, :], True) if obs.ndim == 1 else (obs, False)

    def sigma(self, params) -> float:
        raw = math.exp(float(self.layout.view(params, "log_std")[0]))
        return min(max(raw, SIGMA_MIN), SIGMA_MAX)

    def policy_forward(self, params, obs, want_cache=False):
        x, single = self._as_batch(obs)
        if x.shape[1] != OBS_DIM:
            raise ValueError(f"expected observation dim {OBS_DIM}, got {x.shape[1]}")
        cache = [] if want_cache else None
        h = self.backbone.forward(self.layout, params, x, cache)
        w = self.layout.view(params, "head.mu.w")
        b = self.layout.view(params, "head.mu.b")[0]
        u = h @ w + b
        sig_u = 1.0 / (1.0 + np.exp(-u))
        mu = DS_CAP * sig_u
        sigma = self.sigma(params)
        if want_cache:
            rec = {"h": h, "sig_u": sig_u, "backbone": cache, "kind": "policy"}
            return (float(mu[0]) if single else mu, sigma), rec
        return (float(mu[0]) if single else mu, sigma)

    def value_forward(self, params, obs, head: str = "S", want_cache=False):
        if head not in ("S", "D"):
            raise ValueError("value head must be 'S' or 'D'")
        x, single = self._as_batch(obs)
        if x.shape[1] != OBS_DIM:
            raise ValueError(f"expected observation dim {OBS_DIM}, got {x.shape[1]}")
        cache = [] if want_cache else None
        h = self.backbone.forward(self.layout, params, x, cache)
        w = self.layout.view(params, f"head.v{head}.w")
        b = self.layout.view(params, f"head.v{head}.b")[0]
        v = h @ w + b
        if want_cache:
            rec = {"h": h, "head": head, "kind": "value"}
            return (float(v[0]) if single else v), rec
        return float(v[0]) if single else v

    def disc_forward(self, params, obs, action, want_cache=False):
        x, single = self._as_batch(obs)
        act = np.atleast_1d(np.asarray(action, dtype=float))
        if x.shape[1] != OBS_DIM:
            raise ValueError(f"expected observation dim {OBS_DIM}, got {x.shape[1]}")
        if act.shape[0] != x.shape[0]:
            raise ValueError("observation/action batch mismatch")
        xa = np.concatenate([x, act[:, None]], axis=1)
        cache = [] if want_cache else None
        h = self.disc_backbone.forward(self.layout, params, xa, cache)
        w = self.layout.view(params, "head.disc.w")
        b = self.layout.view(params, "head.disc.b")[0]
        logit = h @ w + b
        if want_cache:
            rec = {"h": h, "backbone": cache, "kind": "disc"}
            return (float(logit[0]) if single else logit), rec
        return float(logit[0]) if single else logit

    # -- backward ---------------------------------------------------------
    def _require(self, rec, kind):
        if rec is None:
            raise ValueError("backward called before a recorded forward pass")
        if rec["kind"] != kind:
            raise ValueError(f"recorded forward is {rec['kind']!r}, expected {kind!r}")

    def policy_backward(self, params, rec, d_mu, d_log_std: float = 0.0, out=None):
        """Gradient of sum(d_mu * mu) + d_log_std * log_std."""
        self._require(rec, "policy")
        grad = np.zeros(self.n_params) if out is None else out
        d_mu = np.atleast_1d(np.asarray(d_mu, dtype=float))
        sig_u = rec["sig_u"]
        d_u = d_mu * DS_CAP * sig_u * (1.0 - sig_u)
        w = self.layout.view(params, "head.mu.w")
        self.layout.view(grad, "head.mu.w")[...] += d_u @ rec["h"]
        self.layout.view(grad, "head.mu.b")[...] += d_u.sum()
        d_h = d_u[:, None] * w[None, :]
        self.backbone.backward(self.layout, params, grad, list(rec["backbone"]), d_h)
        if d_log_std != 0.0:
            raw = math.exp(float(self.layout.view(params, "log_std")[0]))
            if SIGMA_MIN < raw < SIGMA_MAX:
                self.layout.view(grad, "log_std")[...] += d_log_std
        return grad

    def d_sigma_d_log_std(self, params) -> float:
        """d sigma / d log_std, zero where the clamp is active."""
        raw = math.exp(float(self.layout.view(params, "log_std")[0]))
        return raw if SIGMA_MIN < raw < SIGMA_MAX else 0.0

    def value_backward(self, params, rec, d_v, out=None):
        """Gradient of sum(d_v * V). The shared backbone is stop-gradiented:
        value losses touch only the head block."""
        self._require(rec, "value")
        grad = np.zeros(self.n_params) if out is None else out
        d_v = np.atleast_1d(np.asarray(d_v, dtype=float))
        head = rec["head"]
        self.layout.view(grad, f"head.v{head}.w")[...] += d_v @ rec["h"]
        self.layout.view(grad, f"head.v{head}.b")[...] += d_v.sum()
        return grad

    def disc_backward(self, params, rec, d_logit, out=None):
        self._require(rec, "disc")
        grad = np.zeros(self.n_params) if out is None else out
        d_logit = np.atleast_1d(np.asarray(d_logit, dtype=float))
        w = self.layout.view(params, "head.disc.w")
        self.layout.view(grad, "head.disc.w")[...] += d_logit @ rec["h"]
        self.layout.view(grad, "head.disc.b")[...] += d_logit.sum()
        d_h = d_logit[:, None] * w[None, :]
        self.disc_backbone.backward(self.layout, params, grad, list(rec["backbone"]), d_h)
        return grad


# -- action distribution ---------------------------------------------------
def sample_and_logprob(mu: float, sigma: float, rng: np.random.Generator) -> tuple[float, float]:
    """Draw ds ~ Normal(mu, sigma); the log-density is at the raw sample.

    Clamping into [0, DS_CAP] happens at execution time in the simulator, so
    the returned value may lie outside that interval.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    ds = float(rng.normal(mu, sigma))
    return ds, gaussian_logp(mu, sigma, ds)


def gaussian_logp(mu, sigma, x):
    z = (np.asarray(x, dtype=float) - mu) / sigma
    out = -0.5 * z * z - math.log(sigma) - 0.5 * LOG_2PI
    return float(out) if np.ndim(out) == 0 else out


def gaussian_entropy(sigma: float) -> float:
    return 0.5 * (1.0 + LOG_2PI) + math.log(sigma)


# -- optimizer --------------------------------------------------------------
@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)


def apply_update(params: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One Adam descent step; returns the updated parameter vector."""
    if grad.shape != params.shape:
        raise ValueError("gradient/parameter length mismatch")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -- checkpoints -------------------------------------------------------------
def _layout_hash(nets: DriveNets) -> bytes:
    tag = f"{nets.arch.descriptor()}|{nets.n_params}".encode()
    return hashlib.sha256(tag).digest()[:16]


def save_checkpoint(path, nets: DriveNets, params: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_layout_hash(nets))
        fh.write(struct.pack("<q", params.size))
        fh.write(params.astype("<f8").tobytes())


def load_checkpoint(path, nets: DriveNets) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if fh.read(16) != _layout_hash(nets):
            raise ValueError(f"{path}: checkpoint was written for a different architecture")
        (count,) = struct.unpack("<q", fh.read(8))
        if count != nets.n_params:
            raise ValueError(f"{path}: parameter count mismatch")
        data = np.frombuffer(fh.read(count * 8), dtype="<f8")
        if data.size != count:
            raise ValueError(f"{path}: truncated checkpoint")
    return data.astype(float)


def write_expert_stub(path) -> None:
    """Marker checkpoint meaning 'replay the recorded expert actions'."""
    with open(path, "wb") as fh:
        fh.write(EXPERT_STUB_MAGIC)


def is_expert_stub(path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(8) == EXPERT_STUB_MAGIC
    except OSError:
        return False
