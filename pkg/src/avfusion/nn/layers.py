"""Layer zoo: dense, relu, tanh, layer norm, dropout, LSTM, BLSTM, log-softmax.

Inputs are (B, T, D) float64 arrays with an optional (B, T) mask of 0/1.
Recurrent layers gate their state updates with the mask, so right-padded
frames never leak into valid ones (in either BLSTM direction). Forward
caches whatever backward needs; backward returns the input gradient and
fills each layer's ``grads`` dict.
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..core import read_matrix, write_matrix


def glorot(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot-style init scaled by fan-in + fan-out."""
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-softplus(-x)) is stable on both tails and branch-free
    return np.exp(-np.logaddexp(0.0, -x))


class Layer:
    """Base class; stateless layers leave params/grads empty."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, mask=None, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called "
                               "without a stored forward pass")


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params = {"w": glorot((in_dim, out_dim), rng),
                       "b": np.zeros(out_dim)}

    def forward(self, x, mask=None, train=False):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"dense expects {self.in_dim} features, "
                             f"got {x.shape[-1]}")
        self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        self._need_cache()
        x = self._cache
        flat_x = x.reshape(-1, self.in_dim)
        flat_d = dout.reshape(-1, self.out_dim)
        self.grads = {"w": flat_x.T @ flat_d, "b": flat_d.sum(axis=0)}
        return dout @ self.params["w"].T

    def spec(self):
        return {"kind": "dense", "in": self.in_dim, "out": self.out_dim}


class ReLU(Layer):
    def forward(self, x, mask=None, train=False):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dout):
        self._need_cache()
        return np.where(self._cache, dout, 0.0)

    def spec(self):
        return {"kind": "relu"}


class Tanh(Layer):
    def forward(self, x, mask=None, train=False):
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, dout):
        self._need_cache()
        return dout * (1.0 - self._cache ** 2)

    def spec(self):
        return {"kind": "tanh"}


class LayerNorm(Layer):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.params = {"gamma": np.ones(dim), "beta": np.zeros(dim)}

    def forward(self, x, mask=None, train=False):
        mu = x.mean(axis=-1, keepdims=True)
        std = np.sqrt(x.var(axis=-1, keepdims=True) + self.eps)
        xhat = (x - mu) / std
        self._cache = (xhat, std)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        self._need_cache()
        xhat, std = self._cache
        lead = tuple(range(dout.ndim - 1))
        self.grads = {"gamma": (dout * xhat).sum(axis=lead),
                      "beta": dout.sum(axis=lead)}
        dxhat = dout * self.params["gamma"]
        return (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)) / std

    def spec(self):
        return {"kind": "layer_norm", "dim": self.dim}


class Dropout(Layer):
    """Inverted dropout: scales kept units at train time, identity at eval."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x, mask=None, train=False):
        if not train or self.p == 0.0:
            self._cache = None
            return x
        keep = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        self._cache = keep
        return x * keep

    def backward(self, dout):
        return dout if self._cache is None else dout * self._cache

    def spec(self):
        return {"kind": "dropout", "p": self.p}


class LogSoftmax(Layer):
    def forward(self, x, mask=None, train=False):
        shifted = x - x.max(axis=-1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        out = shifted - logz
        self._cache = np.exp(out)
        return out

    def backward(self, dout):
        self._need_cache()
        return dout - self._cache * dout.sum(axis=-1, keepdims=True)

    def spec(self):
        return {"kind": "log_softmax"}


def _lstm_forward(x, mask, wx, wh, b):
    # gate column layout: [input, forget, output | candidate], so the three
    # sigmoid gates activate in a single call
    bsz, t_len, _ = x.shape
    hid = wh.shape[0]
    h3 = 3 * hid
    xproj = x @ wx + b
    h = np.zeros((bsz, hid))
    c = np.zeros((bsz, hid))
    hs = np.empty((bsz, t_len, hid))
    cs = np.empty((bsz, t_len, hid))
    tcs = np.empty((bsz, t_len, hid))
    gates = np.empty((bsz, t_len, 4 * hid))
    for t in range(t_len):
        pre = xproj[:, t] + h @ wh
        sig = _sigmoid(pre[:, :h3])
        i = sig[:, :hid]
        f = sig[:, hid:2 * hid]
        o = sig[:, 2 * hid:]
        g = np.tanh(pre[:, h3:])
        c_cand = f * c + i * g
        tc = np.tanh(c_cand)
        m = mask[:, t][:, None]
        c = m * c_cand + (1.0 - m) * c
        h = m * (o * tc) + (1.0 - m) * h
        hs[:, t] = h
        cs[:, t] = c
        tcs[:, t] = tc
        gates[:, t, :h3] = sig
        gates[:, t, h3:] = g
    return hs, (x, mask, hs, cs, tcs, gates)


def _lstm_backward(dh_seq, cache, wx, wh):
    x, mask, hs, cs, tcs, gates = cache
    bsz, t_len, hid = hs.shape
    h3 = 3 * hid
    dpre_all = np.zeros((bsz, t_len, 4 * hid))
    dh_next = np.zeros((bsz, hid))
    dc_next = np.zeros((bsz, hid))
    dsig = np.empty((bsz, h3))
    for t in range(t_len - 1, -1, -1):
        sig = gates[:, t, :h3]
        i = sig[:, :hid]
        f = sig[:, hid:2 * hid]
        o = sig[:, 2 * hid:]
        g = gates[:, t, h3:]
        c_prev = cs[:, t - 1] if t > 0 else 0.0
        m = mask[:, t][:, None]
        dh = dh_seq[:, t] + dh_next
        dh_cand = m * dh
        dh_next = (1.0 - m) * dh
        tc = tcs[:, t]
        dc_cand = m * dc_next + dh_cand * o * (1.0 - tc * tc)
        dc_next = (1.0 - m) * dc_next + dc_cand * f
        dsig[:, :hid] = dc_cand * g
        dsig[:, hid:2 * hid] = dc_cand * c_prev
        dsig[:, 2 * hid:] = dh_cand * tc
        dpre = dpre_all[:, t]
        dpre[:, :h3] = dsig * sig * (1.0 - sig)
        dpre[:, h3:] = dc_cand * i * (1.0 - g * g)
        dh_next = dh_next + dpre @ wh.T
    h_prev_all = np.concatenate(
        [np.zeros((bsz, 1, hid)), hs[:, :-1]], axis=1)
    flat_d = dpre_all.reshape(-1, 4 * hid)
    dwx = x.reshape(-1, x.shape[-1]).T @ flat_d
    dwh = h_prev_all.reshape(-1, hid).T @ flat_d
    db = flat_d.sum(axis=0)
    dx = dpre_all @ wx.T
    return dx, dwx, dwh, db


class LSTM(Layer):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.hidden = in_dim, hidden
        self.params = {"wx": glorot((in_dim, 4 * hidden), rng),
                       "wh": glorot((hidden, 4 * hidden), rng),
                       "b": np.zeros(4 * hidden)}

    def forward(self, x, mask=None, train=False):
        if mask is None:
            mask = np.ones(x.shape[:2])
        hs, cache = _lstm_forward(x, mask, self.params["wx"],
                                  self.params["wh"], self.params["b"])
        self._cache = cache
        return hs

    def backward(self, dout):
        self._need_cache()
        dx, dwx, dwh, db = _lstm_backward(dout, self._cache,
                                          self.params["wx"], self.params["wh"])
        self.grads = {"wx": dwx, "wh": dwh, "b": db}
        return dx

    def spec(self):
        return {"kind": "lstm", "in": self.in_dim, "hidden": self.hidden}


class BLSTM(Layer):
    """Bidirectional LSTM; output concatenates forward and backward states,
    so the feature width doubles."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.hidden = in_dim, hidden
        self.params = {}
        for tag in ("fwd", "bwd"):
            self.params[f"wx_{tag}"] = glorot((in_dim, 4 * hidden), rng)
            self.params[f"wh_{tag}"] = glorot((hidden, 4 * hidden), rng)
            self.params[f"b_{tag}"] = np.zeros(4 * hidden)

    def forward(self, x, mask=None, train=False):
        if mask is None:
            mask = np.ones(x.shape[:2])
        hs_f, cache_f = _lstm_forward(
            x, mask, self.params["wx_fwd"], self.params["wh_fwd"],
            self.params["b_fwd"])
        hs_b, cache_b = _lstm_forward(
            x[:, ::-1], mask[:, ::-1], self.params["wx_bwd"],
            self.params["wh_bwd"], self.params["b_bwd"])
        self._cache = (cache_f, cache_b)
        return np.concatenate([hs_f, hs_b[:, ::-1]], axis=-1)

    def backward(self, dout):
        self._need_cache()
        cache_f, cache_b = self._cache
        dh_f = dout[:, :, :self.hidden]
        dh_b = dout[:, ::-1, self.hidden:]
        dx_f, dwx_f, dwh_f, db_f = _lstm_backward(
            dh_f, cache_f, self.params["wx_fwd"], self.params["wh_fwd"])
        dx_b, dwx_b, dwh_b, db_b = _lstm_backward(
            dh_b, cache_b, self.params["wx_bwd"], self.params["wh_bwd"])
        self.grads = {"wx_fwd": dwx_f, "wh_fwd": dwh_f, "b_fwd": db_f,
                      "wx_bwd": dwx_b, "wh_bwd": dwh_b, "b_bwd": db_b}
        return dx_f + dx_b[:, ::-1]

    def spec(self):
        return {"kind": "blstm", "in": self.in_dim, "hidden": self.hidden}


class Network:
    """A plain layer stack sharing one mask across the whole forward pass."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, mask=None, train=False):
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, mask=mask, train=train)
        return out

    def backward(self, dout):
        grad = dout
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        """Yield (layer_index, name, array) triples in a stable order."""
        for idx, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                yield idx, name, layer.params[name]

    def get_state(self) -> dict:
        return {(i, n): p.copy() for i, n, p in self.parameters()}

    def set_state(self, state: dict):
        for i, name, _ in list(self.parameters()):
            self.layers[i].params[name] = state[(i, name)].copy()

    def specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]


def build_network(specs: list[dict], rng: np.random.Generator | int = 0) -> Network:
    """Instantiate a network from layer spec dicts; seeds params and dropout."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    layers: list[Layer] = []
    for spec in specs:
        kind = spec["kind"]
        if kind == "dense":
            layers.append(Dense(spec["in"], spec["out"], rng))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "tanh":
            layers.append(Tanh())
        elif kind == "layer_norm":
            layers.append(LayerNorm(spec["dim"]))
        elif kind == "dropout":
            sub = np.random.default_rng(int(rng.integers(2 ** 62)))
            layers.append(Dropout(spec["p"], sub))
        elif kind == "lstm":
            layers.append(LSTM(spec["in"], spec["hidden"], rng))
        elif kind == "blstm":
            layers.append(BLSTM(spec["in"], spec["hidden"], rng))
        elif kind == "log_softmax":
            layers.append(LogSoftmax())
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return Network(layers)


def save_checkpoint(net: Network, path: str) -> None:
    """Write a checkpoint directory: topology.json + one matrix per param."""
    os.makedirs(path, exist_ok=True)
    topo = {"layers": net.specs(), "params": []}
    for idx, name, value in net.parameters():
        fname = f"p{idx:03d}_{name}.avpf"
        arr = value if value.ndim == 2 else value[None, :]
        write_matrix(os.path.join(path, fname), arr)
        topo["params"].append({"layer": idx, "name": name,
                               "shape": list(value.shape), "file": fname})
    with open(os.path.join(path, "topology.json"), "w") as fh:
        json.dump(topo, fh, indent=2, sort_keys=True)


def load_checkpoint(path: str) -> Network:
    with open(os.path.join(path, "topology.json")) as fh:
        topo = json.load(fh)
    net = build_network(topo["layers"], rng=0)
    for entry in topo["params"]:
        value = read_matrix(os.path.join(path, entry["file"]))
        net.layers[entry["layer"]].params[entry["name"]] = \
            value.reshape(entry["shape"])
    return net
