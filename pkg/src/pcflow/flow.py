"""Affine coupling flow with an optional PCA head.

The generative direction is: base Gaussian sample -> coupling layers ->
de-standardize -> PCA embedding (if present). Densities are evaluated in
the opposite direction; the PCA step is an isometry and contributes exactly
zero to the log-density.
"""

from __future__ import annotations

import math
import struct
import warnings

import numpy as np

from . import pca as pca_mod
from .conditioner import DenseNet
from .dataio import ScenarioSet
from .errors import ModelFormatError, ModelVersionError, NumericError, UsageError
from .pca import PcaMap

LOG_2PI = math.log(2.0 * math.pi)

# bound on the scale conditioner output; keeps exp() sane early in training
DEFAULT_S_CAP = 5.0

# floor for standardizer scales; exactly constant dimensions get scale 1
STD_FLOOR = 1e-12


class Standardizer:
    """Fixed per-dimension affine map with a constant log-det."""

    def __init__(self, shift, scale):
        self.shift = np.asarray(shift, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        if self.shift.shape != self.scale.shape or self.shift.ndim != 1:
            raise UsageError("shift and scale must be 1-D and equally long")
        if np.any(self.scale <= 0):
            raise UsageError("standardizer scales must be positive")

    @classmethod
    def from_data(cls, data):
        data = np.asarray(data, dtype=float)
        std = data.std(axis=0)
        scale = np.where(std > STD_FLOOR, std, 1.0)
        return cls(data.mean(axis=0), scale)

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def log_det(self):
        # log-det of the standardizing (inverse-generative) direction
        return -float(np.sum(np.log(self.scale)))

    def standardize(self, x):
        return (x - self.shift) / self.scale

    def destandardize(self, z):
        return z * self.scale + self.shift


class CouplingLayer:
    """RealNVP affine coupling layer.

    One block of coordinates passes through unchanged and conditions an
    element-wise affine map of the other block. ``swap`` selects which block
    is the identity one; the scale output is squashed to (-s_cap, s_cap).
    """

    def __init__(self, dim, s_net: DenseNet, t_net: DenseNet, swap=False, s_cap=DEFAULT_S_CAP):
        id_dim = dim - dim // 2  # identity block keeps the extra dim when odd
        tr_dim = dim - id_dim
        if s_net.input_dim != id_dim or s_net.output_dim != tr_dim:
            raise UsageError(f"s_net must map {id_dim} -> {tr_dim}")
        if t_net.input_dim != id_dim or t_net.output_dim != tr_dim:
            raise UsageError(f"t_net must map {id_dim} -> {tr_dim}")
        self.dim = dim
        self.id_dim = id_dim
        self.swap = bool(swap)
        self.s_net = s_net
        self.t_net = t_net
        self.s_cap = float(s_cap)

    def _split(self, v):
        # identity block first half normally, second half when swapped
        if self.swap:
            return v[..., self.dim - self.id_dim:], v[..., : self.dim - self.id_dim]
        return v[..., : self.id_dim], v[..., self.id_dim:]

    def _join(self, ident, transformed):
        if self.swap:
            return np.concatenate([transformed, ident], axis=-1)
        return np.concatenate([ident, transformed], axis=-1)

    def _scale(self, ident):
        raw, tape = self.s_net.forward(ident)
        s = self.s_cap * np.tanh(raw / self.s_cap)
        return s, tape

    def forward(self, z):
        """z -> x; returns (x, logdet) with logdet = sum of scale outputs."""
        z = np.asarray(z, dtype=float)
        ident, rest = self._split(z)
        s, _ = self._scale(ident)
        t, _ = self.t_net.forward(ident)
        x_rest = np.exp(s) * rest + t
        if not np.all(np.isfinite(x_rest)):
            raise NumericError("non-finite coupling output")
        return self._join(ident, x_rest), s.sum(axis=-1)

    def inverse(self, x):
        """x -> z; returns (z, logdet_inv) with logdet_inv = -sum(s)."""
        z, logdet_inv, _ = self.inverse_with_tape(x)
        return z, logdet_inv

    def inverse_with_tape(self, x):
        x = np.asarray(x, dtype=float)
        ident, rest = self._split(x)
        s, s_tape = self._scale(ident)
        t, t_tape = self.t_net.forward(ident)
        exp_neg_s = np.exp(-s)
        z_rest = (rest - t) * exp_neg_s
        if not np.all(np.isfinite(z_rest)):
            raise NumericError("non-finite coupling inverse")
        cache = (s, s_tape, t_tape, exp_neg_s, z_rest)
        return self._join(ident, z_rest), -s.sum(axis=-1), cache

    def backward_inverse(self, cache, g_out, s_cotangent_extra=0.0):
        """Backward pass through ``inverse_with_tape``.

        ``g_out`` is the cotangent on the inverse output; a constant extra
        cotangent on each scale output (from the log-det term of the loss)
        can be folded in via ``s_cotangent_extra``. Returns
        (s_grads, t_grads, g_in).
        """
        s, s_tape, t_tape, exp_neg_s, z_rest = cache
        g_ident, g_rest_out = self._split(np.asarray(g_out, dtype=float))
        cot_s = -g_rest_out * z_rest + s_cotangent_extra
        cot_raw = cot_s * (1.0 - (s / self.s_cap) ** 2)  # through the tanh cap
        cot_t = -g_rest_out * exp_neg_s
        s_grads, g_ident_s = self.s_net.backward(s_tape, cot_raw)
        t_grads, g_ident_t = self.t_net.backward(t_tape, cot_t)
        g_in = self._join(g_ident + g_ident_s + g_ident_t, g_rest_out * exp_neg_s)
        return s_grads, t_grads, g_in

    def parameters(self):
        return self.s_net.parameters() + self.t_net.parameters()


class FlowModel:
    """Coupling-layer stack with standardizer and optional PCA embedding."""

    def __init__(self, layers, standardizer: Standardizer, pca: PcaMap | None = None,
                 interval_minutes=15, scaling="none", scale_min=None, scale_max=None):
        self.layers = list(layers)
        self.standardizer = standardizer
        self.pca = pca
        self.dim = len(standardizer.shift)
        self.interval_minutes = int(interval_minutes)
        self.scaling = scaling
        self.scale_min = scale_min
        self.scale_max = scale_max
        if pca is not None and pca.n_components != self.dim:
            raise UsageError("flow dimension must equal the PCA component count")
        for i, layer in enumerate(self.layers):
            if layer.dim != self.dim:
                raise UsageError("all coupling layers must act in the flow dimension")
            if i > 0 and layer.swap == self.layers[i - 1].swap:
                raise UsageError("coupling layer parities must alternate")

    @property
    def ambient_dim(self):
        return self.pca.dim if self.pca is not None else self.dim

    def parameters(self):
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def set_parameters(self, params):
        pos = 0
        for layer in self.layers:
            for net in (layer.s_net, layer.t_net):
                count = 2 * len(net.weights)
                net.set_parameters(params[pos: pos + count])
                pos += count
        if pos != len(params):
            raise UsageError("parameter count mismatch")

    # density ---------------------------------------------------------------

    def _to_latent(self, x):
        if self.pca is not None:
            return pca_mod.project(self.pca, x)
        if x.shape[-1] != self.dim:
            raise UsageError(f"expected dimension {self.dim}, got {x.shape[-1]}")
        return x

    def log_prob(self, x):
        """Exact log-density at x; x is (D,) or (n, D)."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite input to log_prob")
        squeeze = x.ndim == 1
        xb = x[None, :] if squeeze else x
        u = self.standardizer.standardize(self._to_latent(xb))
        total = np.full(u.shape[0], self.standardizer.log_det)
        for layer in reversed(self.layers):
            u, logdet_inv = layer.inverse(u)
            total = total + logdet_inv
        total = total - 0.5 * np.sum(u * u, axis=-1) - 0.5 * self.dim * LOG_2PI
        if not np.all(np.isfinite(total)):
            raise NumericError("non-finite log-density")
        return float(total[0]) if squeeze else total

    def nll_and_grads(self, batch):
        """Mean NLL over the batch and its exact parameter gradients."""
        x = np.asarray(batch, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[0] == 0:
            raise UsageError("empty batch")
        n = x.shape[0]
        u = self.standardizer.standardize(self._to_latent(x))
        caches = []
        total = np.full(n, self.standardizer.log_det)
        for layer in reversed(self.layers):
            u, logdet_inv, cache = layer.inverse_with_tape(u)
            caches.append(cache)
            total = total + logdet_inv
        log_prob = total - 0.5 * np.sum(u * u, axis=-1) - 0.5 * self.dim * LOG_2PI
        nll = -float(log_prob.mean())
        if not math.isfinite(nll):
            bad = int(np.argmax(~np.isfinite(log_prob)))
            raise NumericError(f"non-finite NLL (row {bad})")

        grads = [np.zeros_like(p) for p in self.parameters()]
        g = u / n  # d nll / d z from the Gaussian term
        # walk back through the inverse evaluations, most recent first
        offsets = []
        pos = 0
        for layer in self.layers:
            offsets.append(pos)
            pos += len(layer.parameters())
        for idx, layer in enumerate(self.layers):
            cache = caches[len(self.layers) - 1 - idx]
            s_grads, t_grads, g = layer.backward_inverse(cache, g, s_cotangent_extra=1.0 / n)
            off = offsets[idx]
            for j, grad in enumerate(s_grads + t_grads):
                grads[off + j] += grad
        return nll, grads

    # sampling --------------------------------------------------------------

    def sample_array(self, n, seed):
        """n ambient-space samples as an (n, D) array."""
        if n < 1:
            raise UsageError("n must be >= 1")
        rng = np.random.default_rng(seed)
        u = rng.standard_normal((n, self.dim))
        for layer in self.layers:
            u, _ = layer.forward(u)
        x = self.standardizer.destandardize(u)
        if self.pca is not None:
            x = pca_mod.embed(self.pca, x)
        return x

    def sample(self, n, seed) -> ScenarioSet:
        data = self.sample_array(n, seed)
        return ScenarioSet(
            data=data,
            period_length=data.shape[1],
            interval_minutes=self.interval_minutes,
            scaling="none",
            scale_min=None,
            scale_max=None,
        )


def build_flow(dim, n_layers=5, hidden_dims=None, seed=0, standardizer=None,
               pca: PcaMap | None = None, s_cap=DEFAULT_S_CAP, **model_kwargs) -> FlowModel:
    """Construct an untrained flow with alternating coupling parities.

    A one-dimensional flow cannot hold coupling layers; it degrades to the
    standardizer-only Gaussian with a warning.
    """
    if dim < 1:
        raise UsageError("flow dimension must be >= 1")
    if n_layers < 1:
        raise UsageError("need at least one coupling layer")
    if standardizer is None:
        standardizer = Standardizer.identity(dim)
    if hidden_dims is None:
        hidden_dims = (dim, dim)

    layers = []
    if dim == 1:
        warnings.warn(
            "flow dimension 1: coupling layers cannot act; "
            "falling back to a standardizer-only Gaussian model",
            stacklevel=2,
        )
    else:
        rng = np.random.default_rng(seed)
        id_dim = dim - dim // 2
        tr_dim = dim - id_dim
        for k in range(n_layers):
            s_net = DenseNet.create(id_dim, tr_dim, hidden_dims, rng)
            t_net = DenseNet.create(id_dim, tr_dim, hidden_dims, rng)
            layers.append(CouplingLayer(dim, s_net, t_net, swap=bool(k % 2), s_cap=s_cap))
    return FlowModel(layers, standardizer, pca=pca, **model_kwargs)


# model file format ----------------------------------------------------------
#
# Little-endian throughout, all floats are 8-byte IEEE doubles.
# Layout documented in docs/model_format.md.

MAGIC = b"PCFMODEL"
FORMAT_MAJOR = 1
FORMAT_MINOR = 0

_SCALING_CODE = {"none": 0, "capacity_factor": 1, "minmax": 2}
_SCALING_NAME = {v: k for k, v in _SCALING_CODE.items()}


def _write_array(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(fh, fmt):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise ModelFormatError("truncated model file")
    return struct.unpack(fmt, buf)


def _read_array(fh, shape):
    count = int(np.prod(shape))
    buf = fh.read(8 * count)
    if len(buf) != 8 * count:
        raise ModelFormatError("truncated model file")
    return np.frombuffer(buf, dtype="<f8").astype(float).reshape(shape)


def _write_net(fh, net: DenseNet):
    fh.write(struct.pack("<I", len(net.weights)))
    for w, b in zip(net.weights, net.biases):
        fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        _write_array(fh, w)
        _write_array(fh, b)


def _read_net(fh) -> DenseNet:
    (depth,) = _read(fh, "<I")
    weights, biases = [], []
    for _ in range(depth):
        rows, cols = _read(fh, "<II")
        weights.append(_read_array(fh, (rows, cols)))
        biases.append(_read_array(fh, (cols,)))
    return DenseNet(weights, biases)


def save_model(model: FlowModel, path):
    """Serialize the model; round-trips are bit-exact on parameters."""
    nan = float("nan")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HH", FORMAT_MAJOR, FORMAT_MINOR))
        flags = 1 if model.pca is not None else 0
        fh.write(struct.pack("<I", flags))
        fh.write(struct.pack("<I", model.interval_minutes))
        fh.write(struct.pack("<B", _SCALING_CODE[model.scaling]))
        fh.write(struct.pack("<dd",
                             nan if model.scale_min is None else model.scale_min,
                             nan if model.scale_max is None else model.scale_max))
        if model.pca is not None:
            p = model.pca
            fh.write(struct.pack("<II", p.dim, p.n_components))
            _write_array(fh, p.mean)
            _write_array(fh, p.singular_values)
            _write_array(fh, p.components)
            fh.write(struct.pack("<d", p.cev))
        fh.write(struct.pack("<I", model.dim))
        _write_array(fh, model.standardizer.shift)
        _write_array(fh, model.standardizer.scale)
        fh.write(struct.pack("<I", len(model.layers)))
        for layer in model.layers:
            fh.write(struct.pack("<Bd", int(layer.swap), layer.s_cap))
            _write_net(fh, layer.s_net)
            _write_net(fh, layer.t_net)


def load_model(path) -> FlowModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ModelFormatError(f"{path}: not a pcflow model file")
        major, _minor = _read(fh, "<HH")
        if major != FORMAT_MAJOR:
            raise ModelVersionError(f"{path}: format major version {major}, expected {FORMAT_MAJOR}")
        (flags,) = _read(fh, "<I")
        (interval_minutes,) = _read(fh, "<I")
        (scaling_code,) = _read(fh, "<B")
        if scaling_code not in _SCALING_NAME:
            raise ModelFormatError(f"unknown scaling code {scaling_code}")
        scale_min, scale_max = _read(fh, "<dd")
        pca_map = None
        if flags & 1:
            d, m = _read(fh, "<II")
            mean = _read_array(fh, (d,))
            singular = _read_array(fh, (d,))
            components = _read_array(fh, (d, m))
            (cev,) = _read(fh, "<d")
            pca_map = PcaMap(mean=mean, components=components,
                             singular_values=singular, n_components=m, cev=cev)
        (dim,) = _read(fh, "<I")
        shift = _read_array(fh, (dim,))
        scale = _read_array(fh, (dim,))
        (n_layers,) = _read(fh, "<I")
        layers = []
        for k in range(n_layers):
            swap, s_cap = _read(fh, "<Bd")
            s_net = _read_net(fh)
            t_net = _read_net(fh)
            layers.append(CouplingLayer(dim, s_net, t_net, swap=bool(swap), s_cap=s_cap))
        if fh.read(1):
            raise ModelFormatError("trailing bytes in model file")
    return FlowModel(
        layers, Standardizer(shift, scale), pca=pca_map,
        interval_minutes=interval_minutes, scaling=_SCALING_NAME[scaling_code],
        scale_min=None if math.isnan(scale_min) else scale_min,
        scale_max=None if math.isnan(scale_max) else scale_max,
    )
