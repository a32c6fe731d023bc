"""Binary model/sidecar files and seeded synthetic models.

Model file (``.spmf``), all little-endian::

    magic   4s   b"SPMF"
    version u32  1
    layers  u32
    d       u32
    k       u32
    theta   f32
    then per layer: gate, up, down_t, each k*d f32 row-major

Sign sidecar (``.spsg``)::

    magic          4s   b"SPSG"
    version        u32  1
    layers         u32
    d              u32
    k              u32
    words_per_row  u32  ceil(d / 32)
    then per layer: k*words_per_row u32, element j of a row in bit j % 32
    of word j // 32; bits past d - 1 are zero

Random numbers come from numpy's ``Generator`` over the Philox-4x32-10
counter-based bit generator. Layer ``l`` of seed ``s`` draws from
``SeedSequence([s, 0, l])``; input vectors from ``SeedSequence([s, 1])``.
Normals are ``Generator.standard_normal(dtype=float32)`` (ziggurat).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .mlp_engine import MlpLayerWeights, MlpStack
from .signpack import SignPackedMatrix, padding_is_clear, words_per_row
from .tensor_core import DTYPE, NonFiniteError

MODEL_MAGIC = b"SPMF"
SIGN_MAGIC = b"SPSG"
FORMAT_VERSION = 1

_MODEL_HEADER = struct.Struct("<4sIIIIf")
_SIGN_HEADER = struct.Struct("<4sIIIII")

_LAYER_STREAM = 0
_INPUT_STREAM = 1

MODES = ("iid_gaussian", "sparsity_biased")


class ModelFormatError(ValueError):
    """Bad magic, version or header in a model or sidecar file."""


class TruncatedFileError(ModelFormatError):
    pass


class DimensionMismatchError(ValueError):
    """A sidecar or input does not match the dimensions of its model."""


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"file truncated while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def write_model(path, model: MlpStack) -> None:
    path = Path(path)
    with path.open("wb") as f:
        f.write(_MODEL_HEADER.pack(MODEL_MAGIC, FORMAT_VERSION, len(model.layers),
                                   model.d, model.k, model.theta))
        for layer in model.layers:
            for m in (layer.gate, layer.up, layer.down_t):
                f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_model(path) -> MlpStack:
    path = Path(path)
    with path.open("rb") as f:
        magic, version, layers, d, k, theta = _MODEL_HEADER.unpack(
            _read_exact(f, _MODEL_HEADER.size, "model header"))
        if magic != MODEL_MAGIC:
            raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported model version {version}")
        if layers < 1 or d < 1 or k < 1:
            raise ModelFormatError(f"{path}: invalid dims layers={layers} d={d} k={k}")
        nbytes = k * d * 4
        out = []
        for li in range(layers):
            mats = []
            for name in ("gate", "up", "down_t"):
                buf = _read_exact(f, nbytes, f"layer {li} {name}")
                m = np.frombuffer(buf, dtype="<f4").astype(DTYPE).reshape(k, d)
                if not np.isfinite(m).all():
                    raise NonFiniteError(f"{path}: layer {li} {name} contains NaN or Inf")
                mats.append(m)
            out.append(MlpLayerWeights.from_matrices(*mats, theta=theta))
        if f.read(1):
            raise ModelFormatError(f"{path}: trailing bytes after last layer")
    return MlpStack(out)


def write_signpack(path, packs: list[SignPackedMatrix]) -> None:
    if not packs:
        raise ValueError("no sign packs to write")
    k, wpr, d = packs[0].rows, packs[0].words_per_row, packs[0].cols
    if any(p.rows != k or p.cols != d for p in packs):
        raise DimensionMismatchError("sign packs of one sidecar must share dimensions")
    path = Path(path)
    with path.open("wb") as f:
        f.write(_SIGN_HEADER.pack(SIGN_MAGIC, FORMAT_VERSION, len(packs), d, k, wpr))
        for p in packs:
            f.write(np.ascontiguousarray(p.words, dtype="<u4").tobytes())


def read_signpack(path, model: MlpStack | None = None) -> list[SignPackedMatrix]:
    """Read a sidecar; with ``model`` given, its dimensions must match."""
    path = Path(path)
    with path.open("rb") as f:
        magic, version, layers, d, k, wpr = _SIGN_HEADER.unpack(
            _read_exact(f, _SIGN_HEADER.size, "sign sidecar header"))
        if magic != SIGN_MAGIC:
            raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {SIGN_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported sidecar version {version}")
        if layers < 1 or d < 1 or k < 1 or wpr != words_per_row(d):
            raise ModelFormatError(f"{path}: invalid dims layers={layers} d={d} k={k} words_per_row={wpr}")
        if model is not None and (layers, d, k) != (len(model.layers), model.d, model.k):
            raise DimensionMismatchError(
                f"{path}: sidecar dims (layers={layers}, d={d}, k={k}) do not match model "
                f"(layers={len(model.layers)}, d={model.d}, k={model.k})")
        packs = []
        for li in range(layers):
            buf = _read_exact(f, k * wpr * 4, f"layer {li} gate signs")
            words = np.frombuffer(buf, dtype="<u4").astype(np.uint32).reshape(k, wpr)
            if not padding_is_clear(words, d):
                raise ModelFormatError(f"{path}: layer {li} has set padding bits")
            packs.append(SignPackedMatrix(words=words, cols=d))
    return packs


def attach_signpack(model: MlpStack, packs: list[SignPackedMatrix]) -> MlpStack:
    """Swap in sign packs loaded from a sidecar after checking them against the weights."""
    if len(packs) != len(model.layers):
        raise DimensionMismatchError(f"{len(packs)} sign packs for {len(model.layers)} layers")
    layers = []
    for li, (layer, p) in enumerate(zip(model.layers, packs)):
        if p != layer.gate_signs:
            raise DimensionMismatchError(f"sign pack for layer {li} does not match its gate weights")
        layers.append(MlpLayerWeights(layer.gate, layer.up, layer.down_t, p, layer.theta))
    return MlpStack(layers)


def default_gate_row_shift(d: int, input_mean: float, target_sparsity: float = 0.9) -> float:
    """Row shift that puts roughly ``target_sparsity`` of first-layer gate outputs at or below 0.

    With ``x ~ N(m, 1)`` and a gate row ``~ N(-s, 1)`` the dot product given
    ``x`` is centred at ``-s * m * d`` with spread ``sqrt(d * (1 + m^2))``.
    """
    if input_mean <= 0:
        raise ValueError("input_mean must be positive to derive a row shift")
    z = NormalDist().inv_cdf(target_sparsity)
    return z * (1.0 + input_mean**2) ** 0.5 / (input_mean * d**0.5)


@dataclass
class GenSpec:
    layers: int
    d: int
    k: int
    seed: int
    mode: str = "iid_gaussian"
    gate_row_shift: float | None = None
    input_mean: float | None = None
    theta: float = 0.0

    def validate(self) -> None:
        if self.layers < 1 or self.d < 1 or self.k < 1:
            raise ValueError(f"dims must be positive: layers={self.layers} d={self.d} k={self.k}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        biased = self.mode == "sparsity_biased"
        has_params = self.gate_row_shift is not None and self.input_mean is not None
        if biased and not has_params:
            raise ValueError("sparsity_biased mode needs gate_row_shift and input_mean")
        if not biased and (self.gate_row_shift is not None or self.input_mean is not None):
            raise ValueError("gate_row_shift/input_mean only apply to sparsity_biased mode")
        if biased and self.gate_row_shift < 0:
            raise ValueError("gate_row_shift must be >= 0")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def gen_layer(spec: GenSpec, index: int) -> MlpLayerWeights:
    rng = _rng(spec.seed, _LAYER_STREAM, index)
    shape = (spec.k, spec.d)
    gate = rng.standard_normal(shape, dtype=DTYPE)
    up = rng.standard_normal(shape, dtype=DTYPE)
    down_t = rng.standard_normal(shape, dtype=DTYPE)
    if spec.mode == "sparsity_biased":
        # up rows lean positive and down rows carry a small positive mean so the
        # next layer's (RMS-normalised) input keeps a positive mean as well
        gate -= DTYPE(spec.gate_row_shift)
        up += DTYPE(spec.gate_row_shift)
        down_t += DTYPE(spec.input_mean * (10.0 / spec.k) ** 0.5)
    return MlpLayerWeights.from_matrices(gate, up, down_t, theta=spec.theta)


def gen_synthetic(spec: GenSpec) -> MlpStack:
    """Seeded random MLP stack.

    ``iid_gaussian``: every weight is standard normal.
    ``sparsity_biased``: gate rows have mean ``-gate_row_shift`` and inputs mean
    ``input_mean``, which drives most gate outputs below zero; up rows get mean
    ``+gate_row_shift`` and W_down^T rows mean ``input_mean * sqrt(10 / k)`` so
    deeper layers stay in the same regime. Sparsity is whatever the draw gives.
    """
    spec.validate()
    return MlpStack([gen_layer(spec, li) for li in range(spec.layers)])


def gen_inputs(spec: GenSpec, count: int) -> np.ndarray:
    """``count`` input vectors of length ``d`` as a ``(count, d)`` float32 array."""
    spec.validate()
    if count < 1:
        raise ValueError("count must be >= 1")
    mean = spec.input_mean if spec.mode == "sparsity_biased" else 0.0
    return random_inputs(spec.d, count, spec.seed, mean)


def random_inputs(d: int, count: int, seed: int, mean: float = 0.0) -> np.ndarray:
    rng = _rng(seed, _INPUT_STREAM)
    x = rng.standard_normal((count, d), dtype=DTYPE)
    if mean:
        x += DTYPE(mean)
    return x


def load_inputs(path, d: int) -> np.ndarray:
    """Captured input vectors from a ``.npy`` file of shape ``(n, d)`` or ``(d,)``."""
    x = np.load(Path(path), allow_pickle=False)
    x = np.atleast_2d(np.asarray(x, dtype=DTYPE))
    if x.ndim != 2 or x.shape[1] != d:
        raise DimensionMismatchError(f"{path}: inputs of shape {x.shape} do not match model d={d}")
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{path}: inputs contain NaN or Inf")
    return x
