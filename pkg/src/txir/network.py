"""Full detection network: encoder, bottleneck detail module, three-stage
cross-modal decoder and sigmoid detection head.

The encoder is four plain residual stages (stage 1 keeps resolution, stages
2-4 halve it and double the channels). The deepest feature map is enhanced
by a detail perception module and then decoded progressively: each decoder
stage aggregates the matching encoder skip with the previous (half
resolution) decoder output under text guidance, then applies gain/offset
text modulation. A 1x1 conv plus sigmoid turns the full-resolution decoder
output into a probability map.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from . import blocks as B
from .tensor import Tensor, ShapeError, TxirError, tensor_to_bytes, tensor_from_bytes

CHECKPOINT_MAGIC = b"TXCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    encoder_stages: int = 4
    decoder_stages: int = 3
    text_dim: int = 512
    mu: int = 2
    r: int = 4
    input_size: tuple[int, int] = (64, 64)
    fusion: str = "modulate"     # "modulate" | "concat" (architecture-level)

    def __post_init__(self):
        if self.encoder_stages != 4 or self.decoder_stages != 3:
            raise ShapeError("architecture is fixed at 4 encoder / 3 decoder stages")
        if self.fusion not in ("modulate", "concat"):
            raise ShapeError(f"unknown fusion mode {self.fusion!r}")
        for i in range(self.encoder_stages):
            c = self.base_channels * (1 << i)
            if c % 4 != 0 or c % self.r != 0 or (self.mu * c) % 2 != 0:
                raise ShapeError(f"stage width {c} violates divisibility "
                                 f"(needs C % 4 == 0, C % r == 0, mu*C even)")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * (1 << i) for i in range(self.encoder_stages))

    def to_json(self) -> str:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["input_size"] = tuple(d["input_size"])
        return cls(**d)


@dataclass
class ResBlockParams:
    conv1: B.ConvParams
    conv2: B.ConvParams
    proj: B.ConvParams | None    # 1x1 skip projection when shape changes


@dataclass
class ModelParams:
    stages: list[ResBlockParams]
    bottleneck_dpm: B.DpmParams
    tgfa: list[B.TGFAParams]     # deepest decoder stage first
    tgsi: list[B.TGSIParams]
    head: B.ConvParams

    def named_params(self):
        """Yield (name, tensor, decay) in a fixed deterministic order.

        Biases are exempt from weight decay.
        """
        def conv(prefix, p: B.ConvParams):
            yield f"{prefix}.w", p.w, True
            yield f"{prefix}.b", p.b, False

        def lin(prefix, p: B.LinearParams):
            yield f"{prefix}.w", p.w, True
            yield f"{prefix}.b", p.b, False

        def mlp(prefix, p: B.MlpParams):
            yield from lin(f"{prefix}.fc1", p.fc1)
            yield from lin(f"{prefix}.fc2", p.fc2)

        def dpm(prefix, p: B.DpmParams):
            yield from conv(f"{prefix}.expand", p.expand)
            yield f"{prefix}.dw3", p.dw3, True
            yield f"{prefix}.dw5", p.dw5, True
            yield from conv(f"{prefix}.fuse", p.fuse)
            yield from conv(f"{prefix}.pw1", p.pw1)
            yield from conv(f"{prefix}.pw2", p.pw2)

        for i, stage in enumerate(self.stages):
            yield from conv(f"enc.{i}.conv1", stage.conv1)
            yield from conv(f"enc.{i}.conv2", stage.conv2)
            if stage.proj is not None:
                yield from conv(f"enc.{i}.proj", stage.proj)
        yield from dpm("bottleneck", self.bottleneck_dpm)
        for i, p in enumerate(self.tgfa):
            yield from mlp(f"tgfa.{i}.mlp", p.mlp)
            yield from dpm(f"tgfa.{i}.dpm", p.dpm)
            yield from lin(f"tgfa.{i}.ca.fc1", p.ca.fc1)
            yield from lin(f"tgfa.{i}.ca.fc2", p.ca.fc2)
            yield from conv(f"tgfa.{i}.merge", p.merge_proj)
        for i, p in enumerate(self.tgsi):
            yield from mlp(f"tgsi.{i}.ffn", p.ffn)
            if p.concat_proj is not None:
                yield from conv(f"tgsi.{i}.concat", p.concat_proj)
        yield from conv("head", self.head)

    def tensors(self) -> dict[str, Tensor]:
        return {name: t for name, t, _ in self.named_params()}


def init_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    chans = config.stage_channels
    stages = []
    c_in = 1
    for i, c_out in enumerate(chans):
        stride = 1 if i == 0 else 2
        conv1 = B.init_conv(rng, c_in, c_out, 3, stride=stride, pad=1)
        conv2 = B.init_conv(rng, c_out, c_out, 3, stride=1, pad=1)
        proj = None
        if stride != 1 or c_in != c_out:
            proj = B.init_conv(rng, c_in, c_out, 1, stride=stride, pad=0)
        stages.append(ResBlockParams(conv1=conv1, conv2=conv2, proj=proj))
        c_in = c_out

    bottleneck = B.init_dpm(rng, chans[3], config.mu)
    concat_fusion = config.fusion == "concat"
    tgfa, tgsi = [], []
    # decoder stage order: (E3, bottleneck), (E2, D3), (E1, D2)
    for low_idx in (2, 1, 0):
        c_low, c_high = chans[low_idx], chans[low_idx + 1]
        tgfa.append(B.init_tgfa(rng, c_low, c_high, config.text_dim, config.mu, config.r))
        tgsi.append(B.init_tgsi(rng, c_low, config.text_dim, concat_fusion=concat_fusion))
    head = B.init_conv(rng, chans[0], 1, 1)
    return ModelParams(stages=stages, bottleneck_dpm=bottleneck,
                       tgfa=tgfa, tgsi=tgsi, head=head)


# --------------------------------------------------------------------------
# forwards
# --------------------------------------------------------------------------

def _resblock(x: Tensor, p: ResBlockParams) -> Tensor:
    out = B.conv_forward(T.relu(B.conv_forward(x, p.conv1)), p.conv2)
    skip = B.conv_forward(x, p.proj) if p.proj is not None else x
    return T.relu(T.add(out, skip))


def encoder_forward(img: Tensor, params: ModelParams) -> list[Tensor]:
    """Four-stage feature pyramid; stage i has base*2^(i-1) channels at 1/2^(i-1) scale."""
    if img.ndim != 4 or img.shape[1] != 1:
        raise ShapeError(f"encoder expects [N,1,H,W] grayscale input, got {img.shape}")
    h, w = img.shape[2], img.shape[3]
    if h % 8 != 0 or w % 8 != 0:
        raise ShapeError(f"input size {h}x{w} must be divisible by 8")
    feats = []
    x = img
    for stage in params.stages:
        x = _resblock(x, stage)
        feats.append(x)
    return feats


def pcsid_forward(feats: list[Tensor], e: Tensor, params: ModelParams,
                  switches: B.ForwardSwitches = B.FULL_SWITCHES) -> Tensor:
    """Progressive cross-modal decoding down the pyramid.

    The deepest encoder output is detail-enhanced, then each stage fuses the
    next-shallower skip with the running decoder state under the shared text
    embedding. Returns the full-resolution decoder output.
    """
    e1, e2, e3, e4 = feats
    x = B.dpm_forward(e4, params.bottleneck_dpm)
    for skip, tgfa_p, tgsi_p in zip((e3, e2, e1), params.tgfa, params.tgsi):
        m = B.tgfa_forward(skip, x, e, tgfa_p, switches)
        x = B.tgsi_forward(m, e, tgsi_p, switches)
    return x


def head_forward(d: Tensor, params: ModelParams) -> Tensor:
    """1x1 conv plus sigmoid: probability map in (0,1)."""
    return T.sigmoid(B.conv_forward(d, params.head))


def model_forward(img: Tensor, e: Tensor, params: ModelParams,
                  switches: B.ForwardSwitches = B.FULL_SWITCHES) -> Tensor:
    """Deterministic end-to-end forward: [N,1,H,W] image + [N,d_t] embedding -> [N,1,H,W]."""
    feats = encoder_forward(img, params)
    d_cm = pcsid_forward(feats, e, params, switches)
    return head_forward(d_cm, params)


# --------------------------------------------------------------------------
# checkpoints
#
#   "TXCK" | u32 version | u32 len | config JSON | u32 count |
#   count x (u16 name_len | name utf-8 | TXIR tensor)
# --------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, config: ModelConfig, path) -> None:
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = config.to_json().encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    entries = list(params.named_params())
    blob += struct.pack("<I", len(entries))
    for name, tensor, _ in entries:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += tensor_to_bytes(tensor)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise TxirError(f"{path}: bad checkpoint magic {buf[:4]!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise TxirError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", buf, 8)
    offset = 12
    config = ModelConfig.from_json(buf[offset:offset + cfg_len].decode("utf-8"))
    offset += cfg_len
    (count,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    loaded: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset:offset + name_len].decode("utf-8")
        offset += name_len
        tensor, offset = tensor_from_bytes(buf, offset)
        loaded[name] = tensor
    if offset != len(buf):
        raise TxirError(f"{path}: {len(buf) - offset} trailing bytes")

    params = init_model(config, seed=0)
    expected = params.tensors()
    if set(expected) != set(loaded):
        missing = sorted(set(expected) - set(loaded))
        extra = sorted(set(loaded) - set(expected))
        raise TxirError(f"{path}: parameter names do not match this config "
                        f"(missing {missing[:3]}, unexpected {extra[:3]})")
    for name, target in expected.items():
        src = loaded[name]
        if src.shape != target.shape:
            raise TxirError(f"{path}: {name} has shape {src.shape}, config expects {target.shape}")
        target.data = src.data.astype(np.float32)
        target.requires_grad = True
        target.grad = None
    return params, config
