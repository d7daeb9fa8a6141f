"""Cross-modal decoder blocks.

Three mechanisms live here:

* text modulation: an MLP turns the prompt embedding into per-channel gains
  for the low-level and high-level feature streams;
* TGFA (text-guided feature aggregation): the modulated low-level stream
  goes through a detail perception module (DPM, channel-expanded multi-scale
  depthwise convolutions with a pointwise sigmoid gate) while the modulated
  high-level stream goes through squeeze-excite channel attention (CA); the
  two branches are merged at the low-level resolution;
* TGSI (text-guided semantic interaction): a feed-forward network maps the
  embedding to per-channel gain/offset pairs applied as
  (1 + gain) * M + offset.

All forwards are pure functions of (inputs, params) built from recorded
tensor ops, so they are differentiable end to end and safe to evaluate
concurrently on disjoint tapes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


# --------------------------------------------------------------------------
# parameter containers
# --------------------------------------------------------------------------

@dataclass
class LinearParams:
    w: Tensor   # [Dout, Din]
    b: Tensor   # [Dout]


@dataclass
class ConvParams:
    w: Tensor   # [Cout, Cin, k, k]
    b: Tensor   # [Cout]
    stride: int = 1
    pad: int = 0


@dataclass
class MlpParams:
    """Two affine layers with a ReLU between them."""
    fc1: LinearParams
    fc2: LinearParams


@dataclass
class DpmParams:
    """Detail perception module working on C channels.

    expand: 1x1 conv C -> mu*C; the result splits into two equal groups that
    go through 3x3 and 5x5 depthwise convolutions; fuse: 1x1 conv mu*C -> C;
    pw1/pw2: pointwise C -> C/4 -> C convs producing the sigmoid gate.
    """
    expand: ConvParams
    dw3: Tensor            # [muC/2, 1, 3, 3]
    dw5: Tensor            # [muC/2, 1, 5, 5]
    fuse: ConvParams
    pw1: ConvParams
    pw2: ConvParams


@dataclass
class CaParams:
    """Squeeze-excite channel attention: C -> C/r -> C."""
    fc1: LinearParams
    fc2: LinearParams


@dataclass
class TGFAParams:
    c_low: int
    c_high: int
    mlp: MlpParams         # text_dim -> c_low + c_high
    dpm: DpmParams         # on c_low channels
    ca: CaParams           # on c_high channels
    merge_proj: ConvParams  # 1x1, c_high -> c_low


@dataclass
class TGSIParams:
    channels: int
    ffn: MlpParams                          # text_dim -> 2 * channels
    concat_proj: ConvParams | None = None   # 1x1, (C + text_dim) -> C, concat fusion only


@dataclass(frozen=True)
class ForwardSwitches:
    """Runtime ablation switches; the default is the full model."""
    text_gate: bool = True      # per-channel text gains on both streams
    dpm: bool = True            # detail perception branch
    ca: bool = True             # channel attention branch
    tgsi: str = "modulate"      # "modulate" | "identity" | "concat"
    alpha: bool = True          # gain term of TGSI
    beta: bool = True           # offset term of TGSI


FULL_SWITCHES = ForwardSwitches()


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape)


def _param(arr) -> Tensor:
    # parameters follow the active dtype mode (float32 training, float64 gradcheck)
    return Tensor(np.asarray(arr), requires_grad=True, dtype=T.default_dtype())


def init_linear(rng, d_in: int, d_out: int) -> LinearParams:
    return LinearParams(w=_param(kaiming_uniform(rng, (d_out, d_in), d_in)),
                        b=_param(np.zeros(d_out)))


def init_conv(rng, c_in: int, c_out: int, k: int, stride: int = 1, pad: int = 0) -> ConvParams:
    return ConvParams(w=_param(kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k)),
                      b=_param(np.zeros(c_out)), stride=stride, pad=pad)


def init_mlp(rng, d_in: int, d_hidden: int, d_out: int) -> MlpParams:
    return MlpParams(fc1=init_linear(rng, d_in, d_hidden),
                     fc2=init_linear(rng, d_hidden, d_out))


def init_dpm(rng, channels: int, mu: int) -> DpmParams:
    expanded = mu * channels
    if expanded % 2 != 0:
        raise ShapeError(f"mu * C must be even, got mu={mu}, C={channels}")
    if channels % 4 != 0:
        raise ShapeError(f"C must be divisible by 4 for the pointwise gate, got {channels}")
    half = expanded // 2
    return DpmParams(
        expand=init_conv(rng, channels, expanded, 1),
        dw3=_param(kaiming_uniform(rng, (half, 1, 3, 3), 9)),
        dw5=_param(kaiming_uniform(rng, (half, 1, 5, 5), 25)),
        fuse=init_conv(rng, expanded, channels, 1),
        pw1=init_conv(rng, channels, channels // 4, 1),
        pw2=init_conv(rng, channels // 4, channels, 1),
    )


def init_ca(rng, channels: int, r: int) -> CaParams:
    if channels % r != 0:
        raise ShapeError(f"C must be divisible by the reduction rate, got C={channels}, r={r}")
    return CaParams(fc1=init_linear(rng, channels, channels // r),
                    fc2=init_linear(rng, channels // r, channels))


def init_tgfa(rng, c_low: int, c_high: int, text_dim: int, mu: int, r: int) -> TGFAParams:
    return TGFAParams(
        c_low=c_low,
        c_high=c_high,
        mlp=init_mlp(rng, text_dim, text_dim, c_low + c_high),
        dpm=init_dpm(rng, c_low, mu),
        ca=init_ca(rng, c_high, r),
        merge_proj=init_conv(rng, c_high, c_low, 1),
    )


def init_tgsi(rng, channels: int, text_dim: int, concat_fusion: bool = False) -> TGSIParams:
    concat_proj = init_conv(rng, channels + text_dim, channels, 1) if concat_fusion else None
    return TGSIParams(channels=channels,
                      ffn=init_mlp(rng, text_dim, text_dim, 2 * channels),
                      concat_proj=concat_proj)


# --------------------------------------------------------------------------
# forwards
# --------------------------------------------------------------------------

def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    return T.linear(T.relu(T.linear(x, p.fc1.w, p.fc1.b)), p.fc2.w, p.fc2.b)


def conv_forward(x: Tensor, p: ConvParams) -> Tensor:
    return T.conv2d(x, p.w, p.b, stride=p.stride, pad=p.pad)


def text_split(e: Tensor, p: TGFAParams) -> tuple[Tensor, Tensor]:
    """Map an embedding batch [N, d_t] to per-channel gains ([N, c_low], [N, c_high])."""
    if e.ndim != 2:
        raise ShapeError(f"text_split expects [N, d_t] embeddings, got {e.shape}")
    out = mlp_forward(e, p.mlp)
    if out.shape[1] != p.c_low + p.c_high:
        raise ShapeError(f"MLP produced {out.shape[1]} channels, expected "
                         f"{p.c_low} + {p.c_high}")
    n = out.shape[0]
    flat = T.reshape(out, (n, p.c_low + p.c_high, 1, 1))
    if p.c_low == p.c_high:
        t1, t2 = T.split(flat)
    else:
        # Unequal stream widths: slice by channel counts instead of halving.
        t1 = _slice_channels(flat, 0, p.c_low)
        t2 = _slice_channels(flat, p.c_low, p.c_low + p.c_high)
    return T.reshape(t1, (n, p.c_low)), T.reshape(t2, (n, p.c_high))


def _slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[:, start:stop].copy()

    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return T._result("slice_channels", out, (x,), bwd)


def _as_gain(v: Tensor) -> Tensor:
    """[N, C] -> [N, C, 1, 1] for spatial broadcast."""
    n, c = v.shape
    return T.reshape(v, (n, c, 1, 1))


def text_modulate(f_low: Tensor, f_high: Tensor, t1: Tensor, t2: Tensor) -> tuple[Tensor, Tensor]:
    """Scale each channel of both streams by its text-derived gain."""
    if t1.shape[-1] != f_low.shape[1]:
        raise ShapeError(f"low-stream gains {t1.shape} do not match {f_low.shape[1]} channels")
    if t2.shape[-1] != f_high.shape[1]:
        raise ShapeError(f"high-stream gains {t2.shape} do not match {f_high.shape[1]} channels")
    g1 = _as_gain(t1) if t1.ndim == 2 else t1
    g2 = _as_gain(t2) if t2.ndim == 2 else t2
    return T.mul(f_low, g1), T.mul(f_high, g2)


def dpm_gate(f_ms: Tensor, p: DpmParams) -> Tensor:
    """Pointwise sigmoid gate over the multi-scale detail map."""
    return T.sigmoid(conv_forward(T.relu(conv_forward(f_ms, p.pw1)), p.pw2))


def dpm_multiscale(x: Tensor, p: DpmParams) -> Tensor:
    """Channel-expand, run parallel 3x3/5x5 depthwise branches, fuse back to C."""
    expanded = conv_forward(x, p.expand)
    lo, hi = T.split(expanded)
    branches = T.concat([T.dwconv2d(lo, p.dw3), T.dwconv2d(hi, p.dw5)])
    return conv_forward(branches, p.fuse)


def dpm_forward(x: Tensor, p: DpmParams, gate: Tensor | None = None) -> Tensor:
    """Detail perception: gate the multi-scale map with its own pointwise gate.

    ``gate`` substitutes a precomputed gate (frozen-gate replay); by default
    the gate is derived from the input itself.
    """
    f_ms = dpm_multiscale(x, p)
    g = gate if gate is not None else dpm_gate(f_ms, p)
    return T.mul(g, f_ms)


def ca_gate(x: Tensor, p: CaParams) -> Tensor:
    """Squeeze-excite gate: GAP, bottleneck FC pair, sigmoid; shape [N,C,1,1]."""
    n, c = x.shape[0], x.shape[1]
    z = T.reshape(T.gap(x), (n, c))
    squeezed = T.linear(T.relu(T.linear(z, p.fc1.w, p.fc1.b)), p.fc2.w, p.fc2.b)
    return T.reshape(T.sigmoid(squeezed), (n, c, 1, 1))


def channel_attention(x: Tensor, p: CaParams, gate: Tensor | None = None) -> Tensor:
    g = gate if gate is not None else ca_gate(x, p)
    return T.mul(x, g)


@dataclass
class TgfaGates:
    """Gates captured from one TGFA evaluation, for frozen-gate replay."""
    dpm: Tensor
    ca: Tensor


def tgfa_forward(f_low: Tensor, f_high: Tensor, e: Tensor, p: TGFAParams,
                 switches: ForwardSwitches = FULL_SWITCHES,
                 gates: TgfaGates | None = None,
                 return_gates: bool = False):
    """Aggregate a low-level and a half-resolution high-level stream.

    The high-level stream must be at exactly half the spatial size of the
    low-level one. Output is at the low-level resolution with c_low channels:
    detail branch plus channel-projected, bilinearly upsampled attention
    branch.
    """
    if f_low.shape[1] != p.c_low or f_high.shape[1] != p.c_high:
        raise ShapeError(f"stream channels ({f_low.shape[1]}, {f_high.shape[1]}) do not match "
                         f"params ({p.c_low}, {p.c_high})")
    if (f_low.shape[2] != 2 * f_high.shape[2]) or (f_low.shape[3] != 2 * f_high.shape[3]):
        raise ShapeError(f"high-level stream {f_high.shape} must be half the size of "
                         f"low-level stream {f_low.shape}")

    if switches.text_gate:
        t1, t2 = text_split(e, p)
        f_low, f_high = text_modulate(f_low, f_high, t1, t2)

    captured_dpm = captured_ca = None
    if switches.dpm:
        f_ms = dpm_multiscale(f_low, p.dpm)
        g_dpm = gates.dpm if gates is not None else dpm_gate(f_ms, p.dpm)
        captured_dpm = g_dpm
        detail = T.mul(g_dpm, f_ms)
    else:
        detail = f_low

    if switches.ca:
        g_ca = gates.ca if gates is not None else ca_gate(f_high, p.ca)
        captured_ca = g_ca
        attended = T.mul(f_high, g_ca)
    else:
        attended = f_high

    merged = T.add(detail, T.upsample2x(conv_forward(attended, p.merge_proj)))
    if return_gates:
        return merged, TgfaGates(dpm=captured_dpm, ca=captured_ca)
    return merged


def tgsi_modulators(e: Tensor, p: TGSIParams) -> tuple[Tensor, Tensor]:
    """FFN output split into per-channel (gain, offset), each [N, C]."""
    if e.ndim != 2:
        raise ShapeError(f"tgsi expects [N, d_t] embeddings, got {e.shape}")
    out = mlp_forward(e, p.ffn)
    if out.shape[1] != 2 * p.channels:
        raise ShapeError(f"FFN produced {out.shape[1]} values, expected {2 * p.channels}")
    n = out.shape[0]
    flat = T.reshape(out, (n, 2 * p.channels, 1, 1))
    gain, offset = T.split(flat)
    return T.reshape(gain, (n, p.channels)), T.reshape(offset, (n, p.channels))


def tgsi_forward(m: Tensor, e: Tensor, p: TGSIParams,
                 switches: ForwardSwitches = FULL_SWITCHES) -> Tensor:
    """Per-channel gain/offset modulation: (1 + gain) * M + offset.

    With both modulators zero this is exactly the identity on M. "concat"
    mode is the naive-fusion baseline: the raw embedding is tiled over
    space, concatenated with M along channels and projected back by a 1x1
    conv (no gain/offset path).
    """
    if m.shape[1] != p.channels:
        raise ShapeError(f"feature map has {m.shape[1]} channels, params expect {p.channels}")
    if switches.tgsi == "identity":
        return m
    if switches.tgsi == "concat":
        if p.concat_proj is None:
            raise ShapeError("concat fusion requires params built with concat_fusion=True")
        n, d = e.shape
        h, w = m.shape[2], m.shape[3]
        text_map = T.broadcast_hw(T.reshape(e, (n, d, 1, 1)), h, w)
        return conv_forward(T.concat([m, text_map]), p.concat_proj)
    if switches.tgsi != "modulate":
        raise ShapeError(f"unknown tgsi mode {switches.tgsi!r}")
    gain, offset = tgsi_modulators(e, p)
    out = m
    if switches.alpha:
        one = Tensor(np.ones((), dtype=gain.dtype))
        out = T.mul(out, T.add(_as_gain(gain), one))
    if switches.beta:
        out = T.add(out, _as_gain(offset))
    return out
