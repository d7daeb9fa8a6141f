"""The gradient verification battery.

Runs central finite-difference checks over every differentiable op, every
decoder block and the full model at 8x8, all in float64. Used by the
``gradcheck`` CLI subcommand and by the acceptance suite.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from . import blocks as B
from .gradcheck import gradcheck
from .network import ModelConfig, init_model, model_forward
from .tensor import Tensor, float64_mode


def _rng(seed):
    return np.random.default_rng(seed)


def _t(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


def op_checks() -> list[tuple[str, float]]:
    rng = _rng(7)
    results = []

    x = _t(rng.standard_normal((2, 3, 5, 5)))
    w = _t(rng.standard_normal((4, 3, 3, 3)) * 0.5)
    b = _t(rng.standard_normal(4) * 0.1)
    results.append(("conv2d_3x3", gradcheck(
        lambda x, w, b: T.tensor_sum(T.sigmoid(T.conv2d(x, w, b, stride=1, pad=1))), [x, w, b])))
    results.append(("conv2d_stride2", gradcheck(
        lambda x, w, b: T.tensor_sum(T.sigmoid(T.conv2d(x, w, b, stride=2, pad=1))), [x, w, b])))
    w1 = _t(rng.standard_normal((2, 3, 1, 1)))
    b1 = _t(rng.standard_normal(2) * 0.1)
    results.append(("conv2d_1x1", gradcheck(
        lambda x, w, b: T.tensor_sum(T.sigmoid(T.conv2d(x, w, b))), [x, w1, b1])))

    dw = _t(rng.standard_normal((3, 1, 3, 3)) * 0.5)
    results.append(("dwconv2d_3x3", gradcheck(
        lambda x, w: T.tensor_sum(T.sigmoid(T.dwconv2d(x, w))), [x, dw])))
    dw5 = _t(rng.standard_normal((3, 1, 5, 5)) * 0.3)
    results.append(("dwconv2d_5x5", gradcheck(
        lambda x, w: T.tensor_sum(T.sigmoid(T.dwconv2d(x, w))), [x, dw5])))

    xm = _t(rng.standard_normal((3, 6)))
    wm = _t(rng.standard_normal((4, 6)) * 0.5)
    bm = _t(rng.standard_normal(4) * 0.1)
    results.append(("linear", gradcheck(
        lambda x, w, b: T.tensor_sum(T.sigmoid(T.linear(x, w, b))), [xm, wm, bm])))

    results.append(("gap", gradcheck(
        lambda x: T.tensor_sum(T.sigmoid(T.gap(x))), [x])))
    results.append(("sigmoid", gradcheck(lambda x: T.tensor_sum(T.sigmoid(x)), [x])))
    # relu kink: keep probes away from zero
    base = rng.standard_normal((2, 3, 4, 4))
    xr = _t(np.sign(base) * (np.abs(base) + 0.25))
    results.append(("relu", gradcheck(lambda x: T.tensor_sum(T.sigmoid(T.relu(x))), [xr])))

    a = _t(rng.standard_normal((2, 3, 4, 4)))
    c = _t(rng.standard_normal((2, 3, 4, 4)))
    gain = _t(rng.standard_normal((2, 3, 1, 1)))
    vec = _t(rng.standard_normal(3))
    results.append(("mul", gradcheck(
        lambda a, c: T.tensor_sum(T.sigmoid(T.mul(a, c))), [a, c])))
    results.append(("mul_broadcast_nc11", gradcheck(
        lambda a, g: T.tensor_sum(T.sigmoid(T.mul(a, g))), [a, gain])))
    results.append(("mul_broadcast_c", gradcheck(
        lambda a, v: T.tensor_sum(T.sigmoid(T.mul(a, v))), [a, vec])))
    results.append(("add_broadcast", gradcheck(
        lambda a, g: T.tensor_sum(T.sigmoid(T.add(a, g))), [a, gain])))
    denom = _t(rng.standard_normal(()) + 3.0)
    results.append(("div", gradcheck(
        lambda a, d: T.tensor_sum(T.sigmoid(T.div(a, d))), [a, denom])))

    a4 = _t(rng.standard_normal((2, 4, 3, 3)))
    c4 = _t(rng.standard_normal((2, 4, 3, 3)))
    results.append(("concat_split", gradcheck(
        lambda a, c: T.tensor_sum(T.sigmoid(T.concat([T.split(a)[0], T.split(c)[1]]))), [a4, c4])))
    results.append(("upsample2x", gradcheck(
        lambda x: T.tensor_sum(T.sigmoid(T.upsample2x(x))), [x])))
    results.append(("sum_reshape", gradcheck(
        lambda a: T.tensor_sum(T.sigmoid(T.reshape(a, (6, 16)))), [a])))
    small = _t(rng.standard_normal((2, 3, 1, 1)))
    results.append(("broadcast_hw", gradcheck(
        lambda s: T.tensor_sum(T.sigmoid(T.broadcast_hw(s, 4, 4))), [small])))
    return results


def block_checks() -> list[tuple[str, float]]:
    rng = _rng(11)
    results = []
    text_dim, c_low, c_high, mu, r = 12, 8, 16, 2, 4

    with float64_mode():
        tgfa = B.init_tgfa(rng, c_low, c_high, text_dim, mu, r)
        tgsi = B.init_tgsi(rng, c_low, text_dim)
        tgsi_cat = B.init_tgsi(rng, c_low, text_dim, concat_fusion=True)
        dpm = B.init_dpm(rng, c_low, mu)
        ca = B.init_ca(rng, c_high, r)

    f_low = _t(rng.standard_normal((2, c_low, 6, 6)))
    f_high = _t(rng.standard_normal((2, c_high, 3, 3)))
    e = _t(rng.standard_normal((2, text_dim)) * 0.5)
    m = _t(rng.standard_normal((2, c_low, 4, 4)))

    # leaves are the live input/parameter tensors; the closures reference
    # them through the param structs, so use_given checks the real path
    results.append(("dpm", gradcheck(
        lambda *_: T.tensor_sum(B.dpm_forward(f_low, dpm)),
        [f_low, dpm.expand.w, dpm.fuse.b], use_given=True, max_probes_per_input=12)))
    results.append(("dpm_params", gradcheck(
        lambda *_: T.tensor_sum(B.dpm_forward(f_low, dpm)),
        [dpm.dw3, dpm.dw5, dpm.pw1.w, dpm.pw2.b], use_given=True, max_probes_per_input=10)))
    results.append(("channel_attention", gradcheck(
        lambda *_: T.tensor_sum(B.channel_attention(f_high, ca)),
        [f_high, ca.fc1.w, ca.fc2.w, ca.fc2.b], use_given=True, max_probes_per_input=12)))
    results.append(("tgfa", gradcheck(
        lambda *_: T.tensor_sum(B.tgfa_forward(f_low, f_high, e, tgfa)),
        [f_low, f_high, e, tgfa.mlp.fc2.w, tgfa.merge_proj.w],
        use_given=True, max_probes_per_input=10)))
    results.append(("tgsi", gradcheck(
        lambda *_: T.tensor_sum(B.tgsi_forward(m, e, tgsi)),
        [m, e, tgsi.ffn.fc1.w, tgsi.ffn.fc2.w, tgsi.ffn.fc2.b],
        use_given=True, max_probes_per_input=10)))
    cat_switch = B.ForwardSwitches(tgsi="concat")
    results.append(("tgsi_concat", gradcheck(
        lambda *_: T.tensor_sum(B.tgsi_forward(m, e, tgsi_cat, cat_switch)),
        [m, e, tgsi_cat.concat_proj.w], use_given=True, max_probes_per_input=10)))
    return results


def model_check() -> list[tuple[str, float]]:
    config = ModelConfig(base_channels=8, text_dim=12, input_size=(8, 8))
    with float64_mode():
        params = init_model(config, seed=3)
    rng = _rng(5)
    img = _t(rng.random((1, 1, 8, 8)))
    e = _t(rng.standard_normal((1, 12)) * 0.3)

    from .train import soft_iou_loss
    gt = _t((rng.random((1, 1, 8, 8)) > 0.8).astype(np.float64))

    def run(*_):
        pred = model_forward(img, e, params)
        return soft_iou_loss(pred, gt)

    results = [("model_8x8_inputs", gradcheck(
        run, [img, e], use_given=True, max_probes_per_input=8))]

    probe_names = {"enc.0.conv1.w", "enc.3.conv2.b", "bottleneck.dw5",
                   "tgfa.0.mlp.fc1.w", "tgfa.1.ca.fc1.w", "tgfa.2.merge.w",
                   "tgsi.0.ffn.fc2.w", "tgsi.2.ffn.fc2.b", "head.w", "head.b"}
    probes = [t for name, t, _ in params.named_params() if name in probe_names]
    results.append(("model_8x8_params", gradcheck(
        run, probes, use_given=True, max_probes_per_input=6)))
    return results


def run_gradient_battery(verbose: bool = False) -> list[tuple[str, float]]:
    results = []
    for chunk in (op_checks(), block_checks(), model_check()):
        results.extend(chunk)
    if verbose:
        for name, err in results:
            status = "ok" if err < 1e-4 else "FAIL"
            print(f"gradcheck {name}: rel_err={err:.3e} [{status}]")
    return results
