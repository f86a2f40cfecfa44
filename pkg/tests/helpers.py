"""Shared test utilities: gradient checking and BRT parameter factories."""

import numpy as np

from holink import brt
from holink.nn import ParameterStore, add_geglu, uniform_init

FD_STEP = 1e-5
FD_RTOL = 1e-3
FD_ATOL = 1e-8


def make_cell(cfg: brt.BRTConfig, rng) -> tuple[ParameterStore, brt.CellParams]:
    """Randomly initialized cell parameters for a given geometry."""
    store = ParameterStore()
    w = cfg.width
    proj = cfg.heads * cfg.head_dim

    def mat(name, fan_in, shape):
        return store.add(name, uniform_init(rng, fan_in, shape))

    params = brt.CellParams(
        w_p=mat("w_p", w, (cfg.state_count, w)),
        ln_state_h_gain=store.add("ln_state_h.gain", np.ones(w)),
        ln_state_h_bias=store.add("ln_state_h.bias", np.zeros(w)),
        ln_state_v_gain=store.add("ln_state_v.gain", np.ones(w)),
        ln_state_v_bias=store.add("ln_state_v.bias", np.zeros(w)),
        ln_z_gain=store.add("ln_z.gain", np.ones(w)),
        ln_z_bias=store.add("ln_z.bias", np.zeros(w)),
        w_q1=mat("w_q1", w, (w, proj)),
        w_kc=mat("w_kc", w, (w, proj)),
        w_vc=mat("w_vc", w, (w, proj)),
        w_q2=mat("w_q2", w, (w, proj)),
        w_h=mat("w_h", 2 * proj, (2 * proj, w)),
        b_h=store.add("b_h", np.zeros(w)),
        b_g=store.add("b_g", np.ones(w)),
        w_q3=mat("w_q3", w, (w, proj)),
        w_q4=mat("w_q4", w, (w, proj)),
        w_v=mat("w_v", 2 * proj, (2 * proj, w)),
        b_v=store.add("b_v", np.zeros(w)),
        w_kz=mat("w_kz", w, (w, proj)),
        w_vz=mat("w_vz", w, (w, proj)),
        ffn=add_geglu(store, "ffn", w, 2, rng),
    )
    return store, params


def finite_diff_check(build_loss, tensors, rng, samples=4,
                      rtol=FD_RTOL, atol=FD_ATOL, step=FD_STEP):
    """Compare autodiff grads against central differences on sampled coords.

    build_loss() must construct a fresh scalar-loss graph from the tensors'
    current values. Every tensor is probed on `samples` random coordinates.
    Returns the worst (relative error, tensor index, coordinate) triple.
    """
    for t in tensors:
        t.zero_grad()
    build_loss().backward()
    grads = [t.grad.copy() for t in tensors]

    worst = (0.0, -1, -1)
    for which, t in enumerate(tensors):
        size = t.values.size
        coords = rng.choice(size, size=min(samples, size), replace=False)
        for i in coords:
            original = t.values.flat[i]
            t.values.flat[i] = original + step
            up = build_loss().item()
            t.values.flat[i] = original - step
            down = build_loss().item()
            t.values.flat[i] = original
            numeric = (up - down) / (2.0 * step)
            analytic = grads[which].flat[i]
            err = abs(numeric - analytic)
            tol = atol + rtol * max(abs(numeric), abs(analytic))
            assert err <= tol, (
                f"grad mismatch on tensor {which} coord {i}: "
                f"fd={numeric:.8g} ad={analytic:.8g} err={err:.3g}"
            )
            rel = err / max(abs(numeric), abs(analytic), 1e-12)
            if rel > worst[0]:
                worst = (rel, which, int(i))
    return worst
