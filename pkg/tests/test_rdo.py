import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridvc.core import Mode, MotionField, sse
from hybridvc.entropy import coefficient_bits
from hybridvc.flow import estimate_flow, prior_flows
from hybridvc.mc import warp
from hybridvc.motion import Decisions
from hybridvc.pipeline import inter_prediction, reconstruct
from hybridvc.rdo import (
    Evaluator, FrameProblem, FrameTools, SearchOptions, evaluate_config, optimize_frame,
    partition_search, refine_mode_params, residual_skip_search)
from hybridvc.wavelet import forward_dwt, quantize

from clips import pink_texture


def _texture(h, w, seed=3):
    t = pink_texture(max(h, w), beta=1.5, seed=seed)[:h, :w]
    return np.clip(128 + 45 * t, 0, 255).astype(np.uint8)


def all_trees(x, y, s, leaf_j, split_cost):
    """Every quadtree below (x, y, s) as (cost, leaves), by explicit enumeration."""
    own = leaf_j[s][(x, y)] + (split_cost if s > 8 else 0.0)
    out = [(own, [(x, y, s)])]
    if s > 8:
        h = s // 2
        kids = [all_trees(x + dx, y + dy, h, leaf_j, split_cost)
                for dy in (0, h) for dx in (0, h)]
        for combo in itertools.product(*kids):
            out.append((split_cost + sum(c for c, _ in combo),
                        [lv for _, leaves in combo for lv in leaves]))
    return out


def _random_costs(rng, width, height):
    leaf_j = {}
    for s in (8, 16, 32, 64):
        base = rng.uniform(0.5, 1.5) * s * s
        leaf_j[s] = {(x, y): float(base * rng.uniform(0.6, 1.4))
                     for y in range(0, height, s) for x in range(0, width, s)}
    return leaf_j


def test_partition_search_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(3):
        leaf_j = _random_costs(rng, 64, 64)
        trees = all_trees(0, 0, 32, leaf_j, 40.0)
        assert len(trees) == 17
        trees = all_trees(0, 0, 64, leaf_j, 40.0)
        assert len(trees) == 83522
        want = min(c for c, _ in trees)
        tree, total = partition_search(leaf_j, 64, 64, 40.0)
        assert total == pytest.approx(want, rel=1e-12)
        got = sum(leaf_j[s][(x, y)] for x, y, s in tree.leaves)
        # one flag per node above the minimum size, leaf or split
        n_flags = len(tree.split_flags())
        assert got + 40.0 * n_flags == pytest.approx(want, rel=1e-12)


def test_partition_ties_keep_the_larger_block():
    leaf_j = {s: {(x, y): float(s * s) for y in range(0, 64, s) for x in range(0, 64, s)}
              for s in (8, 16, 32, 64)}
    tree, _ = partition_search(leaf_j, 64, 64, 0.0)
    assert tree.leaves == ((0, 0, 64),)


def test_residual_skip_ties_go_to_skip():
    assert residual_skip_search([1.0, 2.0, 3.0], [1.0, 1.5, 3.5]).tolist() == [True, True, False]


def test_frame_tools_byte_round_trip():
    for modes in ((0,), (0, 1), (2,), (0, 1, 2)):
        for qt in (False, True):
            for block in (8, 16, 32, 64):
                for skip in (False, True):
                    t = FrameTools(modes, qt, block, skip)
                    assert FrameTools.from_byte(t.to_byte()) == t
    for b in (0x80, 0x10):
        with pytest.raises(ValueError):
            FrameTools.from_byte(b)


def _pan_problem(true_shift=40, init=32, lam=8.567, q_step=12):
    ref = _texture(64, 128)
    orig = warp(ref, MotionField.constant(64, 128, true_shift, 0)).samples
    init_flow = MotionField.constant(64, 128, init, 0)
    return FrameProblem(orig, ref, None, lam, q_step, 96, 64, flow_cur0=init_flow)


def test_refinement_moves_mv_to_the_true_half_pel_shift():
    p = _pan_problem()
    ev = Evaluator(p)
    tools = FrameTools((2,), False, 32)
    dec = Decisions.from_leaves([(x, y, 32) for y in (0, 32) for x in (0, 32, 64, 96)], Mode.MV)
    dec.params[:, 0] = 32  # +2.0 pel, the true shift is +2.5
    r = refine_mode_params(ev, dec, tools, Mode.MV)
    inner = r.decisions.params[[0, 1, 4, 5]]
    assert np.all(inner[:, :2] == (40, 0))
    assert all(a >= b for a, b in zip(r.trace, r.trace[1:]))
    assert r.trace[-1] < r.trace[0]
    # the trace is exact: re-evaluating the refined decisions reproduces it
    assert evaluate_config(p, r.decisions, tools).j == pytest.approx(r.trace[-1], rel=1e-9)
    with pytest.raises(ValueError):
        refine_mode_params(ev, dec, tools, Mode.TMERGE)


def test_skip_all_refinement_scores_the_prediction_only():
    p = _pan_problem()
    ev = Evaluator(p)
    tools = FrameTools((2,), False, 32, skip=True)
    dec = Decisions.from_leaves([(x, y, 32) for y in (0, 32) for x in (0, 32, 64, 96)], Mode.MV)
    dec.params[:, 0] = 32
    r = refine_mode_params(ev, dec, tools, Mode.MV, skip_all=True)
    assert all(a >= b for a, b in zip(r.trace, r.trace[1:]))
    assert r.trace[-1] < r.trace[0]
    flags = np.ones(ev.n_units, bool)
    for d, j in ((dec, r.trace[0]), (r.decisions, r.trace[-1])):
        res = evaluate_config(p, d, tools, flags)
        assert res.rate_residual == 0
        assert res.j == pytest.approx(j, rel=1e-9)
    with pytest.raises(ValueError):
        refine_mode_params(ev, dec, FrameTools((2,), False, 32), Mode.MV, skip_all=True)


def test_evaluation_matches_an_independent_simulation():
    rng = np.random.default_rng(4)
    ref0, ref1 = _texture(64, 64, 1), _texture(64, 64, 2)
    orig = _texture(64, 64, 3)
    p10, p01 = (f.vectors for f in prior_flows(ref0, ref1))
    p = FrameProblem(orig, ref0, ref1, 20.0, 24, 60, 56, p01, p10)
    dec = Decisions.from_leaves([(x, y, 32) for y in (0, 32) for x in (0, 32)])
    dec.modes[:] = [0, 1, 2, 2]
    dec.params[1] = (3, 6, 5, 8)
    dec.params[2:] = rng.integers(-4, 5, (2, 4)) * 8
    res = evaluate_config(p, dec)
    pred = inter_prediction(dec, ref0, ref1, p01, p10)
    q = quantize(forward_dwt(orig.astype(np.int32) - pred), 24).coeffs
    recon = reconstruct(pred, q, 24)
    assert np.array_equal(res.recon, recon)
    assert res.distortion == sse(orig, recon, 60, 56)
    assert res.rate_residual == pytest.approx(coefficient_bits(q)[1], rel=1e-12)
    assert res.block_d.sum() == res.distortion
    assert res.block_rate.sum() == pytest.approx(res.rate_motion + res.rate_residual)


def test_static_content_codes_as_merge_and_skip():
    a = _texture(128, 128)
    z = np.zeros((128, 128, 2), np.int32)
    p = FrameProblem(a, a, a, 8.567, 12, 128, 128, z, z, z, z)
    res = optimize_frame(p)
    assert np.all(res.decisions.modes == int(Mode.TMERGE))
    assert res.result.distortion == 0
    assert res.skip_flags.all()


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_more_tools_never_cost_more(seed):
    r = np.random.default_rng(seed)
    big = _texture(96, 160, int(r.integers(0, 100)))
    ref0, orig, ref1 = big[16:80, 0:128], big[16:80, 8:136], big[16:80, 16:144]
    orig = np.clip(orig.astype(int) + r.integers(-3, 4, orig.shape), 0, 255).astype(np.uint8)
    p10, p01 = (f.vectors for f in prior_flows(ref0, ref1))
    f0, f1 = estimate_flow(orig, ref0).vectors, estimate_flow(orig, ref1).vectors
    p = FrameProblem(orig, ref0, ref1, 60.0, 24, 128, 64, p01, p10, f0, f1)
    small = optimize_frame(p, SearchOptions((Mode.TMERGE,), False, False))
    mid = optimize_frame(p, SearchOptions((Mode.TMERGE, Mode.TSCALE), False, False))
    full = optimize_frame(p, SearchOptions(refine=True))
    assert full.j <= mid.j <= small.j
    labels = [lab for lab, _ in full.trace]
    assert "quadtree" in labels and any(lab.endswith("+refine") for lab in labels)
    assert full.j == min(j for _, j in full.trace)
