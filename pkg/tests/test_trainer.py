from dataclasses import replace

import numpy as np
import pytest

from divafn import featnets
from divafn.datamodel import expand_semantics
from divafn.errors import ContractError, DivergenceError, FormatError
from divafn.objective import Hyperparams, nll_pair_loss, pair_scores, total_objective
from divafn.trainer import (SAE_STEPS, TrainConfig, checkpoint, decode_checkpoint, encode_checkpoint,
                            init_model, objective_breakdown, restore, similarities_for, train)


def cfg(iters=3, **kw):
    hp_kw = {k: kw.pop(k) for k in list(kw) if k in Hyperparams.__dataclass_fields__}
    return TrainConfig(hp=Hyperparams(d=6, iters=iters, batch=8, **{"lr": 1e-3, **hp_kw}),
                       hidden=8, **kw)


def test_zero_iterations_is_initialization(small_data):
    ds, table = small_data
    c = cfg(iters=0)
    model = train(ds, table, c)
    init = init_model(ds, table, c)
    assert model.trace == []
    for name in ("theta_x", "theta_y", "theta_z"):
        np.testing.assert_array_equal(featnets.flatten(getattr(model, name)),
                                      featnets.flatten(getattr(init, name)))
    assert np.all(model.sae.W_E == 0)


def test_diva_trace_is_nll_only(small_data):
    ds, table = small_data
    model = train(ds, table, cfg(ablation="DIVA"))
    assert model.stats["sae_solves"] == 0
    H = featnets.forward(model.theta_y, ds.keyframes)
    G = featnets.forward(model.theta_z, ds.videos)
    F = featnets.forward(model.theta_x, ds.images)
    sims = similarities_for(ds.labels)
    hp = model.hp
    nll = (nll_pair_loss(pair_scores(F, G), sims.M1, hp.a)
           + nll_pair_loss(pair_scores(F, H), sims.M2, hp.b)
           + nll_pair_loss(pair_scores(H, G), sims.M3, hp.c))
    assert model.trace[-1] == pytest.approx(nll, rel=1e-12)


def test_closed_form_steps_never_increase_objective(small_data):
    ds, table = small_data
    seen = []

    def record(t, step, value):
        seen.append((t, step, value))

    train(ds, table, cfg(iters=5), on_step=record)
    for (t0, s0, before), (t1, s1, after) in zip(seen, seen[1:]):
        if s1 in SAE_STEPS:
            assert after <= before + 1e-9, (t1, s1, before, after)


def test_lr_zero_trace_constant_after_first_block(small_data):
    ds, table = small_data
    model = train(ds, table, cfg(iters=4, lr=1e-300))
    # lr must be positive; 1e-300 makes every parameter step vanish in float64
    assert len(set(model.trace)) == 1


def test_deterministic_trace(small_data):
    ds, table = small_data
    a = train(ds, table, cfg(iters=4, seed=3))
    b = train(ds, table, cfg(iters=4, seed=3))
    assert a.trace == b.trace
    c = train(ds, table, cfg(iters=4, seed=4))
    assert c.trace != a.trace


def test_objective_decreases_on_small_data(small_data):
    ds, table = small_data
    model = train(ds, table, cfg(iters=30))
    assert all(np.isfinite(model.trace))
    assert model.trace[-1] < model.initial_objective


def test_divf_fits_encoders_on_raw_inputs(small_data):
    ds, table = small_data
    model = train(ds, table, cfg(iters=2, ablation="DIVF"))
    assert model.sae.W_G.shape == (table.dim, ds.videos.shape[0])
    assert model.stats["sae_solves"] == 8
    assert model.trace[0] == model.trace[1]
    parts = objective_breakdown(model, ds, table)
    assert model.trace[-1] == pytest.approx(sum(parts.values()), rel=1e-12)


def test_kvc_skips_training(small_data):
    ds, table = small_data
    model = train(ds, table, cfg(ablation="KVC"))
    assert model.trace == [] and model.stats["sae_solves"] == 0


def test_divergence_detected(small_data):
    ds, table = small_data
    with pytest.raises(DivergenceError) as exc, np.errstate(all="ignore"):
        train(ds, table, cfg(iters=5, lr=1e6))
    assert exc.value.iteration is not None
    assert "learning rate" in str(exc.value)


def test_preconditions(small_data):
    ds, table = small_data
    with pytest.raises(ContractError):
        train(ds, table, cfg(ablation="nope"))
    with pytest.raises(ContractError):
        train(ds.subset([]), table, cfg())
    small_table = type(table)(table.embeddings[:, :2])
    with pytest.raises(ContractError):
        train(ds, small_table, cfg())


def test_checkpoint_roundtrip(tmp_path, small_data):
    ds, table = small_data
    model = train(ds, table, cfg(iters=2))
    checkpoint(model, tmp_path / "m.dvfn")
    back = restore(tmp_path / "m.dvfn")
    assert encode_checkpoint(back) == encode_checkpoint(model)
    assert back.trace == model.trace and back.hp == model.hp


def test_resume_matches_uninterrupted(tmp_path, small_data):
    ds, table = small_data
    full = train(ds, table, cfg(iters=10, seed=2))
    half = train(ds, table, cfg(iters=5, seed=2))
    checkpoint(half, tmp_path / "half.dvfn")
    resumed = train(ds, table, cfg(iters=10, seed=2), model=restore(tmp_path / "half.dvfn"))
    assert abs(resumed.trace[-1] - full.trace[-1]) <= 1e-12 * abs(full.trace[-1])
    assert resumed.trace == full.trace


def test_periodic_checkpoint(tmp_path, small_data):
    ds, table = small_data
    path = tmp_path / "p.dvfn"
    train(ds, table, replace(cfg(iters=4), checkpoint_every=2, checkpoint_path=str(path)))
    assert len(restore(path).trace) == 4


def test_truncated_checkpoint(small_data):
    ds, table = small_data
    buf = encode_checkpoint(train(ds, table, cfg(iters=1)))
    for cut in (3, 10, 40, len(buf) - 1):
        with pytest.raises(FormatError):
            decode_checkpoint(buf[:cut])
    with pytest.raises(FormatError):
        decode_checkpoint(b"DVFN2" + buf[5:])


def test_trace_is_total_objective(small_data):
    ds, table = small_data
    model = train(ds, table, cfg(iters=2))
    F, H, G = (featnets.forward(getattr(model, n), X)
               for n, X in (("theta_x", ds.images), ("theta_y", ds.keyframes), ("theta_z", ds.videos)))
    S = expand_semantics(table, ds.labels)
    val = total_objective(F, H, G, model.sae, S, similarities_for(ds.labels), model.hp)
    assert model.trace[-1] == val
