import math

import numpy as np
import pytest

from ipmplan.ipm import (ArrivalBounds, InsufficientDataError, InteractionPair, Layer, ModelError,
                         ModelFileError, PriorityClassifier, ProtectionTimeModel, _init_params,
                         arrival_bounds, bce_grad, bce_loss, dump_model, fit_protection_model,
                         pair_features, parse_model, priority_features, priority_probability,
                         protection_times, train_classifier, accuracy)
from ipmplan.sim.datagen import PairRuleConfig, generate_interaction_pairs


def integrate_arrival(v0, d, a, dt=1e-4, t_cap=200.0):
    """Forward Euler (exact per step for constant a) until the point is reached."""
    s, v, t = 0.0, v0, 0.0
    while s < d and t < t_cap:
        v_next = v + a * dt
        if v_next <= 0.0:
            # stops inside this step
            tau = v / -a
            s += v * tau + 0.5 * a * tau * tau
            return t + tau if s >= d - 1e-9 else math.inf
        s_next = s + v * dt + 0.5 * a * dt * dt
        if s_next >= d:
            # solve the remaining fraction of the step
            disc = v * v + 2.0 * a * (d - s)
            tau = (math.sqrt(disc) - v) / a if abs(a) > 1e-12 else (d - s) / v
            return t + tau
        s, v, t = s_next, v_next, t + dt
    return math.inf


def random_classifier(rng, hidden=8, **gate):
    sizes = [2, hidden, hidden, 1]
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        layers.append(Layer(rng.normal(0, 2, (b, a)), rng.normal(0, 1, b), "sigmoid" if i == 2 else "tanh"))
    return PriorityClassifier(tuple(layers), **gate)


# --- protection times ----------------------------------------------------

def test_constant_model():
    m = ProtectionTimeModel.constant(-1.5, 2.0)
    for dv, th in [(-10, 0), (0, 1.0), (7.5, math.pi), (50, -1)]:
        assert protection_times(m, dv, th) == (-1.5, 2.0)


def test_sign_invariant_enforced():
    z4 = [0, 0, 0, 0, -1.0]
    with pytest.raises(ModelError):
        ProtectionTimeModel(z4, [0, 1 / math.pi, 1], [0, 0, 0, 0, 2.0], [0, 0, 2.0])
    with pytest.raises(ModelError):
        ProtectionTimeModel(z4, [0, 0, -1.0], [0, 0, 0, 0, 2.0], [0, 0, 2.0, 1.0])


def test_combined_takes_widest_envelope():
    m = ProtectionTimeModel([0, 0, 0, 0, -1.0], [0, -0.5, -1.2], [0, 0, 0, 0, 1.5], [0, 0.2, 1.5])
    dtm, dtp = protection_times(m, 0.0, 1.0)
    assert dtm == pytest.approx(-1.7) and dtp == pytest.approx(1.7)


# --- arrival bounds ------------------------------------------------------

def test_arrival_examples():
    b = arrival_bounds(2.0, 12.0, 1.5, -3.0)
    assert b.t_min == pytest.approx((math.sqrt(40.0) - 2.0) / 1.5, abs=1e-12)
    assert b.t_min == pytest.approx(2.883, abs=1e-3)
    assert b.t_min == pytest.approx(integrate_arrival(2.0, 12.0, 1.5), abs=1e-3)
    assert arrival_bounds(3.0, 0.0, 1.5, -3.0) == ArrivalBounds(0.0, 0.0)
    clamped = arrival_bounds(4.0, 12.0, 1.5, -3.0)
    assert clamped.t_max == pytest.approx(6.0, abs=1e-12)
    assert clamped.t_max == pytest.approx(integrate_arrival(4.0, 12.0, -16.0 / 24.0), abs=1e-3)
    assert math.isinf(arrival_bounds(0.0, 5.0, 1.5, -3.0).t_max)


def test_arrival_unclamped_matches_integration():
    # a_min weaker than the stopping deceleration: latest arrival uses a_min itself
    b = arrival_bounds(10.0, 12.0, 1.5, -1.0)
    assert b.t_max == pytest.approx(integrate_arrival(10.0, 12.0, -1.0), abs=1e-3)


def test_arrival_rejects_bad_inputs():
    with pytest.raises(ValueError):
        arrival_bounds(1.0, -1.0, 1.5, -3.0)
    with pytest.raises(ValueError):
        arrival_bounds(1.0, 1.0, 0.0, -3.0)


# --- features and gate ---------------------------------------------------

def test_feature_examples():
    mm, _ = priority_features(ArrivalBounds(2.0, 9.0), ArrivalBounds(5.0, 9.0), -1.5, 2.0)
    assert mm == pytest.approx(-1.5)
    assert priority_features(ArrivalBounds(3.0, 5.0), ArrivalBounds(3.0, 5.0), 0.0, 0.0) == (0.0, 0.0)
    assert priority_features(ArrivalBounds(1.0, 8.0), ArrivalBounds(1.0, math.inf), -1, 1)[1] == -math.inf
    assert priority_features(ArrivalBounds(1.0, math.inf), ArrivalBounds(1.0, 8.0), -1, 1)[1] == math.inf


def test_features_shift_invariant():
    rng = np.random.default_rng(3)
    for _ in range(50):
        e0, e1, a0, a1, c = rng.uniform(0, 10, 5)
        e, a = ArrivalBounds(e0, e0 + e1), ArrivalBounds(a0, a0 + a1)
        e2, a2 = ArrivalBounds(e0 + c, e0 + e1 + c), ArrivalBounds(a0 + c, a0 + a1 + c)
        assert priority_features(e, a, -1, 2) == pytest.approx(priority_features(e2, a2, -1, 2))


def test_gate_examples():
    clf = random_classifier(np.random.default_rng(0))
    assert clf.time_gate(4.0) == pytest.approx(3.5)
    assert clf.time_gate(20.0) == pytest.approx(5.0)
    assert priority_probability(clf, 4.0, -10.0, 4.0) == 0.0
    assert priority_probability(clf, 5.0, -10.0, 20.0) == 0.0
    with pytest.raises(ValueError):
        priority_probability(clf, 0.0, 0.0, -1.0)


def test_classifier_validation():
    rng = np.random.default_rng(1)
    clf = random_classifier(rng)
    with pytest.raises(ModelError):
        clf.with_gate(cr1=0.0)
    with pytest.raises(ModelError):
        clf.with_gate(cp=1.0)
    with pytest.raises(ModelError):
        PriorityClassifier(clf.layers[:2])
    out = clf.mlp(rng.normal(0, 50, 100), rng.normal(0, 50, 100))
    assert np.all((out >= 0) & (out <= 1))


# --- fitting -------------------------------------------------------------

def _pairs_on_curves(c_minus, c_plus, n=4000, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    # every angle bin holds a single angle, so bin means sit exactly on the curve
    centres = (np.arange(18) + 0.5) * math.pi / 18
    for _ in range(n):
        th = float(rng.choice(centres))
        dv = rng.uniform(-10, 10)
        if rng.random() < 0.5:
            out.append(InteractionPair(dv, th, float(np.polyval(c_minus, th))))
        else:
            out.append(InteractionPair(dv, th, float(np.polyval(c_plus, th))))
    return out


def test_exact_quadratic_recovery():
    c_minus, c_plus = [0.1, -0.3, -1.2], [0.05, 0.2, 1.4]
    m = fit_protection_model(_pairs_on_curves(c_minus, c_plus), sigma_level=3.0)
    # zero spread: the envelope is the curve itself, sampled at each bin mean
    assert np.allclose(m.c2, c_minus, atol=1e-9)
    assert np.allclose(m.c4, c_plus, atol=1e-9)


def test_sigma_zero_gives_bin_means():
    pairs = generate_interaction_pairs(PairRuleConfig(), 3000, 5)
    m = fit_protection_model(pairs, sigma_level=0.0)
    info = m.fit_info["c3"]
    dv = np.array([p.delta_v for p in pairs if p.delta_t > 0])
    dt = np.array([p.delta_t for p in pairs if p.delta_t > 0])
    idx = np.floor((dv + 10.0) / 0.5).astype(int)
    means = [dt[idx == b].mean() for b in np.unique(idx) if (idx == b).sum() >= 5]
    assert np.allclose(info["envelope"], means, atol=1e-12)


def test_normal_envelope_constant_terms():
    rng = np.random.default_rng(7)
    pairs = []
    for _ in range(20000):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        pairs.append(InteractionPair(rng.uniform(-10, 10), rng.uniform(0, math.pi),
                                     sign * 2.5 + 0.3 * rng.normal()))
    m = fit_protection_model(pairs, sigma_level=3.0)
    # oracle: empirical mean -/+ 3 std of each half-population
    dt = np.array([p.delta_t for p in pairs])
    neg, pos = dt[dt < 0], dt[dt > 0]
    want_minus = neg.mean() + 3 * neg.std()
    want_plus = pos.mean() - 3 * pos.std()
    assert want_minus == pytest.approx(-1.6, abs=0.05)
    assert want_plus == pytest.approx(1.6, abs=0.05)
    for c, want in ((m.c1, want_minus), (m.c2, want_minus), (m.c3, want_plus), (m.c4, want_plus)):
        assert c[-1] == pytest.approx(want, abs=0.1)


def test_fit_needs_data():
    with pytest.raises(InsufficientDataError):
        fit_protection_model(_pairs_on_curves([0, 0, -1], [0, 0, 1], n=40))


# --- training ------------------------------------------------------------

def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    params = _init_params([2, 6, 6, 1], rng)
    x = rng.normal(size=(40, 2))
    y = (rng.random(40) < 0.5).astype(float)
    grads = bce_grad(params, x, y)
    h = 1e-6
    for p, g in zip(params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = bce_loss(params, x, y)
            p[idx] = old - h
            down = bce_loss(params, x, y)
            p[idx] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-4 * max(abs(fd), abs(g[idx]), 1e-3)


def test_empty_training_set():
    with pytest.raises(InsufficientDataError):
        train_classifier([], ProtectionTimeModel.constant(-1, 1))


def test_separable_set_and_monotone_in_m_plus():
    cfg = PairRuleConfig(plus_weight=0.0)
    train = generate_interaction_pairs(cfg, 1500, 0)
    val = generate_interaction_pairs(cfg, 1500, 1)
    model = cfg.rule_protection()
    clf = train_classifier(train, model, epochs=1500, seed=0)
    x, y = pair_features(val, model)
    assert accuracy(clf, x, y) >= 0.99


def test_trained_model_monotone_in_m_plus(model):
    _, clf = model
    mp = np.linspace(-20, 20, 201)
    for mm in (-2.0, -1.0, 0.0, 1.0):
        p = clf.mlp(np.full_like(mp, mm), mp)
        assert np.all(np.diff(p) <= 1e-6)


def test_trained_model_favours_early_ego(model):
    _, clf = model
    assert priority_probability(clf, -8.0, 5.0, 1.0) > 0.95


# --- model file ----------------------------------------------------------

def test_model_round_trip(model):
    prot, clf = model
    text = dump_model(prot, clf)
    prot2, clf2 = parse_model(text)
    assert dump_model(prot2, clf2) == text
    for a, b in zip(clf.layers, clf2.layers):
        assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)


def test_model_parse_errors_report_lines(model):
    text = dump_model(*model)
    lines = text.splitlines()
    with pytest.raises(ModelFileError, match="line 1"):
        parse_model("bogus\n" + text)
    bad = list(lines)
    bad[3] = "C1 1 2 x"
    with pytest.raises(ModelFileError, match="line 4"):
        parse_model("\n".join(bad))
    bad = list(lines)
    bad[4] = "C2 0 0.3183098861837907 1"
    with pytest.raises(ModelFileError, match="negative"):
        parse_model("\n".join(bad))
    with pytest.raises(ModelFileError, match="end of file"):
        parse_model("\n".join(lines[:12]))
