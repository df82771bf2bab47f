"""Synthetic interaction pairs for fitting and training the IPM.

The generating rule: both agents' arrival bounds are drawn from random
kinematic contexts, protection times follow ``rule_protection``, and the
ego passes first exactly when ``m_minus + plus_weight * m_plus < offset``
(plus optional label noise). Larger ``m_plus`` therefore never makes
overtaking more likely. The time gap is drawn from a normal distribution
whose mean sits ``sigma_level`` standard deviations beyond the protection
time, so the fitted 3-sigma envelope recovers it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..ipm import (InsufficientDataError, InteractionPair, ProtectionTimeModel, arrival_bounds,
                   clip_features, priority_features, protection_times)


@dataclass(frozen=True)
class PairRuleConfig:
    plus_weight: float = 0.5
    offset: float = 0.0
    label_noise: float = 0.0          # std of noise added to the decision score (s)
    gap_sigma: float = 0.3            # std of the time gap around its mean (s)
    sigma_level: float = 3.0
    v_range: tuple = (0.5, 12.0)
    d_range: tuple = (2.0, 60.0)
    a_max: float = 1.5
    a_min: float = -3.0
    # protection envelope of the rule, as functions of delta_theta
    minus_base: float = -1.2
    minus_slope: float = -0.25
    plus_base: float = 1.5
    plus_slope: float = 0.2

    def rule_protection(self) -> ProtectionTimeModel:
        top_minus = self.minus_base                     # least negative value over the domain
        low_plus = self.plus_base                       # smallest positive value
        return ProtectionTimeModel([0, 0, 0, 0, top_minus], [0, self.minus_slope, self.minus_base],
                                   [0, 0, 0, 0, low_plus], [0, self.plus_slope, self.plus_base])


def rule_score(cfg: PairRuleConfig, m_minus: float, m_plus: float) -> float:
    mm, mp = clip_features(m_minus, m_plus)
    return float(mm + cfg.plus_weight * mp - cfg.offset)


def generate_interaction_pairs(cfg: PairRuleConfig, n: int, seed: int) -> list[InteractionPair]:
    """``n`` labelled pairs, deterministic for a given seed."""
    if n <= 0:
        raise InsufficientDataError("n must be positive")
    rng = np.random.default_rng(seed)
    model = cfg.rule_protection()
    out = []
    for _ in range(n):
        dtheta = float(rng.uniform(0.0, math.pi))
        ev, av = rng.uniform(*cfg.v_range, size=2)
        ed, ad = rng.uniform(*cfg.d_range, size=2)
        ego = arrival_bounds(ev, ed, cfg.a_max, cfg.a_min)
        agent = arrival_bounds(av, ad, cfg.a_max, cfg.a_min)
        dtm, dtp = protection_times(model, 0.0, dtheta)
        mm, mp = priority_features(ego, agent, dtm, dtp)
        score = rule_score(cfg, mm, mp)
        if cfg.label_noise > 0:
            score += float(rng.normal(0.0, cfg.label_noise))
        overtake = score < 0.0
        z = float(rng.normal())
        if overtake:
            dt = dtm - cfg.sigma_level * cfg.gap_sigma + cfg.gap_sigma * z
            dt = min(dt, -1e-3)
        else:
            dt = dtp + cfg.sigma_level * cfg.gap_sigma + cfg.gap_sigma * z
            dt = max(dt, 1e-3)
        out.append(InteractionPair(delta_v=float(ev - av), delta_theta=dtheta, delta_t=dt,
                                   ego_v0=float(ev), ego_d=float(ed), agent_v0=float(av),
                                   agent_d=float(ad), ego_a_max=cfg.a_max, ego_a_min=cfg.a_min,
                                   agent_a_max=cfg.a_max, agent_a_min=cfg.a_min))
    return out


@dataclass
class FitReport:
    protection: ProtectionTimeModel
    classifier: object
    train_accuracy: float
    val_accuracy: float
    n_train: int
    n_val: int
    overtake_share: float

    def lines(self) -> list[str]:
        out = [f"pairs: train={self.n_train} validation={self.n_val} overtake_share={self.overtake_share:.4f}",
               f"sigma_level: {self.protection.fit_info.get('sigma_level')}"]
        for name in ("c1", "c2", "c3", "c4"):
            info = self.protection.fit_info.get(name)
            if info is not None:
                out.append(f"{name}: bins={len(info['x'])} rms_residual={info['rms_residual']:.6f}")
        out.append(f"train_accuracy: {self.train_accuracy:.4f}")
        out.append(f"validation_accuracy: {self.val_accuracy:.4f}")
        return out


def fit_synthetic(cfg: PairRuleConfig = PairRuleConfig(), n_train: int = 5000, n_val: int = 10000,
                  seed: int = 0, sigma_level: float = 3.0, epochs: int = 3000, **gate) -> FitReport:
    """Generate pairs, fit the protection curves, train and validate the classifier."""
    from ..ipm import accuracy, fit_protection_model, pair_features, train_classifier

    train = generate_interaction_pairs(cfg, n_train, seed)
    val = generate_interaction_pairs(cfg, n_val, seed + 1)
    model = fit_protection_model(train, sigma_level=sigma_level)
    clf = train_classifier(train, model, epochs=epochs, seed=seed, **gate)
    xt, yt = pair_features(train, model)
    xv, yv = pair_features(val, model)
    return FitReport(model, clf, accuracy(clf, xt, yt), accuracy(clf, xv, yv), n_train, n_val,
                     float(np.mean(yt)))
