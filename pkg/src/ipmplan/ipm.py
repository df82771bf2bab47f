"""Interaction point model: protection times, arrival bounds and priority."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

DV_DOMAIN = (-10.0, 10.0)
DTHETA_DOMAIN = (0.0, math.pi)
DV_BIN = 0.5
DTHETA_BIN = math.pi / 18.0
MIN_BIN_COUNT = 5
MIN_CURVE_SAMPLES = 50
# stand-in for an infinite feature value (an agent that may never arrive)
FEATURE_CAP = 100.0


class ModelError(ValueError):
    """Invalid model coefficients or weights."""


class InsufficientDataError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, msg: str, final_loss: float):
        super().__init__(f"{msg} (final loss {final_loss:.6g})")
        self.final_loss = final_loss


class ModelFileError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InteractionPair:
    """One observed passage of two agents through a shared point.

    ``delta_t`` < 0 means the ego went first.
    """

    delta_v: float
    delta_theta: float
    delta_t: float
    ego_v0: float = 0.0
    ego_d: float = 0.0
    agent_v0: float = 0.0
    agent_d: float = 0.0
    ego_a_max: float = 1.5
    ego_a_min: float = -3.0
    agent_a_max: float = 1.5
    agent_a_min: float = -3.0

    def __post_init__(self):
        if self.delta_t == 0.0:
            raise ValueError("delta_t must be nonzero")
        if not 0.0 <= self.delta_theta <= math.pi:
            raise ValueError("delta_theta outside [0, pi]")

    @property
    def label(self) -> bool:
        return self.delta_t < 0.0


# ---------------------------------------------------------------------------
# protection time
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProtectionTimeModel:
    """Polynomial envelopes of the passing time gap, coefficients highest degree first.

    c1/c3: quartics in delta_v for the overtaking/yielding bound,
    c2/c4: quadratics in delta_theta.
    """

    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray
    fit_info: Optional[dict] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name, deg in (("c1", 4), ("c2", 2), ("c3", 4), ("c4", 2)):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            if arr.shape != (deg + 1,):
                raise ModelError(f"{name} needs {deg + 1} coefficients, got {arr.size}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    def validate(self, n: int = 2001) -> None:
        dv = np.linspace(*DV_DOMAIN, n)
        th = np.linspace(*DTHETA_DOMAIN, n)
        if np.any(np.polyval(self.c1, dv) >= 0) or np.any(np.polyval(self.c2, th) >= 0):
            raise ModelError("overtaking protection time must stay negative on its domain")
        if np.any(np.polyval(self.c3, dv) <= 0) or np.any(np.polyval(self.c4, th) <= 0):
            raise ModelError("yielding protection time must stay positive on its domain")

    @classmethod
    def constant(cls, dt_minus: float, dt_plus: float) -> "ProtectionTimeModel":
        z4, z2 = [0.0] * 4, [0.0] * 2
        return cls(z4 + [dt_minus], z2 + [dt_minus], z4 + [dt_plus], z2 + [dt_plus])

    def curves(self, delta_v: float, delta_theta: float) -> tuple[float, float, float, float]:
        """(minus(dv), minus(dtheta), plus(dv), plus(dtheta)) after clamping."""
        dv = min(max(delta_v, DV_DOMAIN[0]), DV_DOMAIN[1])
        th = min(max(delta_theta, DTHETA_DOMAIN[0]), DTHETA_DOMAIN[1])
        return (float(np.polyval(self.c1, dv)), float(np.polyval(self.c2, th)),
                float(np.polyval(self.c3, dv)), float(np.polyval(self.c4, th)))


def protection_times(model: ProtectionTimeModel, delta_v: float, delta_theta: float) -> tuple[float, float]:
    """Combined (dt_minus, dt_plus): the wider of the speed and angle envelopes."""
    m_v, m_th, p_v, p_th = model.curves(delta_v, delta_theta)
    return min(m_v, m_th), max(p_v, p_th)


# ---------------------------------------------------------------------------
# arrival bounds and features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrivalBounds:
    t_min: float
    t_max: float  # math.inf when the agent may never arrive

    def __post_init__(self):
        if not 0.0 <= self.t_min <= self.t_max:
            raise ValueError(f"invalid arrival bounds ({self.t_min}, {self.t_max})")


def arrival_bounds(v0: float, d: float, a_max: float, a_min: float) -> ArrivalBounds:
    """Earliest/latest arrival over distance ``d`` under constant acceleration.

    The latest arrival never decelerates harder than stopping exactly at the
    point, ``-v0**2 / (2 d)``; a standing agent (v0 = 0) may never arrive.
    """
    if d < 0:
        raise ValueError("distance must be non-negative")
    if a_max <= 0 or a_min >= 0:
        raise ValueError("need a_max > 0 > a_min")
    v0 = max(v0, 0.0)
    if d == 0.0:
        return ArrivalBounds(0.0, 0.0)
    t_min = (math.sqrt(v0 * v0 + 2.0 * a_max * d) - v0) / a_max
    if v0 == 0.0:
        return ArrivalBounds(t_min, math.inf)
    stop_decel = -v0 * v0 / (2.0 * d)
    if a_min <= stop_decel:
        # stopping exactly at the point is the slowest admissible approach
        t_max = 2.0 * d / v0
    else:
        t_max = (v0 - math.sqrt(max(v0 * v0 + 2.0 * a_min * d, 0.0))) / -a_min
    return ArrivalBounds(t_min, max(t_max, t_min))


def priority_features(ego: ArrivalBounds, agent: ArrivalBounds, dt_minus: float,
                      dt_plus: float) -> tuple[float, float]:
    """(m_minus, m_plus): overtaking and giving-way ability in seconds.

    Infinite latest arrivals: an agent that may never arrive gives -inf
    (it can always yield), otherwise an ego that may never arrive gives +inf.
    """
    m_minus = ego.t_min - agent.t_min + abs(dt_minus)
    if math.isinf(agent.t_max):
        m_plus = -math.inf
    elif math.isinf(ego.t_max):
        m_plus = math.inf
    else:
        m_plus = ego.t_max - agent.t_max - abs(dt_plus)
    return m_minus, m_plus


def clip_features(m_minus, m_plus):
    return (np.clip(m_minus, -FEATURE_CAP, FEATURE_CAP),
            np.clip(m_plus, -FEATURE_CAP, FEATURE_CAP))


# ---------------------------------------------------------------------------
# MLP priority classifier
# ---------------------------------------------------------------------------

_ACT = {
    "tanh": np.tanh,
    "sigmoid": lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)),
    "linear": lambda z: z,
}


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        b = np.array(self.bias, dtype=float).ravel()
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ModelError("layer weight/bias shapes do not match")
        if self.activation not in _ACT:
            raise ModelError(f"unknown activation {self.activation!r}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True, eq=False)
class PriorityClassifier:
    """Gated 3-layer MLP giving P(ego passes first | m_minus, m_plus)."""

    layers: tuple
    cr1: float = 0.5
    cr2: float = 1.5
    cr3: float = 5.0
    cp: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) != 3:
            raise ModelError("classifier needs exactly 3 layers")
        if self.layers[0].weight.shape[1] != 2 or self.layers[-1].weight.shape[0] != 1:
            raise ModelError("classifier maps 2 features to 1 output")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ModelError("layer sizes do not chain")
        if self.layers[-1].activation != "sigmoid":
            raise ModelError("output layer must be sigmoid")
        if not self.cr1 > 0:
            raise ModelError("cr1 must be positive")
        if not 0 < self.cp < 1:
            raise ModelError("cp must lie in (0, 1)")

    def with_gate(self, cr1=None, cr2=None, cr3=None, cp=None) -> "PriorityClassifier":
        return PriorityClassifier(self.layers,
                                  self.cr1 if cr1 is None else cr1,
                                  self.cr2 if cr2 is None else cr2,
                                  self.cr3 if cr3 is None else cr3,
                                  self.cp if cp is None else cp)

    def mlp(self, m_minus, m_plus) -> np.ndarray:
        """Raw network output for arrays of features."""
        mm, mp = clip_features(np.asarray(m_minus, float), np.asarray(m_plus, float))
        h = np.stack([np.ravel(mm), np.ravel(mp)], axis=1)
        for layer in self.layers:
            h = _ACT[layer.activation](h @ layer.weight.T + layer.bias)
        return np.clip(h[:, 0], 0.0, 1.0).reshape(np.shape(mm))

    def time_gate(self, t_e: float) -> float:
        return min(self.cr1 * t_e + self.cr2, self.cr3)


def priority_probability(clf: PriorityClassifier, m_minus: float, m_plus: float, t_e: float) -> float:
    """Probability that the ego passes first; exactly 0 when m_minus reaches the time gate."""
    if t_e < 0:
        raise ValueError("t_e must be non-negative")
    if m_minus >= clf.time_gate(t_e):
        return 0.0
    return float(clf.mlp(m_minus, m_plus))


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _envelope(x: np.ndarray, dt: np.ndarray, width: float, lo: float, sigma_level: float,
              negative: bool):
    """Per-bin (mean input, mean -/+ sigma_level * std of dt, count)."""
    idx = np.floor((x - lo) / width).astype(int)
    xs, env, counts = [], [], []
    for b in np.unique(idx):
        sel = idx == b
        if sel.sum() < MIN_BIN_COUNT:
            continue
        mu, sd = dt[sel].mean(), dt[sel].std()
        xs.append(x[sel].mean())
        env.append(mu + sigma_level * sd if negative else mu - sigma_level * sd)
        counts.append(int(sel.sum()))
    return np.array(xs), np.array(env), np.array(counts)


def fit_protection_model(pairs: Sequence[InteractionPair], sigma_level: float = 3.0,
                         dv_bin: float = DV_BIN, dtheta_bin: float = DTHETA_BIN) -> ProtectionTimeModel:
    """Fit the four envelope polynomials to binned mean +/- sigma_level * std.

    The negative (overtaking) population is bounded from above, the positive
    (yielding) one from below. Raises InsufficientDataError when a curve has
    fewer than 50 samples or too few populated bins, and ModelError when the
    fitted curves break the sign invariant.
    """
    dv = np.array([p.delta_v for p in pairs], dtype=float)
    th = np.array([p.delta_theta for p in pairs], dtype=float)
    dt = np.array([p.delta_t for p in pairs], dtype=float)
    neg, pos = dt < 0, dt > 0
    coeffs, info = {}, {"sigma_level": sigma_level, "dv_bin": dv_bin, "dtheta_bin": dtheta_bin}
    for name, x, width, lo, deg, sel, negative in (
            ("c1", dv, dv_bin, DV_DOMAIN[0], 4, neg, True),
            ("c2", th, dtheta_bin, DTHETA_DOMAIN[0], 2, neg, True),
            ("c3", dv, dv_bin, DV_DOMAIN[0], 4, pos, False),
            ("c4", th, dtheta_bin, DTHETA_DOMAIN[0], 2, pos, False)):
        if sel.sum() < MIN_CURVE_SAMPLES:
            raise InsufficientDataError(f"{name}: {int(sel.sum())} samples, need {MIN_CURVE_SAMPLES}")
        xs, env, counts = _envelope(x[sel], dt[sel], width, lo, sigma_level, negative)
        if len(xs) < deg + 1:
            raise InsufficientDataError(f"{name}: only {len(xs)} populated bins for degree {deg}")
        c = np.polyfit(xs, env, deg, w=np.sqrt(counts))
        coeffs[name] = c
        resid = env - np.polyval(c, xs)
        info[name] = {"x": xs, "envelope": env, "count": counts,
                      "rms_residual": float(np.sqrt(np.mean(resid ** 2)))}
    return ProtectionTimeModel(coeffs["c1"], coeffs["c2"], coeffs["c3"], coeffs["c4"], fit_info=info)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def pair_features(pairs: Iterable[InteractionPair], model: ProtectionTimeModel) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix (n, 2) and labels (delta_t < 0) for a list of pairs."""
    feats, labels = [], []
    for p in pairs:
        ego = arrival_bounds(p.ego_v0, p.ego_d, p.ego_a_max, p.ego_a_min)
        agent = arrival_bounds(p.agent_v0, p.agent_d, p.agent_a_max, p.agent_a_min)
        dtm, dtp = protection_times(model, p.delta_v, p.delta_theta)
        feats.append(priority_features(ego, agent, dtm, dtp))
        labels.append(p.label)
    x = np.array(feats, dtype=float).reshape(-1, 2)
    x = np.column_stack(clip_features(x[:, 0], x[:, 1]))
    return x, np.array(labels, dtype=float)


def _init_params(sizes, rng):
    params = []
    for n_in, n_out in zip(sizes, sizes[1:]):
        params.append(rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_out, n_in)))
        params.append(np.zeros(n_out))
    return params


def _forward(params, x):
    w1, b1, w2, b2, w3, b3 = params
    h1 = np.tanh(x @ w1.T + b1)
    h2 = np.tanh(h1 @ w2.T + b2)
    z = h2 @ w3.T + b3
    return h1, h2, z[:, 0]


def bce_loss(params, x, y) -> float:
    *_, z = _forward(params, x)
    # log(1 + exp(z)) - y z, stable form
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def bce_grad(params, x, y):
    """Analytic gradient of :func:`bce_loss` w.r.t. every parameter array."""
    w1, b1, w2, b2, w3, b3 = params
    h1, h2, z = _forward(params, x)
    n = x.shape[0]
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    dz = ((p - y) / n)[:, None]
    gw3 = dz.T @ h2
    gb3 = dz.sum(axis=0)
    d2 = (dz @ w3) * (1.0 - h2 ** 2)
    gw2 = d2.T @ h1
    gb2 = d2.sum(axis=0)
    d1 = (d2 @ w2) * (1.0 - h1 ** 2)
    gw1 = d1.T @ x
    gb1 = d1.sum(axis=0)
    return [gw1, gb1, gw2, gb2, gw3, gb3]


def train_classifier(pairs: Sequence[InteractionPair], model: ProtectionTimeModel, epochs: int = 3000,
                     learning_rate: float = 0.01, hidden: int = 16, seed: int = 0,
                     max_final_loss: float = 0.2, **gate) -> PriorityClassifier:
    """Full-batch Adam on binary cross-entropy for a 2-h-h-1 tanh/tanh/sigmoid MLP.

    Features are standardised during training and the scaling is folded
    into the first layer afterwards, so the returned network reads raw
    (m_minus, m_plus) seconds.
    """
    if len(pairs) == 0:
        raise InsufficientDataError("no training pairs")
    x, y = pair_features(pairs, model)
    if y.min() == y.max():
        raise InsufficientDataError("training set has a single class")
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd[sd == 0] = 1.0
    xs = (x - mu) / sd
    rng = np.random.default_rng(seed)
    params = _init_params([2, hidden, hidden, 1], rng)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    for step in range(1, epochs + 1):
        grads = bce_grad(params, xs, y)
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mh = m[i] / (1 - b1 ** step)
            vh = v[i] / (1 - b2 ** step)
            params[i] = params[i] - learning_rate * mh / (np.sqrt(vh) + eps)
    loss = bce_loss(params, xs, y)
    if not math.isfinite(loss) or loss > max_final_loss:
        raise TrainingError("training did not converge", loss)
    w1, bb1, w2, bb2, w3, bb3 = params
    w1_raw = w1 / sd
    b1_raw = bb1 - w1_raw @ mu
    layers = (Layer(w1_raw, b1_raw, "tanh"), Layer(w2, bb2, "tanh"), Layer(w3, bb3, "sigmoid"))
    return PriorityClassifier(layers, **gate)


def accuracy(clf: PriorityClassifier, x: np.ndarray, y: np.ndarray, threshold: float = 0.5) -> float:
    pred = clf.mlp(x[:, 0], x[:, 1]) >= threshold
    return float(np.mean(pred == (y > 0.5)))


# ---------------------------------------------------------------------------
# model file
# ---------------------------------------------------------------------------

HEADER = "ipm-model v1"


def _fmt(vals) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(vals))


def dump_model(protection: ProtectionTimeModel, clf: PriorityClassifier) -> str:
    lines = [HEADER,
             "# layer: rows cols activation; then one line per weight row, then the bias line",
             "protection"]
    for name in ("c1", "c2", "c3", "c4"):
        lines.append(f"{name.upper()} {_fmt(getattr(protection, name))}")
    lines.append("classifier")
    lines.append(f"gate {_fmt([clf.cr1, clf.cr2, clf.cr3, clf.cp])}")
    for layer in clf.layers:
        rows, cols = layer.weight.shape
        lines.append(f"layer {rows} {cols} {layer.activation}")
        lines.extend(_fmt(row) for row in layer.weight)
        lines.append(_fmt(layer.bias))
    return "\n".join(lines) + "\n"


def save_model(path, protection: ProtectionTimeModel, clf: PriorityClassifier) -> None:
    Path(path).write_text(dump_model(protection, clf))


def parse_model(text: str) -> tuple[ProtectionTimeModel, PriorityClassifier]:
    rows = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    rows = [(i, ln) for i, ln in rows if ln and not ln.startswith("#")]
    if not rows or rows[0][1] != HEADER:
        raise ModelFileError(rows[0][0] if rows else 1, f"expected header {HEADER!r}")
    pos = 1

    def take():
        nonlocal pos
        if pos >= len(rows):
            raise ModelFileError(rows[-1][0] + 1, "unexpected end of file")
        pos += 1
        return rows[pos - 1]

    def floats(lineno, parts):
        try:
            return [float(p) for p in parts]
        except ValueError as exc:
            raise ModelFileError(lineno, f"bad number ({exc})") from None

    lineno, ln = take()
    if ln != "protection":
        raise ModelFileError(lineno, "expected 'protection' section")
    coeffs = {}
    for name in ("C1", "C2", "C3", "C4"):
        lineno, ln = take()
        parts = ln.split()
        if parts[0] != name:
            raise ModelFileError(lineno, f"expected {name}")
        coeffs[name.lower()] = floats(lineno, parts[1:])
    try:
        protection = ProtectionTimeModel(**coeffs)
    except ModelError as exc:
        raise ModelFileError(lineno, str(exc)) from None
    lineno, ln = take()
    if ln != "classifier":
        raise ModelFileError(lineno, "expected 'classifier' section")
    lineno, ln = take()
    parts = ln.split()
    if parts[0] != "gate" or len(parts) != 5:
        raise ModelFileError(lineno, "expected 'gate cr1 cr2 cr3 cp'")
    cr1, cr2, cr3, cp = floats(lineno, parts[1:])
    layers = []
    while pos < len(rows):
        lineno, ln = take()
        parts = ln.split()
        if parts[0] != "layer" or len(parts) != 4:
            raise ModelFileError(lineno, "expected 'layer rows cols activation'")
        try:
            r, c = int(parts[1]), int(parts[2])
        except ValueError:
            raise ModelFileError(lineno, "layer size must be integer") from None
        w = []
        for _ in range(r):
            lineno, ln = take()
            vals = floats(lineno, ln.split())
            if len(vals) != c:
                raise ModelFileError(lineno, f"expected {c} weights")
            w.append(vals)
        lineno, ln = take()
        b = floats(lineno, ln.split())
        if len(b) != r:
            raise ModelFileError(lineno, f"expected {r} biases")
        try:
            layers.append(Layer(np.array(w), np.array(b), parts[3]))
        except ModelError as exc:
            raise ModelFileError(lineno, str(exc)) from None
    try:
        clf = PriorityClassifier(tuple(layers), cr1, cr2, cr3, cp)
    except ModelError as exc:
        raise ModelFileError(lineno, str(exc)) from None
    return protection, clf


def load_model(path=None) -> tuple[ProtectionTimeModel, PriorityClassifier]:
    """Load a weights file; without a path, the bundled default model."""
    if path is None:
        path = Path(__file__).parent / "data" / "ipm_default.txt"
    return parse_model(Path(path).read_text())
