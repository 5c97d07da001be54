"""Temporal evolution primitives: statistics, adaptive thresholds and discretization.

Four categorical primitives describe how a forecast segment Y evolves relative
to its observation segment X: mean shift, volatility shift, shape and lag/decay.
:func:`extract_all` is the deterministic ground-truth map from (X, Y) to labels.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .series import Window, first_difference


class PrimitiveKind(str, enum.Enum):
    MEAN_SHIFT = "mean_shift"
    VOLATILITY = "volatility"
    SHAPE = "shape"
    LAG = "lag"

    @property
    def candidates(self) -> tuple[str, ...]:
        return CANDIDATES[self]

    @property
    def line_key(self) -> str:
        """Key used on the structured-response output line."""
        return LINE_KEYS[self]

    def index_of(self, value: str) -> int:
        return CANDIDATES[self].index(value)


KINDS: tuple[PrimitiveKind, ...] = tuple(PrimitiveKind)

CANDIDATES: dict[PrimitiveKind, tuple[str, ...]] = {
    PrimitiveKind.MEAN_SHIFT: ("strong-rise", "mild-rise", "stable", "mild-drop", "strong-drop"),
    PrimitiveKind.VOLATILITY: ("surge", "rise", "stable", "fall", "calm"),
    PrimitiveKind.SHAPE: ("ascend", "descend", "peak", "trough", "oscillate"),
    PrimitiveKind.LAG: ("early-fade", "early-persist", "mid-fade", "mid-persist", "late", "diffuse"),
}

LINE_KEYS: dict[PrimitiveKind, str] = {
    PrimitiveKind.MEAN_SHIFT: "Mean Shift",
    PrimitiveKind.VOLATILITY: "Volatility",
    PrimitiveKind.SHAPE: "Shape",
    PrimitiveKind.LAG: "Lag",
}


@dataclass(frozen=True)
class PrimitiveLabel:
    kind: PrimitiveKind
    value: str

    def __post_init__(self):
        kind = PrimitiveKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.value not in kind.candidates:
            raise ValueError(f"{self.value!r} is not a valid {kind.value} label")

    @property
    def index(self) -> int:
        return self.kind.index_of(self.value)


@dataclass(frozen=True)
class PrimitiveVector:
    mean: PrimitiveLabel
    vol: PrimitiveLabel
    shape: PrimitiveLabel
    lag: PrimitiveLabel

    def __post_init__(self):
        for label, kind in zip(self.as_tuple(), KINDS):
            if label.kind is not kind:
                raise ValueError(f"slot for {kind.value} holds a {label.kind.value} label")

    def as_tuple(self) -> tuple[PrimitiveLabel, ...]:
        return (self.mean, self.vol, self.shape, self.lag)

    def __getitem__(self, kind: PrimitiveKind) -> PrimitiveLabel:
        return self.as_tuple()[KINDS.index(PrimitiveKind(kind))]

    def values(self) -> tuple[str, ...]:
        return tuple(label.value for label in self.as_tuple())

    def indices(self) -> tuple[int, ...]:
        return tuple(label.index for label in self.as_tuple())

    @classmethod
    def from_values(cls, values: Sequence[str]) -> "PrimitiveVector":
        return cls(*(PrimitiveLabel(k, v) for k, v in zip(KINDS, values)))


@dataclass(frozen=True)
class ThresholdConfig:
    """Quantile levels and fixed defaults used by :func:`fit_thresholds`."""

    q_low: float = 0.60
    q_high: float = 0.85
    shape_fraction: float = 0.25
    n_fcst: int = 4
    kappa1: float = 1.0 / 3.0
    kappa2: float = 2.0 / 3.0
    rho: float = 0.4
    eta: Optional[float] = None  # defaults to 1.5 / n_fcst
    alpha: float = 0.5
    eps: float = 1e-8
    min_windows: int = 50


@dataclass(frozen=True)
class ThresholdSet:
    tau1_mean: float
    tau2_mean: float
    tau1_vol: float
    tau2_vol: float
    tau_shape: float
    kappa1: float = 1.0 / 3.0
    kappa2: float = 2.0 / 3.0
    rho: float = 0.4
    eta: float = 0.375
    alpha: float = 0.5
    eps: float = 1e-8
    n_fcst: int = 4

    def __post_init__(self):
        if not 0 < self.tau1_mean < self.tau2_mean:
            raise ValueError(f"need 0 < tau1_mean < tau2_mean, got {self.tau1_mean}, {self.tau2_mean}")
        if not 0 < self.tau1_vol < self.tau2_vol:
            raise ValueError(f"need 0 < tau1_vol < tau2_vol, got {self.tau1_vol}, {self.tau2_vol}")
        if not self.tau_shape > 0:
            raise ValueError("tau_shape must be positive")
        if not 0 < self.kappa1 < self.kappa2 < 1:
            raise ValueError("need 0 < kappa1 < kappa2 < 1")
        if not (0 < self.rho < 1 and 0 < self.eta < 1):
            raise ValueError("rho and eta must lie in (0, 1)")
        if self.alpha < 0 or not self.eps > 0:
            raise ValueError("alpha must be >= 0 and eps > 0")
        if int(self.n_fcst) != self.n_fcst or self.n_fcst < 2:
            raise ValueError("n_fcst must be an integer >= 2")

    def check_horizon(self, H: int) -> None:
        if H % self.n_fcst:
            raise ValueError(f"n_fcst={self.n_fcst} does not divide H={H}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSet":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown threshold fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ThresholdSet":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LagProfile:
    pi: np.ndarray
    centroid_c: float
    tail_d: float
    peak_q: float
    argmax_i: int


def _std(v: np.ndarray) -> float:
    return float(np.std(v))


def mean_shift_stat(X, Y, eps: float = 1e-8) -> float:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    return float((Y.mean() - X.mean()) / max(_std(X), eps))


def volatility_stat(X, Y, eps: float = 1e-8) -> float:
    sx = _std(first_difference(X))
    sy = _std(first_difference(Y))
    return float(math.log((sy + eps) / (sx + eps)))


def _five_band(stat: float, tau1: float, tau2: float, names: tuple[str, ...]) -> str:
    # boundaries belong to the inner band
    if stat > tau2:
        return names[0]
    if stat > tau1:
        return names[1]
    if stat >= -tau1:
        return names[2]
    if stat >= -tau2:
        return names[3]
    return names[4]


def classify_mean_shift(delta_mu: float, tau1: float, tau2: float) -> PrimitiveLabel:
    kind = PrimitiveKind.MEAN_SHIFT
    return PrimitiveLabel(kind, _five_band(delta_mu, tau1, tau2, kind.candidates))


def classify_volatility(r_sigma: float, tau1: float, tau2: float) -> PrimitiveLabel:
    kind = PrimitiveKind.VOLATILITY
    return PrimitiveLabel(kind, _five_band(r_sigma, tau1, tau2, kind.candidates))


def _split_patches(Y: np.ndarray, n_fcst: int) -> np.ndarray:
    if n_fcst < 2:
        raise ValueError("n_fcst must be >= 2")
    if Y.shape[0] % n_fcst:
        raise ValueError(f"n_fcst={n_fcst} does not divide H={Y.shape[0]}")
    return Y.reshape(n_fcst, -1)


def shape_signs(Y, n_fcst: int, tau_shape: float) -> np.ndarray:
    means = _split_patches(np.asarray(Y, dtype=float), n_fcst).mean(axis=1)
    diffs = np.diff(means)
    return np.where(diffs > tau_shape, 1, np.where(diffs < -tau_shape, -1, 0)).astype(int)


def classify_shape(signs: Iterable[int]) -> PrimitiveLabel:
    kind = PrimitiveKind.SHAPE
    signs = [int(s) for s in signs]
    if not signs:
        raise ValueError("classify_shape needs at least one sign")
    if all(s >= 0 for s in signs) and 1 in signs:
        return PrimitiveLabel(kind, "ascend")
    if all(s <= 0 for s in signs) and -1 in signs:
        return PrimitiveLabel(kind, "descend")
    nonzero = [s for s in signs if s != 0]
    changes = [(a, b) for a, b in zip(nonzero, nonzero[1:]) if a != b]
    if len(changes) == 1:
        return PrimitiveLabel(kind, "peak" if changes[0] == (1, -1) else "trough")
    # two or more reversals, or an all-flat sequence
    return PrimitiveLabel(kind, "oscillate")


def lag_profile(X, Y, n_fcst: int, alpha: float = 0.5, eps: float = 1e-8) -> LagProfile:
    X = np.asarray(X, dtype=float)
    patches = _split_patches(np.asarray(Y, dtype=float), n_fcst)
    if patches.shape[1] < 2:
        raise ValueError("each forecast patch needs at least 2 values for its difference std")
    sx = max(_std(X), eps)
    dx = _std(first_difference(X))
    level = np.abs((patches.mean(axis=1) - X.mean()) / sx)
    du = np.std(np.diff(patches, axis=1), axis=1)
    a = level + alpha * np.abs(np.log((du + eps) / (dx + eps)))
    total = a.sum()
    if total < eps:
        pi = np.full(n_fcst, 1.0 / n_fcst)
    else:
        pi = a / total
    c = float(np.dot(pi, np.arange(n_fcst) / (n_fcst - 1)))
    i_star = int(np.argmax(pi))  # first index on ties
    return LagProfile(
        pi=pi,
        centroid_c=c,
        tail_d=float(pi[i_star + 1 :].sum()),
        peak_q=float(pi.max()),
        argmax_i=i_star,
    )


def classify_lag(profile: LagProfile, kappa1: float, kappa2: float, rho: float, eta: float) -> PrimitiveLabel:
    kind = PrimitiveKind.LAG
    if profile.peak_q <= eta:
        return PrimitiveLabel(kind, "diffuse")
    c, d = profile.centroid_c, profile.tail_d
    if c > kappa2:
        return PrimitiveLabel(kind, "late")
    stage = "early" if c <= kappa1 else "mid"
    return PrimitiveLabel(kind, f"{stage}-{'fade' if d <= rho else 'persist'}")


@dataclass(frozen=True)
class PrimitiveStats:
    """Raw statistics behind one window's labels."""

    delta_mu: float
    r_sigma: float
    signs: tuple[int, ...]
    lag: LagProfile

    def exogenous(self) -> np.ndarray:
        return np.array(
            [self.delta_mu, self.r_sigma, self.lag.centroid_c, self.lag.tail_d, self.lag.peak_q]
        )

    def to_dict(self) -> dict:
        return {
            "delta_mu": self.delta_mu,
            "r_sigma": self.r_sigma,
            "signs": list(self.signs),
            "pi": self.lag.pi.tolist(),
            "c": self.lag.centroid_c,
            "d": self.lag.tail_d,
            "q": self.lag.peak_q,
        }


def compute_stats(X, Y, thr: ThresholdSet) -> PrimitiveStats:
    return PrimitiveStats(
        delta_mu=mean_shift_stat(X, Y, thr.eps),
        r_sigma=volatility_stat(X, Y, thr.eps),
        signs=tuple(int(s) for s in shape_signs(Y, thr.n_fcst, thr.tau_shape)),
        lag=lag_profile(X, Y, thr.n_fcst, thr.alpha, thr.eps),
    )


def classify_stats(stats: PrimitiveStats, thr: ThresholdSet) -> PrimitiveVector:
    return PrimitiveVector(
        classify_mean_shift(stats.delta_mu, thr.tau1_mean, thr.tau2_mean),
        classify_volatility(stats.r_sigma, thr.tau1_vol, thr.tau2_vol),
        classify_shape(stats.signs),
        classify_lag(stats.lag, thr.kappa1, thr.kappa2, thr.rho, thr.eta),
    )


def extract_all(X, Y, thr: ThresholdSet) -> PrimitiveVector:
    return classify_stats(compute_stats(X, Y, thr), thr)


def fit_thresholds(train_windows: Sequence[Window], cfg: ThresholdConfig = ThresholdConfig()) -> ThresholdSet:
    usable = [w for w in train_windows if w.y_fut is not None]
    if len(usable) < cfg.min_windows:
        raise ValueError(
            f"fit_thresholds needs at least {cfg.min_windows} windows with forecast segments, got {len(usable)}"
        )
    dmu = np.array([abs(mean_shift_stat(w.x_obs, w.y_fut, cfg.eps)) for w in usable])
    rsig = np.array([abs(volatility_stat(w.x_obs, w.y_fut, cfg.eps)) for w in usable])
    sx = np.array([np.std(w.x_obs) for w in usable])

    def pair(values: np.ndarray, name: str) -> tuple[float, float]:
        t1, t2 = (float(v) for v in np.quantile(values, [cfg.q_low, cfg.q_high]))
        if not 0 < t1 < t2:
            raise ValueError(
                f"degenerate {name} distribution: quantiles q{cfg.q_low}={t1:g}, q{cfg.q_high}={t2:g} "
                f"(min={values.min():g}, max={values.max():g}, {len(np.unique(values))} distinct values)"
            )
        return t1, t2

    t1m, t2m = pair(dmu, "|mean shift|")
    t1v, t2v = pair(rsig, "|volatility shift|")
    tau_shape = cfg.shape_fraction * float(np.median(sx))
    if not tau_shape > 0:
        raise ValueError("degenerate training windows: median observation std is zero")
    return ThresholdSet(
        tau1_mean=t1m,
        tau2_mean=t2m,
        tau1_vol=t1v,
        tau2_vol=t2v,
        tau_shape=tau_shape,
        kappa1=cfg.kappa1,
        kappa2=cfg.kappa2,
        rho=cfg.rho,
        eta=cfg.eta if cfg.eta is not None else 1.5 / cfg.n_fcst,
        alpha=cfg.alpha,
        eps=cfg.eps,
        n_fcst=cfg.n_fcst,
    )
