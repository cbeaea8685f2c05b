"""Regime-switching vector autoregressions standing in for sector datasets."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .frame import SeriesFrame


@dataclass
class Regime:
    ar: np.ndarray          # (lags, N) per-feature autoregressive coefficients
    noise: float
    drift: float | np.ndarray = 0.0
    length: int = 500

    def __post_init__(self):
        self.ar = np.atleast_2d(np.asarray(self.ar, dtype=np.float64))
        if self.noise < 0:
            raise ValueError("noise scale must be >= 0")
        if self.length < 1:
            raise ValueError("regime length must be >= 1")


@dataclass
class SynthSpec:
    regimes: list[Regime]
    coupling: np.ndarray    # (N, N): x_t += coupling @ x_{t-1}
    seed: int = 0
    train_fraction: float = 0.7
    burn_in: int = 200
    min_length: int = 1
    feature_names: list[str] | None = None
    start: str = "2000-01-03"
    standardize_target: bool = True

    def __post_init__(self):
        self.coupling = np.asarray(self.coupling, dtype=np.float64)
        n = self.coupling.shape[0]
        if self.coupling.shape != (n, n):
            raise ValueError("coupling must be square")
        for r in self.regimes:
            if r.ar.shape[1] != n:
                raise ValueError(f"regime AR coefficients cover {r.ar.shape[1]} features, coupling has {n}")
            if r.length < self.min_length:
                raise ValueError(f"regime length {r.length} below minimum {self.min_length}")

    @property
    def num_features(self) -> int:
        return self.coupling.shape[0]


def spectral_radius(ar: np.ndarray, coupling: np.ndarray) -> float:
    lags, n = ar.shape
    comp = np.zeros((lags * n, lags * n))
    comp[:n, :n] = np.diag(ar[0]) + coupling
    for l in range(1, lags):
        comp[:n, l * n:(l + 1) * n] = np.diag(ar[l])
        comp[l * n:(l + 1) * n, (l - 1) * n:l * n] = np.eye(n)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def synth_generate(spec: SynthSpec) -> SeriesFrame:
    """Simulate the regimes back to back; deterministic in ``spec.seed``.

    Column 0 is the target and is standardized with the mean and standard
    deviation of the first ``train_fraction`` of rows. Unstable regimes
    (spectral radius >= 1) raise a warning, are recorded in ``meta`` and
    have their state clipped to +/-10 innovation standard deviations.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.num_features
    max_lags = max(r.ar.shape[0] for r in spec.regimes)
    hist = np.zeros((max_lags, n))  # hist[0] is the most recent state
    rows = []
    notes = []
    for ri, reg in enumerate(spec.regimes):
        rho = spectral_radius(reg.ar, spec.coupling)
        unstable = rho >= 1.0
        if unstable:
            msg = f"regime {ri}: spectral radius {rho:.4f} >= 1; clipping at +/-10 noise std"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
        bound = 10.0 * (reg.noise if reg.noise > 0 else 1.0)
        drift = np.broadcast_to(np.asarray(reg.drift, dtype=np.float64), (n,))
        steps = reg.length + (spec.burn_in if ri == 0 else 0)
        for t in range(steps):
            x = spec.coupling @ hist[0] + drift
            for l in range(reg.ar.shape[0]):
                x = x + reg.ar[l] * hist[l]
            x = x + reg.noise * rng.standard_normal(n)
            if unstable:
                x = np.clip(x, -bound, bound)
            hist = np.roll(hist, 1, axis=0)
            hist[0] = x
            if ri > 0 or t >= spec.burn_in:
                rows.append(x)
    data = np.array(rows) if rows else np.zeros((0, n))
    meta = {"seed": spec.seed, "warnings": notes}
    if spec.standardize_target and len(data):
        n_train = max(1, int(spec.train_fraction * len(data)))
        mu = data[:n_train, 0].mean()
        sd = data[:n_train, 0].std()
        data[:, 0] = data[:, 0] - mu
        if sd > 0:
            data[:, 0] = data[:, 0] / sd
        meta["target_mean"], meta["target_std"] = float(mu), float(sd)
    names = spec.feature_names or ["target"] + [f"x{i}" for i in range(1, n)]
    ts = np.datetime64(spec.start, "D") + np.arange(len(data))
    return SeriesFrame(ts, {name: data[:, i].copy() for i, name in enumerate(names)}, meta)


# ------------------------------------------------------------------ presets

PRESETS = ("synth-financial", "synth-industrials", "synth-technology")


def _base_coupling(n: int) -> np.ndarray:
    c = np.zeros((n, n))
    # shared "market" factors x1, x2 drive every sector's target
    c[0, 1] = 0.6
    c[0, 2] = -0.5
    c[3, 1] = 0.2
    c[4, 2] = 0.2
    return c


def preset_spec(name: str, seed: int = 0, length: int = 1600, num_features: int = 8) -> SynthSpec:
    """One of the three sector stand-ins. They share the two market factors
    and differ in their sector-specific drivers and regime parameters."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")
    if num_features < 6:
        raise ValueError("presets need at least 6 features")
    n = num_features
    c = _base_coupling(n)
    ar = np.full((1, n), 0.8)
    ar[0, 0] = 0.1
    ar[0, 1], ar[0, 2] = 0.9, 0.85
    if name == "synth-financial":
        c[0, 3], c[0, 5] = 0.6, 0.0
        ar2 = ar.copy()
        ar2[0, 3] = 0.6
        regimes = [Regime(ar, 0.6, 0.0, length // 2), Regime(ar2, 0.8, 0.02, length - length // 2)]
        offset = 11
    elif name == "synth-industrials":
        c[0, 3], c[0, 4] = -0.4, 0.6
        ar2 = ar.copy()
        ar2[0, 4] = 0.9
        regimes = [Regime(ar, 0.5, 0.0, length // 2), Regime(ar2, 0.6, -0.01, length - length // 2)]
        offset = 23
    else:
        c[0, 5], c[0, 3] = 0.6, -0.3
        ar2 = ar.copy()
        ar2[0, 5] = 0.9
        regimes = [Regime(ar, 0.5, 0.0, length // 2), Regime(ar2, 0.55, 0.01, length - length // 2)]
        offset = 37
    return SynthSpec(regimes=regimes, coupling=c, seed=seed * 1000 + offset)


def preset_frame(name: str, seed: int = 0, length: int = 1600, num_features: int = 8) -> SeriesFrame:
    frame = synth_generate(preset_spec(name, seed, length, num_features))
    frame.meta["preset"] = name
    return frame
