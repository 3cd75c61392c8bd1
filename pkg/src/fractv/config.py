"""Solver configuration, run reports and the shared problem setup."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .boundary_reg import CORNER_METHODS, BoundaryLift, EdgeSolveConfig, lift, restore
from .frac_ops import FracOperator, build_operator, check_alpha
from .image_pipeline import psnr, snr

# (tol_residual, tol_error, max_inner)
CRITERIA = {
    "GSC": (1e-4, 1e-8, 10),
    "SSC": (1e-7, 1e-10, 25),
}


FIDELITY_MODES = ("continuum", "area", "sum")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Parameters shared by all four solvers.

    ``lam`` weighs the fidelity term ``lam/2 ||u - z||^2``. Tolerances and the
    inner iteration cap come from ``criterion`` ("GSC" or "SSC"); pass
    ``criterion="CUSTOM"`` to set all three explicitly.

    ``fidelity="continuum"`` (default) reads ``lam`` as the weight of the
    continuous energy on the unit square. Sampling it with spacing
    ``s = 1/sqrt((N-1)(M-1))`` and dividing by ``s^(2-alpha)`` leaves pixel-unit
    operators and a fidelity ``lam s^alpha / 2 ||U - Z||^2``, so one ``lam``
    means the same problem at every resolution. ``"area"`` uses
    ``lam / (N M)`` and ``"sum"`` the bare ``lam``. ``h`` and ``h1d`` are the
    2-D and 1-D mesh widths in pixel units; ``lambda1d`` is not rescaled.
    """

    lam: float = 12000.0
    mu: float = 1.1
    gamma: float = 1.0
    alpha: float = 1.6
    criterion: str = "GSC"
    tol_residual: float | None = None
    tol_error: float | None = None
    max_outer: int = 1000
    max_inner: int | None = None
    seed: int = 0
    lambda1d: float = 0.1
    boundary_lift: bool = True
    corner_window: int | None = None
    h: float = 1.0
    h1d: float = 1.0
    fidelity: str = "continuum"
    corner_method: str = "mean"
    test_mode: bool = False

    def __post_init__(self):
        crit = self.criterion.upper()
        object.__setattr__(self, "criterion", crit)
        if crit in CRITERIA:
            bundle = dict(zip(("tol_residual", "tol_error", "max_inner"), CRITERIA[crit]))
            for name, value in bundle.items():
                given = getattr(self, name)
                if given is None:
                    object.__setattr__(self, name, value)
                elif given != value:
                    raise ConfigError(f"{crit} fixes {name}={value}; use criterion='CUSTOM' to override")
        elif crit == "CUSTOM":
            if None in (self.tol_residual, self.tol_error, self.max_inner):
                raise ConfigError("CUSTOM criterion needs tol_residual, tol_error and max_inner")
        else:
            raise ConfigError(f"unknown stopping criterion {self.criterion!r}")
        check_alpha(self.alpha, allow_integer=self.test_mode)
        for name in ("lam", "mu", "lambda1d"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("iteration caps must be >= 1")
        for name in ("h", "h1d"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.fidelity not in FIDELITY_MODES:
            raise ConfigError(f"unknown fidelity scaling {self.fidelity!r}")
        if self.corner_method not in CORNER_METHODS:
            raise ConfigError(f"unknown corner method {self.corner_method!r}")

    def model_lambda(self, n: int, m: int) -> float:
        """Weight on ``1/2 ||U - Z||^2`` for an ``n x m`` input image."""
        if self.fidelity == "continuum":
            return self.lam * ((n - 1) * (m - 1)) ** (-self.alpha / 2)
        if self.fidelity == "area":
            return self.lam / (n * m)
        return self.lam

    def replace(self, **changes) -> "SolverConfig":
        if "criterion" in changes and changes["criterion"].upper() != "CUSTOM":
            changes.setdefault("tol_residual", None)
            changes.setdefault("tol_error", None)
            changes.setdefault("max_inner", None)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown solver settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ProxConfig:
    """Inner dual gradient-projection settings for the proximal solvers.

    ``inner_steps=None`` follows the solver config's ``max_inner``. The dual
    step is ``2 gamma step_scale / L(h)`` with ``L(h) = gamma^2 ||D||^2``;
    ``tv_lipschitz`` replaces ``L(h)`` by the TV-case bound ``16 gamma^2``,
    which is too small for fractional operators on fine grids.
    """

    inner_steps: int | None = None
    step_scale: float = 1.0
    warm_start: bool = True
    safety: float = 1.01
    tv_lipschitz: bool = False
    fista_momentum: str = "printed"  # or "standard"
    nesterov_variant: str = "accumulated"  # or "printed"
    nesterov_b0: float = 1.0

    def __post_init__(self):
        if not 0 < self.step_scale <= 1:
            raise ConfigError(f"step_scale must lie in (0, 1], got {self.step_scale}")
        if self.inner_steps is not None and self.inner_steps < 1:
            raise ConfigError("inner_steps must be >= 1")
        if self.fista_momentum not in ("printed", "standard"):
            raise ConfigError(f"unknown FISTA momentum {self.fista_momentum!r}")
        if self.nesterov_variant not in ("accumulated", "printed"):
            raise ConfigError(f"unknown Nesterov variant {self.nesterov_variant!r}")
        if not self.nesterov_b0 > 0:
            raise ConfigError("nesterov_b0 must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProxConfig":
        return cls(**data)


@dataclass
class RunReport:
    solver: str
    alpha: float
    lam: float
    mu: float
    gamma: float
    criterion: str
    outer_iters: int = 0
    cg_iters_total: int = 0
    energy_trace: list = field(default_factory=list)
    psnr: float | None = None
    snr: float | None = None
    wall_seconds: float = 0.0
    converged: bool = False
    stop_reason: str = ""
    manifest: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "solver": self.solver,
            "alpha": self.alpha,
            "lambda": self.lam,
            "mu": self.mu,
            "gamma": self.gamma,
            "outer_iters": self.outer_iters,
            "cg_iters_total": self.cg_iters_total,
            "energy_trace": list(self.energy_trace),
            "psnr": self.psnr,
            "snr": self.snr,
            "wall_seconds": self.wall_seconds,
            "criterion": self.criterion,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
        }
        if self.manifest:
            out["manifest"] = self.manifest
        return out

    def to_json(self, **kwargs) -> str:
        # JSON has no infinity; identical images report psnr as the string "inf"
        def enc(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            return v

        data = {k: enc(v) for k, v in self.to_dict().items()}
        return json.dumps(data, **kwargs)


@dataclass
class Problem:
    """The zero-Dirichlet problem a solver works on, plus the map back."""

    z: np.ndarray  # data the solver sees (lifted interior or whole image)
    lam: float  # fidelity weight on 1/2 ||U - Z||^2 after scaling
    opx: FracOperator
    opy: FracOperator
    shape: tuple
    lift_record: BoundaryLift | None

    def finish(self, u: np.ndarray) -> np.ndarray:
        """Map a solver iterate back to the image, clamped to [0, 1]."""
        if self.lift_record is None:
            full = u
        else:
            full = np.zeros(self.shape)
            full[1:-1, 1:-1] = u
            full = restore(full, self.lift_record)
        return np.clip(full, 0.0, 1.0)


def prepare_problem(z: np.ndarray, cfg: SolverConfig, workers: int = 1) -> Problem:
    """Lift (unless disabled) and build the per-axis operators.

    With lifting the unknowns are the interior ``(N-2) x (M-2)`` pixels, whose
    lifted boundary is exactly zero; without it the whole image is the unknown
    and zero Dirichlet data is assumed just outside it.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or not np.all(np.isfinite(z)):
        raise ValueError("input must be a finite 2-D image")
    n, m = z.shape
    if cfg.boundary_lift:
        if min(n, m) < 4:
            raise ValueError("boundary lifting needs at least a 4x4 image")
        edge_cfg = EdgeSolveConfig(mu=cfg.mu, gamma=cfg.gamma, h=cfg.h1d)
        lifted, record = lift(
            z,
            cfg.alpha,
            cfg.lambda1d,
            edge_cfg,
            corner_window=cfg.corner_window,
            corner_method=cfg.corner_method,
            workers=workers,
        )
        inner = lifted[1:-1, 1:-1].copy()
    else:
        if min(n, m) < 2:
            raise ValueError("image must be at least 2x2")
        record = None
        inner = z.copy()
    opx = build_operator(cfg.alpha, inner.shape[0], cfg.h, allow_integer=cfg.test_mode)
    opy = build_operator(cfg.alpha, inner.shape[1], cfg.h, allow_integer=cfg.test_mode)
    return Problem(inner, cfg.model_lambda(n, m), opx, opy, (n, m), record)


def energy(u: np.ndarray, z: np.ndarray, lam: float, du: np.ndarray) -> float:
    """``sum_pixels |DU| + lam/2 ||U - Z||^2`` given a precomputed ``du = DU``."""
    return float(np.sqrt((du**2).sum(axis=0)).sum() + 0.5 * lam * np.sum((u - z) ** 2))


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    denom = np.linalg.norm(new)
    diff = np.linalg.norm(new - old)
    if denom == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return float(diff / denom)


def finalize_report(report: RunReport, out: np.ndarray, clean: np.ndarray | None) -> None:
    if clean is not None:
        report.psnr = psnr(out, clean)
        report.snr = snr(out, clean)
