"""Stepsize controllers: coupled-distance diagnostics, baselines, schedules.

Each controller is a pure state machine: the engine feeds it one
:class:`Observation` per iteration and applies the returned
:class:`Decision`.  Stepsizes after m decays are always computed as
``gamma0 * r**m`` (and thresholds as ``beta0 * eta**m``), never by
cumulative multiplication, so phase algebra is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DegenerateDiagnosticError

CONTROLLER_KINDS = (
    "coupling_static",
    "coupling_adaptive",
    "pflug",
    "distance",
    "fixed",
)

D0_FLOOR = 1e-300  # positivity floor for the coupled-distance reference


@dataclass(frozen=True)
class ControllerParams:
    """Knobs shared by all controller kinds; unused fields are ignored.

    ``denominator`` selects whether the coupled-distance statistic is
    normalized by the phase-initial difference (re-armed at every restart)
    or by the global initial difference.
    """

    kind: str = "coupling_static"
    gamma0: float | None = None  # None: filled from the problem default
    r: float = 0.5
    b: int = 100
    beta0: float = 1e-2
    eta: float = 0.75
    check_every: int = 1
    burn_in: int | None = 0  # None: Pflug auto 2/(γμ) capped at 1e4
    patience: int = 1
    denominator: str = "phase"
    slope_threshold: float = 0.5
    checkpoint_ratio: float = 1.5
    schedule: tuple | None = None  # fixed kind: (name, *constants)

    def validate(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller kind {self.kind!r}")
        if self.gamma0 is not None and self.gamma0 <= 0:
            raise ConfigError("gamma0 must be positive")
        if not 0.0 < self.r < 1.0:
            raise ConfigError("r must lie in (0, 1)")
        if not 0.0 < self.beta0 < 1.0:
            raise ConfigError("beta0 must lie in (0, 1)")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError("eta must lie in (0, 1]")
        if self.b < 0:
            raise ConfigError("b must be >= 0")
        if self.check_every < 1:
            raise ConfigError("check_every must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.denominator not in ("phase", "global"):
            raise ConfigError("denominator must be 'phase' or 'global'")
        if self.checkpoint_ratio <= 1.0:
            raise ConfigError("checkpoint_ratio must exceed 1")
        if self.kind == "fixed" and not self.schedule:
            raise ConfigError("fixed controller needs a schedule")
        return self


@dataclass(frozen=True)
class Observation:
    """Everything a controller may look at after one engine step."""

    k: int
    theta1: np.ndarray
    theta2: np.ndarray | None = None
    d_sq: float | None = None  # ||θ1 - θ2||², when coupled
    direction: np.ndarray | None = None  # update direction used at step k
    prev_direction: np.ndarray | None = None


@dataclass(frozen=True)
class Decision:
    """Continue, or decay the stepsize (optionally re-initializing θ2)."""

    decay: bool = False
    new_gamma: float | None = None
    reinit: bool = False
    statistic: float = math.nan

    @staticmethod
    def go(statistic: float = math.nan) -> "Decision":
        return Decision(statistic=statistic)


class Controller:
    """Base: fixed stepsize, never decays."""

    needs_coupling = False

    def __init__(self, params: ControllerParams):
        params.validate()
        if params.burn_in is None and params.kind != "pflug":
            params = replace(params, burn_in=0)
        self.params = params
        self.phase_index = 0

    @property
    def gamma(self) -> float:
        return self.params.gamma0 * self.params.r**self.phase_index

    def stepsize(self, k: int) -> float:
        """Stepsize to use for iteration k (1-based)."""
        return self.gamma

    def observe(self, obs: Observation) -> Decision:
        return Decision.go()

    def rearm(self, d0_sq: float) -> None:
        """Receive the (re-)initialized coupled-distance reference."""


class CouplingController(Controller):
    """Coupled-distance diagnostic: decay when S = ||D_k||²/||D_0||² < β.

    The reference ||D_0||² is phase-initial by default: the engine re-arms
    it after every re-initialization of the auxiliary iterate.  The
    adaptive variant also shrinks the threshold by η at each decay.  The
    trigger uses a strict inequality; ties continue.
    """

    needs_coupling = True

    def __init__(self, params: ControllerParams, adaptive: bool):
        super().__init__(params)
        self.adaptive = adaptive
        self.d0_sq: float | None = None
        self._hits = 0

    @property
    def beta(self) -> float:
        if self.adaptive:
            return self.params.beta0 * self.params.eta**self.phase_index
        return self.params.beta0

    def rearm(self, d0_sq: float) -> None:
        if self.params.denominator == "global" and self.d0_sq is not None:
            return
        self.d0_sq = d0_sq

    def observe(self, obs: Observation) -> Decision:
        if self.d0_sq is None or not self.d0_sq > D0_FLOOR:
            raise DegenerateDiagnosticError(
                "coupled-distance reference is unset or not positive"
            )
        stat = obs.d_sq / self.d0_sq
        p = self.params
        if obs.k <= p.burn_in or obs.k % p.check_every != 0:
            return Decision.go(stat)
        if stat < self.beta:
            self._hits += 1
        else:
            self._hits = 0
        if self._hits < p.patience:
            return Decision.go(stat)
        self._hits = 0
        self.phase_index += 1
        return Decision(decay=True, new_gamma=self.gamma, reinit=True, statistic=stat)


class PflugController(Controller):
    """Running mean of successive stochastic-gradient inner products.

    A negative mean signals that successive steps have stopped pointing the
    same way, i.e. the iterates bounce around stationarity.  On decay the
    accumulator and the burn-in clock reset.  Needs a burn-in: the statistic
    is extremely noisy early on.  ``burn_in=None`` picks 2/(γμ) capped at
    1e4 from the problem's certified curvature.
    """

    def __init__(self, params: ControllerParams, mu_hint: float | None = None):
        super().__init__(params)
        if params.burn_in is None:
            if not mu_hint or mu_hint <= 0 or params.gamma0 is None:
                burn = 10_000
            else:
                burn = min(int(2.0 / (params.gamma0 * mu_hint)), 10_000)
            self.params = replace(params, burn_in=burn)
        self._sum = 0.0
        self._count = 0
        self._phase_start = 0

    def observe(self, obs: Observation) -> Decision:
        if obs.prev_direction is None:
            return Decision.go()
        # directions are negated gradients, so the inner product matches
        self._sum += float(obs.direction @ obs.prev_direction)
        self._count += 1
        stat = self._sum / self._count
        p = self.params
        k_rel = obs.k - self._phase_start
        if k_rel <= p.burn_in or obs.k % p.check_every != 0:
            return Decision.go(stat)
        if stat < 0.0:
            self.phase_index += 1
            self._sum = 0.0
            self._count = 0
            self._phase_start = obs.k
            return Decision(decay=True, new_gamma=self.gamma, statistic=stat)
        return Decision.go(stat)


class DistanceController(Controller):
    """Log-log growth rate of ||θ_k - θ_anchor||² at geometric checkpoints.

    While the iterates drift, the squared distance to the phase anchor
    grows roughly linearly (slope ≈ 1 on log-log axes); when it saturates
    the slope collapses.  Decay when the slope between the last two
    checkpoints drops below ``slope_threshold``; then re-anchor at the
    current iterate and restart the checkpoint ladder.
    """

    def __init__(self, params: ControllerParams):
        super().__init__(params)
        self._anchor: np.ndarray | None = None
        self._phase_start = 0
        self._j = 1
        self._next_checkpoint = self._checkpoint_after(0)
        self._prev: tuple[int, float] | None = None
        self._hits = 0

    def _checkpoint_after(self, k_rel: int) -> int:
        q = self.params.checkpoint_ratio
        while True:
            cand = math.ceil(q**self._j)
            self._j += 1
            if cand > k_rel:
                return cand

    def observe(self, obs: Observation) -> Decision:
        if self._anchor is None:
            self._anchor = obs.theta1.copy()
            return Decision.go()
        k_rel = obs.k - self._phase_start
        diff = obs.theta1 - self._anchor
        omega = float(diff @ diff)
        if k_rel < self._next_checkpoint or obs.k <= self.params.burn_in:
            return Decision.go(math.nan)
        self._next_checkpoint = self._checkpoint_after(k_rel)
        if omega == 0.0:
            return Decision.go(math.nan)  # cannot take log; skip checkpoint
        if self._prev is None:
            self._prev = (k_rel, omega)
            return Decision.go(math.nan)
        k_prev, omega_prev = self._prev
        slope = (math.log(omega) - math.log(omega_prev)) / (
            math.log(k_rel) - math.log(k_prev)
        )
        self._prev = (k_rel, omega)
        if slope < self.params.slope_threshold:
            self._hits += 1
        else:
            self._hits = 0
        if self._hits < self.params.patience:
            return Decision.go(slope)
        self._hits = 0
        self.phase_index += 1
        self._anchor = obs.theta1.copy()
        self._phase_start = obs.k
        self._j = 1
        self._next_checkpoint = self._checkpoint_after(0)
        self._prev = None
        return Decision(decay=True, new_gamma=self.gamma, statistic=slope)


SCHEDULE_KINDS = ("constant", "inv_sqrt", "inv_mu_k", "uniform_opt")


def fixed_schedule(kind: str, k: int, *constants) -> float:
    """Scheduled stepsize at iteration k >= 1.

    constant(γ); inv_sqrt(C): C/√k; inv_mu_k(μ): 1/(μk);
    uniform_opt(τ[, scale]): scale·k^(-1/(τ+1)).
    """
    if k < 1:
        raise ValueError("schedules are defined for k >= 1")
    if kind == "constant":
        (gamma,) = constants
        return float(gamma)
    if kind == "inv_sqrt":
        (C,) = constants
        return float(C) / math.sqrt(k)
    if kind == "inv_mu_k":
        (mu,) = constants
        return 1.0 / (mu * k)
    if kind == "uniform_opt":
        tau, *rest = constants
        scale = rest[0] if rest else 1.0
        return float(scale) * k ** (-1.0 / (tau + 1.0))
    raise ConfigError(f"unknown schedule kind {kind!r}")


class FixedScheduleController(Controller):
    """Wraps a deterministic stepsize schedule; never decays."""

    def __init__(self, params: ControllerParams):
        # gamma0 is irrelevant here but the base class wants positivity
        if params.gamma0 is None:
            params = replace(params, gamma0=1.0)
        super().__init__(params)
        name, *constants = params.schedule
        if name not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {name!r}")
        self._name = name
        self._constants = constants

    def stepsize(self, k: int) -> float:
        return fixed_schedule(self._name, k, *self._constants)


def make_controller(
    params: ControllerParams,
    problem=None,
) -> Controller:
    """Instantiate a controller, filling problem-derived defaults.

    ``gamma0=None`` takes the problem's conventional initial stepsize;
    Pflug's ``burn_in=None`` uses the certified curvature.
    """
    if params.gamma0 is None and params.kind != "fixed":
        if problem is None:
            raise ConfigError("gamma0 unset and no problem to derive it from")
        params = replace(params, gamma0=problem.default_gamma0())
    if params.kind == "coupling_static":
        return CouplingController(params, adaptive=False)
    if params.kind == "coupling_adaptive":
        return CouplingController(params, adaptive=True)
    if params.kind == "pflug":
        mu_hint = getattr(problem, "mu", None) if problem is not None else None
        return PflugController(params, mu_hint=mu_hint)
    if params.kind == "distance":
        return DistanceController(params)
    if params.kind == "fixed":
        return FixedScheduleController(params)
    raise ConfigError(f"unknown controller kind {params.kind!r}")
