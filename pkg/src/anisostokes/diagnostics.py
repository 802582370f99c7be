"""Audited functionals of stored trajectories and their CSV emission.

Everything here is a pure function of a Trajectory (plus parameters): the
energy budget with its slack, the running pressure L2 norm, the windowed
oscillation-defect proxy with its time-integrated inequality, the mollifier
transport commutator, and the per-time CSV rows.  Nothing feeds back into
the solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from anisostokes.fields import ScalarField, commutator_residual, div, jacobian
from anisostokes.transport import pressure_field
from anisostokes.viscosity import apply_tau

CSV_HEADER = (
    "t,mass,drag2g_cum,drag3_cum,pgamma_integral,dissipation_cum,"
    "grad_rho_gamma_half_cum,energy_slack,rho_min,rho_max,"
    "pgamma_l2_running,defect_proxy,commutator_l1"
)


@dataclass(frozen=True)
class DiagnosticsRow:
    """One stored time of the audit ledger; field order is the CSV order."""

    t: float
    mass: float
    drag2g_cum: float
    drag3_cum: float
    pgamma_integral: float
    dissipation_cum: float
    grad_rho_gamma_half_cum: float
    energy_slack: float
    rho_min: float
    rho_max: float
    pgamma_l2_running: float
    defect_proxy: float
    commutator_l1: float

    def as_csv_line(self):
        vals = (
            self.t,
            self.mass,
            self.drag2g_cum,
            self.drag3_cum,
            self.pgamma_integral,
            self.dissipation_cum,
            self.grad_rho_gamma_half_cum,
            self.energy_slack,
            self.rho_min,
            self.rho_max,
            self.pgamma_l2_running,
            self.defect_proxy,
            self.commutator_l1,
        )
        return ",".join("%.17g" % v for v in vals)


@dataclass(frozen=True)
class DefectParams:
    """Window size (cells per side) and root regularization for the proxy."""

    window: int = 8
    h_reg: float = 1e-8
    slack_tolerance: float = 1e-2

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least one cell")
        if self.h_reg < 0:
            raise ValueError("h_reg must be nonnegative")
        if self.slack_tolerance < 0:
            raise ValueError("slack_tolerance must be nonnegative")


@dataclass(frozen=True)
class ViscousWork:
    total: float
    pointwise: ScalarField
    h1_residual: float


def viscous_work(tensor, t, u):
    """Pointwise stress power tau : grad u, its integral, and the H1 gap.

    The gap max|tau : grad u - tau : D(u)| vanishes (to rounding) whenever
    the stress is symmetric, which every shipped tensor guarantees.
    """
    grid = u.grid
    J = jacobian(u)
    D = 0.5 * (J + np.swapaxes(J, 0, 1))
    tau = apply_tau(tensor, D, t)
    work_grad = np.einsum("ij...,ij...->...", tau, J)
    work_sym = np.einsum("ij...,ij...->...", tau, D)
    pointwise = ScalarField(grid, work_grad)
    return ViscousWork(
        total=pointwise.integral(),
        pointwise=pointwise,
        h1_residual=float(np.abs(work_grad - work_sym).max()),
    )


def energy_audit(traj, gamma=None):
    """Energy-budget slack at every stored time.

    slack(t) = E0 - [ int rho^gamma(t) + (gamma-1) * work_cum(t)
                      + drag energy terms + density-gradient dissipation ],
    where E0 is the initial pressure integral.  Nonnegative slack means the
    discrete run dissipates at least as much as the budget requires; small
    negative values are splitting error and must shrink under dt refinement.
    """
    g = traj.params.gamma if gamma is None else gamma
    e0 = traj.initial_pressure_integral()
    slacks = []
    for i in range(len(traj.times)):
        spent = (
            pressure_field(traj.densities[i], g).integral()
            + (g - 1.0) * traj.work_cum[i]
            + traj.drag_hi_cum[i]
            + traj.drag_lo_cum[i]
            + traj.ledgers[i].grad_rho_gamma_half_cum
        )
        slacks.append(e0 - spent)
    return slacks


def energy_violation(traj, gamma=None):
    """Magnitude of the worst negative energy slack (0 when none)."""
    return max(0.0, -min(energy_audit(traj, gamma)))


def pressure_l2_audit(traj):
    """Running L2((0,T) x domain) norm of rho^gamma at the final time."""
    return float(np.sqrt(traj.pgamma_l2_sq_cum[-1]))


def effective_flux(rho, u, nu, gamma):
    """F = rho^gamma - nu div u, the scalar flux of isotropic runs."""
    p = pressure_field(rho, gamma)
    return ScalarField(rho.grid, p.data - nu * div(u).data)


def _window_means(data, window):
    shape = data.shape
    for n in shape:
        if n % window != 0:
            raise ValueError(f"window {window} does not divide grid extent {n}")
    reshaped = data
    # split each axis into (blocks, window) and average the window axes
    new_shape = []
    for n in shape:
        new_shape.extend([n // window, window])
    reshaped = data.reshape(new_shape)
    axes = tuple(range(1, 2 * len(shape), 2))
    return reshaped.mean(axis=axes)


def defect_proxy(rho, gamma, dp):
    """Windowed Jensen-gap functional, the surrogate for the defect measure.

    Averages rho and rho^gamma over cubic windows of dp.window cells and
    accumulates vol_w * (h_reg + <rho^gamma>_w - <rho>_w^gamma)^(1/gamma),
    minus the constant the regularization alone would contribute.  Jensen
    makes every window gap nonnegative; rounding can produce -1e-18 on
    constant windows, so gaps are floored at zero before the root.
    """
    grid = rho.grid
    mean_r = _window_means(rho.data, dp.window)
    mean_p = _window_means(rho.data**gamma, dp.window)
    gap = np.maximum(mean_p - mean_r**gamma, 0.0)
    vol_w = (dp.window * grid.h) ** grid.dim
    total = vol_w * float(np.sum((dp.h_reg + gap) ** (1.0 / gamma)))
    return total - grid.volume * dp.h_reg ** (1.0 / gamma)


def defect_inequality_audit(traj, gamma, dp):
    """Time-integrated defect inequality: returns (lhs, rhs, passed).

    lhs integrates the windowed proxy over the trajectory (trapezoid on
    stored samples); rhs is the initial proxy carried flat over the horizon,
    plus the h-regularization correction h^(1/gamma) * int int |div w|, plus
    a slack proportional to the horizon, volume and density scale.
    """
    series = [defect_proxy(r, gamma, dp) for r in traj.densities]
    times = traj.times
    horizon = times[-1] - times[0]
    lhs = float(np.trapezoid(series, times)) if len(times) > 1 else 0.0
    scale = horizon * traj.grid.volume * (1.0 + traj.densities[0].max())
    rhs = (
        horizon * series[0]
        + dp.h_reg ** (1.0 / gamma) * traj.divu_l1_cum[-1]
        + dp.slack_tolerance * scale
    )
    return lhs, rhs, lhs <= rhs


def commutator_audit(traj, deltas):
    """Transport-commutator residuals per stored state and mollifier radius.

    Returns a list of (t, residuals) with residuals aligned to ``deltas``.
    For smooth states the residual decays as the radius shrinks; callers
    check the rows decrease along a radius list sorted largest first.
    """
    rows = []
    for t, rho, u in zip(traj.times, traj.densities, traj.velocities):
        rows.append((t, [commutator_residual(rho, u, d) for d in deltas]))
    return rows


def rows_for_trajectory(traj, dp=None, commutator_delta=0.0):
    """Assemble the full diagnostics row for every stored time."""
    dp = dp if dp is not None else DefectParams()
    g = traj.params.gamma
    slacks = energy_audit(traj)
    rows = []
    for i, t in enumerate(traj.times):
        rho = traj.densities[i]
        led = traj.ledgers[i]
        commutator = 0.0
        if commutator_delta > 0.0:
            commutator = commutator_residual(rho, traj.velocities[i], commutator_delta)
        rows.append(
            DiagnosticsRow(
                t=t,
                mass=led.mass_now,
                drag2g_cum=led.drag2g_cum,
                drag3_cum=led.drag3_cum,
                pgamma_integral=pressure_field(rho, g).integral(),
                dissipation_cum=(g - 1.0) * traj.work_cum[i],
                grad_rho_gamma_half_cum=led.grad_rho_gamma_half_cum,
                energy_slack=slacks[i],
                rho_min=rho.min(),
                rho_max=rho.max(),
                pgamma_l2_running=float(np.sqrt(traj.pgamma_l2_sq_cum[i])),
                defect_proxy=defect_proxy(rho, g, dp),
                commutator_l1=commutator,
            )
        )
    return rows


def write_rows_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.as_csv_line() + "\n")
