"""Anisotropic viscosity tensors, stress application and hypothesis audits.

Three tensor variants share one interface: a diagonal per-axis law (the
weighted-Laplacian fast path), a constant rank-4 tensor, and a cellwise
varying rank-4 tensor with optional piecewise-linear time breakpoints.
Minor symmetries A_ijkl = A_jikl = A_ijlk are enforced by symmetrization at
construction so the stress is always a symmetric matrix; major symmetry is
not assumed anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from anisostokes.fields import VectorField, div, jacobian, vector_lp_norm


def minor_symmetrize(a):
    """Average a rank-4 array over both minor index swaps (leading 4 axes).

    Done one swap at a time so the result is bitwise symmetric.
    """
    a = np.asarray(a, dtype=np.float64)
    a = 0.5 * (a + np.swapaxes(a, 0, 1))
    a = 0.5 * (a + np.swapaxes(a, 2, 3))
    return a


def isotropic_strain_tensor(dim, nu):
    """Constant tensor with stress law tau = nu * D(u)."""
    eye = np.eye(dim)
    a = 0.5 * nu * (
        np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
    )
    return a


class ViscosityTensor:
    """Base class; concrete variants implement tensor_at / apply."""

    kind = "abstract"
    time_dependent = False

    def tensor_at(self, t):
        raise NotImplementedError

    def apply(self, du, t=0.0):
        raise NotImplementedError


class DiagNu(ViscosityTensor):
    """Per-axis viscosities nu = (nu_1, ..., nu_d), the weighted-Laplacian law.

    The momentum operator is sum_a nu_a d_a^2 applied componentwise (handled
    as a scalar Fourier symbol by the Stokes solver).  The stress used in
    work diagnostics is tau_ij = (nu_i + nu_j)/2 * D_ij, which is symmetric,
    reduces to nu*D for isotropic nu, and whose contraction with grad u
    equals sum_ij nu_j |d_j u_i|^2 pointwise on the gradient velocity fields
    the solver produces.
    """

    kind = "diag"

    def __init__(self, nu):
        nu = tuple(float(v) for v in np.atleast_1d(nu))
        if len(nu) not in (1, 2, 3):
            raise ValueError(f"need 1 to 3 viscosities, got {nu}")
        if any(v <= 0 for v in nu):
            raise ValueError(f"viscosities must be positive, got {nu}")
        self.nu = nu
        self.dim = len(nu)
        # pairwise weights (nu_i + nu_j)/2
        arr = np.asarray(nu)
        self.weights = 0.5 * (arr[:, None] + arr[None, :])

    def tensor_at(self, t=0.0):
        d = self.dim
        eye = np.eye(d)
        pair = 0.5 * (
            np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
        )
        return self.weights[:, :, None, None] * pair

    def apply(self, du, t=0.0):
        d = self.dim
        w = self.weights.reshape((d, d) + (1,) * (du.ndim - 2))
        return w * du

    def __repr__(self):
        return f"DiagNu(nu={self.nu})"


class ConstantFull(ViscosityTensor):
    """A constant rank-4 viscosity tensor (d, d, d, d)."""

    kind = "constant"

    def __init__(self, a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 4 or len(set(a.shape)) != 1 or a.shape[0] not in (1, 2, 3):
            raise ValueError(f"expected a (d,d,d,d) array, got shape {a.shape}")
        self.a = minor_symmetrize(a)
        self.dim = a.shape[0]

    def tensor_at(self, t=0.0):
        return self.a

    def apply(self, du, t=0.0):
        return np.einsum("ijkl,kl...->ij...", self.a, du)

    def major_symmetric(self, tol=1e-12):
        swapped = np.swapaxes(np.swapaxes(self.a, 0, 2), 1, 3)
        scale = max(float(np.abs(self.a).max()), 1e-300)
        return float(np.abs(self.a - swapped).max()) <= tol * scale

    def __repr__(self):
        return f"ConstantFull(dim={self.dim})"


class VaryingFull(ViscosityTensor):
    """A cellwise rank-4 tensor, optionally with time breakpoints.

    Parameters
    ----------
    grid : GridSpec
    values : ndarray
        Shape (d,d,d,d,*grid.shape), or (nt,d,d,d,d,*grid.shape) together
        with ``times``.
    times : sequence of float, optional
        Strictly increasing breakpoint times; the tensor is interpolated
        linearly between them and clamped outside the range.
    """

    kind = "varying"

    def __init__(self, grid, values, times=None):
        values = np.asarray(values, dtype=np.float64)
        d = grid.dim
        per_cell = (d, d, d, d) + grid.shape
        if times is None:
            if values.shape != per_cell:
                raise ValueError(
                    f"expected shape {per_cell}, got {values.shape}"
                )
            self.values = minor_symmetrize(values)[None]
            self.times = np.array([0.0])
            self.time_dependent = False
        else:
            times = np.asarray(times, dtype=np.float64)
            if values.shape != (len(times),) + per_cell:
                raise ValueError(
                    f"expected shape {(len(times),) + per_cell}, got {values.shape}"
                )
            if len(times) < 1 or np.any(np.diff(times) <= 0):
                raise ValueError("breakpoint times must be strictly increasing")
            self.values = np.stack([minor_symmetrize(v) for v in values])
            self.times = times
            self.time_dependent = len(times) > 1
        self.grid = grid
        self.dim = d

    def tensor_at(self, t=0.0):
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return self.values[0]
        if t >= ts[-1]:
            return self.values[-1]
        j = int(np.searchsorted(ts, t, side="right")) - 1
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]

    def apply(self, du, t=0.0):
        return np.einsum("ijkl...,kl...->ij...", self.tensor_at(t), du)

    def averaged_constant(self, t=0.0):
        """Cell-averaged tensor, used as the Krylov preconditioner."""
        a = self.tensor_at(t)
        return ConstantFull(a.reshape(self.dim**4, -1).mean(axis=1).reshape((self.dim,) * 4))

    def __repr__(self):
        return f"VaryingFull(dim={self.dim}, breakpoints={len(self.times)})"


def apply_tau(tensor, du, t=0.0):
    """Stress tau_ij = A_ijkl [du]_kl as a (d, d, *shape) array.

    ``du`` is the symmetric gradient from :func:`anisostokes.fields.sym_grad`.
    """
    return tensor.apply(du, t)


# ----------------------------------------------------------------------
# coercivity
# ----------------------------------------------------------------------

@dataclass
class CoercivityReport:
    c_est: float
    method: str
    passed: bool
    seed: int


def _voigt_basis(d):
    """Orthonormal (Frobenius) basis of symmetric d x d matrices."""
    basis = []
    for a in range(d):
        e = np.zeros((d, d))
        e[a, a] = 1.0
        basis.append(e)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for a in range(d):
        for b in range(a + 1, d):
            e = np.zeros((d, d))
            e[a, b] = inv_sqrt2
            e[b, a] = inv_sqrt2
            basis.append(e)
    return np.stack(basis)


def _voigt_matrix(a, basis):
    """Quadratic form Q(D) = (A D) : D in the orthonormal symmetric basis."""
    # contract: q[p, q'] = sum_ijkl basis[p, i, j] a[i, j, k, l] basis[q', k, l]
    q = np.einsum("pij,ijkl,qkl->pq", basis, a, basis)
    return 0.5 * (q + q.T)


def _sample_directions(d, rng, count):
    v = rng.standard_normal((count, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.maximum(norms, 1e-30)


def _constant_c_est(a, seed, nsamples):
    """Minimum Rayleigh quotient (A D):D / |D|^2 over unit symmetric D.

    The sample set is the sym(k (x) a) family over random and axis-aligned
    unit vectors, random unit symmetric matrices, the coordinate basis
    matrices, and the eigenvectors of the symmetrized quadratic form (whose
    smallest eigenvalue is the exact minimum, so the estimate is sharp and
    the report deterministic for a given seed).
    """
    d = a.shape[0]
    rng = np.random.default_rng(seed)
    basis = _voigt_basis(d)
    m = len(basis)

    candidates = []

    ks = np.concatenate([np.eye(d), _sample_directions(d, rng, nsamples)])
    vs = np.concatenate([np.eye(d), _sample_directions(d, rng, nsamples)])
    for k in ks:
        for v in vs:
            dmat = 0.5 * (np.outer(k, v) + np.outer(v, k))
            norm = np.linalg.norm(dmat)
            if norm > 1e-12:
                candidates.append(dmat / norm)

    coeffs = _sample_directions(m, rng, nsamples)
    for c in coeffs:
        candidates.append(np.einsum("p,pij->ij", c, basis))
    candidates.extend(basis)

    q = _voigt_matrix(a, basis)
    eigvals, eigvecs = np.linalg.eigh(q)
    for p in range(m):
        candidates.append(np.einsum("p,pij->ij", eigvecs[:, p], basis))

    mats = np.stack(candidates)
    quad = np.einsum("sij,ijkl,skl->s", mats, a, mats)
    sq = np.einsum("sij,sij->s", mats, mats)
    return float(np.min(quad / sq))


def _varying_c_est(tensor, t):
    """Exact cellwise minimum eigenvalue of the symmetrized quadratic form."""
    a = tensor.tensor_at(t)
    d = tensor.dim
    basis = _voigt_basis(d)
    q = np.einsum("pij,ijkl...,qkl->pq...", basis, a, basis)
    q = 0.5 * (q + np.swapaxes(q, 0, 1))
    m = q.shape[0]
    qcells = q.reshape(m, m, -1).transpose(2, 0, 1)
    eigvals = np.linalg.eigvalsh(qcells)
    return float(eigvals[:, 0].min())


def coercivity_estimate(tensor, t=None, seed=0, nsamples=40):
    """Estimate the pointwise coercivity constant of the stress law.

    Returns a :class:`CoercivityReport`; ``passed`` is ``c_est > 0``.  For a
    varying tensor the estimate is the minimum over cells (and, when time
    breakpoints are present and ``t`` is None, over breakpoints; the minimum
    eigenvalue is concave along linear interpolation, so checking the
    breakpoints covers the whole time range).
    """
    if tensor.kind == "varying":
        if t is None:
            times = tensor.times
        else:
            times = [t]
        c = min(_varying_c_est(tensor, tt) for tt in times)
        return CoercivityReport(c_est=c, method="rayleigh-sampling", passed=c > 0, seed=seed)
    a = tensor.tensor_at(0.0 if t is None else t)
    c = _constant_c_est(a, seed, nsamples)
    return CoercivityReport(c_est=c, method="rayleigh-sampling", passed=c > 0, seed=seed)


# ----------------------------------------------------------------------
# hypothesis audits
# ----------------------------------------------------------------------

@dataclass
class HypothesesReport:
    h1_max_residual: float
    h1_passed: bool
    coercivity: CoercivityReport
    h4_symbol_invertible: bool | None
    h4_sample_norm: float | None
    h2_note: str
    passed: bool


def _random_velocity(grid, rng):
    comps = []
    for _ in range(grid.dim):
        comps.append(rng.standard_normal(grid.shape))
    return VectorField.from_arrays(grid, comps)


def audit_hypotheses(tensor, grid, t=0.0, seed=0, nsamples=10, h1_tol=1e-12):
    """Audit the structural hypotheses of the stress law on a grid.

    * symmetric-stress identity: max over sampled velocity fields of
      ``|tau : grad u - tau : D(u)|`` (must sit at machine level because the
      stress is symmetric);
    * coercivity: sampled Rayleigh minimum, must be positive;
    * invertibility: for constant-coefficient laws, every nonzero grid
      wavevector must have an invertible momentum symbol, and the sampled
      operator norm of ``Ainv grad div`` in the discrete L^{3/2} norm is
      reported (finite by construction when the symbols are invertible);
    * weak lower semicontinuity of the dissipation is implied by coercivity
      plus convexity of the quadratic form and is recorded, not tested.
    """
    from anisostokes import stokes  # local import, stokes depends on this module

    rng = np.random.default_rng(seed)
    h1_max = 0.0
    work_scale = 1e-300
    for _ in range(nsamples):
        u = _random_velocity(grid, rng)
        J = jacobian(u)
        D = 0.5 * (J + np.swapaxes(J, 0, 1))
        tau = apply_tau(tensor, D, t)
        full = np.einsum("ij...,ij...->...", tau, J)
        symm = np.einsum("ij...,ij...->...", tau, D)
        h1_max = max(h1_max, float(np.abs(full - symm).max()))
        work_scale = max(work_scale, float(np.abs(full).max()))
    h1_passed = h1_max <= h1_tol * max(work_scale, 1.0)

    coer = coercivity_estimate(tensor, seed=seed)

    h4_invertible = None
    h4_norm = None
    if tensor.kind in ("diag", "constant"):
        try:
            op = stokes.StokesOperator.build(tensor, grid, t=t)
            h4_invertible = True
        except stokes.SingularSymbol:
            h4_invertible = False
        except stokes.NotCoercive:
            op = None
            h4_invertible = True  # symbols were checked before coercivity
        if h4_invertible and coer.passed:
            worst = 0.0
            for _ in range(nsamples):
                w = _random_velocity(grid, rng)
                qfield = div(w)
                v = stokes.solve(op, qfield)
                denom = vector_lp_norm(w, 1.5)
                worst = max(worst, vector_lp_norm(v, 1.5) / denom)
            h4_norm = worst

    passed = h1_passed and coer.passed and (h4_invertible is not False)
    return HypothesesReport(
        h1_max_residual=h1_max,
        h1_passed=h1_passed,
        coercivity=coer,
        h4_symbol_invertible=h4_invertible,
        h4_sample_norm=h4_norm,
        h2_note="implied by coercivity and convexity of the quadratic form",
        passed=passed,
    )
