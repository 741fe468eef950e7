"""Magnetic energy densities w(x, b) with derivatives and convexity bounds.

Every law evaluates three things on batches of points: the energy density
w (J/m^3), its gradient h = dw/db (A/m, the magnetic field), and the
symmetric 2x2 second derivative d2w/db2 (the differential reluctivity,
m/H). Laws declare convexity bounds gamma <= eig(d2w) <= lipschitz that
the solver's convergence diagnostics rely on, plus an optional Lipschitz
constant of the second derivative (hess_lipschitz).

Isotropic laws are defined by a radial profile wt(s) of s = |b|; their
derivatives decompose into a radial eigenvalue wt''(s) and a tangential
eigenvalue wt'(s)/s (the chord reluctivity), with the analytic s -> 0
limit substituted below |b| = 1e-12 to avoid the 0/0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: vacuum reluctivity, m/H
NU0 = 1e7 / (4.0 * np.pi)

_RADIAL_EPS = 1e-12


def _as_points(b):
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[None, :]
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("b must be a 2-vector or an (n, 2) array")
    if not np.all(np.isfinite(b)):
        raise ValueError("non-finite flux density")
    return b


class MaterialLaw:
    """Base contract: w, dw, d2w evaluated on (n, 2) batches.

    `x` is the evaluation point batch (same shape as b); spatially
    homogeneous laws ignore it. Laws are immutable value objects and all
    evaluations are pure.
    """

    gamma = None
    lipschitz = None
    hess_lipschitz = None

    def w(self, x, b):
        raise NotImplementedError

    def dw(self, x, b):
        raise NotImplementedError

    def d2w(self, x, b):
        raise NotImplementedError


class IsotropicLaw(MaterialLaw):
    """w(b) = wt(|b|) from a radial profile; subclasses provide wt etc."""

    def _profile(self, s):
        """Return wt(s), wt'(s), wt''(s) for a batch of radii s >= 0."""
        raise NotImplementedError

    def _chord(self, s, d1, d2):
        """wt'(s)/s with its s -> 0 limit wt''(0)."""
        small = s < _RADIAL_EPS
        safe = np.where(small, 1.0, s)
        return np.where(small, d2, d1 / safe)

    def w(self, x, b):
        b = _as_points(b)
        s = np.linalg.norm(b, axis=1)
        w0, _, _ = self._profile(s)
        return w0

    def dw(self, x, b):
        b = _as_points(b)
        s = np.linalg.norm(b, axis=1)
        _, d1, d2 = self._profile(s)
        return self._chord(s, d1, d2)[:, None] * b

    def d2w(self, x, b):
        # nu(s) I + (wt''(s) - nu(s)) (b/s) (b/s)^T, nu = chord reluctivity
        b = _as_points(b)
        s = np.linalg.norm(b, axis=1)
        _, d1, d2 = self._profile(s)
        nu = self._chord(s, d1, d2)
        small = s < _RADIAL_EPS
        safe = np.where(small, 1.0, s)
        unit = b / safe[:, None]
        unit[small] = 0.0
        out = np.zeros((len(s), 2, 2))
        out[:, 0, 0] = nu
        out[:, 1, 1] = nu
        out += (d2 - nu)[:, None, None] * unit[:, :, None] * unit[:, None, :]
        return out


class LinearIsotropic(IsotropicLaw):
    """w = nu/2 |b|^2; constant reluctivity nu."""

    def __init__(self, nu):
        if nu <= 0:
            raise ValueError("reluctivity must be positive")
        self.nu = float(nu)
        self.gamma = self.nu
        self.lipschitz = self.nu
        self.hess_lipschitz = 0.0

    def _profile(self, s):
        return 0.5 * self.nu * s**2, self.nu * s, np.full_like(s, self.nu)


class PermanentMagnet(MaterialLaw):
    """w = nu0/2 |b|^2 - m.b, so h = nu0 b - m with fixed magnetization m."""

    def __init__(self, nu0, m):
        if nu0 <= 0:
            raise ValueError("reluctivity must be positive")
        self.nu0 = float(nu0)
        self.m = np.asarray(m, dtype=float).reshape(2)
        self.m.flags.writeable = False
        self.gamma = self.nu0
        self.lipschitz = self.nu0
        self.hess_lipschitz = 0.0

    def w(self, x, b):
        b = _as_points(b)
        return 0.5 * self.nu0 * np.sum(b * b, axis=1) - b @ self.m

    def dw(self, x, b):
        b = _as_points(b)
        return self.nu0 * b - self.m

    def d2w(self, x, b):
        b = _as_points(b)
        out = np.zeros((len(b), 2, 2))
        out[:, 0, 0] = self.nu0
        out[:, 1, 1] = self.nu0
        return out


class AnisotropicLinear(MaterialLaw):
    """w = 1/2 <N b, b> with N symmetric positive definite."""

    def __init__(self, matrix):
        N = np.asarray(matrix, dtype=float).reshape(2, 2)
        if not np.allclose(N, N.T, rtol=1e-12, atol=0.0):
            raise ValueError("matrix must be symmetric")
        eigs = np.linalg.eigvalsh(N)
        if eigs[0] <= 0:
            raise ValueError("matrix must be positive definite")
        N.flags.writeable = False
        self.matrix = N
        self.gamma = float(eigs[0])
        self.lipschitz = float(eigs[-1])
        self.hess_lipschitz = 0.0

    def w(self, x, b):
        b = _as_points(b)
        return 0.5 * np.sum((b @ self.matrix) * b, axis=1)

    def dw(self, x, b):
        return _as_points(b) @ self.matrix

    def d2w(self, x, b):
        b = _as_points(b)
        return np.broadcast_to(self.matrix, (len(b), 2, 2)).copy()


@dataclass(frozen=True)
class BrauerParams:
    """Coefficients of the quadratically extended Brauer profile."""

    k1: float
    k2: float
    k3: float
    nu0: float
    s_star: float
    a0: float
    a1: float


def brauer_build(k1, k2, k3, nu0=NU0):
    """Solve for the C2 quadratic extension of the Brauer reluctivity law.

    Below the threshold s_star the profile is
    wt(s) = k1/(2 k2) exp(k2 s^2) + k3/2 s^2; above, it continues as the
    quadratic a0 + a1 s + nu0/2 s^2. s_star is the unique root of
    wt''(s) = nu0, found by bisection to 1e-12 relative; a1 and a0 then
    match first derivative and value. By construction wt'' is continuous.
    """
    if min(k1, k2, k3) <= 0:
        raise ValueError("Brauer coefficients must be positive")
    if nu0 <= k1 + k3:
        raise ValueError(
            f"no truncation point: nu0 = {nu0:g} must exceed k1 + k3 = {k1 + k3:g}"
        )

    def ddw(s):
        return k1 * np.exp(k2 * s * s) * (1.0 + 2.0 * k2 * s * s) + k3 - nu0

    lo, hi = 0.0, 1.0
    while ddw(hi) < 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("failed to bracket the truncation threshold")
    while (hi - lo) > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if ddw(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    s_star = 0.5 * (lo + hi)

    w_lo = k1 / (2.0 * k2) * np.exp(k2 * s_star**2) + 0.5 * k3 * s_star**2
    dw_lo = s_star * (k1 * np.exp(k2 * s_star**2) + k3)
    a1 = dw_lo - nu0 * s_star
    a0 = w_lo - a1 * s_star - 0.5 * nu0 * s_star**2
    return BrauerParams(k1=k1, k2=k2, k3=k3, nu0=nu0, s_star=s_star, a0=a0, a1=a1)


class BrauerLaw(IsotropicLaw):
    """Modified Brauer ferromagnet: exponential core, quadratic extension.

    The differential reluctivity rises from k1 + k3 at b = 0 to nu0 at the
    threshold and stays there, so gamma = k1 + k3 and lipschitz = nu0 are
    exact bounds. The second-derivative Lipschitz constant is certified by
    a finite-difference scan over a radial grid (the profile's third
    derivative vanishes above the threshold).
    """

    def __init__(self, params):
        self.params = params
        self.gamma = params.k1 + params.k3
        self.lipschitz = params.nu0
        self.hess_lipschitz = self._scan_hess_lipschitz()

    def _profile(self, s):
        p = self.params
        s = np.asarray(s, dtype=float)
        low = s <= p.s_star
        sl = np.where(low, s, 0.0)
        e = np.exp(p.k2 * sl * sl)
        w_low = p.k1 / (2.0 * p.k2) * e + 0.5 * p.k3 * sl * sl
        d1_low = sl * (p.k1 * e + p.k3)
        d2_low = p.k1 * e * (1.0 + 2.0 * p.k2 * sl * sl) + p.k3
        w_high = p.a0 + p.a1 * s + 0.5 * p.nu0 * s * s
        d1_high = p.a1 + p.nu0 * s
        w = np.where(low, w_low, w_high)
        d1 = np.where(low, d1_low, d1_high)
        d2 = np.where(low, d2_low, p.nu0)
        return w, d1, d2

    def _scan_hess_lipschitz(self, n=2001):
        s = np.linspace(0.0, self.params.s_star, n)
        _, _, d2 = self._profile(s)
        return float(np.max(np.abs(np.diff(d2) / np.diff(s))))


def brauer_reference():
    """Brauer law with the standard soft-iron coefficients."""
    return BrauerLaw(brauer_build(k1=3.8, k2=2.17, k3=396.2, nu0=NU0))


def material_eval(law, x, b):
    """Evaluate one law at a single point: (w, h, nu_d)."""
    x = np.asarray(x, dtype=float).reshape(1, 2)
    b = _as_points(b)
    return (
        float(law.w(x, b)[0]),
        law.dw(x, b)[0],
        law.d2w(x, b)[0],
    )


def _spectral_norms(mats):
    """Operator 2-norm of a batch of symmetric 2x2 matrices."""
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    d = mats[..., 1, 1]
    half = 0.5 * (a + d)
    rad = np.sqrt(0.25 * (a - d) ** 2 + b * b)
    return np.maximum(np.abs(half + rad), np.abs(half - rad))


def certify_bounds(law, b_samples, x=None, pairwise_limit=512):
    """Scan convexity bounds over samples: (gamma_hat, L_hat, L2_hat).

    gamma_hat and L_hat are the extreme eigenvalues of d2w over the
    sample cloud; L2_hat estimates the Lipschitz constant of d2w from
    difference quotients (all sample pairs when the cloud is small,
    consecutive pairs otherwise). Estimates are lower bounds of the true
    suprema and are reported, not asserted.
    """
    b = _as_points(b_samples)
    if len(b) == 0:
        raise ValueError("empty sample set")
    if x is None:
        x = np.zeros_like(b)
    H = law.d2w(x, b)
    eigs = np.linalg.eigvalsh(H)
    gamma_hat = float(eigs[:, 0].min())
    l_hat = float(eigs[:, -1].max())

    if len(b) <= pairwise_limit:
        ii, jj = np.triu_indices(len(b), k=1)
    else:
        ii = np.arange(len(b) - 1)
        jj = ii + 1
    dist = np.linalg.norm(b[ii] - b[jj], axis=1)
    keep = dist > 0
    quotients = _spectral_norms(H[ii[keep]] - H[jj[keep]]) / dist[keep]
    l2_hat = float(quotients.max()) if quotients.size else 0.0
    return gamma_hat, l_hat, l2_hat


def radial_samples(s_max, n=401):
    """Radial sample cloud for isotropic bound certification."""
    s = np.linspace(0.0, s_max, n)
    return np.column_stack([s, np.zeros_like(s)])
