"""Periodic loops as truncated real Fourier series.

A loop stores, per coordinate channel, amplitudes ``(a_k, b_k)`` of
``a_0 + sum_k a_k cos(2 pi k t / T) + b_k sin(2 pi k t / T)`` for harmonics
``k = 0..K``.  Two frames are supported:

* ``cartesian9`` -- body-major channels ``(x1, y1[, z1], x2, ...)``;
  6 channels for planar loops, 9 for spatial ones.
* ``jacobi-massweighted`` -- vector-major channels of
  ``Q1 = sqrt(1/2) (r2 - r1)`` and ``Q2 = sqrt(2/3) (r3 - (r1+r2)/2)``;
  4 channels planar, 6 spatial.  The mass weighting makes the kinetic
  energy ``|Qdot|^2 / 2``, so the second-variation operator stays an
  ordinary symmetric eigenproblem.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

FRAME_CARTESIAN = "cartesian9"
FRAME_JACOBI = "jacobi-massweighted"

MU1 = 0.5
MU2 = 2.0 / 3.0
SQMU1 = np.sqrt(MU1)
SQMU2 = np.sqrt(MU2)

#: fraction of total coefficient energy allowed in the top 10% of harmonics
TAIL_TOL = 1e-8


class InvalidLoopError(ValueError):
    """Raised for malformed samples or inconsistent loop metadata."""


def channel_count(frame: str, dim: int) -> int:
    if frame == FRAME_CARTESIAN:
        return 3 * dim
    if frame == FRAME_JACOBI:
        return 2 * dim
    raise InvalidLoopError(f"unknown frame {frame!r}")


@dataclass(frozen=True)
class LoopTrajectory:
    """Immutable T-periodic path of the three-body configuration."""

    period: float
    dim: int
    frame: str
    coeffs: np.ndarray  # (channels, K+1, 2); [..., 0] cosine, [..., 1] sine
    param_name: str | None = None
    param_value: float | None = None
    residual: float | None = None   # solver matching residual, when refined
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.period <= 0:
            raise InvalidLoopError("period must be positive")
        if self.dim not in (2, 3):
            raise InvalidLoopError("dim must be 2 or 3")
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3 or c.shape[2] != 2:
            raise InvalidLoopError("coeffs must have shape (channels, K+1, 2)")
        if c.shape[0] != channel_count(self.frame, self.dim):
            raise InvalidLoopError(
                f"{self.frame} with dim={self.dim} needs "
                f"{channel_count(self.frame, self.dim)} channels, got {c.shape[0]}")
        c = c.copy()
        c[:, 0, 1] = 0.0  # k=0 sine is meaningless
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def n_channels(self) -> int:
        return self.coeffs.shape[0]

    def evaluate(self, t, order: int = 0) -> np.ndarray:
        """Configuration (order 0) or its time derivatives at time(s) t.

        Returns shape (channels,) for scalar t, else (len(t), channels).
        """
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.arange(self.K + 1)
        w = 2.0 * np.pi / self.period
        ang = np.outer(t_arr, k) * w
        ck, sk = np.cos(ang), np.sin(ang)
        a = self.coeffs[:, :, 0]
        b = self.coeffs[:, :, 1]
        if order == 0:
            out = ck @ a.T + sk @ b.T
        elif order == 1:
            wk = w * k
            out = ck @ (wk * b).T - sk @ (wk * a).T
        elif order == 2:
            wk2 = (w * k) ** 2
            out = -(ck @ (wk2 * a).T + sk @ (wk2 * b).T)
        else:
            raise ValueError("order must be 0, 1 or 2")
        return out[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else out

    def sample(self, n: int, order: int = 0) -> np.ndarray:
        """Values on the uniform grid t_j = j T / n, via zero-padded FFT."""
        if n < 2 * self.K + 1:
            return self.evaluate(np.arange(n) * self.period / n, order)
        a = self.coeffs[:, :, 0].copy()
        b = self.coeffs[:, :, 1].copy()
        w = 2.0 * np.pi / self.period
        k = np.arange(self.K + 1)
        if order == 1:
            a, b = w * k * b, -(w * k) * a
        elif order == 2:
            a, b = -((w * k) ** 2) * a, -((w * k) ** 2) * b
        spec = np.zeros((self.n_channels, n // 2 + 1), dtype=complex)
        spec[:, : self.K + 1] = (a - 1j * b) / 2.0
        spec[:, 0] *= 2.0
        return np.fft.irfft(spec, n=n, axis=1).T * n

    def tail_energy_fraction(self) -> float:
        """Energy share of the top 10% of harmonics (convergence check)."""
        e = np.sum(self.coeffs[:, 1:, :] ** 2, axis=(0, 2))
        total = e.sum()
        if total == 0.0:
            return 0.0
        cut = max(1, int(np.ceil(0.9 * self.K)))
        return float(e[cut - 1:].sum() / total)

    @property
    def converged(self) -> bool:
        return self.tail_energy_fraction() < TAIL_TOL

    def with_param(self, name: str, value: float) -> "LoopTrajectory":
        return replace(self, param_name=name, param_value=float(value))

    def with_warning(self, message: str) -> "LoopTrajectory":
        return replace(self, warnings=self.warnings + (message,))


def build_loop(samples: np.ndarray, period: float, frame: str, dim: int,
               K: int | None = None, **meta) -> LoopTrajectory:
    """Fit a loop to uniform samples over one period (t_j = j T / N).

    N must be at least ``2K+1`` (and at least 3); harmonics above K are
    discarded, everything below reproduces the samples to round-off when
    ``N >= 2K+1`` and the data is band-limited.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise InvalidLoopError("samples must be (N, channels)")
    n = samples.shape[0]
    if n < 3:
        raise InvalidLoopError("need at least 3 samples")
    kmax = (n - 1) // 2
    if K is None:
        K = kmax
    elif n < 2 * K + 1:
        raise InvalidLoopError(f"{n} samples cannot resolve K={K} harmonics")
    spec = np.fft.rfft(samples, axis=0) / n
    coeffs = np.zeros((samples.shape[1], K + 1, 2))
    kk = min(K, kmax)
    coeffs[:, : kk + 1, 0] = 2.0 * spec[: kk + 1].real.T
    coeffs[:, : kk + 1, 1] = -2.0 * spec[: kk + 1].imag.T
    coeffs[:, 0, 0] /= 2.0
    if n % 2 == 0 and K >= n // 2:
        coeffs[:, n // 2, 0] /= 2.0  # Nyquist bin is half-weighted
    return LoopTrajectory(period=period, dim=dim, frame=frame, coeffs=coeffs, **meta)


def evaluate_loop(loop: LoopTrajectory, t, order: int = 0) -> np.ndarray:
    return loop.evaluate(t, order)


def pad_loop(loop: LoopTrajectory, K: int) -> LoopTrajectory:
    """Same loop represented with harmonics up to K (truncate or zero-pad)."""
    if K == loop.K:
        return loop
    coeffs = np.zeros((loop.n_channels, K + 1, 2))
    kk = min(K, loop.K)
    coeffs[:, : kk + 1] = loop.coeffs[:, : kk + 1]
    return replace(loop, coeffs=coeffs)


def loop_axpy(base: LoopTrajectory, directions: Sequence[LoopTrajectory],
              amounts: Sequence[float]) -> LoopTrajectory:
    """base + sum_i amounts[i] * directions[i], aligned in K."""
    K = max([base.K] + [d.K for d in directions])
    out = pad_loop(base, K).coeffs.copy()
    for d, x in zip(directions, amounts):
        if d.frame != base.frame or d.dim != base.dim:
            raise InvalidLoopError("direction frame/dim mismatch")
        out += x * pad_loop(d, K).coeffs
    return replace(base, coeffs=out)


def scale_loop(loop: LoopTrajectory, factor: float) -> LoopTrajectory:
    return replace(loop, coeffs=loop.coeffs * factor)


def shift_time(loop: LoopTrajectory, dt: float) -> LoopTrajectory:
    """Loop with time origin moved: result(t) = loop(t + dt)."""
    k = np.arange(loop.K + 1)
    psi = 2.0 * np.pi * k * (-dt) / loop.period
    c, s = np.cos(psi), np.sin(psi)
    a = loop.coeffs[:, :, 0]
    b = loop.coeffs[:, :, 1]
    coeffs = np.stack([a * c - b * s, a * s + b * c], axis=2)
    return replace(loop, coeffs=coeffs)


def inner_product(f: LoopTrajectory, g: LoopTrajectory) -> float:
    """L2 inner product int_0^T f . g dt from coefficients."""
    K = max(f.K, g.K)
    cf, cg = pad_loop(f, K).coeffs, pad_loop(g, K).coeffs
    dot0 = np.sum(cf[:, 0, 0] * cg[:, 0, 0])
    dotk = np.sum(cf[:, 1:, :] * cg[:, 1:, :])
    return float(f.period * (dot0 + 0.5 * dotk))


def function_norm(loop: LoopTrajectory) -> float:
    return float(np.sqrt(max(inner_product(loop, loop), 0.0)))


def loop_distance(f: LoopTrajectory, g: LoopTrajectory) -> float:
    K = max(f.K, g.K)
    diff = pad_loop(f, K).coeffs - pad_loop(g, K).coeffs
    d0 = np.sum(diff[:, 0, 0] ** 2)
    dk = np.sum(diff[:, 1:, :] ** 2)
    return float(np.sqrt(f.period * (d0 + 0.5 * dk)))


def _com_energy(coeffs: np.ndarray, dim: int) -> float:
    com = coeffs[0 * dim: 1 * dim] + coeffs[1 * dim: 2 * dim] + coeffs[2 * dim: 3 * dim]
    return float(np.sum(com ** 2))


def change_frame(loop: LoopTrajectory, target: str) -> LoopTrajectory:
    """Exact linear frame change; Cartesian output is center-of-mass framed."""
    if target == loop.frame:
        raise InvalidLoopError("source and target frames are equal")
    d = loop.dim
    c = loop.coeffs
    if loop.frame == FRAME_CARTESIAN and target == FRAME_JACOBI:
        out = np.empty((2 * d,) + c.shape[1:])
        r1, r2, r3 = c[0:d], c[d:2 * d], c[2 * d:3 * d]
        out[0:d] = SQMU1 * (r2 - r1)
        out[d:2 * d] = SQMU2 * (r3 - 0.5 * (r1 + r2))
        new = replace(loop, frame=target, coeffs=out)
        total = np.sum(c ** 2)
        if total > 0 and _com_energy(c, d) > 1e-20 * total:
            new = new.with_warning("nonzero center of mass discarded by jacobi projection")
        return new
    if loop.frame == FRAME_JACOBI and target == FRAME_CARTESIAN:
        out = np.empty((3 * d,) + c.shape[1:])
        R1, R2 = c[0:d] / SQMU1, c[d:2 * d] / SQMU2
        out[0:d] = -0.5 * R1 - R2 / 3.0
        out[d:2 * d] = 0.5 * R1 - R2 / 3.0
        out[2 * d:3 * d] = 2.0 * R2 / 3.0
        return replace(loop, frame=target, coeffs=out)
    raise InvalidLoopError(f"unsupported frame change {loop.frame} -> {target}")


def as_frame(loop: LoopTrajectory, frame: str) -> LoopTrajectory:
    return loop if loop.frame == frame else change_frame(loop, frame)


def promote_to_3d(loop: LoopTrajectory) -> LoopTrajectory:
    """Embed a planar loop in 3D by adding zero z channels."""
    if loop.dim == 3:
        return loop
    d = 2
    nvec = loop.n_channels // d
    coeffs = np.zeros((3 * nvec,) + loop.coeffs.shape[1:])
    for v in range(nvec):
        coeffs[3 * v: 3 * v + 2] = loop.coeffs[d * v: d * v + 2]
    return replace(loop, dim=3, coeffs=coeffs)


def loop_to_dict(loop: LoopTrajectory) -> dict:
    return {
        "period": loop.period,
        "dim": loop.dim,
        "frame": loop.frame,
        "param": (None if loop.param_name is None
                  else {"name": loop.param_name, "value": loop.param_value}),
        "residual": loop.residual,
        "coeffs": [[[float(a), float(b)] for a, b in ch] for ch in loop.coeffs],
        "warnings": list(loop.warnings),
    }


def loop_from_dict(data: dict) -> LoopTrajectory:
    param = data.get("param") or {}
    return LoopTrajectory(
        period=float(data["period"]),
        dim=int(data["dim"]),
        frame=data["frame"],
        coeffs=np.asarray(data["coeffs"], dtype=float),
        param_name=param.get("name"),
        param_value=param.get("value"),
        residual=data.get("residual"),
        warnings=tuple(data.get("warnings", ())),
    )
