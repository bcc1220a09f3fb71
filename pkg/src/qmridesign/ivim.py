"""Bi-exponential (IVIM) diffusion signal model with echo-time coupling.

The forward model for a measurement at diffusion weighting ``b`` is

    S(b) = s0 * exp(-TE/T2) * (f * exp(-b*d_star) + (1 - f) * exp(-b*d))

where ``f`` is the perfusion fraction, ``d`` the tissue diffusivity and
``d_star`` the pseudo-diffusivity of the perfusion compartment. The echo
time is not a free parameter: the largest b-value of a protocol dictates
the diffusion-encoding duration and therefore the minimum achievable TE,
which in turn sets the T2 attenuation of every measurement. This coupling
is what makes very high b-values costly.

Measurement noise is Rician: the magnitude of the complex signal after
adding independent zero-mean Gaussians to the real and imaginary channels.

Units: b-values are carried in s/mm^2 throughout the package and converted
to SI (s/m^2) in exactly one place, inside :func:`min_te`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GYROMAGNETIC_RATIO_H1",
    "PROTOCOL_LENGTH",
    "B_VALUE_MAX",
    "ADHOC_B_VALUES",
    "IvimParams",
    "ScannerConfig",
    "AcquisitionProtocol",
    "min_te",
    "ivim_signal",
    "add_rician_noise",
    "simulate_acquisition",
]

#: proton gyromagnetic ratio, rad s^-1 T^-1
GYROMAGNETIC_RATIO_H1 = 2.675e8

#: number of acquisitions per protocol
PROTOCOL_LENGTH = 10

#: upper edge of the b-value grid, s/mm^2
B_VALUE_MAX = 1000.0

#: clinically used baseline protocol, s/mm^2
ADHOC_B_VALUES = (0.0, 10.0, 20.0, 30.0, 50.0, 80.0, 100.0, 200.0, 400.0, 800.0)


@dataclass(frozen=True)
class IvimParams:
    """Ground-truth or estimated tissue parameters.

    s0 is a unitless signal scale (1.0 for the simulated reference), f the
    perfusion fraction, d and d_star diffusivities in mm^2/s. The perfusion
    compartment must decay at least as fast as the tissue compartment
    (d_star >= d); violating tuples are rejected at construction.
    """

    s0: float
    f: float
    d: float
    d_star: float

    def __post_init__(self) -> None:
        if not self.s0 > 0:
            raise ValueError(f"s0 must be positive, got {self.s0}")
        if not 0.0 <= self.f <= 1.0:
            raise ValueError(f"f must lie in [0, 1], got {self.f}")
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if not self.d_star > 0:
            raise ValueError(f"d_star must be positive, got {self.d_star}")
        if self.d_star < self.d:
            raise ValueError(
                f"d_star ({self.d_star}) must be >= d ({self.d}): the perfusion "
                "compartment decays faster"
            )

    def as_array(self) -> np.ndarray:
        """Parameter vector in the canonical order (s0, f, d, d_star)."""
        return np.array([self.s0, self.f, self.d, self.d_star])


@dataclass(frozen=True)
class ScannerConfig:
    """Hardware and noise context for a simulated acquisition.

    gradient_strength in T/m, gyromagnetic_ratio in rad s^-1 T^-1, times in
    seconds. ``snr`` is the signal-to-noise ratio at the reference b=0
    amplitude, so the Gaussian channel noise has sigma = 1/snr.
    """

    gradient_strength: float = 0.033
    gyromagnetic_ratio: float = GYROMAGNETIC_RATIO_H1
    te_overhead: float = 0.020
    t2: float = 0.100
    snr: float = 25.0

    def __post_init__(self) -> None:
        for name in ("gradient_strength", "gyromagnetic_ratio", "te_overhead", "t2", "snr"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not self.snr > 1:
            raise ValueError(f"snr must exceed 1 for sigma = 1/snr to be meaningful, got {self.snr}")

    @property
    def noise_sigma(self) -> float:
        """Channel noise sigma in units of the reference b=0 amplitude."""
        return 1.0 / self.snr

    def with_snr(self, snr: float) -> "ScannerConfig":
        return ScannerConfig(
            gradient_strength=self.gradient_strength,
            gyromagnetic_ratio=self.gyromagnetic_ratio,
            te_overhead=self.te_overhead,
            t2=self.t2,
            snr=snr,
        )


def min_te(b_max: float, scanner: ScannerConfig) -> float:
    """Minimum echo time for a protocol whose largest b-value is ``b_max``.

    Uses the pulsed-gradient relation b = gamma^2 G^2 delta^2 (Delta - delta/3)
    with the simplification Delta = delta, so b = (2/3) gamma^2 G^2 delta^3 and
    TE = 2*delta + te_overhead. Monotonically non-decreasing in b_max;
    b_max = 0 returns the bare overhead.
    """
    if b_max < 0:
        raise ValueError(f"b_max must be non-negative, got {b_max}")
    b_si = b_max * 1.0e6  # s/mm^2 -> s/m^2, the single unit conversion point
    gamma_g_sq = (scanner.gyromagnetic_ratio * scanner.gradient_strength) ** 2
    delta = (3.0 * b_si / (2.0 * gamma_g_sq)) ** (1.0 / 3.0)
    return scanner.te_overhead + 2.0 * delta


@dataclass(frozen=True)
class AcquisitionProtocol:
    """An ordered set of PROTOCOL_LENGTH b-values, stored sorted ascending.

    Invariants: exactly PROTOCOL_LENGTH values, each within [0, B_VALUE_MAX],
    at least one b = 0. The echo time is derived from the largest b-value and
    the governing scanner, never stored, so it cannot go stale.
    """

    b_values: tuple = field(default=ADHOC_B_VALUES)

    def __post_init__(self) -> None:
        values = tuple(sorted(float(b) for b in self.b_values))
        if len(values) != PROTOCOL_LENGTH:
            raise ValueError(
                f"protocol must contain exactly {PROTOCOL_LENGTH} b-values, got {len(values)}"
            )
        if values[0] != 0.0:
            raise ValueError("protocol must contain at least one b = 0 measurement")
        if values[-1] > B_VALUE_MAX:
            raise ValueError(
                f"b-values must lie within [0, {B_VALUE_MAX:g}], got max {values[-1]}"
            )
        object.__setattr__(self, "b_values", values)

    @classmethod
    def adhoc(cls) -> "AcquisitionProtocol":
        return cls(ADHOC_B_VALUES)

    @property
    def b_array(self) -> np.ndarray:
        return np.asarray(self.b_values, dtype=float)

    @property
    def b_max(self) -> float:
        return self.b_values[-1]

    def echo_time(self, scanner: ScannerConfig) -> float:
        """Protocol TE under ``scanner``, recomputed from the largest b-value."""
        return min_te(self.b_max, scanner)


def ivim_signal(params: IvimParams, b, te: float, t2: float):
    """Noise-free bi-exponential signal at diffusion weighting ``b``.

    ``b`` may be a scalar or an array (s/mm^2); the result matches its shape.
    """
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("b-values must be non-negative")
    if te < 0:
        raise ValueError(f"te must be non-negative, got {te}")
    if not t2 > 0:
        raise ValueError(f"t2 must be positive, got {t2}")
    decay = np.exp(-te / t2)
    signal = params.s0 * decay * (
        params.f * np.exp(-b * params.d_star) + (1.0 - params.f) * np.exp(-b * params.d)
    )
    return signal if signal.ndim else float(signal)


def add_rician_noise(signal, sigma: float, rng: np.random.Generator):
    """Magnitude signal after adding channel noise of std ``sigma``.

    Returns sqrt((signal + xi1)^2 + xi2^2) with xi1, xi2 independent
    N(0, sigma^2) draws, elementwise for array input. sigma = 0 reduces to
    |signal| exactly. Every call consumes fresh draws, so repeated b-values
    in a protocol receive independent noise.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    signal = np.asarray(signal, dtype=float)
    if sigma == 0.0:
        out = np.abs(signal)
        return out if out.ndim else float(out)
    xi1 = rng.normal(0.0, sigma, size=signal.shape)
    xi2 = rng.normal(0.0, sigma, size=signal.shape)
    out = np.hypot(signal + xi1, xi2)
    return out if out.ndim else float(out)


def simulate_acquisition(
    params: IvimParams,
    protocol: AcquisitionProtocol,
    scanner: ScannerConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Noisy signal vector for one subject under ``protocol``.

    The noise sigma is 1/snr in units of the reference b=0 amplitude
    (the pre-T2-decay s0 = 1 level), so longer echo times reduce the
    effective SNR of every measurement.
    """
    te = protocol.echo_time(scanner)
    clean = ivim_signal(params, protocol.b_array, te, scanner.t2)
    return add_rician_noise(clean, scanner.noise_sigma, rng)
