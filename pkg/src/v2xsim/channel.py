"""SINR-level link abstraction: path loss, shadowing, Rayleigh fading, MRC,
effective SINR, truncated-Shannon rate and a threshold BLER ramp."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

V2I = "v2i_2ghz"
V2V = "v2v_5_9ghz"

CARRIER_HZ = {V2I: 2.0e9, V2V: 5.9e9}

PRB_BANDWIDTH_HZ = 180e3
TTI_S = 1e-3
BITS_PER_PRB_PER_SE = 180  # 180 kHz x 1 ms
MAX_SPECTRAL_EFFICIENCY = 6.0
THERMAL_NOISE_DBM_HZ = -174.0
N_RX_BRANCHES = 2


def free_space_db(distance_m, carrier_hz):
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    return 20 * np.log10(d) + 20 * np.log10(carrier_hz) - 147.55


def path_loss_v2i(distance_m):
    """Macro-cell loss at 2 GHz, floored at free space. Distances below 1 m are clamped."""
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    pl = np.maximum(128.1 + 37.6 * np.log10(d / 1000.0), free_space_db(d, CARRIER_HZ[V2I]))
    return float(pl) if pl.ndim == 0 else pl


def path_loss_v2v(distance_m):
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    pl = 63.3 + 20.4 * np.log10(d)
    return float(pl) if pl.ndim == 0 else pl


PATH_LOSS = {V2I: path_loss_v2i, V2V: path_loss_v2v}


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin2db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def noise_mw(noise_figure_db: float = 9.0, bandwidth_hz: float = PRB_BANDWIDTH_HZ) -> float:
    return float(db2lin(THERMAL_NOISE_DBM_HZ + 10 * np.log10(bandwidth_hz) + noise_figure_db))


def per_prb_power_dbm(total_dbm: float, n_prb: int) -> float:
    """Flat power spectral density across the pool."""
    return total_dbm - 10 * np.log10(n_prb)


@dataclass
class LinkState:
    tx_id: int
    rx_id: int
    band: str
    distance_m: float
    pathloss_db: float
    shadowing_db: float = 0.0
    # power gains, shape (n_prb, n_branches)
    fading_gain: np.ndarray = field(default_factory=lambda: np.ones((1, N_RX_BRANCHES)))

    def __post_init__(self):
        self.fading_gain = np.atleast_2d(np.asarray(self.fading_gain, dtype=float))
        if not np.all(np.isfinite(self.fading_gain)) or np.any(self.fading_gain < 0):
            raise ValueError("fading gains must be finite and non-negative")

    @classmethod
    def from_distance(cls, tx_id, rx_id, band, distance_m, shadowing_db=0.0, fading_gain=None):
        fading = np.ones((1, N_RX_BRANCHES)) if fading_gain is None else fading_gain
        return cls(tx_id, rx_id, band, distance_m, PATH_LOSS[band](distance_m), shadowing_db, fading)

    def rx_power_mw(self, tx_power_dbm: float, prb: int) -> np.ndarray:
        """Received power per branch on one PRB."""
        loss = self.pathloss_db + self.shadowing_db
        return db2lin(tx_power_dbm - loss) * self.fading_gain[prb]


def mrc_combine(branch_snr_linear: Sequence[float]) -> float:
    snr = np.asarray(branch_snr_linear, dtype=float)
    if snr.size == 0:
        raise ValueError("MRC needs at least one branch")
    if np.any(snr < 0):
        raise ValueError("branch SNRs must be non-negative")
    return float(snr.sum())


def sinr_per_prb(link: LinkState, prb: int, interferers, tx_power_dbm: float,
                 noise_figure_db: float = 9.0) -> float:
    """Post-MRC SINR in dB on one PRB.

    ``interferers`` is a sequence of ``(LinkState, tx_power_dbm)`` pairs, each
    describing the channel from an interfering transmitter to the same receiver.
    """
    n = noise_mw(noise_figure_db)
    signal = link.rx_power_mw(tx_power_dbm, prb)
    interference = np.zeros_like(signal)
    for other, power_dbm in interferers:
        if other.band != link.band:
            raise ValueError(f"interferer on {other.band} cannot hit a {link.band} link")
        interference = interference + other.rx_power_mw(power_dbm, prb)
    return float(lin2db(mrc_combine(signal / (n + interference))))


def effective_sinr(per_prb_sinr_linear) -> float:
    """Geometric mean of the per-PRB linear SINRs."""
    s = np.asarray(per_prb_sinr_linear, dtype=float)
    if s.size == 0:
        raise ValueError("effective SINR over zero PRBs")
    with np.errstate(divide="ignore"):
        return float(np.exp(np.mean(np.log(s))))


def spectral_efficiency(sinr_linear):
    return np.minimum(np.log2(1.0 + np.asarray(sinr_linear, dtype=float)), MAX_SPECTRAL_EFFICIENCY)


def rate_from_sinr(sinr_eff_linear, n_prb):
    """Deliverable bits in one TTI over ``n_prb`` PRBs. Elementwise on arrays."""
    n = np.asarray(n_prb)
    if np.any(n < 0):
        raise ValueError("n_prb must be >= 0")
    bits = np.floor(n * BITS_PER_PRB_PER_SE * spectral_efficiency(sinr_eff_linear)).astype(np.int64)
    return int(bits) if bits.ndim == 0 else bits


def mcs_threshold_db(spectral_eff):
    """SINR at which a transport block of the given efficiency is decodable."""
    with np.errstate(divide="ignore"):
        return 10 * np.log10(2.0 ** np.asarray(spectral_eff, dtype=float) - 1.0)


# BLER ramp knees: p=1 below -1 dB, 0.1 at 0 dB, 1e-5 at +1 dB, 0 above.
_BLER_AT_ZERO = 0.1
_BLER_AT_UPPER = 1e-5


def block_error_prob(delta_db):
    d = np.asarray(delta_db, dtype=float)
    lower = 10.0 ** (np.log10(_BLER_AT_ZERO) * (d + 1.0))
    upper = 10.0 ** (np.log10(_BLER_AT_ZERO) + (np.log10(_BLER_AT_UPPER) - np.log10(_BLER_AT_ZERO)) * d)
    p = np.where(d < -1.0, 1.0, np.where(d <= 0.0, lower, np.where(d <= 1.0, upper, 0.0)))
    return float(p) if p.ndim == 0 else p


class Outcome(enum.Enum):
    ACK = "ack"
    NACK = "nack"


def transmission_outcome(sinr_eff_db: float, mcs_threshold_db: float, rng: np.random.Generator) -> Outcome:
    p = block_error_prob(sinr_eff_db - mcs_threshold_db)
    return Outcome.NACK if rng.random() < p else Outcome.ACK
