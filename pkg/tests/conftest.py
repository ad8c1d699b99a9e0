import numpy as np
import pytest

from unicsim import (
    FrequencyGrid,
    Notch,
    SawBpf,
    balanced_design,
    block_response,
    cascade,
    solve_unic_delay,
    unic_response,
)

F_G = 1.25e9
T_G_SAW = 33.845e-9


@pytest.fixture(scope="session")
def saw():
    return SawBpf(f_center=F_G, passband_20db=35e6, insertion_loss=3.0, group_delay=T_G_SAW)


@pytest.fixture(scope="session")
def design(saw):
    return balanced_design(solve_unic_delay(T_G_SAW, F_G), saw)


def chain_response(design, saw, grid, stages=2, band_stop=True):
    """Filter chain used by the pipeline tests: `stages` interferometers plus band-stop."""
    unic = unic_response(design, saw, grid)
    parts = [unic] * stages
    if band_stop:
        parts.append(block_response(Notch(f_center=2.5e9, depth=10.0, width_10db=1e8), grid))
    return cascade(parts)


def record_bin_grid(rate, n_bins):
    """Uniform grid from DC to Nyquist matching an FFT bin spacing rate/n_bins."""
    return FrequencyGrid(0.0, rate / 2.0, n_bins // 2 + 1)


def rel_rms(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    denom = np.sqrt(np.mean(b ** 2))
    return np.sqrt(np.mean((a - b) ** 2)) / denom if denom else 0.0
