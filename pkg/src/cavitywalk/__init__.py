"""
Time-bin quantum walks in coupled fiber cavities.

Modules
-------
walk      coherent walk on the cavity lattice, classical walk, brute-force oracle
cavity    network description, timing, losses and output pulse tables
detector  single-photon detector Monte Carlo and event files
analysis  event stream -> distributions, round-trip losses, fidelity
config    run configuration files
report    result report files
cli       command line (``cavitywalk``)

The detector inner loop runs in a compiled extension when it is available
and falls back to numpy otherwise; ``cavitywalk._backend.BACKEND`` says which.
Set ``CAVITYWALK_PURE_PYTHON=1`` to force the fallback.
"""

from . import _backend
from .analysis import analyze, fidelity_series, theory_distributions
from .cavity import NetworkConfig, max_observable_steps, reference_network, round_trip_transmission, tapped_pulse_table
from .config import RunConfig, load_config, parse_config, serialize_config
from .detector import DetectorSpec, EventStream, read_events, simulate_trials, write_events
from .errors import *  # noqa: F401,F403
from .walk import (
    CoinSpec,
    WalkDistribution,
    WalkState,
    brute_force_oracle,
    classical_evolve,
    coin_from_bias,
    evolve,
    fidelity,
    localized_state,
    multiport_coin,
)

BACKEND = _backend.BACKEND
__version__ = "0.1.0"
