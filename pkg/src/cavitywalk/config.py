"""
Run configuration: one flat ``key = value`` text file with dotted keys.

Every apparatus constant has a named default, so an empty file describes the
reference two-cavity setup.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union

from . import walk
from .cavity import CavitySpec, NetworkConfig, auto_input_energy, max_observable_steps
from .detector import DEFAULT_BACKGROUND_PER_NS, DetectorSpec
from .errors import CavityWalkError, ValidationError

__all__ = ["RunConfig", "ConfigError", "parse_config", "serialize_config", "load_config"]


class ConfigError(ValidationError):
    """A configuration field failed validation; ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _key(section, name, default, doc=""):
    return dataclasses.field(default=default, metadata={"key": f"{section}.{name}", "doc": doc})


@dataclass(frozen=True)
class RunConfig:
    t1_ns: float = _key("network", "t1_ns", 503.0, "C1 round-trip time")
    t2_ns: float = _key("network", "t2_ns", 511.0, "C2 round-trip time")
    eta_c: float = _key("network", "eta_c", 0.5, "coin bias (inter-cavity coupler reflectivity)")
    r_s1: float = _key("network", "r_s1", 0.99, "input coupler reflectivity")
    r_s2: float = _key("network", "r_s2", 0.99, "output coupler reflectivity")
    loss_c1_db: float = _key("network", "loss_c1_db", 0.50, "C1 round-trip excess loss")
    loss_c2_db: float = _key("network", "loss_c2_db", 0.47, "C2 round-trip excess loss")
    loss_s1_db: float = _key("network", "loss_s1_db", 0.0, "extra S1 excess loss per pass")
    loss_s2_db: float = _key("network", "loss_s2_db", 0.0, "extra S2 excess loss per pass")
    loss_sc_db: float = _key("network", "loss_sc_db", 0.0, "extra Sc excess loss per pass")
    pulse_ns: float = _key("network", "pulse_ns", 2.5, "laser pulse duration")
    trial_period_us: float = _key("network", "trial_period_us", 33.0, "trial repetition period")
    offset_ns: float = _key("network", "offset_ns", 1000.0, "detection path delay")
    jitter_fwhm_ps: float = _key("detector", "jitter_fwhm_ps", 300.0, "timing jitter FWHM")
    tdc_bin_ps: int = _key("detector", "tdc_bin_ps", 162, "TDC bin width")
    efficiency: float = _key("detector", "efficiency", 1.0, "detection efficiency")
    background_per_ns: float = _key("detector", "background_per_ns", DEFAULT_BACKGROUND_PER_NS,
                                    "background clicks per ns per trial")
    trials: int = _key("run", "trials", 5_000_000, "number of trials")
    seed: int = _key("run", "seed", 1, "random seed")
    steps: int = _key("run", "steps", 62, "last walk step analysed")
    input_energy: str = _key("run", "input_energy", "auto", "laser photons per pulse, or auto")
    target_photons: float = _key("run", "target_photons", 0.95, "photons per trial when input_energy = auto")
    workers: int = _key("run", "workers", 1, "worker threads for the detector Monte Carlo")
    window_halfwidth_ns: float = _key("analysis", "window_halfwidth_ns", 2.0, "peak window half-width")
    events_path: str = _key("output", "events", "events.txt", "event file")
    report_path: str = _key("output", "report", "report.txt", "report file")

    def network(self) -> NetworkConfig:
        try:
            coin = walk.coin_from_bias(self.eta_c)
        except CavityWalkError as exc:
            raise ConfigError("network.eta_c", str(exc)) from exc
        try:
            return NetworkConfig(
                cavities=(CavitySpec(self.t1_ns, self.loss_c1_db), CavitySpec(self.t2_ns, self.loss_c2_db)),
                coin=coin,
                input_coupler_reflectivity=self.r_s1,
                output_coupler_reflectivity=self.r_s2,
                coupler_excess_losses={"s1": self.loss_s1_db, "s2": self.loss_s2_db, "sc": self.loss_sc_db},
                pulse_duration=self.pulse_ns,
                trial_period=self.trial_period_us,
                detection_path_offset=self.offset_ns,
            )
        except CavityWalkError as exc:
            raise ConfigError("network", str(exc)) from exc

    def detector(self) -> DetectorSpec:
        try:
            return DetectorSpec(self.jitter_fwhm_ps, self.tdc_bin_ps, self.efficiency, self.background_per_ns)
        except CavityWalkError as exc:
            raise ConfigError("detector", str(exc)) from exc

    def resolved_input_energy(self, cfg: NetworkConfig = None) -> float:
        if str(self.input_energy).strip().lower() == "auto":
            return auto_input_energy(cfg or self.network(), self.steps, self.target_photons)
        return float(self.input_energy)

    def validate(self) -> "RunConfig":
        cfg = self.network()
        self.detector()
        if self.trials < 0:
            raise ConfigError("run.trials", "must be >= 0")
        if self.workers < 1:
            raise ConfigError("run.workers", "must be >= 1")
        if self.steps < 0:
            raise ConfigError("run.steps", "must be >= 0")
        lim = max_observable_steps(cfg)
        if self.steps > lim.limit:
            raise ConfigError(
                "run.steps",
                f"{self.steps} exceeds the observable limit {lim.limit} "
                f"(repetition limit {lim.repetition_limit}, overlap limit {lim.overlap_limit})",
            )
        if str(self.input_energy).strip().lower() != "auto":
            try:
                if float(self.input_energy) < 0:
                    raise ValueError
            except ValueError:
                raise ConfigError("run.input_energy", f"expected a non-negative number or 'auto', got {self.input_energy!r}")
        if not 0 < self.target_photons < 1:
            raise ConfigError("run.target_photons", "must lie in (0, 1)")
        if self.window_halfwidth_ns <= 0:
            raise ConfigError("analysis.window_halfwidth_ns", "must be positive")
        return self


_BY_KEY = {f.metadata["key"]: f for f in fields(RunConfig)}


def _coerce(f, raw: str):
    if f.type in ("int", int):
        try:
            return int(raw)
        except ValueError:
            v = float(raw)
            if not v.is_integer():
                raise
            return int(v)
    if f.type in ("float", float):
        v = float(raw)
        if math.isnan(v):
            raise ValueError("nan")
        return v
    return raw


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse config text; unknown keys and malformed values raise :class:`ConfigError`."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        f = _BY_KEY.get(key)
        if f is None:
            raise ConfigError(key, "unknown configuration key")
        try:
            values[f.name] = _coerce(f, raw)
        except ValueError:
            raise ConfigError(key, f"cannot parse {raw!r} as {f.type}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    lines = ["# cavitywalk run configuration"]
    section = None
    for f in fields(RunConfig):
        key = f.metadata["key"]
        sec = key.split(".", 1)[0]
        if sec != section:
            lines.append("")
            section = sec
        lines.append(f"{key} = {_fmt(getattr(cfg, f.name))}  # {f.metadata['doc']}")
    return "\n".join(lines) + "\n"


def load_config(path: Union[str, Path, None], **overrides) -> RunConfig:
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config(text, **overrides)
