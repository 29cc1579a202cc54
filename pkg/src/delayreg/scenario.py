"""Scenario files: one TOML document drives every CLI subcommand.

Parsing is strict.  Unknown tables or keys, missing required keys and
wrongly typed values raise :class:`ScenarioError` with the offending line.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .factorization import (
    CoprimeFactorization,
    FirDelayParameter,
    factorize_by_shift,
    factorize_delayed_first_order,
    factorize_pi,
    factorize_static,
)
from .quasipoly import DelayRational, Quasipolynomial
from .simulator import FourierSignal, SimScenario
from .spectrum import RegionSpec
from .synthesis import (
    REGULATION_TOL,
    DesignResult,
    HarmonicTarget,
    design_qm,
)

PRESETS = ("example1", "example2", "example3")


class ScenarioError(ValueError):
    def __init__(self, message: str, source: str = "<scenario>", line: Optional[int] = None):
        self.source = source
        self.line = line
        loc = f"{source}:{line}" if line else source
        super().__init__(f"{loc}: {message}")


_NUM = (int, float)

# table -> {key: (types, required)}
_SCHEMA: dict[str, dict[str, tuple]] = {
    "": {"name": (str, False), "description": (str, False)},
    "plant": {"num": (list, True), "den": (list, True)},
    "controller": {"kp": (_NUM, True), "ki": (_NUM, True), "pole": (_NUM, False)},
    "factorization": {
        "plant": (str, True),
        "controller": (str, False),
        "mu": (_NUM, False),
        "shift_pole": (_NUM, False),
    },
    "target": {
        "f_hz": (_NUM, False),
        "period": (_NUM, False),
        "harmonics": (int, True),
        "include_dc": (bool, False),
    },
    "qm": {"spacing": (_NUM, True), "count": (int, True), "gains": (list, False)},
    "spectrum": {
        "re_min": (_NUM, True),
        "re_max": (_NUM, True),
        "im_min": (_NUM, True),
        "im_max": (_NUM, True),
        "grid_step": (_NUM, False),
    },
    "stability": {"re_max": (_NUM, False), "im_max": (_NUM, False), "grid_step": (_NUM, False)},
    "simulation": {
        "step": (_NUM, True),
        "t_end": (_NUM, True),
        "t_disturbance_on": (_NUM, True),
        "t_augmentation_on": (_NUM, True),
        "initial_output": (_NUM, False),
        "ramp": (_NUM, False),
        "disturbance": (dict, False),
        "reference": (dict, False),
    },
    "simulation.disturbance": {
        "c0": (_NUM, False),
        "amplitudes": (list, False),
        "phases": (list, False),
        "period": (_NUM, False),
    },
}
_SCHEMA["simulation.reference"] = _SCHEMA["simulation.disturbance"]
_REQUIRED_TABLES = ("plant", "controller", "factorization", "target", "qm")
_TERM_KEYS = {"delay", "coeffs"}


def _locate(text: str, table: str, key: Optional[str]) -> Optional[int]:
    current = ""
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\- ]+?)\s*\]\s*(#.*)?$")
    for n, line in enumerate(text.splitlines(), start=1):
        m = header.match(line)
        if m:
            current = m.group(1).replace(" ", "")
            if key is None and current == table:
                return n
            continue
        if key is not None and current == table and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return n
    return None


@dataclass(frozen=True)
class SimulationSettings:
    step: float
    t_end: float
    t_disturbance_on: float
    t_augmentation_on: float
    initial_output: float
    ramp: float
    disturbance: FourierSignal
    reference: FourierSignal


@dataclass(frozen=True)
class Scenario:
    name: str
    plant: DelayRational
    kp: float
    ki: float
    pole: float
    plant_scheme: str
    controller_scheme: str
    mu: Optional[float]
    shift_pole: float
    target: HarmonicTarget
    spacing: float
    count: int
    fixed_gains: Optional[tuple]
    region: RegionSpec
    stability_re_max: float
    stability_im_max: float
    stability_step: Optional[float]
    simulation: Optional[SimulationSettings]
    source: str = "<scenario>"

    # --- factorizations ---------------------------------------------------------

    def plant_factorization(self) -> CoprimeFactorization:
        if self.plant_scheme == "first-order-mu":
            a, tau, gain = _first_order_parameters(self.plant, self.source)
            return factorize_delayed_first_order(a, tau, self.mu, gain)
        return factorize_by_shift(self.plant, self.shift_pole)

    def controller_factorization(self) -> CoprimeFactorization:
        if self.controller_scheme == "static":
            return factorize_static(self.kp)
        return factorize_pi(self.kp, self.ki, self.pole)

    # --- design -----------------------------------------------------------------

    def design(self, tol: float = REGULATION_TOL) -> DesignResult:
        solver = None
        if self.fixed_gains is not None:
            gains = self.fixed_gains
            solver = lambda A, B: list(gains)  # noqa: E731
        return design_qm(
            self.plant_factorization(),
            self.controller_factorization(),
            self.target,
            self.spacing,
            self.count,
            tol=tol,
            solver=solver,
        )

    def sim_scenario(self, qm: FirDelayParameter) -> SimScenario:
        if self.simulation is None:
            raise ScenarioError("no [simulation] table", self.source)
        s = self.simulation
        return SimScenario(
            plant_f=self.plant_factorization(),
            ctrl_f=self.controller_factorization(),
            qm=qm,
            disturbance=s.disturbance,
            t_disturbance_on=s.t_disturbance_on,
            t_augmentation_on=s.t_augmentation_on,
            t_end=s.t_end,
            h=s.step,
            reference=s.reference,
            initial_output=s.initial_output,
            ramp=s.ramp,
        )


def _first_order_parameters(plant: DelayRational, source: str):
    num, den = plant.num.terms, plant.den.terms
    ok = (
        len(num) == 1
        and num[0][1].degree == 0
        and len(den) == 1
        and den[0][0] == 0.0
        and den[0][1].degree == 1
    )
    if not ok:
        raise ScenarioError(
            "factorization 'first-order-mu' needs a plant gain*exp(-s*tau)/(s - a)", source
        )
    lead = den[0][1].coeffs[1]
    a = -den[0][1].coeffs[0] / lead
    return a, num[0][0], num[0][1].coeffs[0] / lead


def _check_table(data: dict, table: str, text: str, source: str):
    schema = _SCHEMA[table]
    for key, value in data.items():
        if key not in schema:
            if table == "" and key in _SCHEMA:
                continue
            where = f"[{table}]" if table else "top level"
            raise ScenarioError(
                f"unknown key '{key}' in {where}", source, _locate(text, table, key) or _locate(text, key, None)
            )
        types, _ = schema[key]
        if isinstance(value, bool) and types is not bool and bool not in (types if isinstance(types, tuple) else (types,)):
            raise ScenarioError(f"'{key}' must not be a boolean", source, _locate(text, table, key))
        if not isinstance(value, types):
            raise ScenarioError(
                f"'{key}' has the wrong type ({type(value).__name__})", source, _locate(text, table, key)
            )
    for key, (_, required) in schema.items():
        if required and key not in data:
            raise ScenarioError(
                f"missing required key '{key}' in [{table}]", source, _locate(text, table, None)
            )


def _terms(value: list, table: str, key: str, text: str, source: str) -> Quasipolynomial:
    line = _locate(text, table, key)
    out = []
    for item in value:
        if not isinstance(item, dict) or set(item) - _TERM_KEYS or "coeffs" not in item:
            raise ScenarioError(
                f"'{key}' entries must be {{delay = ..., coeffs = [...]}}", source, line
            )
        delay = item.get("delay", 0.0)
        coeffs = item["coeffs"]
        if not isinstance(delay, _NUM) or isinstance(delay, bool) or delay < 0:
            raise ScenarioError(f"'{key}' delay must be a nonnegative number", source, line)
        if not isinstance(coeffs, list) or not all(
            isinstance(c, _NUM) and not isinstance(c, bool) for c in coeffs
        ):
            raise ScenarioError(f"'{key}' coeffs must be a list of numbers", source, line)
        out.append((float(delay), [float(c) for c in coeffs]))
    qp = Quasipolynomial.from_terms(out)
    return qp


def _numbers(value, table, key, text, source) -> list:
    if not all(isinstance(v, _NUM) and not isinstance(v, bool) for v in value):
        raise ScenarioError(f"'{key}' must be a list of numbers", source, _locate(text, table, key))
    return [float(v) for v in value]


def _signal(data: Optional[dict], table: str, period: float, text: str, source: str) -> FourierSignal:
    if data is None:
        return FourierSignal.zero()
    _check_table(data, table, text, source)
    amps = _numbers(data.get("amplitudes", []), table, "amplitudes", text, source)
    phases = _numbers(data.get("phases", [0.0] * len(amps)), table, "phases", text, source)
    if len(phases) != len(amps):
        raise ScenarioError(
            "'phases' and 'amplitudes' differ in length", source, _locate(text, table, "phases")
        )
    T = float(data.get("period", period))
    if T <= 0:
        raise ScenarioError("'period' must be positive", source, _locate(text, table, "period"))
    return FourierSignal(float(data.get("c0", 0.0)), tuple(zip(amps, phases)), T)


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else max(1, len(text.splitlines()))
        raise ScenarioError(f"TOML syntax error: {exc}", source, line) from None

    _check_table(doc, "", text, source)
    for table in _REQUIRED_TABLES:
        if table not in doc:
            raise ScenarioError(f"missing table [{table}]", source)
    for table in ("plant", "controller", "factorization", "target", "qm", "spectrum", "stability"):
        if table in doc:
            if not isinstance(doc[table], dict):
                raise ScenarioError(f"'{table}' must be a table", source, _locate(text, "", table))
            _check_table(doc[table], table, text, source)

    def fail(msg, table, key=None):
        raise ScenarioError(msg, source, _locate(text, table, key))

    p = doc["plant"]
    num = _terms(p["num"], "plant", "num", text, source)
    den = _terms(p["den"], "plant", "den", text, source)
    if den.is_zero():
        fail("plant denominator is identically zero", "plant", "den")
    plant = DelayRational(num, den)
    if not plant.is_proper:
        fail("plant is not proper", "plant", "den")

    c = doc["controller"]
    kp, ki = float(c["kp"]), float(c["ki"])
    pole = float(c.get("pole", 1.0))
    if pole <= 0:
        fail("controller factorization pole must be positive", "controller", "pole")

    f = doc["factorization"]
    plant_scheme = f["plant"]
    if plant_scheme not in ("first-order-mu", "generic-shift"):
        fail(f"unknown plant factorization '{plant_scheme}'", "factorization", "plant")
    ctrl_scheme = f.get("controller", "pid-shift")
    if ctrl_scheme not in ("pid-shift", "static"):
        fail(f"unknown controller factorization '{ctrl_scheme}'", "factorization", "controller")
    if ctrl_scheme == "pid-shift" and kp == 0 and ki == 0:
        fail("kp and ki are both zero; use controller = \"static\"", "controller", "kp")
    if ctrl_scheme == "static" and ki != 0:
        fail("a static controller cannot have ki != 0", "controller", "ki")
    mu = f.get("mu")
    if plant_scheme == "first-order-mu":
        if mu is None:
            fail("'mu' is required for first-order-mu", "factorization")
        if mu <= 0:
            fail("'mu' must be positive", "factorization", "mu")
    shift_pole = float(f.get("shift_pole", 1.0))
    if shift_pole <= 0:
        fail("'shift_pole' must be positive", "factorization", "shift_pole")

    t = doc["target"]
    if ("f_hz" in t) == ("period" in t):
        fail("give exactly one of 'f_hz' or 'period'", "target")
    period = 1.0 / float(t["f_hz"]) if "f_hz" in t else float(t["period"])
    if not period > 0:
        fail("target frequency/period must be positive", "target")
    if t["harmonics"] < 0:
        fail("'harmonics' must be nonnegative", "target", "harmonics")
    target = HarmonicTarget(period, t["harmonics"], bool(t.get("include_dc", True)))

    q = doc["qm"]
    spacing, count = float(q["spacing"]), q["count"]
    if spacing <= 0:
        fail("'spacing' must be positive", "qm", "spacing")
    if count < 0:
        fail("'count' must be nonnegative", "qm", "count")
    gains = None
    if "gains" in q:
        gains = tuple(_numbers(q["gains"], "qm", "gains", text, source))
        if len(gains) != count + 1:
            fail(f"'gains' needs count + 1 = {count + 1} entries", "qm", "gains")

    sp = doc.get("spectrum", {"re_min": -5.0, "re_max": 3.0, "im_min": 0.0, "im_max": 60.0})
    try:
        region = RegionSpec(
            float(sp["re_min"]), float(sp["re_max"]), float(sp["im_min"]), float(sp["im_max"]),
            float(sp["grid_step"]) if "grid_step" in sp else None,
        )
    except ValueError as exc:
        fail(str(exc), "spectrum")

    st = doc.get("stability", {})
    sim = None
    if "simulation" in doc:
        s = doc["simulation"]
        if not isinstance(s, dict):
            fail("'simulation' must be a table", "", "simulation")
        _check_table(s, "simulation", text, source)
        if s["step"] <= 0:
            fail("'step' must be positive", "simulation", "step")
        if s["t_end"] <= 0:
            fail("'t_end' must be positive", "simulation", "t_end")
        if not 0 <= s["t_disturbance_on"] <= s["t_augmentation_on"]:
            fail("need 0 <= t_disturbance_on <= t_augmentation_on", "simulation", "t_augmentation_on")
        sim = SimulationSettings(
            step=float(s["step"]),
            t_end=float(s["t_end"]),
            t_disturbance_on=float(s["t_disturbance_on"]),
            t_augmentation_on=float(s["t_augmentation_on"]),
            initial_output=float(s.get("initial_output", 0.0)),
            ramp=float(s.get("ramp", 0.0)),
            disturbance=_signal(s.get("disturbance"), "simulation.disturbance", period, text, source),
            reference=_signal(s.get("reference"), "simulation.reference", period, text, source),
        )

    return Scenario(
        name=doc.get("name", Path(source).stem),
        plant=plant,
        kp=kp,
        ki=ki,
        pole=pole,
        plant_scheme=plant_scheme,
        controller_scheme=ctrl_scheme,
        mu=float(mu) if mu is not None else None,
        shift_pole=shift_pole,
        target=target,
        spacing=spacing,
        count=count,
        fixed_gains=gains,
        region=region,
        stability_re_max=float(st.get("re_max", 5.0)),
        stability_im_max=float(st.get("im_max", 200.0)),
        stability_step=float(st["grid_step"]) if "grid_step" in st else None,
        simulation=sim,
        source=source,
    )


def preset_text(name: str) -> str:
    return resources.files("delayreg.presets").joinpath(f"{name}.toml").read_text()


def load_scenario(ref: str) -> Scenario:
    """Load a scenario from a file path or a bundled preset name."""
    path = Path(ref)
    if path.is_file():
        return parse_scenario(path.read_text(), str(path))
    if ref in PRESETS:
        return parse_scenario(preset_text(ref), f"preset:{ref}")
    raise ScenarioError(f"no such scenario file or preset: {ref!r}", ref)
