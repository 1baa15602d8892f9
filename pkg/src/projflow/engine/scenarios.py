from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple
from pathlib import Path
import hashlib
import json

import numpy as np

from projflow.engine.dynamics import METHODS, System
from projflow.engine.errors import ConeViolationError, ConfigError
from projflow.engine.measure import Field, Partition
from projflow.engine.projection import make_projector

CONFIG_DIR = Path(__file__).parent.parent / "configs"

BUILTINS = {
    "sine-mean": "sine_mean.json",
    "sine-subcritical": "sine_subcritical.json",
    "flat": "flat.json",
    "ordered-pair": "ordered_pair.json",
}

SECTION_KEYS = {
    "scenario": {"name", "m", "weights", "a", "n", "y0", "z0", "c"},
    "integration": {"T", "h", "stride", "method"},
    "output": {"dir", "states", "phi_grid"},
}

CLOSED_FORMS = {
    "constant": {"value"},
    "sine": {"amplitude", "frequency", "phase"},
    "cosine": {"amplitude", "frequency", "phase"},
    "linear": {"slope", "intercept"},
    "explicit": {"values"},
}
Y0_ONLY = {"a_plus_K_n": {"K"}}
Z0_ONLY = {"scaled": {"factor"}}
REQUIRED_PARAMS = {"constant": "value", "explicit": "values", "a_plus_K_n": "K", "scaled": "factor"}

DEFAULT_M = 512


@dataclass(frozen=True)
class Integration:
    T: float = 100.0
    h: float = 0.01
    stride: int = 10
    method: str = "log_rk4"


@dataclass(frozen=True)
class Output:
    dir: str = "out"
    states: bool = False
    phi_grid: int = 41


@dataclass(frozen=True)
class Scenario:

    name: str
    a: Dict[str, Any]
    n: Dict[str, Any]
    y0: Dict[str, Any]
    m: int = DEFAULT_M
    weights: Optional[Tuple[float, ...]] = None
    z0: Optional[Dict[str, Any]] = None
    integration: Integration = field(default_factory=Integration)
    output: Output = field(default_factory=Output)

    # ---------- loading ----------

    @classmethod
    def from_file(cls, file_name: str | Path) -> "Scenario":
        """Absolute/relative paths are used as given; bare names resolve in the packaged configs."""

        file_path = Path(file_name)
        if not file_path.exists():
            file_path = CONFIG_DIR / file_path

        if not file_path.exists():
            raise FileNotFoundError(file_path)

        with open(file_path) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{file_path}: {exc}") from exc

        return cls.from_dict(data)

    @classmethod
    def _parse_field(cls, role: str, spec, extra: Dict[str, set]) -> Dict[str, Any]:
        """
        Accepts:
          number → constant
          {kind, ...params} → closed form, explicit values or role-specific kinds
        """
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            return {"kind": "constant", "value": float(spec)}

        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigError(f"scenario.{role}: expected a number or an object with 'kind'")

        kinds = {**CLOSED_FORMS, **extra}
        kind = spec["kind"]
        if kind not in kinds:
            raise ConfigError(f"scenario.{role}: unknown kind {kind!r}; expected one of {sorted(kinds)}")

        unknown = set(spec) - kinds[kind] - {"kind"}
        if unknown:
            raise ConfigError(f"scenario.{role}: unknown keys {sorted(unknown)} for kind {kind!r}")

        parsed = {"kind": kind}
        for key in sorted(kinds[kind]):
            if key not in spec:
                continue
            if key == "values":
                parsed[key] = [float(v) for v in spec[key]]
            else:
                parsed[key] = float(spec[key])

        needed = REQUIRED_PARAMS.get(kind)
        if needed and needed not in parsed:
            raise ConfigError(f"scenario.{role}: kind {kind!r} needs {needed!r}")

        return parsed

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scenario":

        if not isinstance(data, dict):
            raise ConfigError("config must be an object with sections scenario/integration/output")

        unknown = set(data) - set(SECTION_KEYS)
        if unknown:
            raise ConfigError(f"unknown sections {sorted(unknown)}")
        for section, keys in SECTION_KEYS.items():
            extra = set(data.get(section, {})) - keys
            if extra:
                raise ConfigError(f"unknown keys in {section}: {sorted(extra)}")

        sc = data.get("scenario")
        if not sc:
            raise ConfigError("missing 'scenario' section")
        for key in ["name", "a", "n", "y0"]:
            if key not in sc:
                raise ConfigError(f"missing 'scenario.{key}'")

        weights = sc.get("weights")
        if weights is not None:
            weights = tuple(float(w) for w in weights)
            if "m" in sc and int(sc["m"]) != len(weights):
                raise ConfigError(f"scenario.m={sc['m']} disagrees with {len(weights)} weights")
        m = len(weights) if weights is not None else int(sc.get("m", DEFAULT_M))
        if m < 1:
            raise ConfigError(f"scenario.m must be >= 1, got {m}")

        y0 = cls._parse_field("y0", sc["y0"], Y0_ONLY)
        if "c" in sc:
            if y0["kind"] != "constant":
                raise ConfigError("scenario.c only applies to a constant y0")
            y0 = {"kind": "constant", "value": float(sc["c"])}

        ig = data.get("integration", {})
        integration = Integration(
            T=float(ig.get("T", Integration.T)),
            h=float(ig.get("h", Integration.h)),
            stride=int(ig.get("stride", Integration.stride)),
            method=str(ig.get("method", Integration.method)),
        )
        _validate_integration(integration)

        out = data.get("output", {})
        output = Output(
            dir=str(out.get("dir", Output.dir)),
            states=bool(out.get("states", Output.states)),
            phi_grid=int(out.get("phi_grid", Output.phi_grid)),
        )

        return cls(
            name=str(sc["name"]),
            m=m,
            weights=weights,
            a=cls._parse_field("a", sc["a"], {}),
            n=cls._parse_field("n", sc["n"], {}),
            y0=y0,
            z0=cls._parse_field("z0", sc["z0"], Z0_ONLY) if sc.get("z0") is not None else None,
            integration=integration,
            output=output,
        )

    # ---------- serialization ----------

    def to_dict(self) -> Dict[str, Any]:

        sc = {"name": self.name, "m": self.m, "a": self.a, "n": self.n, "y0": self.y0}
        if self.weights is not None:
            sc["weights"] = list(self.weights)
        if self.z0 is not None:
            sc["z0"] = self.z0

        return {
            "scenario": sc,
            "integration": {
                "T": self.integration.T,
                "h": self.integration.h,
                "stride": self.integration.stride,
                "method": self.integration.method,
            },
            "output": {
                "dir": self.output.dir,
                "states": self.output.states,
                "phi_grid": self.output.phi_grid,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    # ---------- overrides ----------

    def with_z0(self, spec) -> "Scenario":
        return replace(self, z0=self._parse_field("z0", spec, Z0_ONLY))

    def with_overrides(
        self,
        m: Optional[int] = None,
        T: Optional[float] = None,
        h: Optional[float] = None,
        stride: Optional[int] = None,
        method: Optional[str] = None,
        out: Optional[str] = None,
        c: Optional[float] = None,
    ) -> "Scenario":

        scenario = self
        if m is not None:
            if self.weights is not None:
                raise ConfigError("--m cannot override a scenario with explicit weights")
            if any(spec.get("kind") == "explicit" for spec in [self.a, self.n, self.y0, self.z0 or {}]):
                raise ConfigError("--m cannot override a scenario with explicit field values")
            if m < 1:
                raise ConfigError(f"m must be >= 1, got {m}")
            scenario = replace(scenario, m=int(m))
        if c is not None:
            if self.y0["kind"] != "constant":
                raise ConfigError("c only applies to a constant y0")
            scenario = replace(scenario, y0={"kind": "constant", "value": float(c)})

        integration = replace(
            self.integration,
            **{k: v for k, v in {"T": T, "h": h, "stride": stride, "method": method}.items() if v is not None},
        )
        _validate_integration(integration)
        output = replace(self.output, dir=out) if out is not None else self.output

        return replace(scenario, integration=integration, output=output)


def _validate_integration(ig: Integration):
    if ig.method not in METHODS:
        raise ConfigError(f"integration.method must be one of {METHODS}, got {ig.method!r}")
    if not (ig.T > 0 and 0 < ig.h <= ig.T):
        raise ConfigError(f"need 0 < h <= T, got h={ig.h}, T={ig.T}")
    if ig.stride < 1:
        raise ConfigError(f"integration.stride must be >= 1, got {ig.stride}")


def builtin(name: str, c: Optional[float] = None) -> Scenario:

    if name not in BUILTINS:
        raise ConfigError(f"unknown builtin {name!r}; expected one of {sorted(BUILTINS)}")

    scenario = Scenario.from_file(CONFIG_DIR / BUILTINS[name])
    return scenario.with_overrides(c=c) if c is not None else scenario


# ---------- materialization ----------

def _partition(s: Scenario) -> Partition:
    if s.weights is None:
        return Partition.uniform(s.m)
    w = np.asarray(s.weights, dtype=np.float64)
    return Partition.from_weights(w, np.cumsum(w) - 0.5 * w)


def _evaluate(spec: Dict[str, Any], p: Partition, role: str) -> np.ndarray:

    kind = spec["kind"]
    x = p.centers

    if kind == "constant":
        return np.full(p.m, spec["value"])
    if kind == "explicit":
        values = np.asarray(spec["values"], dtype=np.float64)
        if values.size != p.m:
            raise ConfigError(f"scenario.{role}: {values.size} values for {p.m} cells")
        return values
    if kind in ("sine", "cosine"):
        wave = np.sin if kind == "sine" else np.cos
        arg = 2.0 * np.pi * spec.get("frequency", 1.0) * x + spec.get("phase", 0.0)
        return spec.get("amplitude", 1.0) * wave(arg)
    if kind == "linear":
        return spec.get("slope", 0.0) * x + spec.get("intercept", 0.0)

    raise ConfigError(f"scenario.{role}: kind {kind!r} is not valid here")


def _positive(values: np.ndarray, p: Partition, label: str) -> Field:
    bad = np.flatnonzero(values <= 0)
    if bad.size:
        raise ConeViolationError(label, bad)
    return Field(values, p)


def materialize(s: Scenario) -> Tuple[System, Field]:
    """Builds the partition, the projector, the projected forcing and y0."""

    p = _partition(s)
    projector = make_projector(Field(_evaluate(s.n, p, "n"), p), p)
    sys = System.build(projector, Field(_evaluate(s.a, p, "a"), p))

    if s.y0["kind"] == "a_plus_K_n":
        values = sys.a.values + s.y0["K"] * sys.n.values
    else:
        values = _evaluate(s.y0, p, "y0")

    return sys, _positive(values, p, "y0")


def materialize_z0(s: Scenario, sys: System, y0: Field) -> Optional[Field]:
    """The comparison partner of y0, when the scenario declares one."""

    if s.z0 is None:
        return None
    if s.z0["kind"] == "scaled":
        values = s.z0["factor"] * y0.values
    else:
        values = _evaluate(s.z0, sys.partition, "z0")

    return _positive(values, sys.partition, "z0")
