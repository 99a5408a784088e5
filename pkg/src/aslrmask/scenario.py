"""Scenario files: one JSON document describing a whole experiment."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import jsonschema

from .addr import ConfigError, RandRegion
from .isa import Program, assemble
from .layout import (Granularity, Layout, coarse_layout, enumerate_layouts,
                     page_ceil, page_granularity_layout, sample_layout)
from .machine import SystemConfig
from .memtable import Mode
from .presets import get_region
from .uarch import LatencyTable

HEX_OR_INT = {"oneOf": [{"type": "integer", "minimum": 0},
                        {"type": "string", "pattern": "^(0x[0-9a-fA-F_]+|[0-9_]+)$"}]}
REG_VALUE = {"oneOf": [{"type": "integer"}, {"type": "string"}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "modes": {"type": "array", "minItems": 1,
                  "items": {"enum": ["baseline", "oreo"]}},
        "region": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "preset": {"type": "string"},
                "region_id": {"type": "integer", "minimum": 0},
                "start": HEX_OR_INT, "end": HEX_OR_INT,
                "subregion_len": HEX_OR_INT,
            },
        },
        "layout": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "granularity": {"enum": ["coarse", "per_page"]},
                "seed": {"type": "integer", "minimum": 0},
                "index": {"type": "integer", "minimum": 0},
                "offset": HEX_OR_INT,
                "enumerate": {"type": "integer", "minimum": 1},
                "indices": {"type": "array",
                            "items": {"type": "integer", "minimum": 0}},
            },
        },
        "program": {
            "type": "object", "additionalProperties": False,
            "required": ["source"],
            "properties": {
                "source": {"type": "string"},
                "regs": {"type": "object",
                         "patternProperties": {"^[0-9]+$": REG_VALUE},
                         "additionalProperties": False},
                "length": HEX_OR_INT,
                "privileged": {"type": "boolean"},
                "budget": {"type": "integer", "minimum": 0},
            },
        },
        "attack": {
            "type": "object", "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string"},
                "seeds": {"type": "array", "items": {"type": "integer"}},
                "index": {"type": "integer", "minimum": 0},
                "params": {"type": "object"},
            },
        },
        "verify": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "programs": {"type": "array", "items": {"type": "string"}},
                "n": {"type": "integer", "minimum": 1},
                "budget": {"type": "integer", "minimum": 1},
                "page_tables": {"type": "boolean"},
            },
        },
        "latency": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "integer", "minimum": 1}
                           for k in LatencyTable.__dataclass_fields__},
        },
        "window": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
    },
}


def _num(x) -> int:
    return x if isinstance(x, int) else int(str(x).replace("_", ""), 0)


@dataclass
class Scenario:
    raw: dict
    name: str
    modes: List[Mode]
    region: RandRegion
    out: Optional[str] = None
    system: SystemConfig = field(default_factory=SystemConfig)

    @property
    def program(self) -> Optional[Program]:
        p = self.raw.get("program")
        return assemble(p["source"]) if p else None

    @property
    def regs(self) -> Dict[int, object]:
        p = self.raw.get("program") or {}
        return {int(k): v for k, v in (p.get("regs") or {}).items()}

    @property
    def privileged(self) -> bool:
        return (self.raw.get("program") or {}).get("privileged", True)

    @property
    def budget(self) -> int:
        return (self.raw.get("program") or {}).get("budget", 100_000)

    def program_length(self) -> int:
        p = self.raw.get("program") or {}
        if "length" in p:
            return _num(p["length"])
        prog = self.program
        return page_ceil(prog.length) if prog else 0x1000

    def layout(self) -> Layout:
        spec = self.raw.get("layout", {})
        length = self.program_length()
        gran = Granularity(spec.get("granularity", "coarse"))
        if gran is Granularity.PER_PAGE:
            pages = page_ceil(length) // 0x1000
            return page_granularity_layout(self.region, pages,
                                           seed=spec.get("seed"),
                                           indices=spec.get("indices"))
        if "offset" in spec:
            off = _num(spec["offset"])
            if off % self.region.subregion_len:
                raise ConfigError("layout offset must be a multiple of the "
                                  "subregion length")
            return coarse_layout(self.region, length,
                                 off // self.region.subregion_len)
        if "index" in spec:
            return coarse_layout(self.region, length, spec["index"])
        return sample_layout(self.region, length, spec.get("seed", 0))

    def layouts(self) -> List[Layout]:
        """Every layout under ``enumerate``, else the single configured one."""
        n = self.raw.get("layout", {}).get("enumerate")
        if n is None:
            return [self.layout()]
        ls = list(enumerate_layouts(self.region, self.program_length()))
        if n > len(ls):
            raise ConfigError(f"enumerate {n} exceeds {len(ls)} subregions")
        return ls[:n]


def parse(raw: dict) -> Scenario:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"scenario invalid at {path}: {e.message}") from None
    reg = raw.get("region", {"preset": "toy"})
    if "preset" in reg:
        if set(reg) - {"preset", "region_id"}:
            raise ConfigError("region: give a preset or explicit bounds")
        region = get_region(reg["preset"], reg.get("region_id"))
    else:
        missing = {"start", "end", "subregion_len"} - set(reg)
        if missing:
            raise ConfigError(f"region: missing {sorted(missing)}")
        region = RandRegion(reg.get("region_id", 0), _num(reg["start"]),
                            _num(reg["end"]), _num(reg["subregion_len"]))
    lat = LatencyTable(**raw.get("latency", {}))
    sc = SystemConfig(lat=lat, window=raw.get("window", 8))
    modes = [Mode(m) for m in raw.get("modes", ["baseline", "oreo"])]
    return Scenario(raw, raw.get("name", "scenario"), modes, region,
                    raw.get("out"), sc)


def load(path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    return parse(raw)
