"""Scenario configuration: one JSON file drives every pipeline stage."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .netsim import MODES, TimingProfile
from .summarize import C_A, C_L, encoded_size
from .tensorcore import ToyNet
from .trace import FusionParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """One collaborator-set column of the results table."""

    name: str
    kind: str
    pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    n_frames: int
    world: dict
    calib_seed: int
    calib_frames: int
    net_seed: int
    nodes: tuple[dict, ...]
    extract_layer: int
    ingest_layer: int
    predictor_layer: int
    k_n: int
    k_prime: int
    fusion: FusionParams
    digest_tau: float
    detect_threshold: float
    iou_tau: float
    configurations: tuple[RunConfig, ...]
    timing: dict
    feasibility: dict
    out: str | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def image_size(self) -> tuple[int, int]:
        h, w = self.world["image_size"]
        return int(h), int(w)

    @property
    def node_ids(self) -> list[int]:
        return [int(n["id"]) for n in self.nodes]

    def timing_profile(self, net: ToyNet, kind: str) -> TimingProfile:
        """Link model with per-layer digest sizes taken from the encoder unless given."""
        t = self.timing
        sizes = t.get("digest_bytes")
        if sizes is None:
            sizes = [encoded_size(kind, *net.grid_shape(layer, self.image_size))
                     for layer in range(1, net.n_layers + 1)]
        return TimingProfile(
            compute_ms=tuple(t["compute_ms"]),
            digest_bytes=tuple(sizes),
            bandwidth_mbps=float(t["bandwidth_mbps"]),
            base_latency_ms=float(t.get("base_latency_ms", 0.0)),
            jitter_ms=float(t.get("jitter_ms", 0.0)),
        )


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing key {key!r}")
    return d[key]


def _pairs(value, node_ids, where) -> tuple[tuple[int, int], ...]:
    if value == "all":
        return tuple((a, b) for a in node_ids for b in node_ids if a != b)
    if value in (None, "none"):
        return ()
    out = []
    for p in value:
        if len(p) != 2:
            raise ConfigError(f"{where}: pair {p!r} must be [collaborator, reference]")
        a, b = int(p[0]), int(p[1])
        if a not in node_ids or b not in node_ids:
            raise ConfigError(f"{where}: pair {p!r} names an unknown node")
        if a == b:
            raise ConfigError(f"{where}: pair {p!r} links a node to itself")
        out.append((a, b))
    return tuple(out)


def parse_config(d: dict, seed: int | None = None) -> ScenarioConfig:
    d = copy.deepcopy(d)
    if seed is not None:
        d["seed"] = int(seed)
    world = dict(_require(d, "world", "config"))
    for key in ("n_persons", "n_cameras", "image_size"):
        _require(world, key, "world")
    nodes = tuple(_require(d, "nodes", "config"))
    node_ids = [int(n["id"]) for n in nodes]
    if len(set(node_ids)) != len(node_ids):
        raise ConfigError("nodes: duplicate ids")
    if sorted(node_ids) != list(range(int(world["n_cameras"]))):
        raise ConfigError("nodes: ids must be the camera indices 0..n_cameras-1")
    for n in nodes:
        if float(n.get("fps", 10.0)) <= 0:
            raise ConfigError(f"node {n['id']}: fps must be positive")

    layers = _require(d, "layers", "config")
    extract, ingest = int(_require(layers, "extract", "layers")), int(_require(layers, "ingest", "layers"))
    predictor = int(layers.get("predictor", ingest))
    if not 1 <= extract < ingest <= predictor:
        raise ConfigError(f"layers: need 1 <= extract < ingest <= predictor, got {extract}, {ingest}, {predictor}")

    runs = []
    for k, r in enumerate(d.get("configurations", [])):
        where = f"configurations[{k}]"
        kind = r.get("kind", C_L)
        if kind not in (C_A, C_L):
            raise ConfigError(f"{where}: unknown digest kind {kind!r}")
        name = str(_require(r, "name", where))
        if not re.fullmatch(r"[A-Za-z0-9_.=+-]+", name) or name == "baseline":
            raise ConfigError(f"{where}: name {name!r} is not a usable directory name")
        runs.append(RunConfig(name, kind, _pairs(r.get("pairs", "all"), node_ids, where)))
    if len({r.name for r in runs}) != len(runs):
        raise ConfigError("configurations: duplicate names")

    timing = dict(_require(d, "timing", "config"))
    _require(timing, "compute_ms", "timing")
    _require(timing, "bandwidth_mbps", "timing")
    feas = dict(d.get("feasibility", {}))
    feas.setdefault("mode", "paper")
    feas.setdefault("kind", C_L)
    feas.setdefault("deltas", [0.0])
    if feas["mode"] not in MODES:
        raise ConfigError(f"feasibility: mode must be one of {MODES}")

    calib = d.get("calibration", {})
    try:
        fusion = FusionParams(**d.get("fusion", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fusion: {exc}") from exc
    cfg = ScenarioConfig(
        name=str(d.get("name", "scenario")),
        seed=int(_require(d, "seed", "config")),
        n_frames=int(_require(d, "n_frames", "config")),
        world=world,
        calib_seed=int(calib.get("seed", 1000)),
        calib_frames=int(calib.get("n_frames", 12)),
        net_seed=int(d.get("net_seed", 0)),
        nodes=nodes,
        extract_layer=extract,
        ingest_layer=ingest,
        predictor_layer=predictor,
        k_n=int(d.get("k_n", 4)),
        k_prime=int(d.get("k_prime", 4)),
        fusion=fusion,
        digest_tau=float(d.get("digest_tau", 0.5)),
        detect_threshold=float(d.get("detect_threshold", 0.08)),
        iou_tau=float(d.get("iou_tau", 0.5)),
        configurations=tuple(runs),
        timing=timing,
        feasibility=feas,
        out=d.get("out"),
        raw=d,
    )
    if cfg.n_frames < 1 or cfg.calib_frames < 1:
        raise ConfigError("n_frames and calibration.n_frames must be >= 1")
    if not 0 < cfg.iou_tau <= 1:
        raise ConfigError("iou_tau must be in (0, 1]")
    if not 0 < cfg.digest_tau < 1:
        raise ConfigError("digest_tau must be in (0, 1)")
    if cfg.detect_threshold <= 0:
        raise ConfigError("detect_threshold must be positive")
    return cfg


def load_config(path=None, seed: int | None = None) -> ScenarioConfig:
    """Read a scenario file, or the shipped default when ``path`` is None."""
    if path is None:
        text = resources.files("convshare").joinpath("data/default_scenario.json").read_text()
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = path.read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(d, seed=seed)
