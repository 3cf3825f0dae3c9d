"""Discrete-event simulation of peer nodes sharing digests, and layer-pair timing feasibility."""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .fuse import GridSpec, Homography, fuse_digests
from .summarize import C_A, C_L, build_digest, decode_digest, encode_digest
from .tensorcore import ToyNet, detect_blobs, forward_with_taps

PAPER = "paper"
LOCKSTEP = "lockstep"
MODES = (PAPER, LOCKSTEP)

EVENT_KINDS = ("frame-start", "layer-done", "digest-sent", "digest-arrived", "digest-dropped", "frame-done")
TRACE_FIELDS = ("time_ms", "seq", "kind", "node", "frame", "detail")


@dataclass(frozen=True)
class TimingProfile:
    """Per-layer compute times (ms) and digest sizes (bytes), plus one shared link."""

    compute_ms: tuple[float, ...]
    digest_bytes: tuple[int, ...]
    bandwidth_mbps: float
    base_latency_ms: float = 0.0
    jitter_ms: float = 0.0  # uniform extra delay in [0, jitter_ms), off by default

    def __post_init__(self):
        object.__setattr__(self, "compute_ms", tuple(float(v) for v in self.compute_ms))
        object.__setattr__(self, "digest_bytes", tuple(int(v) for v in self.digest_bytes))
        if not self.compute_ms:
            raise ValueError("compute_ms is empty")
        if len(self.digest_bytes) != len(self.compute_ms):
            raise ValueError("digest_bytes and compute_ms must cover the same layers")
        if any(v < 0 or not math.isfinite(v) for v in self.compute_ms):
            raise ValueError("compute times must be finite and non-negative")
        if any(v < 0 for v in self.digest_bytes):
            raise ValueError("digest sizes must be non-negative")
        if self.bandwidth_mbps < 0 or self.base_latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("link parameters must be non-negative")

    @property
    def n_layers(self) -> int:
        return len(self.compute_ms)

    def compute(self, layer: int) -> float:
        self._check(layer)
        return self.compute_ms[layer - 1]

    def _check(self, layer: int) -> None:
        if not 1 <= layer <= self.n_layers:
            raise ValueError(f"layer {layer} outside 1..{self.n_layers}")

    def replace(self, **changes) -> "TimingProfile":
        d = dict(compute_ms=self.compute_ms, digest_bytes=self.digest_bytes, bandwidth_mbps=self.bandwidth_mbps,
                 base_latency_ms=self.base_latency_ms, jitter_ms=self.jitter_ms)
        d.update(changes)
        return TimingProfile(**d)


@dataclass(frozen=True)
class NodeConfig:
    node_id: int
    # peer id -> homography taking the peer's image into this node's image
    homography_to: dict[int, Homography] = field(default_factory=dict)
    fps: float = 10.0
    roles: tuple[str, ...] = ("reference", "collaborator")

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.node_id in self.homography_to:
            raise ValueError(f"node {self.node_id} lists itself in its registry")
        bad = set(self.roles) - {"reference", "collaborator"}
        if bad:
            raise ValueError(f"unknown roles {sorted(bad)}")


@dataclass(frozen=True)
class SimEvent:
    time_ms: float
    seq: int
    kind: str
    node: int
    frame: int
    detail: str = ""

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.time_ms < 0:
            raise ValueError("event time must be non-negative")


@dataclass
class SimTrace:
    events: list[SimEvent] = field(default_factory=list)

    def __len__(self):
        return len(self.events)

    def of_kind(self, kind: str) -> list[SimEvent]:
        return [e for e in self.events if e.kind == kind]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for e in self.events:
            writer.writerow([f"{e.time_ms:.6f}", e.seq, e.kind, e.node, e.frame, e.detail])
        return buf.getvalue()


@dataclass(frozen=True)
class SimScenario:
    """Everything the simulator needs besides the network, plans and images."""

    nodes: tuple[NodeConfig, ...]
    pairs: tuple[tuple[int, int], ...]  # (collaborator, reference), assigned by the controller
    timing: TimingProfile
    digest_kind: str = C_L
    digest_tau: float = 0.5
    detect_threshold: float = 0.08
    jitter_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))
        if self.digest_kind not in (C_A, C_L):
            raise ValueError(f"unknown digest kind {self.digest_kind!r}")

    def node(self, node_id: int) -> NodeConfig:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)


def transmit_time(profile: TimingProfile, layer: int) -> float:
    profile._check(layer)
    if profile.bandwidth_mbps == 0:
        raise ValueError("bandwidth is zero")
    # bytes * 8 bits over Mbit/s gives microseconds * 1e-3 -> ms
    return profile.base_latency_ms + profile.digest_bytes[layer - 1] * 8 / (profile.bandwidth_mbps * 1000.0)


def feasible_pair(profile: TimingProfile, i: int, delta_ms: float, mode: str = PAPER) -> bool:
    """Whether a digest cut after layer ``i`` keeps pace with the receiver's schedule."""
    if not (1 <= i and i + 1 <= profile.n_layers):
        raise ValueError(f"pair ({i}, {i + 1}) outside 1..{profile.n_layers}")
    if delta_ms < 0:
        raise ValueError("delta must be non-negative")
    if mode == PAPER:
        return profile.compute(i + 1) + transmit_time(profile, i + 1) < delta_ms + profile.compute(i)
    if mode == LOCKSTEP:
        return transmit_time(profile, i) < delta_ms + profile.compute(i + 1)
    raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def feasible_pairs(profile: TimingProfile, delta_ms: float, mode: str = PAPER) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(1, profile.n_layers) if feasible_pair(profile, i, delta_ms, mode)]


def feasibility_sweep(profile: TimingProfile, deltas, mode: str = PAPER) -> list[tuple[float, list[tuple[int, int]]]]:
    deltas = [float(d) for d in deltas]
    if any(b < a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be sorted ascending")
    return [(d, feasible_pairs(profile, d, mode)) for d in deltas]


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["delta_ms", "n_feasible", "pairs"])
    for d, pairs in rows:
        writer.writerow([repr(float(d)), len(pairs), ";".join(f"{a}-{b}" for a, b in pairs)])
    return buf.getvalue()


def _grids(net: ToyNet, plan, src_hw, dst_hw) -> tuple[GridSpec, GridSpec]:
    i, j = plan.extract_layer, plan.ingest_layer
    return (GridSpec(*net.grid_shape(i, src_hw), net.stride(i)),
            GridSpec(*net.grid_shape(j, dst_hw), net.stride(j)))


def _check_plan(net: ToyNet, plan) -> None:
    net._check_layer(plan.extract_layer)
    net._check_layer(plan.ingest_layer)
    if plan.predictor_layer not in (None, net.n_layers):
        raise ValueError("detections are read from the last layer; predictor_layer must be the last layer")
    if not plan.predictor_channels or not plan.digest_channels:
        raise ValueError("plan carries no digest or predictor channels; calibrate it first")


def _frame_outputs(net, plan, image, cache, key):
    """Forward pass tapping extraction and ingest layers, memoised per (node, frame)."""
    if cache is not None and key in cache:
        return cache[key]
    out = forward_with_taps(net, image, {plan.extract_layer, plan.ingest_layer})
    if cache is not None:
        cache[key] = out
    return out


def _detect(net, plan, final, threshold):
    return detect_blobs(final, plan.predictor_channels, threshold, net.stride(net.n_layers))


def _validate(scenario: SimScenario, plans: dict, inputs: dict) -> None:
    ids = [n.node_id for n in scenario.nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node ids")
    if set(plans) != set(ids) or set(inputs) != set(ids):
        raise ValueError("node ids differ across scenario, plans and inputs")
    n_frames = {len(v) for v in inputs.values()}
    if len(n_frames) != 1:
        raise ValueError("every node needs the same number of frames")
    layers = {(p.extract_layer, p.ingest_layer) for p in plans.values()}
    if len(layers) != 1:
        raise ValueError("all plans must share extraction and ingest layers")
    for src, dst in scenario.pairs:
        if src == dst:
            raise ValueError(f"pair ({src}, {dst}) links a node to itself")
        if src not in ids or dst not in ids:
            raise ValueError(f"pair ({src}, {dst}) names an unknown node")
        if src not in scenario.node(dst).homography_to:
            raise ValueError(f"unknown peer {src} in the registry of node {dst}")
        if "collaborator" not in scenario.node(src).roles or "reference" not in scenario.node(dst).roles:
            raise ValueError(f"pair ({src}, {dst}) contradicts the node roles")


def run_simulation(scenario: SimScenario, net: ToyNet, plans: dict, inputs: dict, *, cache: dict | None = None):
    """Event-driven run of every node over every frame.

    ``inputs[node]`` is the list of frame images for that node. Frames on one
    node are independent virtual timelines starting at ``frame / fps``. The
    network never waits on peers: a digest fuses only if it arrives strictly
    before the receiver finishes its ingest layer, otherwise it is dropped.
    ``cache`` may be shared across runs on the same inputs to reuse the
    digest-independent part of each forward pass.

    Returns ``(trace, detections)`` with ``detections[node][frame]``.
    """
    _validate(scenario, plans, inputs)
    for p in plans.values():
        _check_plan(net, p)
    timing = scenario.timing
    if timing.n_layers != net.n_layers:
        raise ValueError(f"timing covers {timing.n_layers} layers, network has {net.n_layers}")
    extract, ingest = next(iter(plans.values())).extract_layer, next(iter(plans.values())).ingest_layer
    n_frames = len(next(iter(inputs.values())))
    cum = np.cumsum(timing.compute_ms).tolist()
    jitter_rng = np.random.default_rng(scenario.jitter_seed)
    peers_of = {n.node_id: sorted(dst for src, dst in scenario.pairs if src == n.node_id) for n in scenario.nodes}

    queue: list = []
    seq = 0

    def push(t, kind, node, frame, payload=None):
        nonlocal seq
        heapq.heappush(queue, (t, seq, kind, node, frame, payload))
        seq += 1

    def start_time(node, frame):
        return 1000.0 * frame / scenario.node(node).fps

    def ingest_done(node, frame):
        return start_time(node, frame) + cum[ingest - 1]

    for n in sorted(peers_of):
        for f in range(n_frames):
            push(start_time(n, f), "frame-start", n, f)

    trace = SimTrace()
    inbox: dict[tuple[int, int], list] = {}
    finals: dict[tuple[int, int], np.ndarray] = {}
    fused_count: dict[tuple[int, int], int] = {}
    detections: dict[int, dict[int, list]] = {n: {} for n in peers_of}

    while queue:
        t, s, kind, node, frame, payload = heapq.heappop(queue)
        detail = ""
        plan = plans[node]
        key = (node, frame)
        if kind == "frame-start":
            # the digest-independent part of the pass; fusion happens at ingest-done
            _frame_outputs(net, plan, inputs[node][frame], cache, key)
            push(t + timing.compute(1), "layer-done", node, frame, 1)
        elif kind == "layer-done":
            layer = payload
            detail = f"layer={layer}"
            if layer == extract:
                for dst in peers_of[node]:
                    push(t, "digest-sent", node, frame, dst)
            if layer == ingest:
                fused = sorted(inbox.pop(key, []), key=lambda d: d.source_node)
                fused_count[key] = len(fused)
                outs = _frame_outputs(net, plan, inputs[node][frame], cache, key)
                if fused:
                    me = scenario.node(node)
                    homs = {d.source_node: me.homography_to[d.source_node] for d in fused}
                    grids = {d.source_node: _grids(net, plan, inputs[d.source_node][frame].shape[1:],
                                                   inputs[node][frame].shape[1:]) for d in fused}
                    fmap = fuse_digests(outs[ingest], fused, homs, grids, plan)
                    finals[key] = forward_with_taps(net, taps=(), resume_from=(ingest, fmap)).final
                else:
                    finals[key] = outs.final
                detail += f" fused={len(fused)}"
            if layer < net.n_layers:
                push(t + timing.compute(layer + 1), "layer-done", node, frame, layer + 1)
            else:
                push(t, "frame-done", node, frame)
        elif kind == "digest-sent":
            dst = payload
            outs = _frame_outputs(net, plan, inputs[node][frame], cache, key)
            digest = build_digest(outs[extract], plan.digest_channels, scenario.digest_kind, scenario.digest_tau,
                                  source_node=node, frame_id=frame, layer_index=extract)
            wire = encode_digest(digest)
            delay = transmit_time(timing, extract)
            if timing.jitter_ms > 0:
                delay += float(jitter_rng.uniform(0.0, timing.jitter_ms))
            detail = f"to={dst} layer={extract} bytes={len(wire)}"
            arrival = t + delay
            if math.isfinite(arrival):
                push(arrival, "digest-arrived", dst, frame, wire)
            else:
                # never arrives; record the drop at the receiver's deadline
                push(ingest_done(dst, frame), "digest-dropped", dst, frame, (node, math.inf))
        elif kind == "digest-arrived":
            digest = decode_digest(payload)
            deadline = ingest_done(node, frame)
            if t < deadline:
                inbox.setdefault(key, []).append(digest)
                detail = f"from={digest.source_node} slack_ms={deadline - t:.6f}"
            else:
                # late: log it as dropped instead of arrived
                kind = "digest-dropped"
                detail = f"from={digest.source_node} late_ms={t - deadline:.6f}"
        elif kind == "digest-dropped":
            src, _ = payload
            detail = f"from={src} late_ms=inf"
        elif kind == "frame-done":
            boxes = _detect(net, plan, finals.pop(key), scenario.detect_threshold)
            detections[node][frame] = boxes
            detail = f"detections={len(boxes)} fused={fused_count.pop(key)}"
        trace.events.append(SimEvent(float(t), s, kind, node, frame, detail))
    return trace, detections


def standalone_detections(net: ToyNet, plans: dict, inputs: dict, threshold: float, *, cache=None) -> dict:
    """Each node on its own: no digests exchanged."""
    out = {}
    for node, frames in inputs.items():
        plan = plans[node]
        _check_plan(net, plan)
        out[node] = {f: _detect(net, plan, _frame_outputs(net, plan, img, cache, (node, f)).final, threshold)
                     for f, img in enumerate(frames)}
    return out


def offline_detections(net: ToyNet, plans: dict, inputs: dict, pairs, homographies: dict, threshold: float,
                       kind: str = C_L, tau: float = 0.5, *, cache=None) -> dict:
    """Fuse every assigned digest with no timing model.

    ``homographies[(src, dst)]`` maps the src image into the dst image.
    """
    pairs = [(int(a), int(b)) for a, b in pairs]
    out = {}
    for node, frames in inputs.items():
        plan = plans[node]
        _check_plan(net, plan)
        sources = sorted(src for src, dst in pairs if dst == node)
        out[node] = {}
        for f, img in enumerate(frames):
            outs = _frame_outputs(net, plan, img, cache, (node, f))
            if not sources:
                out[node][f] = _detect(net, plan, outs.final, threshold)
                continue
            digests, grids = [], {}
            for src in sources:
                sp = plans[src]
                src_outs = _frame_outputs(net, sp, inputs[src][f], cache, (src, f))
                digests.append(build_digest(src_outs[sp.extract_layer], sp.digest_channels, kind, tau,
                                            source_node=src, frame_id=f, layer_index=sp.extract_layer))
                grids[src] = _grids(net, plan, inputs[src][f].shape[1:], img.shape[1:])
            fmap = fuse_digests(outs[plan.ingest_layer], digests, {s: homographies[(s, node)] for s in sources},
                                grids, plan)
            final = forward_with_taps(net, taps=(), resume_from=(plan.ingest_layer, fmap)).final
            out[node][f] = _detect(net, plan, final, threshold)
    return out
