"""Pipeline stages over plain-file artifacts: scene, calibration, simulation, feasibility, evaluation."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .config import ConfigError, RunConfig, ScenarioConfig
from .evalkit import emit_table, evaluate
from .fuse import load_homography, save_homography
from .netsim import NodeConfig, SimScenario, feasibility_sweep, run_simulation, sweep_to_csv
from .scene import Camera, boxes_to_mask, cross_view_homography, generate_world, render_view
from .summarize import C_L
from .tensorcore import build_toy_net, read_detections, read_tensor, write_detections, write_tensor
from .trace import build_fusion_plan, load_plan, save_plan

log = logging.getLogger(__name__)

BASELINE = "baseline"


class MissingArtifact(FileNotFoundError):
    pass


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing input artifact {path}; run the earlier stage first")
    return path


def _frame_path(root: Path, split: str, cam: int, frame: int) -> Path:
    return root / "scene" / split / f"cam{cam}" / f"frame{frame:04d}.cvsf"


def _gt_path(root: Path, split: str, cam: int) -> Path:
    return root / "scene" / split / f"gt_cam{cam}.csv"


def hom_path(root: Path, src: int, dst: int) -> Path:
    return root / "scene" / "homographies" / f"cam{src}_to_cam{dst}.json"


def _net(cfg: ScenarioConfig):
    net = build_toy_net(cfg.net_seed)
    if cfg.predictor_layer != net.n_layers:
        raise ConfigError(f"predictor layer must be the last toy-net layer ({net.n_layers})")
    if cfg.ingest_layer > net.n_layers:
        raise ConfigError(f"ingest layer {cfg.ingest_layer} beyond the toy net's {net.n_layers} layers")
    return net


def render_frames(cfg: ScenarioConfig, base_seed: int, n_frames: int):
    """Per-frame list of camera views; every frame shares one camera rig."""
    w = cfg.world
    size = cfg.image_size
    frames = []
    for f in range(n_frames):
        world, homs = generate_world(
            int(w["n_persons"]), int(w["n_cameras"]), base_seed + f, w.get("occlusion"),
            camera_seed=w.get("camera_seed", cfg.seed), plane=tuple(w.get("plane", (16.0, 16.0))),
            image_size=size, radius_range=tuple(w.get("radius_range", (0.6, 0.8))),
            intensity_range=tuple(w.get("intensity_range", (0.8, 1.0))),
            background=float(w.get("background", 0.0)), min_separation=float(w.get("min_separation", 0.0)),
        )
        frames.append([render_view(world, Camera(c, homs[c], size)) for c in range(len(homs))])
    return frames


def gen_scene(cfg: ScenarioConfig, out: Path) -> None:
    out = Path(out)
    for split, seed, n in (("eval", cfg.seed, cfg.n_frames), ("calib", cfg.calib_seed, cfg.calib_frames)):
        frames = render_frames(cfg, seed, n)
        for c in range(len(frames[0])):
            _frame_path(out, split, c, 0).parent.mkdir(parents=True, exist_ok=True)
            for f, views in enumerate(frames):
                write_tensor(_frame_path(out, split, c, f), views[c].stimulus)
            write_detections(_gt_path(out, split, c), {f: views[c].gt_boxes for f, views in enumerate(frames)})
        if split == "eval":
            views = frames[0]
            hdir = out / "scene" / "homographies"
            hdir.mkdir(parents=True, exist_ok=True)
            for a in views:
                save_homography(hdir / f"cam{a.camera_id}_ground.json", a.h_ground_to_image)
                for b in views:
                    if a.camera_id != b.camera_id:
                        save_homography(hom_path(out, a.camera_id, b.camera_id), cross_view_homography(a, b))


def load_frames(out: Path, split: str, cfg: ScenarioConfig, n_frames: int) -> dict:
    return {c: [read_tensor(_need(_frame_path(out, split, c, f))) for f in range(n_frames)]
            for c in cfg.node_ids}


def load_ground_truth(out: Path, split: str, cfg: ScenarioConfig, n_frames: int) -> dict:
    gt = {}
    for c in cfg.node_ids:
        boxes = read_detections(_need(_gt_path(out, split, c)))
        gt[c] = {f: boxes.get(f, []) for f in range(n_frames)}
    return gt


def calibrate(cfg: ScenarioConfig, out: Path) -> dict:
    out = Path(out)
    net = _net(cfg)
    frames = load_frames(out, "calib", cfg, cfg.calib_frames)
    gt = load_ground_truth(out, "calib", cfg, cfg.calib_frames)
    (out / "plans").mkdir(parents=True, exist_ok=True)
    plans = {}
    for c in cfg.node_ids:
        masks = [boxes_to_mask(gt[c][f], cfg.image_size) for f in range(cfg.calib_frames)]
        plans[c] = build_fusion_plan(net, frames[c], masks, cfg.extract_layer, cfg.ingest_layer,
                                     cfg.predictor_layer, cfg.k_n, cfg.k_prime, cfg.fusion)
        save_plan(out / "plans" / f"node{c}.json", plans[c])
    return plans


def _node_configs(cfg: ScenarioConfig, out: Path) -> tuple[NodeConfig, ...]:
    nodes = []
    for n in cfg.nodes:
        me = int(n["id"])
        refs = {int(k): Path(v) for k, v in n.get("homography_to", {}).items()}
        registry = {}
        for peer in cfg.node_ids:
            if peer == me:
                continue
            path = refs[peer] if peer in refs else hom_path(out, peer, me)
            if not path.is_absolute() and peer in refs:
                path = out / path  # registry paths are relative to the output tree
            registry[peer] = load_homography(_need(path))
        nodes.append(NodeConfig(me, registry, float(n.get("fps", 10.0)),
                                tuple(n.get("roles", ("reference", "collaborator")))))
    return tuple(nodes)


def run_configs(cfg: ScenarioConfig):
    """Baseline (no collaborators) followed by each configured collaborator set."""
    return [RunConfig(BASELINE, C_L, ()), *cfg.configurations]


def run(cfg: ScenarioConfig, out: Path) -> dict:
    out = Path(out)
    net = _net(cfg)
    plans = {c: load_plan(_need(out / "plans" / f"node{c}.json")) for c in cfg.node_ids}
    inputs = load_frames(out, "eval", cfg, cfg.n_frames)
    nodes = _node_configs(cfg, out)
    cache: dict = {}
    results = {}
    for rc in run_configs(cfg):
        scenario = SimScenario(nodes=nodes, pairs=rc.pairs, timing=cfg.timing_profile(net, rc.kind),
                               digest_kind=rc.kind, digest_tau=cfg.digest_tau,
                               detect_threshold=cfg.detect_threshold,
                               jitter_seed=int(cfg.timing.get("jitter_seed", 0)))
        trace, dets = run_simulation(scenario, net, plans, inputs, cache=cache)
        rdir = out / "run" / rc.name
        rdir.mkdir(parents=True, exist_ok=True)
        (rdir / "trace.csv").write_text(trace.to_csv())
        for c in cfg.node_ids:
            write_detections(rdir / f"detections_node{c}.csv", dets[c])
        results[rc.name] = dets
        log.info("%s: %d events, %d digests fused", rc.name, len(trace),
                 sum(e.kind == "digest-arrived" for e in trace.events))
    return results


def feasibility(cfg: ScenarioConfig, out: Path, deltas=None, mode: str | None = None) -> str:
    out = Path(out)
    net = _net(cfg)
    profile = cfg.timing_profile(net, cfg.feasibility["kind"])
    deltas = sorted(float(d) for d in (deltas if deltas is not None else cfg.feasibility["deltas"]))
    text = sweep_to_csv(feasibility_sweep(profile, deltas, mode or cfg.feasibility["mode"]))
    (out / "feasibility").mkdir(parents=True, exist_ok=True)
    (out / "feasibility" / "sweep.csv").write_text(text)
    return text


def _read_run(out: Path, cfg: ScenarioConfig, name: str) -> dict:
    rdir = out / "run" / name
    dets = {}
    for c in cfg.node_ids:
        boxes = read_detections(_need(rdir / f"detections_node{c}.csv"))
        dets[c] = {f: boxes.get(f, []) for f in range(cfg.n_frames)}
    return dets


def _flatten(per_node: dict) -> dict:
    # frames keyed by (reference node, frame) so every reference view counts
    return {(c, f): boxes for c, frames in per_node.items() for f, boxes in frames.items()}


def evaluate_runs(cfg: ScenarioConfig, out: Path):
    out = Path(out)
    gt = _flatten(load_ground_truth(out, "eval", cfg, cfg.n_frames))
    scores = {rc.name: evaluate(_flatten(_read_run(out, cfg, rc.name)), gt, cfg.iou_tau)
              for rc in run_configs(cfg)}
    baseline = scores.pop(BASELINE)
    table = emit_table(baseline, scores)
    (out / "eval").mkdir(parents=True, exist_ok=True)
    (out / "eval" / "table.csv").write_text(table)
    summary = {name: vars(p) for name, p in {BASELINE: baseline, **scores}.items()}
    (out / "eval" / "scores.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return baseline, scores


def run_all(cfg: ScenarioConfig, out: Path) -> None:
    gen_scene(cfg, out)
    calibrate(cfg, out)
    run(cfg, out)
    feasibility(cfg, out)
    evaluate_runs(cfg, out)
