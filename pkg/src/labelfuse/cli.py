"""Command line entry point: one subcommand per stage plus ``pipeline``.

Scene directory layout::

    manifest.json           view ids in sequence order, label space
    cameras/<id>.json       intrinsics and camera-to-world pose
    depth/<id>.dmap         per-view depth
    sem/<id>.pgm            machine semantic masks
    inst/<id>.pgm           machine instance masks
    gt/sem, gt/inst         ground truth (synthetic scenes only)
    derived/<stage>/        everything the stages write
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager


from . import pipeline as P
from .config import dump_config, load_config
from .errors import ConfigError, FormatError, InvalidInputError
from .instance_match import read_global_set, write_global_set
from .raster_io import (INSTANCE, SEMANTIC, ensure_dir, read_camera, read_depth,
                        read_label_raster, read_ply_cloud, write_camera, write_depth, write_label_raster,
                        write_mask_pgm8, write_ply_cloud)
from .synthetic import NoiseSpec, corridor_scene, inject_noise, orbit_scene, render_all

log = logging.getLogger("labelfuse")


class MissingInput(FileNotFoundError):
    pass


def _name(view_id: int) -> str:
    return f"{view_id:04d}"


def _need(path: str) -> str:
    if not os.path.exists(path):
        raise MissingInput(f"missing input: {path}")
    return path


# ---------------------------------------------------------------- scene I/O

class Scene:
    def __init__(self, root: str, cfg: P.PipelineConfig):
        self.root = root
        self.cfg = cfg
        manifest = _need(os.path.join(root, "manifest.json"))
        try:
            with open(manifest) as f:
                self.manifest = json.load(f)
            self.ids = [int(v) for v in self.manifest["views"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad manifest ({exc})", manifest) from None
        if not self.ids:
            raise FormatError("manifest lists no views", manifest)

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def derived(self, stage: str, name: str = "") -> str:
        return self.path("derived", stage, name) if name else self.path("derived", stage)

    def views(self):
        views = [read_camera(_need(self.path("cameras", _name(i) + ".json"))) for i in self.ids]
        for i, v in zip(self.ids, views):
            if v.view_id != i:
                raise FormatError(f"camera file holds view_id {v.view_id}", self.path("cameras", _name(i) + ".json"))
        return views

    def depths(self):
        return [read_depth(_need(self.path("depth", _name(i) + ".dmap"))) for i in self.ids]

    def rasters(self, *parts, suffix="", kind=SEMANTIC):
        bound = self.cfg.num_classes if kind == SEMANTIC else self.cfg.max_instances
        return [read_label_raster(_need(self.path(*parts, _name(i) + suffix + ".pgm")), kind, bound)
                for i in self.ids]

    def write_rasters(self, rasters, stage, suffix):
        ensure_dir(self.derived(stage))
        for i, r in zip(self.ids, rasters):
            write_label_raster(r, self.derived(stage, f"{_name(i)}_{suffix}.pgm"))


def write_scene(root: str, views, depths, sems, insts, gt_sems=None, gt_insts=None, extra=None):
    """Lay a scene out on disk in the layout the stages read."""
    for sub in ("cameras", "depth", "sem", "inst"):
        ensure_dir(os.path.join(root, sub))
    for k, v in enumerate(views):
        n = _name(v.view_id)
        write_camera(v, os.path.join(root, "cameras", n + ".json"))
        write_depth(depths[k], os.path.join(root, "depth", n + ".dmap"))
        write_label_raster(sems[k], os.path.join(root, "sem", n + ".pgm"))
        write_label_raster(insts[k], os.path.join(root, "inst", n + ".pgm"))
        if gt_sems is not None:
            ensure_dir(os.path.join(root, "gt", "sem"))
            ensure_dir(os.path.join(root, "gt", "inst"))
            write_label_raster(gt_sems[k], os.path.join(root, "gt", "sem", n + ".pgm"))
            write_label_raster(gt_insts[k], os.path.join(root, "gt", "inst", n + ".pgm"))
    manifest = {"views": [v.view_id for v in views], "width": views[0].width, "height": views[0].height}
    manifest.update(extra or {})
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


@contextmanager
def _executor(threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex
    else:
        yield None


def _summary(stage: str, t0: float, **counts):
    parts = " ".join(f"{k}={v}" for k, v in counts.items())
    print(f"{stage}: {parts} time={time.perf_counter() - t0:.2f}s")


# ---------------------------------------------------------------- stages

def stage_gen_synthetic(args) -> int:
    t0 = time.perf_counter()
    factory = orbit_scene if args.trajectory == "orbit" else corridor_scene
    kw = dict(seed=args.seed, width=args.width, height=args.height)
    if args.views is not None:
        kw["n_views"] = args.views
    if args.objects is not None:
        kw["n_objects"] = args.objects
    spec = factory(**kw)
    noise = NoiseSpec(seed=args.noise_seed if args.noise_seed is not None else args.seed,
                      flip_prob=args.flip_prob, permute_instances=args.permute_instances,
                      boundary_jitter_px=args.jitter_px, dropout_prob=args.dropout_prob)
    views, depths, gt_sems, gt_insts = render_all(spec)
    noisy = [inject_noise(s, i, noise, k) for k, (s, i) in enumerate(zip(gt_sems, gt_insts))]
    extra = {"trajectory": spec.trajectory, "seed": spec.seed, "objects": len(spec.primitives),
             "noise": {"seed": noise.seed, "flip_prob": noise.flip_prob,
                       "permute_instances": noise.permute_instances,
                       "boundary_jitter_px": noise.boundary_jitter_px, "dropout_prob": noise.dropout_prob}}
    write_scene(args.scene, views, depths, [n[0] for n in noisy], [n[1] for n in noisy], gt_sems, gt_insts, extra)
    _summary("gen-synthetic", t0, views=len(views), objects=len(spec.primitives),
             size=f"{spec.width}x{spec.height}")
    return 0


def stage_enhance(scene: Scene, ex) -> list:
    t0 = time.perf_counter()
    views, depths = scene.views(), scene.depths()
    sems = scene.rasters("sem")
    filtered, qs = P.enhance_masks(views, depths, sems, scene.cfg, ex)
    scene.write_rasters(filtered, "enhance", "sem_filtered")
    if qs is not None:
        for i, q in zip(scene.ids, qs):
            write_mask_pgm8(q.q * 255, scene.derived("enhance", f"{_name(i)}_q.pgm"))
    kept = sum(int(f.known.sum()) for f in filtered)
    total = sum(int(s.known.sum()) for s in sems)
    _summary("enhance-masks", t0, views=len(views), kept_px=kept, labeled_px=total)
    return filtered


def stage_build_cloud(scene: Scene, ex):
    t0 = time.perf_counter()
    views, depths = scene.views(), scene.depths()
    filtered = scene.rasters("derived", "enhance", suffix="_sem_filtered")
    cloud = P.build_cloud(views, depths, filtered, scene.cfg)
    d = scene.derived("cloud")
    ensure_dir(d)
    write_ply_cloud(cloud.points, os.path.join(d, "points.ply"), comments=["smoothed semantic cloud"])
    write_ply_cloud(cloud.centers, os.path.join(d, "centers.ply"), comments=["cluster centers"])
    write_ply_cloud(cloud.anchors.as_cloud(), os.path.join(d, "anchors.ply"), comments=["anchor"])
    with open(os.path.join(d, "anchors.json"), "w") as f:
        json.dump({"voxel_size": cloud.anchors.voxel_size, "anchors": len(cloud.anchors)}, f, indent=1)
        f.write("\n")
    _summary("build-cloud", t0, points=len(cloud.points), clusters=len(cloud.centers), anchors=len(cloud.anchors))


def stage_project(scene: Scene, ex, channel: str):
    t0 = time.perf_counter()
    views, depths = scene.views(), scene.depths()
    if channel == "sem":
        cloud = read_ply_cloud(_need(scene.derived("cloud", "points.ply")), scene.cfg.num_classes)
        masks = P.project_semantic(cloud, views, depths, scene.cfg, ex)
        scene.write_rasters(masks, "project", "sem_consistent")
    else:
        gs = read_global_set(_need(scene.derived("match", "instances.ply")),
                             _need(scene.derived("match", "instances.json")), scene.cfg.max_instances)
        csem = scene.rasters("derived", "project", suffix="_sem_consistent")
        masks = P.project_instances(gs, csem, views, depths, scene.cfg, ex)
        scene.write_rasters(masks, "project", "inst_consistent")
    covered = sum(int(m.known.sum()) for m in masks)
    _summary(f"project-masks[{channel}]", t0, views=len(views), covered_px=covered)


def stage_match(scene: Scene, ex):
    t0 = time.perf_counter()
    views, depths = scene.views(), scene.depths()
    insts = scene.rasters("inst", kind=INSTANCE)
    csem = scene.rasters("derived", "project", suffix="_sem_consistent")
    gs = P.match_instances(views, depths, insts, csem, scene.cfg)
    ensure_dir(scene.derived("match"))
    write_global_set(gs, scene.derived("match", "instances.ply"), scene.derived("match", "instances.json"))
    _summary("match-instances", t0, views=len(views), instances=len(gs))


def stage_pseudo(scene: Scene, ex):
    t0 = time.perf_counter()
    sems = scene.rasters("sem")
    insts = scene.rasters("inst", kind=INSTANCE)
    csem = scene.rasters("derived", "project", suffix="_sem_consistent")
    cinst = scene.rasters("derived", "project", suffix="_inst_consistent", kind=INSTANCE)
    psem, pinst = P.pseudo_labels(sems, insts, csem, cinst, scene.cfg, ex)
    scene.write_rasters(psem, "pseudo", "sem_pseudo")
    scene.write_rasters(pinst, "pseudo", "inst_pseudo")
    changed = sum(int((p.labels != s.labels).sum()) for p, s in zip(psem, sems))
    _summary("pseudo-labels", t0, views=len(sems), relabeled_px=changed)


def stage_evaluate(scene: Scene, ex, args) -> int:
    t0 = time.perf_counter()
    psem = scene.rasters("derived", "pseudo", suffix="_sem_pseudo")
    pinst = scene.rasters("derived", "pseudo", suffix="_inst_pseudo", kind=INSTANCE)
    gsem = scene.rasters("gt", "sem")
    ginst = scene.rasters("gt", "inst", kind=INSTANCE)
    report = P.evaluate(psem, pinst, gsem, ginst, scene.cfg.things, covered_only=not args.all_pixels)
    d = scene.derived("evaluate")
    ensure_dir(d)
    with open(os.path.join(d, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    with open(os.path.join(d, "report.txt"), "w") as f:
        f.write(report.to_text())
    _summary("evaluate", t0, miou=f"{report.miou:.4f}", pq_scene=f"{report.pq_scene:.4f}",
             tp=report.tp, fp=report.fp, fn=report.fn)
    failed = []
    if args.min_miou is not None and report.miou < args.min_miou:
        failed.append(f"mIoU {report.miou:.4f} < {args.min_miou}")
    if args.min_pq is not None and report.pq_scene < args.min_pq:
        failed.append(f"PQ_scene {report.pq_scene:.4f} < {args.min_pq}")
    if failed:
        print("evaluate: gate failed: " + "; ".join(failed), file=sys.stderr)
        return 1
    return 0


def run_pipeline_stages(scene: Scene, ex, args) -> int:
    t0 = time.perf_counter()
    stage_enhance(scene, ex)
    stage_build_cloud(scene, ex)
    stage_project(scene, ex, "sem")
    stage_match(scene, ex)
    stage_project(scene, ex, "inst")
    stage_pseudo(scene, ex)
    code = 0
    if os.path.isdir(scene.path("gt")):
        code = stage_evaluate(scene, ex, args)
    print(f"pipeline: total time={time.perf_counter() - t0:.2f}s")
    return code


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scene", help="scene directory")
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")

    gen = sub.add_parser("gen-synthetic", help="render a synthetic scene with noisy machine masks")
    gen.add_argument("scene", help="output directory")
    gen.add_argument("--trajectory", choices=("orbit", "corridor"), default="orbit")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--views", type=int)
    gen.add_argument("--objects", type=int)
    gen.add_argument("--width", type=int, default=160)
    gen.add_argument("--height", type=int, default=120)
    gen.add_argument("--noise-seed", type=int)
    gen.add_argument("--flip-prob", type=float, default=0.0)
    gen.add_argument("--permute-instances", action="store_true")
    gen.add_argument("--jitter-px", type=int, default=0)
    gen.add_argument("--dropout-prob", type=float, default=0.0)

    sub.add_parser("enhance-masks", parents=[common], help="consistency-filter the machine semantic masks")
    sub.add_parser("build-cloud", parents=[common], help="lift, cluster, vote and voxelize")
    proj = sub.add_parser("project-masks", parents=[common], help="project the cloud or instances to every view")
    proj.add_argument("--channel", choices=("sem", "inst"), default="sem")
    sub.add_parser("match-instances", parents=[common], help="build the scene-wide instance set")
    sub.add_parser("pseudo-labels", parents=[common], help="fuse machine masks with the consistent masks")
    for name in ("evaluate", "pipeline"):
        p = sub.add_parser(name, parents=[common],
                           help="score pseudo labels against gt/" if name == "evaluate" else "run every stage")
        p.add_argument("--min-miou", type=float, help="exit 1 if mIoU falls below this")
        p.add_argument("--min-pq", type=float, help="exit 1 if PQ_scene falls below this")
        p.add_argument("--all-pixels", action="store_true", help="score uncovered pixels too")
    cfg = sub.add_parser("print-config", help="print the effective configuration as TOML")
    cfg.add_argument("--config")
    return parser


def _dispatch(args) -> int:
    if args.command == "gen-synthetic":
        return stage_gen_synthetic(args)
    cfg = load_config(args.config) if args.config else P.PipelineConfig()
    if args.command == "print-config":
        sys.stdout.write(dump_config(cfg))
        return 0
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    scene = Scene(args.scene, cfg)
    with _executor(args.threads) as ex:
        if args.command == "enhance-masks":
            stage_enhance(scene, ex)
        elif args.command == "build-cloud":
            stage_build_cloud(scene, ex)
        elif args.command == "project-masks":
            stage_project(scene, ex, args.channel)
        elif args.command == "match-instances":
            stage_match(scene, ex)
        elif args.command == "pseudo-labels":
            stage_pseudo(scene, ex)
        elif args.command == "evaluate":
            return stage_evaluate(scene, ex, args)
        elif args.command == "pipeline":
            return run_pipeline_stages(scene, ex, args)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, FormatError, InvalidInputError, MissingInput, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
