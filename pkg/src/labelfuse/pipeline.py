"""Stage functions chaining the modules, in memory.

The CLI wraps each of these with disk I/O; tests call them directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .consistency import WindowConfig, filter_sequence
from .errors import InvalidInputError
from .geometry import CameraView, DepthMap
from .instance_match import GlobalInstanceSet, MatchConfig, match_masks_2d, update_global_set
from .losses import LossConfig
from .metrics import SceneEvalReport, pq_scene, restrict_to_covered
from .pseudo_label import fuse_pseudo_label
from .raster_io import INSTANCE, MAX_INSTANCES, NUM_CLASSES, UNKNOWN, LabelRaster
from .semantic_cloud import CloudConfig, KMeansConfig, SemanticCloud, build_semantic_cloud
from .synthetic import THINGS_CLASSES
from .view_projection import ProjectionConfig, project_cloud_to_mask, project_instances_to_masks


@dataclass(frozen=True)
class PseudoConfig:
    connectivity: int = 4
    min_region_px: int = 32
    joint_regions: bool = True  # grow regions over (class, instance) pairs

    def __post_init__(self):
        if self.connectivity not in (4, 8):
            raise InvalidInputError("connectivity must be 4 or 8")
        if self.min_region_px < 1:
            raise InvalidInputError("min_region_px must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    kmeans: KMeansConfig = field(default_factory=KMeansConfig)
    voxel_size: float = 0.05
    stride: int = 2
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    pseudo: PseudoConfig = field(default_factory=PseudoConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    things: tuple = THINGS_CLASSES
    num_classes: int = NUM_CLASSES
    max_instances: int = MAX_INSTANCES

    def __post_init__(self):
        self.cloud()  # validates voxel_size and stride

    def cloud(self) -> CloudConfig:
        # masks reaching build_cloud are already filtered
        return CloudConfig(WindowConfig(0, self.window.occlusion_tol), self.kmeans, self.voxel_size, self.stride)


def _map(executor, fn, items):
    return list(executor.map(fn, items) if executor is not None else map(fn, items))


def enhance_masks(views, depths, sems, cfg: PipelineConfig, executor=None):
    if cfg.window.window_size == 0:
        return list(sems), None
    return filter_sequence(views, depths, sems, cfg.window, executor)


def build_cloud(views, depths, filtered, cfg: PipelineConfig) -> SemanticCloud:
    return build_semantic_cloud(views, depths, filtered, cfg.cloud())


def project_semantic(cloud, views, depths, cfg: PipelineConfig, executor=None) -> list[LabelRaster]:
    p = cfg.projection
    return _map(executor, lambda k: project_cloud_to_mask(cloud, views[k], depths[k], p.splat_radius,
                                                          p.depth_gate, "sem"), range(len(views)))


def match_instances(views, depths, m2f_insts, consistent_sems, cfg: PipelineConfig) -> GlobalInstanceSet:
    gs = GlobalInstanceSet()
    for view, depth, inst, sem in zip(views, depths, m2f_insts, consistent_sems):
        gs = update_global_set(gs, view, depth, inst, sem, cfg.things, cfg.match)
    return gs


def project_instances(global_set, consistent_sems, views, depths, cfg: PipelineConfig, executor=None):
    return _map(executor, lambda k: project_instances_to_masks(global_set, consistent_sems[k], cfg.things,
                                                               views[k], depths[k], cfg.projection),
                range(len(views)))


def pseudo_labels(m2f_sems, m2f_insts, consistent_sems, consistent_insts, cfg: PipelineConfig, executor=None):
    """Final per-view panoptic labels.

    Semantics: machine regions relabeled by vote of the consistent semantic
    mask.  Instances: machine segments renamed to the scene-global ids they
    overlap most; kept only on things pixels of the pseudo semantics.
    """
    things = np.array(sorted(cfg.things), dtype=np.int64)
    ps = cfg.pseudo

    def one(k):
        sem = fuse_pseudo_label(m2f_sems[k], consistent_sems[k], ps.connectivity, ps.min_region_px,
                                m2f_insts[k] if ps.joint_regions else None)
        inst = match_masks_2d(consistent_insts[k], m2f_insts[k], cfg.max_instances)
        labels = inst.labels.copy()
        labels[~np.isin(sem.labels, things)] = UNKNOWN
        return sem, LabelRaster(labels, INSTANCE)

    out = _map(executor, one, range(len(m2f_sems)))
    return [o[0] for o in out], [o[1] for o in out]


def evaluate(pred_sems, pred_insts, gt_sems, gt_insts, things, covered_only: bool = True) -> SceneEvalReport:
    if covered_only:
        gt_sems, gt_insts = restrict_to_covered(pred_sems, pred_insts, gt_sems, gt_insts, things)
    return pq_scene(pred_sems, pred_insts, gt_sems, gt_insts, things)


@dataclass
class PipelineResult:
    filtered: list
    cloud: SemanticCloud
    consistent_sems: list
    global_set: GlobalInstanceSet
    consistent_insts: list
    pseudo_sems: list
    pseudo_insts: list
    timings: dict


def run_pipeline(views: Sequence[CameraView], depths: Sequence[DepthMap], m2f_sems, m2f_insts,
                 cfg: PipelineConfig = PipelineConfig(), executor=None) -> PipelineResult:
    timings = {}
    t = time.perf_counter()

    def tick(name):
        nonlocal t
        now = time.perf_counter()
        timings[name] = now - t
        t = now

    filtered, _ = enhance_masks(views, depths, m2f_sems, cfg, executor)
    tick("enhance-masks")
    cloud = build_cloud(views, depths, filtered, cfg)
    tick("build-cloud")
    csem = project_semantic(cloud.points, views, depths, cfg, executor)
    tick("project-masks:sem")
    gs = match_instances(views, depths, m2f_insts, csem, cfg)
    tick("match-instances")
    cinst = project_instances(gs, csem, views, depths, cfg, executor)
    tick("project-masks:inst")
    psem, pinst = pseudo_labels(m2f_sems, m2f_insts, csem, cinst, cfg, executor)
    tick("pseudo-labels")
    return PipelineResult(filtered, cloud, csem, gs, cinst, psem, pinst, timings)
