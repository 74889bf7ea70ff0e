import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from oracles import flood_regions, histogram_fusion
from labelfuse.errors import InvalidInputError
from labelfuse.pseudo_label import fuse_pseudo_label, region_grow
from labelfuse.raster_io import INSTANCE, UNKNOWN, LabelRaster

CHAIR, SOFA = 4, 5


def test_uniform_mask_is_one_region():
    assert region_grow(LabelRaster(np.full((5, 7), 3)), min_region_px=1).count == 1


def test_separated_blobs():
    m = np.full((3, 7), 1)
    m[:, 3] = 2
    regions = region_grow(LabelRaster(m), min_region_px=1)
    assert regions.count == 3
    assert regions.ids[0, 0] == 0 and regions.ids[0, 3] == 1 and regions.ids[0, 6] == 2


def test_checkerboard():
    m = np.indices((6, 5)).sum(0) % 2
    assert region_grow(LabelRaster(m), 4, 1).count == 30
    assert region_grow(LabelRaster(m), 8, 1).count == 2


def test_small_regions_and_unknown_drop_out():
    m = np.full((6, 6), 2)
    m[0, 0] = 3
    m[5, 5] = UNKNOWN
    regions = region_grow(LabelRaster(m), 4, min_region_px=2)
    assert regions.count == 1
    assert regions.ids[0, 0] == -1 and regions.ids[5, 5] == -1
    with pytest.raises(InvalidInputError):
        region_grow(LabelRaster(m), connectivity=6)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.uint16, st.tuples(st.integers(1, 9), st.integers(1, 9)),
                  elements=st.sampled_from([0, 1, 2, UNKNOWN])),
       st.sampled_from([4, 8]), st.integers(1, 4))
def test_region_grow_matches_flood_fill(labels, connectivity, min_px):
    got = region_grow(LabelRaster(labels), connectivity, min_px)
    comp, regions = flood_regions(labels, connectivity, min_px)
    assert got.count == len(regions)
    assert np.array_equal(got.ids, comp)


def test_self_reference_is_identity():
    m = LabelRaster(np.random.default_rng(0).integers(0, 3, (8, 8)))
    assert np.array_equal(fuse_pseudo_label(m, m, 4, 1).labels, m.labels)


def test_majority_relabels_region():
    m2f = np.full((4, 4), SOFA)
    ref = np.full((4, 4), UNKNOWN)
    ref[:2, :] = CHAIR
    ref[2, :1] = SOFA
    out = fuse_pseudo_label(LabelRaster(m2f), LabelRaster(ref), 4, 1)
    assert (out.labels == CHAIR).all()


def test_tie_and_unknown_rules():
    m2f = LabelRaster(np.full((1, 4), 7))
    tie_with_own = LabelRaster(np.array([[7, 7, 3, 3]]))
    assert fuse_pseudo_label(m2f, tie_with_own, 4, 1).labels.tolist() == [[7] * 4]
    tie_without_own = LabelRaster(np.array([[9, 9, 3, 3]]))
    assert fuse_pseudo_label(m2f, tie_without_own, 4, 1).labels.tolist() == [[3] * 4]
    no_votes = LabelRaster.unknown(4, 1)
    assert fuse_pseudo_label(m2f, no_votes, 4, 1).labels.tolist() == [[7] * 4]
    with pytest.raises(InvalidInputError):
        fuse_pseudo_label(m2f, LabelRaster(np.zeros((2, 2))))


def test_joint_regions_split_by_instance():
    sem = np.full((4, 6), 1)
    inst = np.full((4, 6), UNKNOWN)
    inst[:, 3:] = 0  # an object mislabeled with its background's class
    ref = np.full((4, 6), 1)
    ref[:, 3:] = 6
    ref[0, :] = 6
    plain = fuse_pseudo_label(LabelRaster(sem), LabelRaster(ref), 4, 1)
    assert len(np.unique(plain.labels)) == 1
    joint = fuse_pseudo_label(LabelRaster(sem), LabelRaster(ref), 4, 1, LabelRaster(inst, INSTANCE))
    assert (joint.labels[:, :3] == 1).all() and (joint.labels[:, 3:] == 6).all()


masks = hnp.arrays(np.uint16, (6, 6), elements=st.sampled_from([0, 1]))
refs = hnp.arrays(np.uint16, (6, 6), elements=st.sampled_from([0, 1, UNKNOWN]))


@settings(max_examples=300, deadline=None)
@given(masks, refs)
def test_fusion_matches_histogram_oracle(m2f, ref):
    got = fuse_pseudo_label(LabelRaster(m2f), LabelRaster(ref), 4, 1)
    assert np.array_equal(got.labels, histogram_fusion(m2f, ref, 4, 1))


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.uint16, (7, 7), elements=st.sampled_from([0, 1, 2, UNKNOWN])),
       hnp.arrays(np.uint16, (7, 7), elements=st.sampled_from([0, 1, 2, UNKNOWN])),
       st.integers(1, 5))
def test_fusion_properties(m2f, ref, min_px):
    out = fuse_pseudo_label(LabelRaster(m2f), LabelRaster(ref), 4, min_px)
    regions = region_grow(LabelRaster(m2f), 4, min_px)
    for r in range(regions.count):
        assert len(np.unique(out.labels[regions.ids == r])) == 1
    assert (out.labels[regions.ids == -1] == UNKNOWN).all()
    # re-fusing the output with the same reference changes nothing
    again = fuse_pseudo_label(out, LabelRaster(ref), 4, 1)
    assert np.array_equal(again.labels, out.labels)
    assert np.array_equal(fuse_pseudo_label(LabelRaster(m2f), LabelRaster(m2f), 4, min_px).labels,
                          np.where(regions.ids >= 0, m2f, UNKNOWN))
