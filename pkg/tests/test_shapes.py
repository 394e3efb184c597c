import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partcom import shapes as sh
from partcom.shapes import PointCloud, TaskSpec

from oracles import box_surface_distance, chamfer

KNOWN = ["table", "chair", "lamp", "airplane", "mug"]
UNKNOWN = ["bed", "bookshelf", "stool", "bottle", "bench"]


def digest(points):
    return hashlib.sha256(np.ascontiguousarray(points).tobytes()).hexdigest()


# -- generation --------------------------------------------------------------

def test_catalog_has_ten_part_based_families():
    assert sorted(sh.CATALOG) == sorted(KNOWN + UNKNOWN)
    rng = np.random.default_rng(0)
    for fam in sh.CATALOG.values():
        parts = fam.realize(rng)
        assert len(parts) >= 2 and len({p.kind for _, p in parts}) >= 2


@pytest.mark.parametrize("name", sorted(sh.CATALOG))
def test_generation_is_deterministic(name):
    fam = sh.get_family(name)
    a, b = sh.generate_shape(fam, 17, 256), sh.generate_shape(fam, 17, 256)
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, sh.generate_shape(fam, 18, 256).points)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(sh.CATALOG)), st.integers(0, 10**6), st.integers(64, 600))
def test_output_is_normalized(name, seed, L):
    cloud = sh.generate_shape(sh.get_family(name), seed, L)
    assert cloud.L == L
    assert np.all(np.abs(cloud.points.mean(axis=0)) <= 1e-9)
    assert abs(np.linalg.norm(cloud.points, axis=1).max() - 1.0) <= 1e-9


def test_table_top_holds_a_fifth_of_the_points():
    fam = sh.get_family("table")
    for seed in range(10):
        s = sh.sample_shape(fam, seed, 512)
        top = dict(s.parts)["top"]
        raw = s.to_primitive_frame(s.cloud.points)
        d = box_surface_distance(raw, np.asarray(top.center), np.asarray(top.size))
        assert np.mean(d <= 0.05) >= 0.2, seed


def test_primitive_distance_matches_oracle():
    box = sh.Primitive("box", np.array([0.1, -0.2, 0.3]), (0.5, 0.2, 0.1))
    q = np.random.default_rng(1).normal(size=(200, 3))
    np.testing.assert_allclose(box.surface_distance(q), box_surface_distance(q, box.center, np.asarray(box.size)),
                               atol=1e-12)


def test_too_few_points():
    with pytest.raises(sh.ShapeGenerationError):
        sh.generate_shape(sh.get_family("mug"), 0, 63)


def test_degenerate_recipe():
    fam = sh.ShapeFamily("flat", lambda rng: [("a", sh.Primitive("box", np.zeros(3), (0.0, 0.0, 0.0))),
                                              ("b", sh.Primitive("disk", np.zeros(3), (0.0,)))])
    with pytest.raises(sh.ShapeGenerationError):
        sh.generate_shape(fam, 0, 64)


def test_unknown_family():
    with pytest.raises(sh.TaskConfigError):
        sh.get_family("teapot")


# -- task builders -----------------------------------------------------------

def small_spec(protocol="single", **kw):
    return TaskSpec(protocol, KNOWN, UNKNOWN if protocol != "confusing_mixup" else [],
                    kw.pop("n_train", 20), kw.pop("n_test", 10), kw.pop("seed", 0), n_points=128, **kw)


def test_single_task_counts_and_labels():
    train, test = sh.build_task(small_spec())
    assert len(train) == 100 and len(test) == 100
    assert all(1 <= s.label <= 5 for s in train)
    assert sum(s.label <= 5 for s in test) == 50 and sum(s.label == 6 for s in test) == 50
    assert np.bincount([s.label for s in train]).tolist()[1:] == [20] * 5


def test_train_and_test_clouds_are_disjoint():
    train, test = sh.build_task(small_spec())
    seen = {digest(s.cloud.points) for s in train}
    assert not seen & {digest(s.cloud.points) for s in test}


def test_task_is_deterministic():
    a, b = sh.build_task(small_spec(seed=3)), sh.build_task(small_spec(seed=3))
    for xs, ys in zip(a, b):
        assert [digest(s.cloud.points) for s in xs] == [digest(s.cloud.points) for s in ys]


def test_cross_task_domains():
    train, test = sh.build_task(small_spec("cross", n_train=4, n_test=4))
    train_domains = {s.source_domain for s in train}
    assert all(s.source_domain not in train_domains for s in test if s.label == 6)
    assert all(s.source_domain in train_domains for s in test if s.label <= 5)


def test_cross_domain_chamfer_exceeds_within_domain():
    # random up-axis rotation dominates single pairs, so pool 20 pairs per family
    within, across = [], []
    for name in sorted(sh.CATALOG):
        fam = sh.get_family(name)
        for i in range(20):
            ref = sh.generate_shape(fam, 1000 + i, 256).points
            within.append(chamfer(ref, sh.generate_shape(fam, 2000 + i, 256).points))
            across.append(chamfer(ref, sh.generate_shape(fam, 2000 + i, 256, sh.SHIFTED_PROFILE).points))
    assert np.mean(across) > np.mean(within)


def test_mixup_task_layout():
    train, test = sh.build_task(small_spec("confusing_mixup", n_train=4, n_test=4))
    mixed = [s for s in test if s.label == 6]
    assert len(mixed) == 20 and all(s.source_domain == "mixup" for s in mixed)
    assert sum(s.label <= 5 for s in test) == 20
    for s in mixed:
        assert sh.is_normalized(s.cloud.points)


def test_overlap_and_catalog_errors():
    with pytest.raises(sh.TaskConfigError):
        TaskSpec("single", ["table"], ["table"])
    with pytest.raises(sh.TaskConfigError):
        sh.build_single_task(TaskSpec("single", ["table"], ["teapot"]))
    with pytest.raises(sh.TaskConfigError):
        sh.choose_classes(8, 5, 0)
    with pytest.raises(sh.TaskConfigError):
        TaskSpec("single", ["table"], ["chair"], n_train_per_class=0)


def test_choose_classes_is_a_seeded_partition():
    k, u = sh.choose_classes(5, 5, 4)
    assert sorted(k + u) == sorted(sh.CATALOG)
    assert (k, u) == sh.choose_classes(5, 5, 4)


# -- rigid subset mix --------------------------------------------------------

def two_clouds(seed=0, L=256):
    a = sh.generate_shape(sh.get_family("table"), seed, L)
    b = sh.generate_shape(sh.get_family("lamp"), seed, L)
    return a, b


def test_mix_keeps_cardinality():
    a, b = two_clouds()
    assert sh.rigid_subset_mix(a, b, 0.4, seed=1).L == a.L


def test_tiny_radius_changes_one_point():
    a, b = two_clouds()
    out = sh.rigid_subset_mix(a, b, 1e-9, seed=2)
    assert int(np.sum(np.any(out.points != b.points, axis=1))) == 1


def test_mix_points_come_from_inputs():
    for seed in range(10):
        a, b = two_clouds(seed)
        out = sh.rigid_subset_mix(a, b, 0.4, seed=seed)
        pool = {tuple(p) for p in a.points} | {tuple(p) for p in b.points}
        assert all(tuple(p) in pool for p in out.points)
        assert any(tuple(p) in {tuple(q) for q in a.points} for p in out.points)


def test_mix_rejects_bad_inputs():
    a, b = two_clouds()
    with pytest.raises(ValueError):
        sh.rigid_subset_mix(a, PointCloud(b.points[:100]), 0.4)
    with pytest.raises(ValueError):
        sh.rigid_subset_mix(a, b, 1.5)


# -- files -------------------------------------------------------------------

def test_cloud_file_round_trip(tmp_path):
    cloud = sh.generate_shape(sh.get_family("bed"), 5, 128)
    sh.write_cloud_file(tmp_path / "c.pcv", cloud)
    np.testing.assert_array_equal(sh.read_cloud_file(tmp_path / "c.pcv").points, cloud.points)


def test_count_mismatch(tmp_path):
    body = "\n".join("0.0 0.0 0.0" for _ in range(99))
    (tmp_path / "c.pcv").write_text(f"PCV1 100\n{body}\n")
    with pytest.raises(sh.CloudFormatError, match="100"):
        sh.read_cloud_file(tmp_path / "c.pcv")


def test_nan_coordinate_names_line(tmp_path):
    (tmp_path / "c.pcv").write_text("PCV1 3\n0 0 0\n1 nan 0\n0 1 0\n")
    with pytest.raises(sh.CloudFormatError) as err:
        sh.read_cloud_file(tmp_path / "c.pcv")
    assert err.value.line == 3 and "line 3" in str(err.value)


@pytest.mark.parametrize("text", ["", "PCV2 1\n0 0 0\n", "PCV1 x\n", "PCV1 1\n0 0\n"])
def test_malformed_files(tmp_path, text):
    (tmp_path / "c.pcv").write_text(text)
    with pytest.raises(sh.CloudFormatError):
        sh.read_cloud_file(tmp_path / "c.pcv")


def test_manifest_round_trip(tmp_path):
    train, _ = sh.build_task(small_spec(n_train=2, n_test=1))
    path = sh.write_manifest(tmp_path, "train", train, 5)
    back, K = sh.read_manifest(path)
    assert K == 5 and [s.label for s in back] == [s.label for s in train]
    for x, y in zip(back, train):
        np.testing.assert_array_equal(x.cloud.points, y.cloud.points)
