import numpy as np
import pytest

from recfield.autodiff import Tensor
from recfield.expansion import expand_inference, expand_training, expand_training_batch
from recfield.octree import SparseOctree, morton_encode

from test_nets import make_bundle


def force_occupancy(bundle, logit):
    for p in bundle.omega.parameters():
        p.data[:] = 0.0
    bundle.omega.biases[-1].data[:] = logit


def test_forced_full_expansion_counts():
    bundle = make_bundle(d=8, m=3, phi_hidden=16, head_hidden=8)
    force_occupancy(bundle, +10.0)
    tree = expand_inference(np.zeros(8), bundle)
    assert [tree.count(m) for m in range(4)] == [1, 8, 64, 512]
    assert tree.total_cells() == 585
    assert not tree.degenerate


def test_all_pruned_is_degenerate_not_crash():
    bundle = make_bundle(d=8, m=3, phi_hidden=16, head_hidden=8)
    force_occupancy(bundle, -10.0)
    tree = expand_inference(np.zeros(8), bundle)
    assert tree.degenerate
    assert tree.count(0) == 1 and tree.count(1) == 0 and tree.count(3) == 0


def test_pruning_soundness_and_no_orphans():
    bundle = make_bundle(d=8, m=3, phi_hidden=16, head_hidden=8, seed=4)
    rng = np.random.default_rng(0)
    tree = expand_inference(rng.normal(0, 1, 8), bundle)
    for m in range(1, 4):
        if tree.count(m) == 0:
            continue
        occ = bundle.occupancy(tree.latent_table(m))
        assert (occ > 0.5).all()
        parents = np.unique(tree.codes(m) >> np.uint64(3))
        assert np.isin(parents, tree.codes(m - 1)).all()


def test_training_matches_forced_inference_on_full_gt():
    bundle = make_bundle(d=8, m=2, phi_hidden=16, head_hidden=8, seed=1)
    force_occupancy(bundle, +10.0)
    root = np.random.default_rng(1).normal(0, 0.1, 8).astype(np.float32)
    inferred = expand_inference(root, bundle)

    full = SparseOctree.from_leaves(np.arange(64, dtype=np.uint64), 2)
    trained, logits, targets = expand_training(
        Tensor(root.reshape(1, -1), requires_grad=True), full, bundle
    )
    assert targets.size == 8 + 64 and (targets == 1).all()
    for m in range(3):
        assert np.array_equal(trained.codes(m), inferred.codes(m))
        assert np.allclose(trained.latent_table(m).data, inferred.latent_table(m).data,
                           atol=1e-6)


def test_single_path_gt_visit_arithmetic():
    m = 3
    bundle = make_bundle(d=8, m=m, phi_hidden=16, head_hidden=8)
    leaf = morton_encode(5, 2, 7, m).code
    gt = SparseOctree.from_leaves(np.array([leaf], np.uint64), m)
    tree, logits, targets = expand_training(Tensor(np.zeros((1, 8))), gt, bundle)
    assert logits.shape == (8 * m, 1)
    assert targets.sum() == m  # one occupied child per level
    assert all(tree.count(level) == 1 for level in range(m + 1))
    # logit targets align 1:1 with the ground-truth child bits, level by level
    pos = 0
    code = np.uint64(0)
    for level in range(1, m + 1):
        bits = targets[pos:pos + 8]
        child = gt.occupied(level)[0]
        assert bits[int(child & np.uint64(7))] == 1.0 and bits.sum() == 1.0
        pos += 8 * tree.count(level - 1)
        code = child


def test_training_never_consults_occupancy_probability(monkeypatch):
    bundle = make_bundle(d=8, m=2, phi_hidden=16, head_hidden=8)
    monkeypatch.setattr(
        bundle, "occupancy",
        lambda *_: (_ for _ in ()).throw(AssertionError("control flow used omega")),
    )
    gt = SparseOctree.from_leaves(np.array([0, 9], np.uint64), 2)
    expand_training(Tensor(np.zeros((1, 8))), gt, bundle)


def test_gt_lod_mismatch_raises():
    bundle = make_bundle(d=8, m=3, phi_hidden=16, head_hidden=8)
    shallow = SparseOctree.from_leaves(np.array([0], np.uint64), 2)
    with pytest.raises(ValueError):
        expand_training(Tensor(np.zeros((1, 8))), shallow, bundle)


def test_batch_blocks_are_consistent():
    bundle = make_bundle(d=8, m=2, phi_hidden=16, head_hidden=8, ids=["a", "b"])
    gts = [
        SparseOctree.from_leaves(np.array([0, 5], np.uint64), 2),
        SparseOctree.from_leaves(np.array([63], np.uint64), 2),
    ]
    roots = Tensor(np.random.default_rng(0).normal(0, 0.1, (2, 8)), requires_grad=True)
    batch = expand_training_batch(roots, gts, bundle)
    for lv in batch.levels:
        sizes = [c.size for c in lv.codes]
        assert lv.offsets.tolist() == [0, sizes[0], sizes[0] + sizes[1]]
        assert lv.table.data.shape[0] == sum(sizes)
    # single-object views agree with per-object expansion
    solo, _, _ = expand_training(Tensor(roots.data[1:2]), gts[1], bundle)
    view = batch.object_view(1)
    for m in range(3):
        assert np.array_equal(view.codes(m), solo.codes(m))
        a = view.latent_table(m).data[view.levels[m].offsets[0]:view.levels[m].offsets[1]]
        assert np.allclose(a, solo.latent_table(m).data, atol=1e-6)
