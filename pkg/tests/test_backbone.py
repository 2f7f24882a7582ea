import numpy as np
import pytest

from helpers import finite_difference, rel_error
from vsplat.backbone import (
    Backbone,
    DepthMap,
    backbone_loss,
    init_virtual_views,
    pairwise_epipolar_masks,
    sample_virtual_cameras,
    splat_stage,
)
from vsplat.errors import BadDimensions, TooFewCandidates
from vsplat.geom import Intrinsics, Pose, look_at_pose
from vsplat.nn.layers import AttentionConfig
from vsplat.nn.tensor import Tensor


def small_backbone(rng=None, d_e=16, patch=8, stages=2, grid=(4, 4), dtype=np.float64):
    rng = rng or np.random.default_rng(0)
    return Backbone(d_e, patch, stages, AttentionConfig(d_e, 2), grid, rng,
                    mlp_ratio=2, dtype=dtype)


def grid_cam(res_img=32, grid=4, f=40.0):
    return (Pose.identity(), Intrinsics(f, f, res_img / 2, res_img / 2, res_img, res_img))


class TestEncoder:
    def test_shape_contract(self):
        # 64x64 RGB, patch 8, d_E = 64 -> 4 stages of 67 x 8 x 8 plus CLS(64)
        rng = np.random.default_rng(1)
        bb = Backbone(64, 8, 4, AttentionConfig(64, 4), (8, 8), rng, dtype=np.float32)
        images = rng.random((2, 3, 64, 64))
        stages, cls = bb.encoder.forward(images)
        assert len(stages) == 4
        assert stages[0].shape == (2, 67, 8, 8)
        assert cls.shape == (2, 64)

    def test_constant_image_embeddings_identical(self):
        rng = np.random.default_rng(2)
        bb = small_backbone(rng)
        images = np.full((1, 3, 32, 32), 0.37)
        emb = bb.encoder.patch_embed(images)  # before positional encoding
        spread = np.abs(emb.data - emb.data[:, :1, :]).max()
        assert spread <= 1e-6
        stages, _ = bb.encoder.forward(images)
        rgb = stages[0].data[:, -3:]
        assert np.allclose(rgb, 0.37, atol=1e-6)

    def test_bad_dimensions(self):
        bb = small_backbone()
        with pytest.raises(BadDimensions):
            bb.encoder.forward(np.zeros((1, 3, 30, 32)))

    def test_encoder_gradcheck(self):
        rng = np.random.default_rng(3)
        bb = Backbone(8, 8, 1, AttentionConfig(8, 2), (2, 2), rng, mlp_ratio=2,
                      dtype=np.float64)
        images = rng.random((1, 3, 16, 16))
        w = [rng.normal(size=(1, 11, 2, 2)),]
        wc = rng.normal(size=(1, 8))

        def build():
            stages, cls = bb.encoder.forward(images)
            total = (stages[0] * w[0]).sum()
            return total + (cls * wc).sum()

        params = bb.encoder.parameters()
        loss = build()
        for p in params:
            p.grad = None
        loss.backward()
        for p in params:
            fd = finite_difference(lambda: build().item(), p.data, h=1e-4)
            denom = max(np.linalg.norm(fd), np.linalg.norm(p.grad if p.grad is not None else fd), 1e-3)
            assert np.linalg.norm((p.grad if p.grad is not None else 0) - fd) / denom <= 1e-6


class TestSplatInit:
    def make_ref(self, rng, grid=4, c=5):
        K = Intrinsics(5.0, 5.0, 2.0, 2.0, grid, grid)
        pose = Pose.identity()
        feats = rng.random((c, grid, grid))
        depth = DepthMap(np.full((grid, grid), 4.0), np.ones((grid, grid), dtype=bool))
        return feats, depth, (pose, K)

    def test_identity_reprojection(self):
        rng = np.random.default_rng(4)
        feats, depth, cam = self.make_ref(rng)
        out, hit = splat_stage([feats], [depth], [cam], cam)
        assert hit.all()
        assert np.array_equal(out, feats)

    def test_facing_away_all_invalid(self):
        rng = np.random.default_rng(5)
        feats, depth, cam = self.make_ref(rng)
        away = look_at_pose([0.0, 0.0, 10.0], [0.0, 0.0, 20.0])
        inits, hits = init_virtual_views([[feats]], [depth], [cam], [(away, cam[1])])
        assert not hits[0].any()
        assert (inits[0][0] == 0).all()

    def test_occlusion_nearest_wins(self):
        # two reference views see two parallel planes; the virtual view
        # must keep the nearer point wherever candidates collide
        grid = 4
        K = Intrinsics(5.0, 5.0, 2.0, 2.0, grid, grid)
        near_cam = (Pose.identity(), K)
        far_cam = (Pose(np.eye(3), np.array([0.0, 0.0, -2.0])), K)
        near_feat = np.full((1, grid, grid), 1.0)
        far_feat = np.full((1, grid, grid), 2.0)
        near_depth = DepthMap(np.full((grid, grid), 3.0), np.ones((grid, grid), bool))
        far_depth = DepthMap(np.full((grid, grid), 9.0), np.ones((grid, grid), bool))
        out, hit = splat_stage(
            [far_feat, near_feat], [far_depth, near_depth], [far_cam, near_cam], near_cam
        )
        assert hit.all()
        assert (out == 1.0).all()  # near plane (depth 3 from the target cam) wins


class TestElfBlock:
    def run_block(self, bb, rng, n_ref=2, n_vrt=2, grid=(4, 4)):
        h, w = grid
        c = bb.d_e + 3
        ref = Tensor(rng.normal(size=(n_ref, c, h, w)))
        prev = Tensor(rng.normal(size=(n_vrt, c, h, w)))
        init = Tensor(rng.normal(size=(n_vrt, c, h, w)))
        K = Intrinsics(40.0, 40.0, 16.0, 16.0, 32, 32)
        cams = [
            look_at_pose(np.array([np.cos(a), 0.2 * i, np.sin(a)]) * 1.5, [0, 0, 0])
            for i, a in enumerate(np.linspace(0, 2, n_ref + n_vrt))
        ]
        cams = [(p, K) for p in cams]
        ids = list(range(n_ref + n_vrt))
        masks = pairwise_epipolar_masks(cams, ids, grid, band_px=20.0)
        ref_out, vrt_out = bb.elf_block(0, prev, init, ref, masks, ids[:n_ref], ids[n_ref:])
        return ref, prev, init, masks, ids, ref_out, vrt_out

    def test_zero_init_is_exact_identity(self):
        rng = np.random.default_rng(6)
        bb = small_backbone(rng)
        ref, prev, init, masks, ids, ref_out, vrt_out = self.run_block(bb, rng)
        assert np.array_equal(ref_out.data, ref.data)
        assert np.array_equal(vrt_out.data, prev.data + init.data)

    def test_output_shapes_arbitrary_view_counts(self):
        rng = np.random.default_rng(7)
        bb = small_backbone(rng)
        for n_ref, n_vrt in [(1, 3), (3, 1), (2, 4)]:
            _, prev, _, _, _, ref_out, vrt_out = self.run_block(bb, rng, n_ref, n_vrt)
            assert ref_out.shape[0] == n_ref and vrt_out.shape[0] == n_vrt

    def test_permutation_equivariance_bit_exact(self):
        rng = np.random.default_rng(8)
        bb = small_backbone(rng)
        # make the block non-trivial
        for p in bb.blocks[0].parameters():
            p.data = rng.normal(scale=0.2, size=p.shape)
        n_ref, n_vrt, grid = 2, 3, (4, 4)
        c = bb.d_e + 3
        ref = Tensor(rng.normal(size=(n_ref, c, *grid)))
        prev = Tensor(rng.normal(size=(n_vrt, c, *grid)))
        init = Tensor(rng.normal(size=(n_vrt, c, *grid)))
        K = Intrinsics(40.0, 40.0, 16.0, 16.0, 32, 32)
        poses = [
            look_at_pose(np.array([np.cos(a), 0.1 * i, np.sin(a)]) * 2.0, [0, 0, 0])
            for i, a in enumerate(np.linspace(0, 3, n_ref + n_vrt))
        ]
        cams = [(p, K) for p in poses]
        ids = list(range(n_ref + n_vrt))
        masks = pairwise_epipolar_masks(cams, ids, grid, band_px=25.0)
        ref_ids, vrt_ids = ids[:n_ref], ids[n_ref:]

        ref_out, vrt_out = bb.elf_block(0, prev, init, ref, masks, ref_ids, vrt_ids)
        perm = [2, 0, 1]
        prev_p = Tensor(prev.data[perm])
        init_p = Tensor(init.data[perm])
        vrt_ids_p = [vrt_ids[i] for i in perm]
        ref_out_p, vrt_out_p = bb.elf_block(0, prev_p, init_p, ref, masks, ref_ids, vrt_ids_p)
        assert np.array_equal(vrt_out_p.data, vrt_out.data[perm])
        assert np.array_equal(ref_out_p.data, ref_out.data)


class TestHeads:
    def test_depth_positive_finite_and_resolution(self):
        rng = np.random.default_rng(9)
        bb = small_backbone(rng)
        stages = [Tensor(rng.normal(scale=3.0, size=(2, 19, 4, 4))) for _ in range(2)]
        d = bb.depth_head(stages)
        assert d.shape == (2, 4, 4)
        assert np.isfinite(d.data).all() and (d.data > 0).all()

    def test_cls_zero_features_zero_output(self):
        rng = np.random.default_rng(10)
        bb = small_backbone(rng)
        out = bb.infer_cls(Tensor(np.zeros((3, 19, 4, 4))))
        assert out.shape == (3, 16)
        assert (out.data == 0).all()

    def test_cls_gradcheck(self):
        rng = np.random.default_rng(11)
        bb = small_backbone(rng)
        x = Tensor(rng.normal(size=(1, 19, 4, 4)), requires_grad=True)
        w = rng.normal(size=(1, 16))

        def build():
            return (bb.infer_cls(x) * w).sum()

        build().backward()
        fd = finite_difference(lambda: build().item(), x.data, h=1e-4)
        assert rel_error(x.grad, fd) <= 1e-6


class TestSampling:
    def fake_candidates(self, overlaps):
        K = Intrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)
        ref = [(Pose.identity(), K)]
        depth = [DepthMap(np.full((8, 8), 5.0), np.ones((8, 8), bool))]
        cands = [(Pose.identity(), K) for _ in overlaps]
        return ref, cands, depth

    def test_single_candidate_probability_one(self):
        K = Intrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)
        ref = [(Pose.identity(), K)]
        depth = [DepthMap(np.full((8, 8), 5.0), np.ones((8, 8), bool))]
        cams, idx, probs = sample_virtual_cameras(ref, [ref[0]], depth, 1,
                                                  np.random.default_rng(0))
        assert idx == [0] and probs[0] == 1.0

    def test_k_equals_candidates_returns_all(self):
        K = Intrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)
        ref = [(Pose.identity(), K)]
        depth = [DepthMap(np.full((8, 8), 5.0), np.ones((8, 8), bool))]
        cands = [
            (look_at_pose([0.1 * i, 0, -0.5], [0, 0, 5]), K) for i in range(4)
        ]
        _, idx, _ = sample_virtual_cameras(ref, cands, depth, 4, np.random.default_rng(1))
        assert sorted(idx) == [0, 1, 2, 3]

    def test_too_few_candidates(self):
        K = Intrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)
        ref = [(Pose.identity(), K)]
        depth = [DepthMap(np.full((8, 8), 5.0), np.ones((8, 8), bool))]
        with pytest.raises(TooFewCandidates):
            sample_virtual_cameras(ref, [ref[0]], depth, 2, np.random.default_rng(0))

    def test_sampling_ratio_follows_overlap(self):
        # candidate A sees the scene fully, candidate B half: build cameras
        # whose measured overlaps are ~0.2 and ~0.1 via synthetic depth maps
        # then verify the 2:1 draw ratio over 10000 seeded draws
        K = Intrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)
        ref_pose = Pose.identity()
        depth = np.full((8, 8), 5.0)
        valid = np.zeros((8, 8), dtype=bool)
        # only some pixels valid; candidates shifted so a known fraction lands inside
        valid[:, :] = True
        ref = [(ref_pose, K)]
        dm = [DepthMap(depth, valid)]
        offset_a = look_at_pose([2.0, 0.0, 0.0], [2.0, 0.0, 5.0])  # sees half of ref
        offset_b = look_at_pose([3.0, 0.0, 0.0], [3.0, 0.0, 5.0])  # a quarter
        from vsplat.geom import view_overlap

        sa = view_overlap(ref[0], (offset_a, K), depth, valid)
        sb = view_overlap(ref[0], (offset_b, K), depth, valid)
        assert sa > sb > 0
        rng = np.random.default_rng(123)
        counts = {0: 0, 1: 0}
        for _ in range(10000):
            _, idx, probs = sample_virtual_cameras(
                ref, [(offset_a, K), (offset_b, K)], dm, 1, rng
            )
            counts[idx[0]] += 1
        expected = sa / (sa + sb)
        se = np.sqrt(expected * (1 - expected) / 10000)
        assert abs(counts[0] / 10000 - expected) <= 3 * se
        assert np.allclose(probs, [sa / (sa + sb), sb / (sa + sb)])

    def test_inverted_scores(self):
        K = Intrinsics(10.0, 10.0, 4.0, 4.0, 8, 8)
        ref = [(Pose.identity(), K)]
        dm = [DepthMap(np.full((8, 8), 5.0), np.ones((8, 8), bool))]
        cands = [(Pose.identity(), K), (look_at_pose([0, 0, -1], [0, 0, -6]), K)]
        _, _, probs = sample_virtual_cameras(ref, cands, dm, 1, np.random.default_rng(0),
                                             invert=True)
        # candidate 0 overlaps fully (score 1) -> inverted weight 0
        assert probs[0] == 0.0 and probs[1] == 1.0


class TestBackboneLoss:
    def test_zero_when_equal(self):
        rng = np.random.default_rng(12)
        stages = [rng.normal(size=(2, 5, 3, 3)) for _ in range(3)]
        pred = [Tensor(s.copy()) for s in stages]
        loss = backbone_loss(pred, stages, pred, stages, 1000.0, 0.1)
        assert loss.item() == 0.0

    def test_unit_residual_arithmetic(self):
        # doubling a unit residual on one vrt element raises the loss by
        # lambda1 * 3 / n_elements
        lam1, lam2 = 1000.0, 0.1
        gt = [np.zeros((1, 2, 2, 2))]
        pred1 = np.zeros((1, 2, 2, 2))
        pred1[0, 0, 0, 0] = 1.0
        pred2 = pred1.copy()
        pred2[0, 0, 0, 0] = 2.0
        ref = [Tensor(np.zeros((1, 2, 2, 2)))]
        l1 = backbone_loss([Tensor(pred1)], gt, ref, [g.copy() for g in gt], lam1, lam2)
        l2 = backbone_loss([Tensor(pred2)], gt, ref, [g.copy() for g in gt], lam1, lam2)
        n = pred1.size
        assert np.isclose(l2.item() - l1.item(), lam1 * 3.0 / n, rtol=1e-12)


class TestFullForward:
    def test_hierarchical_accumulation_and_determinism(self):
        rng = np.random.default_rng(13)
        bb = small_backbone(rng, dtype=np.float64)
        # non-trivial blocks
        for p in bb.parameters():
            if (p.data == 0).all():
                p.data = rng.normal(scale=0.05, size=p.shape)
        K = Intrinsics(22.0, 22.0, 16.0, 16.0, 32, 32)
        ref_cams = [(look_at_pose(1.2 * np.array([np.cos(a), 0, np.sin(a)]),
                                  2.0 * np.array([np.cos(a), 0, np.sin(a)])), K)
                    for a in np.linspace(0, 2 * np.pi, 3, endpoint=False)]
        vrt_cams = [(look_at_pose([4.0, -1.0, 0.0], [0, 0, 0]), K),
                    (look_at_pose([0.0, -1.0, 4.0], [0, 0, 0]), K)]
        images = rng.random((3, 3, 32, 32))
        out1 = bb.run(images, ref_cams, vrt_cams, band_px=12.0)
        out2 = bb.run(images, ref_cams, vrt_cams, band_px=12.0)
        # determinism
        for s in range(bb.n_stages):
            assert np.array_equal(out1["vrt_stages"][s].data, out2["vrt_stages"][s].data)
        assert out1["vrt_depth"].shape == (2, 4, 4)
        assert (out1["vrt_depth"].data > 0).all()
        assert out1["vrt_cls"].shape == (2, bb.d_e)
