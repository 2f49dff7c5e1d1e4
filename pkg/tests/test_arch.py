import hashlib

import numpy as np
import pytest

from gridmotion.net import (
    ArchError,
    TrainConfig,
    build_network,
    gradient_check,
    init_from_coarser,
    load_network,
    lr_at,
    save_network,
    train,
)
from gridmotion.net.arch import NAMED_ARCHS, Network, Node
from gridmotion.net.layers import Conv, Deconv, FuseSum, MaxPool, ReLU, CropTo
from gridmotion.net.train import TrainSample, scaled_iterations


def toy_sample(side=64, seed=5):
    x = np.zeros((3, side, side), dtype=np.float32)
    labels = np.zeros((side, side), dtype=np.int8)
    occupied = np.zeros((side, side), dtype=bool)
    x[0] = 0.1
    q = side // 2
    occupied[q // 4:q // 4 + 4, 4:q - 4] = True
    x[0, q // 4:q // 4 + 4, 4:q - 4] = 0.95
    x[1:, q // 4:q // 4 + 4, 4:q - 4] = 0.5
    r0, c0 = q + q // 4, q + q // 4
    occupied[r0:r0 + 8, c0:c0 + 8] = True
    x[0, r0:r0 + 8, c0:c0 + 8] = 0.9
    x[1, r0:r0 + 8, c0:c0 + 8] = 0.9
    x[2, r0:r0 + 8, c0:c0 + 8] = 0.55
    labels[r0:r0 + 8, c0:c0 + 8] = 1
    heading = np.full((side, side), np.nan)
    heading[r0:r0 + 8, c0:c0 + 8] = 0.3
    return TrainSample(x=x, labels=labels, occupied=occupied, heading=heading)


def state_checksum(net):
    h = hashlib.sha256()
    for key in sorted(net.state_dict()):
        h.update(key.encode())
        h.update(np.ascontiguousarray(net.state_dict()[key]).tobytes())
    return h.hexdigest()


class TestNamedArchs:
    @pytest.mark.parametrize("arch", ["TOY-32s", "TOY-16s", "TOY-8s"])
    def test_toy_output_matches_input_size(self, arch):
        net = build_network(arch, heads=True)
        out = net.forward(np.zeros((3, 64, 64), dtype=np.float32))
        assert out["seg"].shape == (2, 64, 64)
        assert out["sin"].shape == (1, 64, 64)
        assert out["cos"].shape == (1, 64, 64)

    def test_fuse_counts_follow_the_jet_depth(self):
        for arch, n_fuse in (("TOY-32s", 0), ("TOY-16s", 1), ("TOY-8s", 2)):
            net = build_network(arch)
            fuses = [n for n in net.nodes if isinstance(n.layer, FuseSum)]
            assert len(fuses) == n_fuse

    def test_all_named_archs_constructible(self):
        for arch in NAMED_ARCHS:
            if arch.startswith(("FCN", "ALEX")):
                continue  # full-width builds exercised in the acceptance suite
            net = build_network(arch)
            assert any(isinstance(n.layer, Deconv) for n in net.nodes)

    def test_unknown_arch_rejected(self):
        with pytest.raises(ArchError):
            build_network("VGG-64s")

    def test_bad_input_edge_rejected(self):
        net = build_network("TOY-32s")
        with pytest.raises(ArchError):
            net.forward(np.zeros((3, 50, 50), dtype=np.float32))

    def test_same_seed_same_parameters(self):
        a = build_network("TOY-16s", heads=True, rng_seed=7)
        b = build_network("TOY-16s", heads=True, rng_seed=7)
        assert state_checksum(a) == state_checksum(b)
        c = build_network("TOY-16s", heads=True, rng_seed=8)
        assert state_checksum(a) != state_checksum(c)


class TestGradientsPerLayerKind:
    """Central finite differences vs analytic gradients on tiny float64 nets."""

    def _check(self, nodes, outputs, x, labels, heading=None, in_ch=2):
        net = Network("tiny", nodes, outputs, in_channels=in_ch, dtype=np.float64)
        err = gradient_check(net, x, labels, heading=heading, n_samples=25,
                             rng_seed=1)
        assert err < 1e-4

    def test_conv_only(self):
        rng = np.random.default_rng(0)
        nodes = [
            Node("c1", Conv(2, 4, 3, 1, 1, rng=rng, dtype=np.float64), ["input"]),
            Node("r1", ReLU(), ["c1"]),
            Node("c2", Conv(4, 2, 3, 1, 1, rng=rng, dtype=np.float64), ["r1"]),
        ]
        x = rng.random((2, 8, 8))
        labels = rng.integers(0, 2, (8, 8)).astype(np.int8)
        self._check(nodes, {"seg": "c2"}, x, labels)

    def test_conv_with_maxpool_and_deconv(self):
        rng = np.random.default_rng(1)
        nodes = [
            Node("c1", Conv(2, 4, 3, 1, 1, rng=rng, dtype=np.float64), ["input"]),
            Node("r1", ReLU(), ["c1"]),
            Node("p1", MaxPool(2, 2), ["r1"]),
            Node("score", Conv(4, 2, 1, rng=rng, dtype=np.float64), ["p1"]),
            Node("up", Deconv(2, 2, 2, dtype=np.float64, trainable=True), ["score"]),
            Node("out", CropTo(), ["up", "input"]),
        ]
        # distinct values avoid argmax ties at the finite-difference points
        x = np.random.default_rng(2).permutation(2 * 12 * 12).reshape(2, 12, 12) / 288.0
        labels = np.random.default_rng(3).integers(0, 2, (12, 12)).astype(np.int8)
        self._check(nodes, {"seg": "out"}, x, labels)

    def test_fuse_and_skip_scores(self):
        rng = np.random.default_rng(2)
        nodes = [
            Node("c1", Conv(2, 4, 3, 1, 1, rng=rng, dtype=np.float64), ["input"]),
            Node("r1", ReLU(), ["c1"]),
            Node("p1", MaxPool(2, 2), ["r1"]),
            Node("c2", Conv(4, 8, 3, 1, 1, rng=rng, dtype=np.float64), ["p1"]),
            Node("r2", ReLU(), ["c2"]),
            Node("p2", MaxPool(2, 2), ["r2"]),
            Node("score", Conv(8, 2, 1, rng=rng, dtype=np.float64), ["p2"]),
            Node("skip", Conv(4, 2, 1, rng=rng, dtype=np.float64), ["p1"]),
            Node("up1", Deconv(2, 2, 2, dtype=np.float64, trainable=True), ["score"]),
            Node("up1c", CropTo(), ["up1", "skip"]),
            Node("fuse", FuseSum(), ["skip", "up1c"]),
            Node("up2", Deconv(2, 2, 2, dtype=np.float64), ["fuse"]),
            Node("out", CropTo(), ["up2", "input"]),
        ]
        x = np.random.default_rng(4).permutation(2 * 16 * 16).reshape(2, 16, 16) / 512.0
        labels = np.random.default_rng(5).integers(0, 2, (16, 16)).astype(np.int8)
        self._check(nodes, {"seg": "out"}, x, labels)

    def test_weighted_loss_and_ignore_pixels(self):
        rng = np.random.default_rng(3)
        nodes = [
            Node("c1", Conv(2, 2, 3, 1, 1, rng=rng, dtype=np.float64), ["input"]),
        ]
        x = rng.random((2, 8, 8))
        labels = rng.integers(0, 2, (8, 8)).astype(np.int8)
        labels[:2] = -1
        self._check(nodes, {"seg": "c1"}, x, labels)

    def test_full_toy_net_with_biternion_heads(self):
        net = build_network("TOY-16s", heads=True, rng_seed=4, dtype=np.float64)
        rng = np.random.default_rng(6)
        x = rng.random((3, 32, 32))
        labels = rng.integers(0, 2, (32, 32)).astype(np.int8)
        heading = np.full((32, 32), np.nan)
        dyn = labels == 1
        heading[dyn] = rng.uniform(0, 2 * np.pi, dyn.sum())
        err = gradient_check(net, x, labels, heading=heading, n_samples=8,
                             rng_seed=2)
        assert err < 1e-4


class TestLrPolicy:
    def test_fixed_policy_constant(self):
        cfg = TrainConfig(lr_policy="fixed", base_lr=1e-3, iterations=100)
        assert lr_at(0, cfg) == 1e-3
        assert lr_at(99, cfg) == 1e-3

    def test_step_policy_starts_ten_times_higher(self):
        cfg = TrainConfig(lr_policy="step", base_lr=1e-3, iterations=1000)
        assert lr_at(0, cfg) == pytest.approx(1e-2)

    def test_step_policy_reaches_base_at_half(self):
        cfg = TrainConfig(lr_policy="step", base_lr=1e-3, iterations=1000)
        assert lr_at(500, cfg) == pytest.approx(1e-3)
        assert lr_at(999, cfg) == pytest.approx(1e-3)

    def test_step_policy_decays_monotonically(self):
        cfg = TrainConfig(lr_policy="step", base_lr=1e-3, iterations=1000)
        rates = [lr_at(i, cfg) for i in range(1000)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert len({round(r, 12) for r in rates}) == 6  # five decay steps + base


class TestTraining:
    def test_single_frame_overfit(self):
        sample = toy_sample()
        net = build_network("TOY-8s", rng_seed=3)
        cfg = TrainConfig(lr_policy="step", base_lr=3e-3, iterations=500,
                          class_weights=(1, 40), rng_seed=0, weight_decay=0.0,
                          eval_interval=100)
        history = train(net, [sample], cfg)
        out = net.predict(sample.x)
        occ = sample.occupied
        acc = np.mean(out["pred"][occ].astype(bool) == (sample.labels[occ] == 1))
        assert acc > 0.99
        # loss trend is downward: the median of the last window is below the first
        losses = [h.loss for h in history]
        assert np.median(losses[-3:]) < np.median(losses[:3])

    def test_same_seed_identical_checkpoints(self, tmp_path):
        sample = toy_sample()

        def run(path):
            net = build_network("TOY-32s", rng_seed=3)
            cfg = TrainConfig(lr_policy="fixed", base_lr=1e-3, iterations=30,
                              rng_seed=1, eval_interval=10)
            train(net, [sample], cfg)
            save_network(net, path)

        run(tmp_path / "a.ckpt")
        run(tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_divergence_aborts_with_diagnostic(self):
        sample = toy_sample(side=32)
        net = build_network("TOY-32s", rng_seed=3)
        cfg = TrainConfig(lr_policy="fixed", base_lr=1e6, iterations=200,
                          rng_seed=0)
        with pytest.raises(RuntimeError, match="diverged"):
            train(net, [sample], cfg)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(build_network("TOY-32s"), [], TrainConfig())

    def test_curve_csv_written(self, tmp_path):
        sample = toy_sample(side=32)
        net = build_network("TOY-32s", rng_seed=3)
        cfg = TrainConfig(lr_policy="fixed", base_lr=1e-4, iterations=20,
                          rng_seed=0, eval_interval=5)
        train(net, [sample], cfg, log_path=tmp_path / "curve.csv")
        lines = (tmp_path / "curve.csv").read_text().splitlines()
        assert lines[0] == "iter,loss,acc,prec,rec,acc_all"
        assert len(lines) >= 5


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = build_network("TOY-16s", heads=True, rng_seed=9)
        path = tmp_path / "net.ckpt"
        save_network(net, path)
        loaded = load_network(path)
        assert loaded.name == "TOY-16s"
        assert loaded.has_heads
        assert state_checksum(loaded) == state_checksum(net)

    def test_corruption_detected(self, tmp_path):
        net = build_network("TOY-32s", rng_seed=9)
        path = tmp_path / "net.ckpt"
        save_network(net, path)
        raw = bytearray(path.read_bytes())
        raw[100] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="checksum"):
            load_network(path)


class TestIncrementalInit:
    def test_shared_weights_transfer_exactly(self):
        coarse = build_network("TOY-32s", rng_seed=3)
        fine = init_from_coarser("TOY-16s", coarse)
        cs = coarse.state_dict()
        fs = fine.state_dict()
        for key in cs:
            if key in fs:
                np.testing.assert_array_equal(cs[key], fs[key])
        # the new skip score is zero-initialized
        assert np.all(fs["skip1.W"] == 0)

    def test_zero_skip_scores_preserve_coarse_argmax(self):
        sample = toy_sample()
        coarse = build_network("TOY-32s", rng_seed=3)
        cfg = TrainConfig(lr_policy="fixed", base_lr=1e-3, iterations=60,
                          rng_seed=0, weight_decay=0.0, eval_interval=30)
        train(coarse, [sample], cfg)
        fine = init_from_coarser("TOY-16s", coarse)
        a = coarse.predict(sample.x)["pred"]
        b = fine.predict(sample.x)["pred"]
        np.testing.assert_array_equal(a, b)

    def test_incompatible_prefix_rejected(self):
        coarse = build_network("ALEX-32s", rng_seed=0)
        with pytest.raises(ArchError):
            init_from_coarser("TOY-16s", coarse)

    def test_lr_scale_validated(self):
        coarse = build_network("TOY-32s", rng_seed=0)
        with pytest.raises(ValueError):
            init_from_coarser("TOY-16s", coarse, lr_scale=0.5)
        init_from_coarser("TOY-16s", coarse, lr_scale=0.1)

    def test_scaled_iterations(self):
        assert scaled_iterations(1000, 100, 250) == 2500
        assert scaled_iterations(1000, 100, 100) == 1000
