import numpy as np
import pytest

from snds import autodiff as ad
from snds.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from snds.errors import ConstructionError, DataFormatError, DomainError
from snds.network import BlockSpec, GrowingNetwork, NetworkSpec, features_at_mode, predict_mixture
from snds.posterior import TruncatedPoissonPosterior


def scalar_net(weights, classes=1):
    net = GrowingNetwork(NetworkSpec("scalar-test-block", (classes,), classes, scalar_init=weights))
    net.grow_to(len(weights))
    return net


def dense_net(depth=4, seed=0, width=6):
    net = GrowingNetwork(NetworkSpec("dense-block", (5,), 3, width=width, seed=seed))
    net.grow_to(depth)
    return net


def conv_net(depth=5, seed=0):
    net = GrowingNetwork(NetworkSpec("conv-basic-block", (1, 8, 8), 2, width=2, seed=seed, pool_kernel=2))
    net.grow_to(depth)
    return net


def posterior(lam, lo, hi):
    return TruncatedPoissonPosterior(ad.Parameter(lam), lo, hi)


class TestScalarNet:
    def test_two_layers(self):
        net = scalar_net([0.5, 0.25])
        assert net.forward_at_depth(np.ones((1, 1)), 2).item() == pytest.approx(1.875)

    def test_one_layer(self):
        net = scalar_net([0.5, 0.25])
        assert net.forward_at_depth(np.ones((1, 1)), 1).item() == pytest.approx(1.5)

    def test_feature_at_mode(self):
        net = scalar_net([0.5, 0.25])
        assert features_at_mode(net, np.ones((1, 1)), posterior(1.0, 1, 2)).item() == pytest.approx(1.5)

    def test_depth_out_of_range(self):
        with pytest.raises(DomainError):
            scalar_net([0.5]).forward_at_depth(np.ones((1, 1)), 2)


class TestGrowth:
    def test_counts(self):
        net = GrowingNetwork(NetworkSpec("dense-block", (5,), 3))
        assert net.grow_to(3) == 3
        assert len(net.layers) == len(net.heads) == 3

    def test_no_shrink(self):
        net = dense_net(5)
        assert net.grow_to(3) == 0 and net.depth == 5

    def test_idempotent(self):
        a, b = dense_net(0 + 1), dense_net(1)
        a.grow_to(4)
        b.grow_to(4)
        b.grow_to(4)
        assert a.checksum() == b.checksum()

    def test_existing_parameters_untouched(self):
        net = conv_net(3)
        before = net.checksum(3)
        net.grow_to(10)
        assert net.checksum(3) == before

    def test_layer_init_independent_of_growth_order(self):
        a = dense_net(6)
        b = dense_net(2)
        b.grow_to(6)
        assert a.checksum() == b.checksum()

    def test_invalid_target(self):
        with pytest.raises(DomainError):
            dense_net(1).grow_to(0)

    def test_bad_block_spec(self):
        with pytest.raises(ConstructionError):
            BlockSpec("conv-basic-block", 4, 6, downsample=True)
        with pytest.raises(ConstructionError):
            BlockSpec("dense-block", 4, 4, downsample=True)

    def test_conv_downsample_schedule(self):
        net = GrowingNetwork(NetworkSpec("conv-basic-block", (1, 16, 16), 2, width=2))
        net.grow_to(11)
        out = net.trunk(np.zeros((1, 1, 16, 16)), 11)
        assert [h.shape[1:] for h in out[2:4]] == [(2, 16, 16), (4, 8, 8)]
        assert out[8].shape[1:] == (8, 4, 4) and out[10].shape[1:] == (8, 4, 4)

    def test_new_block_starts_as_identity(self):
        net = dense_net(1)
        x = np.random.default_rng(0).normal(size=(4, 5))
        h1 = net.trunk(x, 1)[-1].data
        net.grow_to(2)
        np.testing.assert_array_equal(net.trunk(x, 2)[-1].data, h1)


class TestForward:
    def test_logit_shape(self):
        assert conv_net(5).forward_at_depth(np.zeros((3, 1, 8, 8)), 5).shape == (3, 2)

    def test_perturbing_deeper_layer_leaves_shallow_output(self):
        net = scalar_net([0.5, 0.25, 0.1])
        before = net.forward_at_depth(np.ones((1, 1)), 2).data.tobytes()
        net.layers[2].w.data = np.array(7.0)
        assert net.forward_at_depth(np.ones((1, 1)), 2).data.tobytes() == before

    @pytest.mark.parametrize("make", [dense_net, conv_net])
    def test_depth_locality_of_gradients(self, make):
        net = make()
        x = np.random.default_rng(1).normal(size=(4, 5) if make is dense_net else (4, 1, 8, 8))
        for d in range(1, net.depth + 1):
            for p in net.parameters():
                p.grad = np.ones_like(p.data)  # would survive zero_grad only if untouched
            net.zero_grad()
            ad.backward(ad.softmax_cross_entropy(net.forward_at_depth(x, d), np.array([0, 1, 1, 0])))
            inside = {p.uid for p in net.params_for_depth(d)}
            for p in net.parameters():
                if p.uid not in inside:
                    assert not np.any(p.grad), p.name

    def test_features_dimension_matches_head_input(self):
        net = conv_net(5)
        q = posterior(4.0, 1, 5)
        feats = features_at_mode(net, np.zeros((2, 1, 8, 8)), q)
        assert feats.shape == (2, net.heads[2].in_features)

    def test_features_deterministic(self):
        net = dense_net(3)
        x = np.random.default_rng(2).normal(size=(3, 5))
        q = posterior(2.0, 1, 3)
        assert features_at_mode(net, x, q).tobytes() == features_at_mode(net, x, q).tobytes()


class TestMixture:
    def test_hand_weighted(self):
        # logits log(p) reproduce the softmaxes (0.9,0.1) and (0.3,0.7) on an identity-head scalar net.
        net = scalar_net([0.0, 0.0], classes=2)
        x = np.log(np.array([[0.9, 0.1]]))
        net.layers[1].w.data = np.array(0.0)

        class Fixed:
            def __call__(self, h):
                return ad.Tensor(np.log(np.array([[0.3, 0.7]])))

        net.heads[1] = Fixed()
        q = posterior(1.0, 1, 2)  # pmf (2/3, 1/3)
        np.testing.assert_allclose(predict_mixture(net, x, q), [[0.7, 0.3]], atol=1e-12)

    def test_singleton_equals_head(self):
        net = dense_net(4)
        x = np.random.default_rng(3).normal(size=(6, 5))
        q = posterior(2.0, 3, 3)
        net.training = False
        expected = ad.softmax(net.forward_at_depth(x, 3)).data
        np.testing.assert_allclose(predict_mixture(net, x, q), expected, atol=1e-14)

    def test_rows_sum_to_one_and_bounds(self):
        net = dense_net(6, seed=4)
        x = np.random.default_rng(4).normal(size=(20, 5)) * 3
        q = posterior(3.0, 1, 6)
        mix = predict_mixture(net, x, q, batch_size=7)
        np.testing.assert_allclose(mix.sum(axis=1), 1.0, atol=1e-9)
        per = np.stack([ad.softmax(net.forward_at_depth(x, d)).data for d in range(1, 7)])
        assert np.all(mix >= per.min(axis=0) - 1e-12) and np.all(mix <= per.max(axis=0) + 1e-12)

    def test_support_beyond_layers(self):
        with pytest.raises(DomainError):
            predict_mixture(dense_net(2), np.zeros((1, 5)), posterior(1.0, 1, 3))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = conv_net(4)
        for p in net.parameters():
            p.data = p.data + 0.125
        q = TruncatedPoissonPosterior.from_lambda(2.5)
        path = tmp_path / "model.npz"
        save_checkpoint(path, net, q, {1: 3, 2: 5})
        net2, q2, counts = load_checkpoint(path)
        assert net2.checksum() == net.checksum()
        assert (q2.lambda_value, q2.d_max, counts) == (2.5, q.d_max, {1: 3, 2: 5})
        meta, _ = read_checkpoint(path)
        assert meta["layers"] == 4 and meta["version"] == 1

    def test_stable_bytes(self, tmp_path):
        net = dense_net(3)
        q = TruncatedPoissonPosterior.from_lambda(1.0)
        save_checkpoint(tmp_path / "a.npz", net, q, {})
        save_checkpoint(tmp_path / "b.npz", net, q, {})
        assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()

    def test_garbage(self, tmp_path):
        (tmp_path / "bad.npz").write_bytes(b"not a checkpoint")
        with pytest.raises(DataFormatError):
            read_checkpoint(tmp_path / "bad.npz")
