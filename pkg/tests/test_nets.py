import numpy as np
import pytest

from concurq.core import ContractViolationError
from concurq.nets import (
    CHECKPOINT_MAGIC,
    MlpQNetwork,
    global_grad_norm,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)


def flat_grads(gw, gb):
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gw, gb)])


def sample_smooth_case(seed, margin=1e-3):
    """Random net plus an input batch kept away from rectifier kinks.

    Central differences only estimate the gradient where the function is
    smooth across the +-h window, so inputs that put a hidden
    pre-activation within `margin` of zero are redrawn.
    """
    rng = np.random.default_rng(seed)
    n_in = int(rng.integers(2, 7))
    hidden = [int(rng.integers(6, 17)) for _ in range(int(rng.integers(1, 3)))]
    n_out = int(rng.integers(1, 5))
    net = MlpQNetwork([n_in, *hidden, n_out], rng)
    for _ in range(50):
        x = rng.uniform(-2.0, 2.0, size=(3, n_in))
        h = x
        ok = True
        for w, b in zip(net.weights[:-1], net.biases[:-1]):
            z = h @ w + b
            if np.min(np.abs(z)) < margin:
                ok = False
                break
            h = np.maximum(z, 0.0)
        if ok:
            return net, x, rng.uniform(-1.0, 1.0, size=(3, n_out))
    raise AssertionError("could not sample a kink-free input")


class TestForward:
    def test_zero_parameters_zero_output(self):
        net = MlpQNetwork([3, 8, 2], np.random.default_rng(0))
        net.set_flat(np.zeros(net.n_params))
        out = net.forward(np.array([1.0, -2.0, 3.0]))
        assert out.shape == (2,)
        assert np.all(out == 0.0)

    def test_single_linear_layer_identity(self):
        net = MlpQNetwork([4, 4], np.random.default_rng(0))
        net.weights[0] = np.eye(4)
        net.biases[0] = np.zeros(4)
        x = np.array([0.5, -1.5, 2.0, 0.0])
        assert np.array_equal(net.forward(x), x)

    def test_finite_output_for_large_inputs(self):
        rng = np.random.default_rng(7)
        net = MlpQNetwork([5, 64, 64, 3], rng)
        x = rng.uniform(-1e3, 1e3, size=(16, 5))
        out = net.forward(x)
        assert out.shape == (16, 3)
        assert np.all(np.isfinite(out))

    def test_batch_and_single_agree(self):
        rng = np.random.default_rng(3)
        net = MlpQNetwork([3, 10, 2], rng)
        x = rng.standard_normal((5, 3))
        batch = net.forward(x)
        for i in range(5):
            # BLAS may pick different kernels for (1,n) vs (m,n); allow ulps
            np.testing.assert_allclose(net.forward(x[i]), batch[i], rtol=1e-13, atol=0)

    def test_input_dim_mismatch_rejected(self):
        net = MlpQNetwork([3, 4, 1], np.random.default_rng(0))
        with pytest.raises(ContractViolationError):
            net.forward(np.zeros(5))

    @pytest.mark.parametrize("sizes", [(4,), (), (3, 0, 2), (-1, 4)])
    def test_bad_layer_sizes_rejected(self, sizes):
        with pytest.raises(ContractViolationError):
            MlpQNetwork(sizes, np.random.default_rng(0))

    def test_init_deterministic_given_seed(self):
        a = MlpQNetwork([4, 16, 2], np.random.default_rng(11))
        b = MlpQNetwork([4, 16, 2], np.random.default_rng(11))
        c = MlpQNetwork([4, 16, 2], np.random.default_rng(12))
        assert np.array_equal(a.get_flat(), b.get_flat())
        assert not np.array_equal(a.get_flat(), c.get_flat())

    def test_he_scaled_init(self):
        # std of a 256-wide layer should sit near sqrt(2/fan_in)
        net = MlpQNetwork([256, 256], np.random.default_rng(0))
        std = float(np.std(net.weights[0]))
        assert abs(std - np.sqrt(2.0 / 256.0)) < 0.01
        assert np.all(net.biases[0] == 0.0)


class TestBackward:
    def test_zero_upstream_gradient(self):
        net = MlpQNetwork([3, 8, 2], np.random.default_rng(1))
        out, cache = net.forward_cached(np.ones((4, 3)))
        gw, gb = net.backward(cache, np.zeros_like(out))
        assert np.all(flat_grads(gw, gb) == 0.0)

    def test_loss_gradient_zero_at_fit(self):
        # (y - Q)^2 with y = Q is a stationary point
        net = MlpQNetwork([3, 8, 2], np.random.default_rng(2))
        out, cache = net.forward_cached(np.ones((4, 3)))
        gw, gb = net.backward(cache, -2.0 * (out - out))
        assert np.all(flat_grads(gw, gb) == 0.0)

    def test_upstream_shape_mismatch_rejected(self):
        net = MlpQNetwork([3, 8, 2], np.random.default_rng(1))
        _, cache = net.forward_cached(np.ones((4, 3)))
        with pytest.raises(ContractViolationError):
            net.backward(cache, np.zeros((4, 3)))

    def test_matches_central_differences(self):
        # squared TD-style loss, h = 1e-5, 100 random nets
        h = 1e-5
        worst = 0.0
        for seed in range(100):
            net, x, y = sample_smooth_case(seed)
            out, cache = net.forward_cached(x)
            gw, gb = net.backward(cache, -2.0 * (y - out))
            analytic = flat_grads(gw, gb)
            theta = net.get_flat()
            fd = np.empty_like(theta)
            probe = net.clone()
            for i in range(theta.size):
                tp = theta.copy()
                tp[i] += h
                probe.set_flat(tp)
                lp = float(np.sum((y - probe.forward(x)) ** 2))
                tp[i] -= 2 * h
                probe.set_flat(tp)
                lm = float(np.sum((y - probe.forward(x)) ** 2))
                fd[i] = (lp - lm) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1.0)
            worst = max(worst, float(np.max(np.abs(analytic - fd) / denom)))
        assert worst < 1e-4


class TestParamsAndSgd:
    def test_flat_roundtrip(self):
        net = MlpQNetwork([3, 7, 2], np.random.default_rng(5))
        vec = net.get_flat()
        assert vec.size == net.n_params == 3 * 7 + 7 + 7 * 2 + 2
        other = MlpQNetwork([3, 7, 2], np.random.default_rng(99))
        other.set_flat(vec)
        assert np.array_equal(other.get_flat(), vec)
        assert np.array_equal(other.forward(np.ones(3)), net.forward(np.ones(3)))

    def test_set_flat_rejects_bad_vectors(self):
        net = MlpQNetwork([3, 7, 2], np.random.default_rng(5))
        with pytest.raises(ContractViolationError):
            net.set_flat(np.zeros(net.n_params - 1))
        bad = np.zeros(net.n_params)
        bad[3] = np.nan
        with pytest.raises(ContractViolationError):
            net.set_flat(bad)

    def test_clone_is_independent(self):
        net = MlpQNetwork([3, 7, 2], np.random.default_rng(5))
        twin = net.clone()
        twin.weights[0][0, 0] += 1.0
        assert net.weights[0][0, 0] != twin.weights[0][0, 0]
        assert np.array_equal(net.get_flat(), MlpQNetwork([3, 7, 2], np.random.default_rng(5)).get_flat())

    def test_sgd_step_unclipped(self):
        net = MlpQNetwork([2, 2], np.random.default_rng(0))
        net.set_flat(np.zeros(net.n_params))
        gw = [np.full((2, 2), 0.5)]
        gb = [np.zeros(2)]
        norm = sgd_step(net, gw, gb, lr=0.1, clip_norm=10.0)
        assert norm == pytest.approx(1.0)
        assert np.allclose(net.weights[0], -0.05)

    def test_sgd_step_clips_global_norm(self):
        net = MlpQNetwork([2, 2], np.random.default_rng(0))
        net.set_flat(np.zeros(net.n_params))
        gw = [np.full((2, 2), 50.0)]  # norm 100
        gb = [np.zeros(2)]
        norm = sgd_step(net, gw, gb, lr=1.0, clip_norm=10.0)
        assert norm == pytest.approx(100.0)
        # clipped direction has norm exactly clip_norm
        assert global_grad_norm([net.weights[0]], [net.biases[0]]) == pytest.approx(10.0)

    def test_sgd_rejects_bad_lr(self):
        net = MlpQNetwork([2, 2], np.random.default_rng(0))
        with pytest.raises(ContractViolationError):
            sgd_step(net, [np.zeros((2, 2))], [np.zeros(2)], lr=0.0)


class TestCheckpoints:
    def test_roundtrip_bitwise(self, tmp_path):
        net = MlpQNetwork([5, 16, 16, 3], np.random.default_rng(21))
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        blob = path.read_bytes()
        assert blob.startswith(CHECKPOINT_MAGIC)
        loaded = load_checkpoint(path)
        assert loaded.sizes == net.sizes
        assert np.array_equal(loaded.get_flat(), net.get_flat())

    def test_save_is_deterministic(self, tmp_path):
        net = MlpQNetwork([4, 8, 2], np.random.default_rng(3))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(net, p1)
        save_checkpoint(net, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_crc_rejects_corruption(self, tmp_path):
        net = MlpQNetwork([4, 8, 2], np.random.default_rng(3))
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ContractViolationError, match="CRC"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        import struct
        import zlib

        body = b"XXXXX" + struct.pack("<I", 2) + struct.pack("<2I", 1, 1)
        body += np.zeros(2, dtype="<f8").tobytes()
        blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
        path = tmp_path / "bad.ckpt"
        path.write_bytes(blob)
        with pytest.raises(ContractViolationError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "short.ckpt"
        path.write_bytes(b"CRL")
        with pytest.raises(ContractViolationError):
            load_checkpoint(path)
