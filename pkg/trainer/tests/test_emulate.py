import numpy as np
import pytest

from wobbletrainer import emulate
from wobbletrainer.quantize import QConv, QFc, QFlatten, QModel, QPool


def brute_requant(acc, mult, shift, zp):
    p = int(acc) * mult
    d = 1 << (31 + shift)
    q = (p + d // 2) // d if p >= 0 else -((-p + d // 2) // d)
    return max(-128, min(127, q + zp))


class TestRequantize:
    def test_half_factor(self):
        assert emulate.requantize(np.array([100]), 1 << 30, 0, 0).tolist() == [50]

    def test_tie_rounds_away(self):
        assert emulate.requantize(np.array([3, -3]), 1 << 30, 0, 0).tolist() == [2, -2]

    def test_random_agreement_with_big_integer(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            acc = int(rng.integers(-(1 << 31), 1 << 31))
            mult = int(rng.integers(1 << 30, 1 << 31))
            shift = int(rng.integers(0, 28))
            zp = int(rng.integers(-128, 128))
            got = int(emulate.requantize(np.array([acc]), mult, shift, zp)[0])
            assert got == brute_requant(acc, mult, shift, zp)


class TestKernels:
    def test_conv_difference_kernel(self):
        layer = QConv(np.array([[[1, -1]]], dtype=np.int8), (1 << 31) - 1, 0, 0, False, 1.0)
        out = emulate.conv1d(np.array([[5, 7, 4]], dtype=np.int8), 0, layer)
        assert out.tolist() == [[-2, 3]]

    def test_conv_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            c_in, c_out, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
            n = int(rng.integers(k, 16))
            x = rng.integers(-128, 128, (c_in, n)).astype(np.int8)
            w = rng.integers(-128, 128, (c_out, c_in, k)).astype(np.int8)
            zp_in = int(rng.integers(-128, 128))
            mult = int(rng.integers(1 << 30, 1 << 31))
            shift = int(rng.integers(0, 16))
            zp_out = int(rng.integers(-128, 128))
            layer = QConv(w, mult, shift, zp_out, False, 1.0)
            got = emulate.conv1d(x, zp_in, layer)
            for o in range(c_out):
                for j in range(n - k + 1):
                    acc = sum(
                        int(w[o, c, t]) * (int(x[c, j + t]) - zp_in)
                        for c in range(c_in)
                        for t in range(k)
                    )
                    assert int(got[o, j]) == brute_requant(acc, mult, shift, zp_out)

    def test_pool_drops_remainder(self):
        out = emulate.maxpool1d(np.array([[1, 5, 3, 2, 9]], dtype=np.int8), 2, 2)
        assert out.tolist() == [[5, 3]]

    def test_fc_hand_case(self):
        layer = QFc(np.array([[2, -1]], dtype=np.int8), (1 << 31) - 1, 0, 0, False, 1.0)
        out = emulate.fully_connected(np.array([3, 4], dtype=np.int8), 0, layer)
        assert out.tolist() == [2]

    def test_relu_clamps_at_zero_point(self):
        layer = QFc(np.array([[1], [-1]], dtype=np.int8), (1 << 31) - 1, 0, 5, True, 1.0)
        out = emulate.fully_connected(np.array([30], dtype=np.int8), 0, layer)
        assert out.tolist() == [35, 5]  # -30 + 5 = -25 clamps up to zp 5


class TestInferChain:
    def test_shapes_through_reference_architecture(self):
        rng = np.random.default_rng(0)
        model = QModel(
            16.0,
            0,
            [
                QConv(rng.integers(-20, 20, (20, 2, 9)).astype(np.int8), 1 << 30, 7, -100, True, 1.0),
                QPool(),
                QConv(rng.integers(-20, 20, (20, 20, 9)).astype(np.int8), 1 << 30, 8, -100, True, 1.0),
                QPool(),
                QFlatten(),
                QFc(rng.integers(-20, 20, (100, 940)).astype(np.int8), 1 << 30, 9, -100, True, 1.0),
                QFc(rng.integers(-20, 20, (5, 100)).astype(np.int8), 1 << 30, 7, 0, False, 1.0),
            ],
        )
        window = rng.integers(-128, 128, (2, 215)).astype(np.int8)
        logits = emulate.infer(model, window)
        assert logits.shape == (5,)
        assert emulate.classify(model, window) == int(np.argmax(logits))

    def test_all_zero_window_gives_zero_point_logits(self):
        rng = np.random.default_rng(1)
        model = QModel(
            16.0,
            0,
            [
                QFlatten(),
                QFc(rng.integers(-20, 20, (5, 430)).astype(np.int8), 1 << 30, 7, 9, False, 1.0),
            ],
        )
        logits = emulate.infer(model, np.zeros((2, 215), dtype=np.int8))
        assert logits.tolist() == [9] * 5
