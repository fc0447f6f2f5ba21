import numpy as np
import pytest
import torch

from wobbletrainer.train import TrainConfig, train, windows_to_tensor


def blob_windows(n_per_class=60, seed=0):
    """Easily separable micro-task: class k is a sinusoid of frequency 2**k."""
    rng = np.random.default_rng(seed)
    t = np.arange(215) / 215.0
    windows, labels = [], []
    for cls in range(5):
        phase = rng.uniform(0, 2 * np.pi, (n_per_class, 1))
        base = 80 * np.sin(2 * np.pi * (2**cls) * t[None, :] + phase)
        w = np.stack([base, -base], axis=1) + rng.normal(0, 5.0, (n_per_class, 2, 215))
        windows.append(np.clip(w, -128, 127).astype(np.int8))
        labels.append(np.full(n_per_class, cls, dtype=np.int64))
    return np.concatenate(windows), np.concatenate(labels)


@pytest.fixture(scope="module")
def tensors():
    w, y = blob_windows()
    x = windows_to_tensor(w, 0)
    wv, yv = blob_windows(20, seed=1)
    xv = windows_to_tensor(wv, 0)
    return x, torch.from_numpy(y), xv, torch.from_numpy(yv)


class TestTrainLoop:
    def test_single_epoch_runs_exactly_once(self, tensors):
        x, y, xv, yv = tensors
        result = train(x, y, xv, yv, TrainConfig(epochs=1, seed=0))
        assert result.epochs_run == 1
        assert not result.stopped_early
        assert len(result.history) == 1

    def test_learns_separable_blobs(self, tensors):
        x, y, xv, yv = tensors
        result = train(x, y, xv, yv, TrainConfig(epochs=4, seed=0))
        assert result.float_val_accuracy == 1.0

    def test_deterministic_under_seed(self, tensors):
        x, y, xv, yv = tensors
        a = train(x, y, xv, yv, TrainConfig(epochs=2, seed=5))
        b = train(x, y, xv, yv, TrainConfig(epochs=2, seed=5))
        for ka, kb in zip(a.net.state_dict().values(), b.net.state_dict().values()):
            assert torch.equal(ka, kb)

    def test_early_stop_on_rising_validation_loss(self, tensors):
        x, y, xv, yv = tensors
        # mismatched validation labels: fitting the train blobs drives
        # validation loss up, so the rising streak must trip the patience
        wrong = (yv + 1) % 5
        result = train(x, y, xv, wrong, TrainConfig(epochs=30, patience=2, seed=0))
        assert result.stopped_early
        assert result.epochs_run < 30
        tail = [h["val_loss"] for h in result.history[-3:]]
        assert tail[-1] > tail[-2] > tail[-3]

    def test_restores_best_validation_state(self, tensors):
        x, y, xv, yv = tensors
        wrong = (yv + 1) % 5
        result = train(x, y, xv, wrong, TrainConfig(epochs=10, patience=3, seed=0))
        best = min(h["val_loss"] for h in result.history)
        from wobbletrainer.train import _evaluate

        final_loss, _ = _evaluate(result.net, xv, wrong)
        assert final_loss == pytest.approx(best, rel=1e-6)

    def test_biases_absent_everywhere(self, tensors):
        x, y, xv, yv = tensors
        result = train(x, y, xv, yv, TrainConfig(epochs=1, seed=0))
        for name, _ in result.net.named_parameters():
            assert "bias" not in name
        for module in result.net.modules():
            assert getattr(module, "bias", None) is None
