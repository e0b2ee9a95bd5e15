import numpy as np
import pytest

from dpssm.degradation import make_clean_images, make_corpus
from dpssm.losses import psnr
from dpssm.network import DpmambaNet
from dpssm.trainer import TOY_CLASSES, Toy1dModel, Toy1dTask, overfit_2d, train_toy1d


def test_zero_steps_models_agree():
    rep = train_toy1d(seed=3, steps=0, held_out_per_class=10)
    assert rep["mse_modulated"] == rep["mse_fixed"]
    assert set(rep["mse_modulated_per_class"]) == set(TOY_CLASSES)


def test_short_run_deterministic():
    a = train_toy1d(seed=1, steps=5, held_out_per_class=5)
    b = train_toy1d(seed=1, steps=5, held_out_per_class=5)
    assert a["mse_modulated"] == b["mse_modulated"] and a["loss_history"] == b["loss_history"]
    assert len(a["loss_history"]["fixed"]) == 5


def test_fixed_model_excludes_modulation_params():
    m = Toy1dModel(seed=0)
    assert set(m.trainable(True)) > set(m.trainable(False))
    assert not any("heads" in k for k in m.trainable(False))
    lti = Toy1dModel(seed=0, selective=False)
    assert "dt_proj.weight" not in lti.trainable(True)


def test_task_batch_shapes_and_labels():
    task = Toy1dTask(seed=0)
    noisy, clean, labels = task.batch(np.random.default_rng(0), 3)
    assert noisy.shape == clean.shape and len(labels) == noisy.shape[0] == 3 * len(TOY_CLASSES)
    assert task.embed(labels).shape == (len(labels), task.d_emb)


def _samples(size=16):
    clean = make_clean_images(2, size, 0)
    return make_corpus(clean, [{"label": "noise", "noise_sigma": 0.1}], 2, 0)


def test_overfit_zero_steps_is_identity_psnr():
    s = _samples()
    net = DpmambaNet((4, 8, 16), 1, 4, 16, seed=0)
    rep = overfit_2d(net, s, steps=0)
    ref = np.mean([psnr(x.clean, x.degraded) for x in s])
    assert rep["psnr_final"] == pytest.approx(ref, abs=1e-9)


def test_overfit_small_gains():
    net = DpmambaNet((4, 8, 16), 1, 4, 16, seed=0)
    rep = overfit_2d(net, _samples(), steps=40, lr=3e-3)
    assert rep["psnr_final"] > rep["psnr_init"] + 0.5
