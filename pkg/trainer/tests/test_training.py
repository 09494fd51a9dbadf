import json
import subprocess

import numpy as np
import pytest
import torch

from eev_train import data as ds
from eev_train import pgd
from eev_train.bounds import bound_stats
from eev_train.export import accuracy, predictions, save_model, to_model_dict
from eev_train.layers import set_grad_cancel, sparsity
from eev_train.network import build_model, recompute_bn_stats
from eev_train.train import TrainConfig, train


@pytest.fixture(scope="module")
def digits():
    (ti, tl), (vi, vl) = ds.load_digits_surrogate()
    return ds.to_torch(ti, tl) + ds.to_torch(vi, vl)


def small_config(**kw):
    base = dict(epochs=8, quant_step=0.61, mask_weight_decay=1e-5, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# --- PGD ---------------------------------------------------------------------------

def test_pgd_zero_steps_or_eps_is_identity(digits):
    x_train, y_train, *_ = digits
    torch.manual_seed(0)
    net = build_model("mlp-small", (8, 8, 1), 0.61)
    x, y = x_train[:16], y_train[:16]
    assert torch.equal(pgd.pgd_attack(net, x, y, eps=0.1, steps=0), x)
    assert torch.equal(pgd.pgd_attack(net, x, y, eps=0.0, steps=5), x)


def test_pgd_respects_ball_and_range(digits):
    x_train, y_train, *_ = digits
    torch.manual_seed(0)
    net = build_model("mlp-small", (8, 8, 1), 0.61)
    x, y = x_train[:32], y_train[:32]
    adv = pgd.pgd_attack(net, x, y, eps=0.07, steps=5)
    assert float((adv - x).abs().max()) <= 0.07 + 1e-12
    assert float(adv.min()) >= 0 and float(adv.max()) <= 1


def test_select_alpha_single_candidate(digits):
    x_train, y_train, *_ = digits
    torch.manual_seed(0)
    net = build_model("mlp-small", (8, 8, 1), 0.61)
    batches = [(x_train[:32], y_train[:32])]
    assert pgd.select_alpha(net, batches, 0.1, 3, grid=(1.8,)) == 1.8


def test_select_alpha_tie_break_smallest():
    # constant-output model: every alpha attacks equally well (not at all)
    torch.manual_seed(0)
    net = build_model("mlp-small", (4, 4, 1), 0.61)
    with torch.no_grad():
        for block in net.blocks:
            block.layer.mask.fill_(-1.0)  # all weights masked to zero
    x = torch.rand(16, 1, 4, 4, dtype=torch.float64)
    y = torch.zeros(16, dtype=torch.long)
    alpha = pgd.select_alpha(net, [(x, y)], 0.1, 3, grid=(0.6, 1.0, 1.4))
    assert alpha == 0.6


def test_select_alpha_deterministic(digits):
    x_train, y_train, *_ = digits
    batches = [(x_train[:64], y_train[:64]), (x_train[64:128],
                                              y_train[64:128])]

    def run():
        torch.manual_seed(3)
        net = build_model("mlp-small", (8, 8, 1), 0.61)
        return pgd.select_alpha(net, batches, 0.15, 4)

    assert run() == run()


# --- training dynamics ------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_pair(digits):
    """(undefended, adversarially trained) nets on the same seed."""
    x_train, y_train, x_test, y_test = digits
    plain, _ = train(small_config(), "mlp-small", (8, 8, 1),
                     x_train, y_train, x_test, y_test)
    adv, _ = train(small_config(eps=0.15, eps_ramp_epochs=4,
                                pgd_steps_ramp_epochs=2),
                   "mlp-small", (8, 8, 1), x_train, y_train, x_test, y_test)
    return digits, plain, adv


def test_training_learns(trained_pair):
    (x_train, y_train, x_test, y_test), plain, _ = trained_pair
    assert accuracy(plain, x_test, y_test) > 0.8


def test_adversarial_training_reduces_attack_success(trained_pair):
    (x_train, y_train, x_test, y_test), plain, adv = trained_pair
    batches = [(x_test[:120], y_test[:120])]
    set_grad_cancel(plain, alpha=1.0, mode="tanh")
    set_grad_cancel(adv, alpha=1.0, mode="tanh")
    rate_plain = pgd.attack_success_rate(plain, batches, eps=0.15, steps=10)
    rate_adv = pgd.attack_success_rate(adv, batches, eps=0.15, steps=10)
    assert rate_plain > rate_adv


def test_mask_decay_two_point_sparsity(digits):
    x_train, y_train, x_test, y_test = digits
    low, _ = train(small_config(mask_weight_decay=1e-6), "mlp-small",
                   (8, 8, 1), x_train, y_train, x_test, y_test)
    high, _ = train(small_config(mask_weight_decay=3e-3), "mlp-small",
                    (8, 8, 1), x_train, y_train, x_test, y_test)
    assert sparsity(high) > sparsity(low)


def test_cbd_direction_mini(digits):
    # bound decay is Adam-step-bounded: needs the faster desk-scale lr to
    # show up in a short run (full calibration lives in the acceptance test)
    x_train, y_train, x_test, y_test = digits
    dials = dict(epochs=120, lr=1e-3, lr_halve_epoch=100)
    off, _ = train(small_config(**dials), "mlp-small", (8, 8, 1),
                   x_train, y_train, x_test, y_test)
    on, _ = train(small_config(cbd_eta=5e-4, **dials), "mlp-small",
                  (8, 8, 1), x_train, y_train, x_test, y_test)
    stats_off = bound_stats(to_model_dict(off))
    stats_on = bound_stats(to_model_dict(on))
    assert stats_on["mean"] < stats_off["mean"]


def test_training_deterministic_given_seed(digits):
    x_train, y_train, x_test, y_test = digits
    a, _ = train(small_config(epochs=3), "mlp-small", (8, 8, 1),
                 x_train, y_train, x_test, y_test)
    b, _ = train(small_config(epochs=3), "mlp-small", (8, 8, 1),
                 x_train, y_train, x_test, y_test)
    assert json.dumps(to_model_dict(a), sort_keys=True) \
        == json.dumps(to_model_dict(b), sort_keys=True)


def test_bn_recompute_is_exact(digits):
    x_train, y_train, x_test, y_test = digits
    torch.manual_seed(4)
    net = build_model("mlp-small", (8, 8, 1), 0.61)
    recompute_bn_stats(net, x_train[:512])
    z = net.pre_bn_values(x_train[:512], 0).double()
    bn = net.blocks[0].bn
    assert torch.allclose(bn.running_mean, z.mean(dim=0), atol=1e-10)
    assert torch.allclose(bn.running_var,
                          z.var(dim=0, unbiased=False), atol=1e-10)


# --- export interop (through the verifier's external interfaces only) --------------------

def _verify_batch_cli(model_path, npz_path, eps, timeout, out_path,
                      extra=()):
    return subprocess.run(
        ["eev", "verify-batch", "-m", str(model_path), "-d", str(npz_path),
         "--eps", str(eps), "--timeout", str(timeout),
         "--json", str(out_path), *extra],
        capture_output=True, text=True, timeout=1200)


def test_export_predictions_match_verifier(trained_pair, tmp_path):
    (x_train, y_train, x_test, y_test), plain, _ = trained_pair
    model_path = tmp_path / "m.json"
    save_model(plain, model_path)
    batch = torch.cat([x_test, x_train[:1000 - len(x_test)]])
    n = 1000
    preds = predictions(plain, batch[:n])
    images = batch[:n].numpy().transpose(0, 2, 3, 1)
    npz = tmp_path / "own_preds.npz"
    ds.save_npz(npz, images, preds)
    out = tmp_path / "report.json"
    res = _verify_batch_cli(model_path, npz, eps=0.0, timeout=30, out_path=out)
    assert res.returncode == 0, res.stderr
    report = json.loads(out.read_text())
    # eps=0 with labels = our own predictions: the verifier's exact argmax
    # must agree with the trainer's double-precision forward on every image
    assert report["aggregates"]["natural_accuracy"] == 1.0
    assert report["aggregates"]["images"] == n


def test_exported_file_loads_and_round_trips(trained_pair, tmp_path):
    _, plain, adv = trained_pair
    for net in (plain, adv):
        p = tmp_path / "m.json"
        save_model(net, p)
        data = json.loads(p.read_text())
        assert data["quant_step"] == 0.61
        assert data["layers"][-1]["is_output"] is True
        assert len(data["layers"][-1]["bn"]["gamma"]) == 1
        for layer in data["layers"]:
            w = np.asarray(layer["weight_sign"])
            assert set(np.unique(w)) <= {-1, 0, 1}


def test_ternary_baseline_mode(digits):
    # threshold well below the init std so training starts mostly dense
    x_train, y_train, x_test, y_test = digits
    net, _ = train(small_config(epochs=60, lr=1e-3, lr_halve_epoch=60,
                                ternary_threshold=0.002,
                                mask_weight_decay=1e-5),
                   "mlp-small", (8, 8, 1), x_train, y_train, x_test, y_test)
    assert accuracy(net, x_test, y_test) > 0.5
    assert 0.0 < sparsity(net) < 1.0
    d = to_model_dict(net)
    w = np.asarray(d["layers"][0]["weight_sign"])
    assert set(np.unique(w)) <= {-1, 0, 1}


def test_verifier_in_the_loop_path_runs(digits, tmp_path):
    # optional flag: harvest verifier counterexamples in the last epochs;
    # exercises the subprocess exchange end to end
    x_train, y_train, x_test, y_test = digits
    cfg = small_config(epochs=3, eps=0.12, eps_ramp_epochs=1,
                       pgd_steps_ramp_epochs=1, verifier_adv=True,
                       verifier_adv_epochs=2)
    net, hist = train(cfg, "mlp-small", (8, 8, 1),
                      x_train[:256], y_train[:256], x_test, y_test)
    assert len(hist) == 3  # completed despite shelling out per batch


def test_multichannel_mlp_export_permutation(tmp_path):
    # C>1 input to a dense first layer: exported columns must be permuted
    # from torch's channel-first flatten to the verifier's HWC layout;
    # prediction agreement catches any layout mistake
    torch.manual_seed(9)
    from eev_train.network import build_model
    net = build_model("mlp-small", (3, 3, 2), 0.5)
    net.eval()
    model_path = tmp_path / "c2.json"
    save_model(net, model_path)
    rng = np.random.default_rng(2)
    images = rng.uniform(0, 1, (200, 3, 3, 2))
    x = torch.from_numpy(images.transpose(0, 3, 1, 2)).double()
    preds = predictions(net, x)
    npz = tmp_path / "c2.npz"
    ds.save_npz(npz, images, preds)
    out = tmp_path / "c2_report.json"
    res = _verify_batch_cli(model_path, npz, eps=0.0, timeout=30,
                            out_path=out)
    assert res.returncode == 0, res.stderr
    report = json.loads(out.read_text())
    assert report["aggregates"]["natural_accuracy"] == 1.0


def test_multichannel_conv_export_agreement(tmp_path):
    # CIFAR-style C=3 conv input: layouts agree without any permutation
    torch.manual_seed(10)
    from eev_train.network import build_model
    net = build_model("conv-tiny", (6, 6, 3), 0.5)
    net.eval()
    model_path = tmp_path / "c3.json"
    save_model(net, model_path)
    rng = np.random.default_rng(3)
    images = rng.uniform(0, 1, (200, 6, 6, 3))
    x = torch.from_numpy(images.transpose(0, 3, 1, 2)).double()
    preds = predictions(net, x)
    npz = tmp_path / "c3.npz"
    ds.save_npz(npz, images, preds)
    out = tmp_path / "c3_report.json"
    res = _verify_batch_cli(model_path, npz, eps=0.0, timeout=30,
                            out_path=out)
    assert res.returncode == 0, res.stderr
    report = json.loads(out.read_text())
    assert report["aggregates"]["natural_accuracy"] == 1.0
