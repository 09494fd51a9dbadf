"""Training CLI: eev-train --arch mlp --dataset mnist --eps 0.1 --out m.json"""

from __future__ import annotations

import os

import click

from . import data as ds
from .export import accuracy, save_model
from .network import ARCHS
from .train import TrainConfig, train


@click.command()
@click.option("--arch", type=click.Choice(sorted(ARCHS)), required=True)
@click.option("--dataset", type=click.Choice(["mnist", "cifar10", "digits"]),
              required=True,
              help="'digits' is the offline surrogate (bundled 8x8 images).")
@click.option("--data-dir", type=click.Path(), default=None,
              help="Directory with the dataset files (MNIST IDX or CIFAR10 "
                   "binary batches). Defaults to data/<dataset> or "
                   "$EEV_MNIST_DIR.")
@click.option("--eps", type=float, default=0.0, show_default=True,
              help="Adversarial training perturbation bound.")
@click.option("--cbd-eta", type=float, default=0.0, show_default=True)
@click.option("--cbd-tau", type=float, default=5.0, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--quant-step", type=float, default=None,
              help="Input grid step (default 0.61 MNIST/digits, 0.064 CIFAR10).")
@click.option("--mask-wd", type=float, default=None,
              help="Mask weight decay (default 1e-5 for MLPs, 1e-7 for conv).")
@click.option("--grad-mode", type=click.Choice(["adaptive", "tanh", "hard"]),
              default="adaptive", show_default=True)
@click.option("--sparsifier", type=click.Choice(["binmask", "ternary"]),
              default="binmask", show_default=True,
              help="'ternary' is the |W|>=T baseline (ablation only).")
@click.option("--ternary-threshold", type=float, default=0.05,
              show_default=True)
@click.option("--subset", type=int, default=None,
              help="Train on only the first N images (desk-scale runs).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--verifier-adv", is_flag=True, default=False,
              help="Harvest verifier counterexamples in the last epochs "
                   "(shells out to the eev CLI).")
@click.option("--report-pgd", is_flag=True, default=False,
              help="Report 100-step PGD accuracy on the test set (first "
                   "1000 images) after training.")
@click.option("--out", type=click.Path(), required=True)
@click.option("-v", "--verbose", is_flag=True, default=False)
def main(arch, dataset, data_dir, eps, cbd_eta, cbd_tau, epochs, quant_step,
         mask_wd, grad_mode, sparsifier, ternary_threshold, subset, seed,
         verifier_adv, report_pgd, out, verbose):
    """Train a sparse binarized network and export it for the verifier."""
    if dataset == "mnist":
        dirname = data_dir or ds.mnist_dir()
        if dirname is None:
            raise click.ClickException(
                "MNIST files not found; set --data-dir or EEV_MNIST_DIR, or "
                "use --dataset digits for the offline surrogate")
        train_i, train_l = ds.load_mnist(dirname, "train")
        test_i, test_l = ds.load_mnist(dirname, "test")
        step = quant_step if quant_step is not None else 0.61
    elif dataset == "cifar10":
        dirname = data_dir or os.path.join("data", "cifar10")
        train_i, train_l = ds.load_cifar10(dirname, "train")
        test_i, test_l = ds.load_cifar10(dirname, "test")
        step = quant_step if quant_step is not None else 0.064
    else:
        (train_i, train_l), (test_i, test_l) = ds.load_digits_surrogate()
        step = quant_step if quant_step is not None else 0.61
    if subset is not None:
        train_i, train_l = train_i[:subset], train_l[:subset]
    x_train, y_train = ds.to_torch(train_i, train_l)
    x_test, y_test = ds.to_torch(test_i, test_l)
    if mask_wd is None:
        mask_wd = 1e-5 if arch.startswith("mlp") else 1e-7
    config = TrainConfig(epochs=epochs, eps=eps, cbd_eta=cbd_eta,
                         cbd_tau=cbd_tau, quant_step=step,
                         mask_weight_decay=mask_wd, grad_mode=grad_mode,
                         seed=seed, verifier_adv=verifier_adv,
                         ternary_threshold=(ternary_threshold
                                            if sparsifier == "ternary"
                                            else None))
    input_shape = (train_i.shape[1], train_i.shape[2], train_i.shape[3])
    num_classes = int(max(train_l.max(), test_l.max())) + 1
    net, history = train(config, arch, input_shape, x_train, y_train,
                         x_test, y_test, num_classes=num_classes,
                         verbose=verbose)
    save_model(net, out)
    acc = accuracy(net, x_test, y_test)
    click.echo(f"test accuracy {acc:.4f}; model written to {out}")
    if report_pgd:
        from . import pgd
        n = min(1000, len(x_test))
        pacc = pgd.pgd_accuracy(net, x_test[:n], y_test[:n], eps,
                                config.pgd_eval_steps)
        click.echo(f"pgd accuracy ({config.pgd_eval_steps} steps, "
                   f"eps={eps}, {n} images) {pacc:.4f}")


if __name__ == "__main__":
    main()
