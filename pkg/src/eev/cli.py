"""Command-line interface.

Exit codes in single-query mode: 10 counterexample, 20 robust, 30 timeout;
batch runs exit 0 once the report is written. Usage errors exit 2. The
EEV_SEED environment variable overrides the RNG seed everywhere.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import backends, datasets, gen, model as bnn, verifier as vf
from .encoder import Encoder
from .solver import SolverConfig, from_system

STATUS_EXIT = {vf.COUNTEREXAMPLE: 10, vf.ROBUST: 20, vf.TIMEOUT: 30}


def _seed(cli_seed: int | None) -> int:
    env = os.environ.get("EEV_SEED")
    if env is not None:
        return int(env)
    return 0 if cli_seed is None else cli_seed


def _load_image(path, index: int):
    p = str(path)
    if p.endswith(".npy"):
        return np.load(p), None
    images, labels = datasets.load_dataset(p)
    if index >= len(images):
        raise click.UsageError(
            f"index {index} out of range for {len(images)} images")
    return images[index], int(labels[index])


def _resolve_label(model, image, label, derived):
    if label is not None:
        return label
    if derived is not None:
        return derived
    q = bnn.quantize_input(model, image)
    return bnn.infer(model, q).predicted


seed_option = click.option("--seed", type=int, default=None,
                           help="Solver seed (EEV_SEED overrides).")


@click.group()
def main():
    """Exact robustness verification of binarized networks."""


@main.command()
@click.option("-m", "--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("-i", "--image", "image_path", required=True,
              type=click.Path(exists=True),
              help=".npy image, or a dataset (.npz / IDX) with --index.")
@click.option("--index", type=int, default=0, show_default=True)
@click.option("--label", type=int, default=None,
              help="Source class; defaults to the dataset label or the "
                   "clean prediction.")
@click.option("--eps", type=float, required=True)
@click.option("--timeout", type=float, default=None)
@click.option("--json", "json_out", type=click.Path(), default=None,
              help="Write the outcome as JSON to this path ('-' = stdout).")
@seed_option
def verify(model_path, image_path, index, label, eps, timeout, json_out,
           seed):
    """Verify robustness of one image; exit 10/20/30 per verdict."""
    model = bnn.load_model(model_path)
    image, derived = _load_image(image_path, index)
    label = _resolve_label(model, image, label, derived)
    out = vf.verify_one(model, image, label, eps, timeout=timeout,
                        solver_config=SolverConfig(seed=_seed(seed)))
    _report_single(out, label, eps, json_out)
    sys.exit(STATUS_EXIT[out.status])


def _report_single(out, label, eps, json_out):
    if out.status == vf.COUNTEREXAMPLE:
        cex = out.counterexample
        click.echo(f"COUNTEREXAMPLE class {label} -> {cex.predicted} "
                   f"(build {out.build_time:.3f}s, solve {out.solve_time:.3f}s)")
    else:
        click.echo(f"{out.status} (build {out.build_time:.3f}s, "
                   f"solve {out.solve_time:.3f}s)")
    if json_out:
        payload = {
            "status": out.status,
            "label": int(label),
            "eps": float(eps),
            "build_time": out.build_time,
            "solve_time": out.solve_time,
        }
        if out.counterexample is not None:
            payload["counterexample"] = out.counterexample.to_dict(eps)
        text = json.dumps(payload, indent=1, sort_keys=True)
        if json_out == "-":
            click.echo(text)
        else:
            with open(json_out, "w") as fh:
                fh.write(text + "\n")


@main.command("verify-ensemble")
@click.option("-m", "--model", "model_paths", required=True, multiple=True,
              type=click.Path(exists=True),
              help="Repeat for each ensemble member.")
@click.option("-i", "--image", "image_path", required=True,
              type=click.Path(exists=True))
@click.option("--index", type=int, default=0, show_default=True)
@click.option("--label", type=int, default=None)
@click.option("--eps", type=float, required=True)
@click.option("--timeout", type=float, default=None)
@click.option("--json", "json_out", type=click.Path(), default=None)
@seed_option
def verify_ensemble(model_paths, image_path, index, label, eps, timeout,
                    json_out, seed):
    """Verify an all-must-agree ensemble on one image."""
    models = [bnn.load_model(p) for p in model_paths]
    image, derived = _load_image(image_path, index)
    label = _resolve_label(models[0], image, label, derived)
    out = vf.verify_one(models, image, label, eps, timeout=timeout,
                        solver_config=SolverConfig(seed=_seed(seed)),
                        ensemble=True)
    _report_single(out, label, eps, json_out)
    sys.exit(STATUS_EXIT[out.status])


@main.command("verify-batch")
@click.option("-m", "--model", "model_paths", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("-d", "--dataset", "dataset_path", required=True,
              type=click.Path(exists=True))
@click.option("--count", type=int, default=None,
              help="Verify only the first COUNT images.")
@click.option("--eps", type=float, required=True)
@click.option("--timeout", type=float, default=None)
@click.option("--parallelism", type=int, default=1, show_default=True)
@click.option("--json", "json_out", type=click.Path(), default=None)
@seed_option
def verify_batch_cmd(model_paths, dataset_path, count, eps, timeout,
                     parallelism, json_out, seed):
    """Verify a dataset and print the aggregate table; exit 0."""
    models = [bnn.load_model(p) for p in model_paths]
    images, labels = datasets.load_dataset(dataset_path)
    if count is not None:
        images, labels = images[:count], labels[:count]
    report = vf.verify_batch(models if len(models) > 1 else models[0],
                             images, labels, eps, timeout=timeout,
                             parallelism=parallelism, seed=_seed(seed))
    click.echo(report.table())
    if json_out:
        text = report.to_json()
        if json_out == "-":
            click.echo(text)
        else:
            with open(json_out, "w") as fh:
                fh.write(text + "\n")


@main.command()
@click.option("-m", "--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("-i", "--image", "image_path", required=True,
              type=click.Path(exists=True))
@click.option("--index", type=int, default=0, show_default=True)
@click.option("--label", type=int, default=None)
@click.option("--eps", type=float, required=True)
@click.option("-o", "--out", "out_path", required=True, type=click.Path())
@click.option("--format", "fmt", default="native", show_default=True,
              type=click.Choice(["native", "cnf", "opb"]))
def encode(model_path, image_path, index, label, eps, out_path, fmt):
    """Export the encoded query in the native, DIMACS or OPB format."""
    model = bnn.load_model(model_path)
    image, derived = _load_image(image_path, index)
    label = _resolve_label(model, image, label, derived)
    system = Encoder().encode_query(model, image, eps, label)
    if fmt == "native":
        backends.write_native(system, out_path)
    elif fmt == "cnf":
        backends.write_dimacs(backends.cnf_lower(system), out_path)
    else:
        backends.write_opb(system, out_path)
    click.echo(f"wrote {fmt} encoding ({system.num_vars} vars, "
               f"{system.num_clauses} clauses, {system.num_cards} "
               f"cardinality constraints) to {out_path}")


@main.command("check-cex")
@click.option("-m", "--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--cex", "cex_path", required=True, type=click.Path(exists=True))
@click.option("-i", "--image", "image_path", required=True,
              type=click.Path(exists=True),
              help="Original image the perturbation bound refers to.")
@click.option("--index", type=int, default=0, show_default=True)
def check_cex(model_path, cex_path, image_path, index):
    """Exit 0 iff the counterexample misclassifies within its bound."""
    model = bnn.load_model(model_path)
    image, _ = _load_image(image_path, index)
    with open(cex_path) as fh:
        cex = json.load(fh)
    q = np.asarray(cex["input_q"], dtype=np.int64)
    eps = float(cex["eps"])
    label = int(cex["source_class"])
    flat = np.asarray(image, dtype=np.float64).reshape(-1)
    in_ball = all(
        lo <= q[p] <= hi
        for p, (lo, hi) in enumerate(
            vf.pixel_interval(x, eps, model.quant_step) for x in flat))
    misclassified = bnn.infer(model, q).misclassifies(label)
    if in_ball and misclassified:
        click.echo("valid counterexample")
        sys.exit(0)
    click.echo(f"INVALID counterexample (in_ball={in_ball}, "
               f"misclassifies={misclassified})")
    sys.exit(1)


@main.command()
@click.option("-m", "--model", "model_path", type=click.Path(exists=True),
              default=None, help="Benchmark this model (default: generated).")
@click.option("-d", "--dataset", "dataset_path", type=click.Path(exists=True),
              default=None)
@click.option("--queries", type=int, default=20, show_default=True)
@click.option("--eps", type=float, default=None,
              help="Perturbation bound (default: per-query calibrated).")
@click.option("--timeout", type=float, default=None)
@click.option("--json", "json_out", type=click.Path(), default=None)
@seed_option
def bench(model_path, dataset_path, queries, eps, timeout, json_out, seed):
    """Compare native cardinality solving against the CNF lowering."""
    rng = np.random.default_rng(_seed(seed))
    if model_path is not None:
        model = bnn.load_model(model_path)
    else:
        model = gen.random_bench_model(rng)
    qs = []
    if dataset_path is not None:
        images, labels = datasets.load_dataset(dataset_path)
        for i in range(min(queries, len(images))):
            e = eps if eps is not None else gen.calibrate_eps(
                model, images[i].reshape(-1), target_steps=12)
            qs.append((images[i].reshape(-1), int(labels[i]), e))
    else:
        while len(qs) < queries:
            q = gen.random_correct_query(rng, model, target_steps=12)
            if q is None:
                raise click.ClickException("model yields no usable queries")
            x0, label, e = q
            qs.append((x0, label, eps if eps is not None else e))
    report = vf.bench_compare(model, qs, timeout=timeout, seed=_seed(seed))
    click.echo(report.table())
    if not report.agreement():
        raise click.ClickException("backend verdicts disagree")
    if json_out:
        payload = {"summary": report.summary(), "rows": report.rows}
        text = json.dumps(payload, indent=1, sort_keys=True)
        if json_out == "-":
            click.echo(text)
        else:
            with open(json_out, "w") as fh:
                fh.write(text + "\n")


@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--timeout", type=float, default=None)
@seed_option
def solve(path, timeout, seed):
    """Solve a native .eevc constraint file; exit 10 SAT / 20 UNSAT / 30."""
    system = backends.read_native(path)
    solver = from_system(system, SolverConfig(seed=_seed(seed)))
    res = solver.solve(max_seconds=timeout)
    click.echo(f"{res.status} (decisions {res.stats['decisions']}, "
               f"conflicts {res.stats['conflicts']}, "
               f"{res.stats['solve_time']:.3f}s)")
    sys.exit({"SAT": 10, "UNSAT": 20, "UNKNOWN": 30}[res.status])


@main.command()
@click.option("-m", "--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("-i", "--image", "image_path", required=True,
              type=click.Path(exists=True))
@click.option("--index", type=int, default=0, show_default=True)
@click.option("--label", type=int, default=None)
@click.option("--eps", type=float, required=True)
@click.option("--max-points", type=int, default=1 << 20, show_default=True)
def oracle(model_path, image_path, index, label, eps, max_points):
    """Brute-force ground truth over the whole perturbation grid."""
    model = bnn.load_model(model_path)
    image, derived = _load_image(image_path, index)
    label = _resolve_label(model, image, label, derived)
    try:
        out = vf.brute_force_verify(model, image, label, eps,
                                    max_points=max_points)
    except vf.OracleGuardError as exc:
        raise click.ClickException(str(exc))
    _report_single(out, label, eps, None)
    sys.exit(STATUS_EXIT[out.status])


if __name__ == "__main__":
    main()
