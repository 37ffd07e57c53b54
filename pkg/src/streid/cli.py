"""Command-line pipeline: simulate, estimate-topology, train, evaluate, sweep.

Every run writes a JSON manifest beside its outputs recording the resolved
configuration, seeds, input paths, output checksums, and wall-clock time,
so any artifact can be traced back to the exact invocation that made it.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import dataio, evaluation, fusion, topology
from .errors import ConfigurationError, FormatError, InputError
from .simulate import SimConfig, ambiguity_report, simulate

METHOD_NAMES = {
    "appearance": evaluation.METHOD_APPEARANCE,
    "product": evaluation.METHOD_PRODUCT,
    "fusion": evaluation.METHOD_FUSION,
}
SWEEP_AXES = ("alpha", "beta", "w", "sigma-fixed")


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seeds: dict
    inputs: dict
    outputs: list
    wall_clock_seconds: float
    created_utc: str

    def write(self, path: Path) -> None:
        doc = {
            "subcommand": self.subcommand,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_seconds": self.wall_clock_seconds,
            "created_utc": self.created_utc,
        }
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _emit_manifest(manifest_path, subcommand, config, seeds, inputs, outputs, started):
    manifest = RunManifest(
        subcommand=subcommand,
        config=config,
        seeds=seeds,
        inputs={name: str(Path(p).resolve()) for name, p in inputs.items()},
        outputs=[
            {"path": str(Path(p).resolve()), "sha256": _sha256(Path(p))} for p in outputs
        ],
        wall_clock_seconds=round(time.monotonic() - started, 3),
        created_utc=datetime.now(timezone.utc).isoformat(),
    )
    manifest.write(Path(manifest_path))


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


@click.group()
def cli():
    """Spatio-temporal vehicle re-identification toolkit."""


@cli.command("estimate-topology")
@click.option("--observations", "observations_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--cameras", required=True, type=int, help="Number of cameras in the network.")
@click.option("--alpha", default=topology.DEFAULT_ALPHA, show_default=True, type=float)
@click.option("--beta", default=topology.DEFAULT_BETA, show_default=True, type=float)
@click.option("--bins", default=300, show_default=True, type=int)
@click.option("--bin-width", default=100, show_default=True, type=int)
@click.option("--fixed-sigma", default=None, type=float,
              help="Override the adaptive bandwidth with one global value.")
def cmd_estimate_topology(observations_path, out_path, cameras, alpha, beta, bins,
                          bin_width, fixed_sigma):
    """Estimate transition-time densities for every ordered camera pair."""
    started = time.monotonic()
    try:
        observations = dataio.load_observations(observations_path)
        geometry = topology.HistogramGeometry(bins, bin_width)
        model = topology.estimate_topology(
            observations, geometry, cameras, alpha, beta, fixed_sigma
        )
        dataio.save_topology(model, out_path)
    except (InputError, ConfigurationError, FormatError) as exc:
        _fail(exc)

    click.echo(f"{'from':>4} {'to':>4} {'pairs':>8} {'sigma':>10}")
    for i in range(cameras):
        for j in range(cameras):
            click.echo(
                f"{i:>4} {j:>4} {int(model.pair_counts[i, j]):>8} "
                f"{float(model.sigmas[i, j]):>10.4f}"
            )
    click.echo(f"wrote {out_path} ({cameras * cameras} entries)")
    _emit_manifest(
        str(out_path) + ".manifest.json",
        "estimate-topology",
        {"cameras": cameras, "alpha": alpha, "beta": beta, "bins": bins,
         "bin_width": bin_width, "fixed_sigma": fixed_sigma},
        {},
        {"observations": observations_path},
        [out_path],
        started,
    )


def _load_eval_inputs(observations_path, similarity_path):
    observations = dataio.load_observations(observations_path)
    similarity = dataio.load_similarity(similarity_path)
    return dataio.Dataset.assemble(observations, similarity)


def _fold_seeds(seed: int, n_folds: int) -> list[tuple[int, int]]:
    children = np.random.SeedSequence(seed).spawn(n_folds)
    out = []
    for child in children:
        pair_ss, train_ss = child.spawn(2)
        out.append(
            (
                int(pair_ss.generate_state(1, np.uint64)[0]),
                int(train_ss.generate_state(1, np.uint64)[0]),
            )
        )
    return out


def _train_folds(dataset, topo, window, folds, epochs, batch, lr, seed, negative_ratio):
    """Train one fusion model per fold on the other folds' pairs."""
    models = []
    losses = []
    for f, (pair_seed, train_seed) in enumerate(_fold_seeds(seed, len(folds))):
        train_ids = [vid for g, ids in enumerate(folds) for vid in ids if g != f]
        pairs = fusion.build_training_pairs(
            dataset.query_observations,
            dataset.gallery_observations,
            dataset.similarity.values,
            topo,
            window,
            train_ids,
            negative_ratio=negative_ratio,
            seed=pair_seed,
        )
        config = fusion.TrainConfig(
            epochs=epochs,
            batch_size=batch,
            learning_rate=lr,
            seed=train_seed,
            negative_ratio=negative_ratio,
        )
        model, trace = fusion.train(pairs, config, window)
        models.append(model)
        losses.append(trace)
    return models, losses


@cli.command("train")
@click.option("--observations", "observations_path", required=True, type=click.Path(exists=True))
@click.option("--similarity", "similarity_path", required=True, type=click.Path(exists=True))
@click.option("--topology", "topology_path", required=True, type=click.Path(exists=True))
@click.option("--window", default=10, show_default=True, type=int)
@click.option("--epochs", default=100, show_default=True, type=int)
@click.option("--batch", default=128, show_default=True, type=int)
@click.option("--lr", default=0.001, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--folds", default=5, show_default=True, type=int)
@click.option("--negative-ratio", default=3, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_train(observations_path, similarity_path, topology_path, window, epochs,
              batch, lr, seed, folds, negative_ratio, out_dir):
    """Train per-fold fusion models from query-gallery pairs."""
    started = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        dataset = _load_eval_inputs(observations_path, similarity_path)
        topo = dataio.load_topology(topology_path)
        fold_ids = evaluation.make_folds(dataset.query_observations, folds, seed)
        models, losses = _train_folds(
            dataset, topo, window, fold_ids, epochs, batch, lr, seed, negative_ratio
        )
    except (InputError, ConfigurationError, FormatError) as exc:
        _fail(exc)

    outputs = []
    folds_path = out / "folds.json"
    folds_path.write_text(
        json.dumps({"seed": seed, "n_folds": folds, "folds": fold_ids}), encoding="utf-8"
    )
    outputs.append(folds_path)
    for f, (model, trace) in enumerate(zip(models, losses)):
        model_path = out / f"fold_{f}_model.json"
        dataio.save_fusion_model(model, model_path)
        loss_path = out / f"fold_{f}_loss.csv"
        with open(loss_path, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss\n")
            for epoch, value in enumerate(trace):
                fh.write(f"{epoch},{value!r}\n")
        outputs.extend([model_path, loss_path])
        click.echo(f"fold {f}: final loss {trace[-1]:.6f} -> {model_path.name}")

    _emit_manifest(
        out / "manifest.json",
        "train",
        {"window": window, "epochs": epochs, "batch": batch, "lr": lr,
         "folds": folds, "negative_ratio": negative_ratio},
        {"seed": seed},
        {"observations": observations_path, "similarity": similarity_path,
         "topology": topology_path},
        outputs,
        started,
    )


@cli.command("evaluate")
@click.option("--method", required=True, type=click.Choice(sorted(METHOD_NAMES)))
@click.option("--observations", "observations_path", required=True, type=click.Path(exists=True))
@click.option("--similarity", "similarity_path", required=True, type=click.Path(exists=True))
@click.option("--topology", "topology_path", default=None, type=click.Path(exists=True))
@click.option("--models", "models_dir", default=None, type=click.Path(exists=True),
              help="Training output directory; required for fusion, reused for fold breakdowns otherwise.")
@click.option("--folds", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_evaluate(method, observations_path, similarity_path, topology_path,
                 models_dir, folds, seed, out_path):
    """Rank galleries per query under one method and report CMC/mAP."""
    started = time.monotonic()
    try:
        dataset = _load_eval_inputs(observations_path, similarity_path)
        topo = dataio.load_topology(topology_path) if topology_path else None
        fold_models = None
        if models_dir is not None:
            folds_doc = json.loads((Path(models_dir) / "folds.json").read_text())
            fold_ids = folds_doc["folds"]
            fold_models = [
                dataio.load_fusion_model(Path(models_dir) / f"fold_{f}_model.json")
                for f in range(len(fold_ids))
            ]
        else:
            if METHOD_NAMES[method] == evaluation.METHOD_FUSION:
                raise InputError("fusion evaluation requires --models")
            fold_ids = evaluation.make_folds(dataset.query_observations, folds, seed)
        report = evaluation.evaluate_method(
            METHOD_NAMES[method],
            dataset.query_observations,
            dataset.gallery_observations,
            dataset.similarity,
            topology=topo,
            fold_models=fold_models,
            folds=fold_ids,
        )
    except (InputError, ConfigurationError, FormatError) as exc:
        _fail(exc)

    Path(out_path).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    click.echo(report.format_table())
    click.echo(f"wrote {out_path}")
    _emit_manifest(
        str(out_path) + ".manifest.json",
        "evaluate",
        {"method": method, "folds": folds},
        {"seed": seed},
        {k: v for k, v in {
            "observations": observations_path,
            "similarity": similarity_path,
            "topology": topology_path,
            "models": models_dir,
        }.items() if v is not None},
        [out_path],
        started,
    )


@cli.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_simulate(config_path, out_dir):
    """Generate a synthetic dataset from a simulation config."""
    started = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        config = SimConfig.from_json_file(config_path)
        output = simulate(config)
    except (InputError, ConfigurationError, FormatError) as exc:
        _fail(exc)

    obs_path = out / "observations.csv"
    csv_path = out / "similarity.csv"
    bin_path = out / "similarity.stsm"
    truth_path = out / "ground_truth.json"
    dataio.save_observations(output.observations, obs_path)
    dataio.save_similarity(output.similarity, csv_path)
    dataio.save_similarity(output.similarity, bin_path, binary=True)
    truth_path.write_text(json.dumps(output.ground_truth_dict(), indent=2), encoding="utf-8")

    report = ambiguity_report(output)
    click.echo(
        f"{len(output.observations)} observations, "
        f"{len(output.similarity.query_ids)} queries x "
        f"{len(output.similarity.gallery_ids)} galleries"
    )
    if not report.degenerate:
        click.echo(
            f"appearance means: within-id {report.within_id_mean:.3f}, "
            f"within-cluster {report.within_cluster_mean:.3f}, "
            f"cross-cluster {report.cross_cluster_mean:.3f}; "
            f"top-1 same-cluster confusions {report.top1_same_cluster_confusions:.3f}"
        )
    else:
        click.echo("appearance cluster statistics degenerate (no same-cluster pairs)")

    _emit_manifest(
        out / "manifest.json",
        "simulate",
        config.to_json_dict(),
        {"seed": config.seed},
        {"config": config_path},
        [obs_path, csv_path, bin_path, Path(str(bin_path) + ".ids.json"), truth_path],
        started,
    )


def _parse_grid(grid_args) -> dict[str, list]:
    axes: dict[str, list] = {}
    for arg in grid_args:
        name, sep, raw = arg.partition("=")
        name = name.strip().lower()
        if not sep or name not in SWEEP_AXES:
            raise click.UsageError(
                f"bad grid axis {arg!r}; expected one of "
                + ", ".join(f"{a}=v1,v2,..." for a in SWEEP_AXES)
            )
        values = [v.strip() for v in raw.split(",") if v.strip()]
        if not values:
            raise click.UsageError(f"grid axis {name!r} has no values")
        if name == "w":
            axes[name] = [int(v) for v in values]
        elif name == "sigma-fixed":
            axes[name] = [v if v == "adaptive" else float(v) for v in values]
        else:
            axes[name] = [float(v) for v in values]
    return axes


@cli.command("sweep")
@click.option("--grid", "grid_args", multiple=True, required=True,
              help="Axis like alpha=5,10,20 or w=0,2,10 or sigma-fixed=1,10,adaptive; repeatable.")
@click.option("--observations", "observations_path", required=True, type=click.Path(exists=True))
@click.option("--similarity", "similarity_path", required=True, type=click.Path(exists=True))
@click.option("--cameras", required=True, type=int)
@click.option("--alpha", default=topology.DEFAULT_ALPHA, show_default=True, type=float)
@click.option("--beta", default=topology.DEFAULT_BETA, show_default=True, type=float)
@click.option("--window", default=10, show_default=True, type=int)
@click.option("--bins", default=300, show_default=True, type=int)
@click.option("--bin-width", default=100, show_default=True, type=int)
@click.option("--epochs", default=100, show_default=True, type=int)
@click.option("--batch", default=128, show_default=True, type=int)
@click.option("--lr", default=0.001, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--folds", default=5, show_default=True, type=int)
@click.option("--negative-ratio", default=3, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_sweep(grid_args, observations_path, similarity_path, cameras, alpha, beta,
              window, bins, bin_width, epochs, batch, lr, seed, folds,
              negative_ratio, out_dir):
    """Run the full pipeline per grid point and tabulate rank-1/5 and mAP."""
    started = time.monotonic()
    axes = _parse_grid(grid_args)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    try:
        dataset = _load_eval_inputs(observations_path, similarity_path)
        geometry = topology.HistogramGeometry(bins, bin_width)
        fold_ids = evaluation.make_folds(dataset.query_observations, folds, seed)
    except (InputError, ConfigurationError, FormatError) as exc:
        _fail(exc)

    names = [a for a in SWEEP_AXES if a in axes]
    rows = []
    for point in itertools.product(*(axes[a] for a in names)):
        settings = dict(zip(names, point))
        point_alpha = settings.get("alpha", alpha)
        point_beta = settings.get("beta", beta)
        point_window = settings.get("w", window)
        sigma = settings.get("sigma-fixed")
        fixed_sigma = None if sigma in (None, "adaptive") else float(sigma)
        try:
            topo = topology.estimate_topology(
                dataset.train_observations, geometry, cameras,
                point_alpha, point_beta, fixed_sigma,
            )
            models, _ = _train_folds(
                dataset, topo, point_window, fold_ids, epochs, batch, lr, seed,
                negative_ratio,
            )
            report = evaluation.evaluate_method(
                evaluation.METHOD_FUSION,
                dataset.query_observations,
                dataset.gallery_observations,
                dataset.similarity,
                topology=topo,
                fold_models=models,
                folds=fold_ids,
            )
        except (InputError, ConfigurationError, FormatError) as exc:
            _fail(exc)
        row = {name: settings[name] for name in names}
        row.update(
            rank1=report.rank_accuracy[1],
            rank5=report.rank_accuracy[5],
            map=report.mean_ap,
        )
        rows.append(row)
        shown = ", ".join(f"{k}={settings[k]}" for k in names)
        click.echo(
            f"{shown}: rank1 {report.rank_accuracy[1]:.4f} "
            f"rank5 {report.rank_accuracy[5]:.4f} mAP {report.mean_ap:.4f}"
        )

    sweep_path = out / "sweep.csv"
    with open(sweep_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names + ["rank1", "rank5", "mAP"]) + "\n")
        for row in rows:
            fields = [str(row[n]) for n in names]
            fields += [repr(row["rank1"]), repr(row["rank5"]), repr(row["map"])]
            fh.write(",".join(fields) + "\n")
    click.echo(f"wrote {sweep_path}")

    _emit_manifest(
        out / "manifest.json",
        "sweep",
        {"grid": {k: [str(v) for v in vs] for k, vs in axes.items()},
         "cameras": cameras, "alpha": alpha, "beta": beta, "window": window,
         "bins": bins, "bin_width": bin_width, "epochs": epochs, "batch": batch,
         "lr": lr, "folds": folds, "negative_ratio": negative_ratio},
        {"seed": seed},
        {"observations": observations_path, "similarity": similarity_path},
        [sweep_path],
        started,
    )


def main():
    cli()


if __name__ == "__main__":
    main()
