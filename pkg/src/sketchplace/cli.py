"""Command-line entry point.

Commands: make-scene, fit, solve, bench, compare-density, serve. Every
command honors --seed, prints numbers with 6 significant digits, writes
machine-parseable delimited reports, and emits a run manifest. Errors exit
with a class-specific nonzero code and a single parseable stderr line
(``error code=<code> message="..."``); see errors.py for the code table.
"""

from __future__ import annotations

import functools
import json
import os
import sys
import time
from dataclasses import asdict, replace

import click
import numpy as np

from . import baselines, datasets, evaluate, geometry, kinematics, manifest, pipeline, solver
from .energymodel import TrainConfig, load_model, nce_fit, save_model
from .errors import ConfigurationError, InvalidSceneError, SketchPlaceError


def fmt(v) -> str:
    return f"{v:.6g}"


def _fail(exc: SketchPlaceError):
    msg = str(exc).replace('"', "'")
    click.echo(f'error code={exc.code} message="{msg}"', err=True)
    sys.exit(exc.exit_code)


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SketchPlaceError as exc:
            _fail(exc)
        except OSError as exc:
            click.echo(f'error code=io message="{exc}"', err=True)
            sys.exit(15)
    return wrapper


def _load_scene_arg(scene_arg: str, seed: int) -> datasets.SceneSpec:
    """Scene file path, or a builtin scene name."""
    if os.path.exists(scene_arg):
        return datasets.load_scene(scene_arg)
    if scene_arg in datasets.SCENE_KINDS:
        return datasets.generate_scene(scene_arg, seed=seed)
    raise ConfigurationError(
        f"{scene_arg!r} is neither a scene file nor a builtin scene "
        f"({', '.join(datasets.SCENE_KINDS)})")


def _write_manifest(path, command, config, seed, inputs, outputs, timings):
    m = manifest.build_manifest(command, config, seed,
                                manifest.hash_files(inputs),
                                manifest.hash_files(outputs), timings)
    manifest.write_manifest(path, m)
    return m


def train_options(fn):
    fn = click.option("--epochs", default=TrainConfig.epochs, show_default=True,
                      help="training epochs per model")(fn)
    fn = click.option("--batch-size", default=TrainConfig.batch_size, show_default=True)(fn)
    fn = click.option("--learning-rate", default=TrainConfig.learning_rate,
                      show_default=True)(fn)
    fn = click.option("--weight-decay", default=TrainConfig.weight_decay,
                      show_default=True)(fn)
    fn = click.option("--negative-ratio", default=TrainConfig.negative_ratio,
                      show_default=True)(fn)
    fn = click.option("--padding", default=TrainConfig.padding, show_default=True,
                      help="negative-box expansion factor")(fn)
    return fn


def _train_config(seed, epochs, batch_size, learning_rate, weight_decay,
                  negative_ratio, padding) -> TrainConfig:
    return TrainConfig(learning_rate=learning_rate, weight_decay=weight_decay,
                       batch_size=batch_size, epochs=epochs, padding=padding,
                       negative_ratio=negative_ratio, seed=seed)


def solver_options(fn):
    fn = click.option("--alpha", default=0.005, show_default=True,
                      help="gradient ascent step size")(fn)
    fn = click.option("-N", "--joint-samples", default=1024, show_default=True)(fn)
    fn = click.option("-T", "--iterations", default=40, show_default=True)(fn)
    fn = click.option("--projection-iterations", default=20, show_default=True)(fn)
    fn = click.option("--epsilon", default=1e-3, show_default=True,
                      help="projection tolerance (pre-sigmoid)")(fn)
    fn = click.option("--tau", default=0.95, show_default=True,
                      help="constraint probability threshold")(fn)
    fn = click.option("--restarts", default=8, show_default=True)(fn)
    return fn


def _solver_config(scene, seed, alpha, joint_samples, iterations,
                   projection_iterations, epsilon, tau) -> solver.SolverConfig:
    return solver.SolverConfig(
        step_size=alpha, joint_samples=joint_samples, iterations=iterations,
        projection_iterations=projection_iterations, projection_tolerance=epsilon,
        threshold=tau, z_limits=scene.z_limits, omega_limits=scene.omega_limits,
        seed=seed)


@click.group()
def main():
    """Sketch-driven region models and mobile-base placement."""


@main.command("make-scene")
@click.argument("name")
@click.option("--out", "out_dir", default=".", type=click.Path(), show_default=True)
@click.option("--seed", default=0, show_default=True)
@cli_errors
def cmd_make_scene(name, out_dir, seed):
    """Materialize a builtin scene to <out>/<name>.scene (+ depth file)."""
    t0 = time.perf_counter()
    if name not in datasets.SCENE_KINDS:
        raise ConfigurationError(
            f"unknown scene {name!r}; builtin: {', '.join(datasets.SCENE_KINDS)}")
    scene = datasets.generate_scene(name, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    scene_path = os.path.join(out_dir, f"{name}.scene")
    datasets.save_scene(scene_path, scene)
    depth_path = os.path.join(out_dir, f"{name}.sdid")
    _write_manifest(scene_path + ".manifest.json", "make-scene",
                    {"name": name}, seed, [], [scene_path, depth_path],
                    {"total_s": time.perf_counter() - t0})
    click.echo(f"wrote {scene_path}")


@main.command("fit")
@click.argument("scene_file", type=click.Path(exists=True))
@click.option("--roi-model", "roi_path", default="roi.sdim", show_default=True)
@click.option("--constraint-model", "constraint_path", default="constraint.sdim",
              show_default=True, help="written only when the scene has a permissible sketch")
@click.option("--seed", default=0, show_default=True)
@train_options
@click.option("--manifest", "manifest_path", default=None,
              help="manifest path (default: <roi-model>.manifest.json)")
@cli_errors
def cmd_fit(scene_file, roi_path, constraint_path, seed, manifest_path, **train_kw):
    """Project the scene's sketches and fit region models."""
    t0 = time.perf_counter()
    scene = datasets.load_scene(scene_file)
    train = _train_config(seed, **train_kw)
    models = pipeline.fit_scene_models(scene, train)
    save_model(roi_path, models.roi_model)
    outputs = [roi_path]
    if models.constraint_model is not None:
        save_model(constraint_path, models.constraint_model)
        outputs.append(constraint_path)
    manifest_path = manifest_path or roi_path + ".manifest.json"
    _write_manifest(manifest_path, "fit", asdict(train), seed,
                    [scene_file], outputs, {"total_s": time.perf_counter() - t0})
    click.echo(f"roi model: {roi_path} ({len(models.roi_points)} points, "
               f"final loss {fmt(models.roi_model.training_loss[-1])})")
    if models.constraint_model is not None:
        click.echo(f"constraint model: {constraint_path} "
                   f"({len(models.permissible_points)} points)")


@main.command("solve")
@click.argument("scene_file", type=click.Path(exists=True))
@click.option("--roi-model", "roi_path", required=True, type=click.Path(exists=True))
@click.option("--constraint-model", "constraint_path", default=None,
              type=click.Path(exists=True))
@click.option("--chain", "chain_path", default=None,
              help="chain description file (default: bundled 6-joint arm)")
@click.option("--seed", default=0, show_default=True)
@solver_options
@click.option("--trace", "trace_path", default=None, help="write per-iteration table")
@click.option("--manifest", "manifest_path", default=None)
@cli_errors
def cmd_solve(scene_file, roi_path, constraint_path, chain_path, seed, restarts,
              trace_path, manifest_path, **solver_kw):
    """Optimize the base placement for fitted models."""
    t0 = time.perf_counter()
    scene = datasets.load_scene(scene_file)
    roi_model = load_model(roi_path)
    constraint_model = load_model(constraint_path) if constraint_path else None
    chain = kinematics.load_chain(chain_path) if chain_path \
        else kinematics.load_bundled_chain()
    cfg = _solver_config(scene, seed, **solver_kw)
    result = solver.solve_multistart(roi_model, constraint_model, chain, cfg,
                                     restarts=restarts)
    best = result.best
    click.echo("x\ty\tz\tomega\texpected_energy")
    click.echo("\t".join(fmt(v) for v in (*best.as_array(), result.best_energy)))
    outputs = []
    if trace_path:
        best_trace = result.traces[int(np.argmax(result.final_energies))]
        with open(trace_path, "w") as fh:
            fh.write(best_trace.table())
        outputs.append(trace_path)
    inputs = [scene_file, roi_path] + ([constraint_path] if constraint_path else [])
    if chain_path:
        inputs.append(chain_path)
    manifest_path = manifest_path or (trace_path or "solve") + ".manifest.json"
    cfg_dict = asdict(cfg)
    cfg_dict["restarts"] = restarts
    cfg_dict["result"] = {"base": asdict(best), "energy": result.best_energy}
    _write_manifest(manifest_path, "solve", cfg_dict, seed, inputs, outputs,
                    {"total_s": time.perf_counter() - t0})


@main.command("bench")
@click.argument("scene_arg", metavar="SCENE")
@click.option("--chain", "chain_path", default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--restarts", default=4, show_default=True)
@click.option("--fk-samples", default=100_000, show_default=True)
@click.option("--delta", default=0.02, show_default=True)
@click.option("--test-points", default=1000, show_default=True)
@click.option("--epochs", default=None, type=int, help="override training epochs")
@click.option("--report", "report_path", default=None, help="write report table")
@click.option("--plot-grid", "grid_path", default=None,
              help="write sigma(energy) grid data for plotting")
@click.option("--manifest", "manifest_path", default=None)
@cli_errors
def cmd_bench(scene_arg, chain_path, seed, restarts, fk_samples, delta,
              test_points, epochs, report_path, grid_path, manifest_path):
    """Score random / IK / optimizer placements on one scene."""
    t0 = time.perf_counter()
    scene = _load_scene_arg(scene_arg, seed)
    chain = kinematics.load_chain(chain_path) if chain_path \
        else kinematics.load_bundled_chain()
    train = pipeline.scene_train_config(seed)
    if epochs is not None:
        train = replace(train, epochs=epochs)
    config = evaluate.BenchmarkConfig(
        delta=delta, fk_samples=fk_samples, test_points=test_points,
        restarts=restarts, seed=seed, train=train)
    models = pipeline.fit_scene_models(scene, train)
    report = evaluate.run_benchmark(scene, chain, config, models=models)
    click.echo(report.table(), nl=False)
    outputs = []
    if report_path:
        with open(report_path, "w") as fh:
            fh.write(report.table())
        outputs.append(report_path)
    if grid_path:
        write_probability_grid(grid_path, models)
        outputs.append(grid_path)
    inputs = [scene_arg] if os.path.exists(scene_arg) else []
    manifest_path = manifest_path or (report_path or f"bench-{scene.name}") + ".manifest.json"
    cfg_dict = {k: v for k, v in asdict(config).items() if k not in ("train", "solver")}
    cfg_dict["train"] = asdict(train)
    cfg_dict["result"] = {m.name: {"coverage": m.coverage} for m in report.methods}
    _write_manifest(manifest_path, "bench", cfg_dict, seed, inputs, outputs,
                    {"total_s": time.perf_counter() - t0,
                     **{f"{m.name}_s": m.runtime for m in report.methods}})


def write_probability_grid(path, models: pipeline.SceneModels, n: int = 100):
    """Text grid of sigma(energy): header declares dimensions, then rows."""
    from .energymodel import membership_probability

    model = models.roi_model
    lo = model.data_lo[:2].astype(float) - 0.5
    hi = model.data_hi[:2].astype(float) + 0.5
    if models.constraint_model is not None:
        lo = np.minimum(lo, models.constraint_model.data_lo.astype(float) - 0.3)
        hi = np.maximum(hi, models.constraint_model.data_hi.astype(float) + 0.3)
    z = float(np.median(models.roi_points.points[:, 2]))
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    xx, yy = np.meshgrid(xs, ys)
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])
    vals = membership_probability(model, pts).reshape(n, n)
    with open(path, "w") as fh:
        fh.write(f"grid {n} {n} x0 {xs[0]!r} dx {xs[1] - xs[0]!r} "
                 f"y0 {ys[0]!r} dy {ys[1] - ys[0]!r} z {z!r}\n")
        for row in vals:
            fh.write(" ".join(fmt(v) for v in row) + "\n")


@main.command("compare-density")
@click.argument("shape", type=click.Choice(datasets.SHAPE_KINDS))
@click.option("--count", default=5000, show_default=True)
@click.option("--noise", default=0.005, show_default=True)
@click.option("--seed", default=0, show_default=True)
@train_options
@click.option("--report", "report_path", default=None)
@click.option("--manifest", "manifest_path", default=None)
@cli_errors
def cmd_compare_density(shape, count, noise, seed, report_path, manifest_path,
                        **train_kw):
    """Fit KDE, GMM-10/50/100, and the energy model on one shape dataset and
    print per-sample log-likelihood on a fresh test draw."""
    t0 = time.perf_counter()
    spec = datasets.ShapeSpec(shape, count=count, noise=noise, seed=seed)
    train_pts = datasets.generate_shape(spec)
    test_pts = datasets.generate_shape(replace(spec, seed=seed + 1))
    train = _train_config(seed, **train_kw)

    rows = [("kde", baselines.kde_fit(train_pts, seed=seed))]
    for k in (10, 50, 100):
        rows.append((f"gmm-{k}", baselines.gmm_fit(train_pts, k, seed=seed)))
    rows.append(("ebm", nce_fit(train_pts, train)))

    lines = ["method\tlog_likelihood"]
    for name, model in rows:
        ll = baselines.log_likelihood(model, test_pts, seed=seed)
        lines.append(f"{name}\t{fmt(ll)}")
    table = "\n".join(lines) + "\n"
    click.echo(table, nl=False)
    outputs = []
    if report_path:
        with open(report_path, "w") as fh:
            fh.write(table)
        outputs.append(report_path)
    manifest_path = manifest_path or f"compare-{shape}.manifest.json"
    _write_manifest(manifest_path, "compare-density",
                    {"shape": shape, "count": count, "noise": noise,
                     "train": asdict(train)},
                    seed, [], outputs, {"total_s": time.perf_counter() - t0})


@main.command("serve")
@click.option("--scene", "scene_arg", required=True,
              help="scene file or builtin scene name")
@click.option("--chain", "chain_path", default=None)
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=None, type=int)
@click.option("--frontend", "frontend_dir", default=None,
              type=click.Path(exists=True), help="static UI directory to serve at /")
@cli_errors
def cmd_serve(scene_arg, chain_path, port, host, seed, epochs, frontend_dir):
    """Run the HTTP service for the sketch UI."""
    import uvicorn

    from .service import create_app

    scene = _load_scene_arg(scene_arg, seed)
    chain = kinematics.load_chain(chain_path) if chain_path \
        else kinematics.load_bundled_chain()
    train = pipeline.scene_train_config(seed)
    if epochs is not None:
        train = replace(train, epochs=epochs)
    if frontend_dir is None:
        default_ui = os.path.join(os.path.dirname(__file__), "..", "..",
                                  "frontend", "dist")
        if os.path.isdir(default_ui):
            frontend_dir = default_ui
    app = create_app(scene, chain, train=train,
                     solver=solver.SolverConfig(z_limits=scene.z_limits,
                                                omega_limits=scene.omega_limits,
                                                seed=seed),
                     frontend_dir=frontend_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit:
        raise
    except OSError as exc:
        click.echo(f'error code=port-in-use message="{exc}"', err=True)
        sys.exit(16)


if __name__ == "__main__":
    main()
