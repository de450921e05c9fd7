# /src/airsq/cli/handlers.py

import logging
from pathlib import Path

import numpy as np

from airsq.cli.app import CommandApp, Context, arg
from airsq.data.scenarios import filter_corrupt_scenarios, load_scenarios, save_scenarios
from airsq.data.synth import synth_generate
from airsq.errors import InvariantError, ShapeMismatchError
from airsq.evaluation.metrics import MapConfig, compare_baseline, evaluate, joint_truth
from airsq.evaluation.sensitivity import DEFAULT_ALPHA, sensitivity_analysis
from airsq.prediction.anchors import fit_all_types, load_anchor_sets, save_anchor_sets
from airsq.prediction.model import ensemble_models, load_predictions, predict_joint, save_predictions
from airsq.prediction.params import init_params, load_checkpoint, save_checkpoint
from airsq.prediction.raster import rasterize, rerasterize, write_ppm
from airsq.prediction.spline import DEGREE, NUM_OUT, build_basis
from airsq.prediction.train import train
from airsq.utils.io import read_json

logger = logging.getLogger(__name__)

IN = arg("--in", dest="input", required=True, help="scenario JSON Lines file")
OUT = arg("--out", required=True)
ANCHORS = arg("--anchors", required=True, help="directory with one anchor file per object type")
MAP_CONFIG = arg("--map-config", help="JSON with top_k, steps, thresholds")


def _map_config(ctx: Context) -> MapConfig:
    if ctx.args.map_config:
        ctx.require(ctx.args.map_config)
        return MapConfig.from_json(read_json(ctx.args.map_config))
    return ctx.config.map


def _scored(ctx: Context):
    """Predictions and their ground truth, paired by line order."""
    ctx.require(ctx.args.pred, ctx.args.gt)
    anchors = load_anchor_sets(ctx.args.anchors)
    predictions = load_predictions(ctx.args.pred)
    scenarios = load_scenarios(ctx.args.gt)
    if len(predictions) != len(scenarios):
        raise ShapeMismatchError(f"{len(predictions)} predictions for {len(scenarios)} scenarios")
    return predictions, [joint_truth(s, anchors) for s in scenarios]


def register_handlers(app: CommandApp) -> None:
    """Register every airsq subcommand on `app`."""

    # -------------------------
    # Data
    # -------------------------
    @app.command("synth", "generate crossing-paths scenarios", [
        arg("--n", type=int, required=True),
        OUT,
        arg("--corrupt-rate", type=float, dest="synth.corrupt_rate"),
    ])
    def synth(ctx: Context):
        scenarios = synth_generate(ctx.args.n, ctx.seed, ctx.config.synth)
        save_scenarios(scenarios, ctx.args.out)
        return {"scenarios": len(scenarios)}

    @app.command("filter", "drop scenarios whose pair has a physically impossible jump", [
        IN, OUT,
        arg("--max-step", type=float, dest="cluster.max_step", help="meters per step"),
    ])
    def filter_(ctx: Context):
        ctx.require(ctx.args.input)
        scenarios = load_scenarios(ctx.args.input)
        kept = filter_corrupt_scenarios(scenarios, ctx.config.cluster.max_step)
        save_scenarios(kept, ctx.args.out)
        return {"scenarios": len(scenarios), "kept": len(kept)}

    # -------------------------
    # Anchors
    # -------------------------
    @app.command("cluster", "fit per-type anchor trajectories with masked K-Means", [
        IN, OUT,
        arg("--k-vehicle", type=int, dest="cluster.k_vehicle"),
        arg("--k-ped", type=int, dest="cluster.k_pedestrian"),
        arg("--k-cyc", type=int, dest="cluster.k_cyclist"),
        arg("--iters", type=int, dest="cluster.iters"),
        arg("--max-step", type=float, dest="cluster.max_step"),
    ])
    def cluster(ctx: Context):
        ctx.require(ctx.args.input)
        cfg = ctx.config.cluster
        anchor_sets = fit_all_types(load_scenarios(ctx.args.input), cfg.k_per_type(), cfg.iters, ctx.seed, cfg.max_step)
        save_anchor_sets(anchor_sets, ctx.args.out)
        return {f"K_{t.value}": a.K for t, a in anchor_sets.items()}

    # -------------------------
    # Model
    # -------------------------
    @app.command("train", "train the marginal model, then the joint head", [
        IN, ANCHORS,
        arg("--out", required=True, help="checkpoint file"),
        arg("--curve", help="loss curve CSV (default: <out>.curve.csv)"),
        arg("--init", help="start from this checkpoint instead of a fresh initialization"),
        arg("--snapshots", help="directory for intermediate checkpoints"),
        arg("--w-cls", type=float, dest="loss.w_cls"),
        arg("--w-reg", type=float, dest="loss.w_reg"),
        arg("--w-m", type=float, dest="loss.w_m"),
        arg("--lr", type=float, dest="train.lr"),
        arg("--batch-size", type=int, dest="train.batch_size"),
        arg("--steps", type=int, dest="train.max_steps", help="total optimizer steps over both phases"),
        arg("--marginal-epochs", type=int, dest="train.marginal_epochs"),
        arg("--joint-epochs", type=int, dest="train.joint_epochs"),
        arg("--snapshot-every", type=int, dest="train.snapshot_every"),
        arg("--representation", choices=["plain", "rerasterized"], dest="train.representation"),
        arg("--freeze-marginal", action="store_const", const=True, dest="train.freeze_marginal"),
        arg("--balanced", action="store_const", const=True, dest="train.balanced"),
    ])
    def train_(ctx: Context):
        a = ctx.args
        ctx.require(a.input, a.init)
        anchors = load_anchor_sets(a.anchors)
        params = load_checkpoint(a.init) if a.init else init_params(ctx.config.model, ctx.seed)
        result = train(
            load_scenarios(a.input), params, anchors, ctx.config.train, ctx.config.loss,
            ctx.config.raster, seed=ctx.seed,
        )
        save_checkpoint(result.params, a.out)
        ctx.formatter.write_csv(a.curve or f"{a.out}.curve.csv", ctx.formatter.curve_csv(result.curve))
        if a.snapshots:
            for n, snapshot in enumerate(result.snapshots):
                save_checkpoint(snapshot, Path(a.snapshots) / f"snapshot_{n:03d}.json")
        last = result.curve[-1] if result.curve else {}
        return {"steps": len(result.curve), "final_loss": last.get("total"), "snapshots": len(result.snapshots)}

    @app.command("predict", "joint predictions for every scenario; several checkpoints are ensembled", [
        IN, ANCHORS, OUT,
        arg("--checkpoint", action="append", required=True),
        arg("--representation", choices=["plain", "rerasterized"], dest="train.representation"),
        arg("--joint", choices=["learned", "product"], default="learned"),
    ])
    def predict(ctx: Context):
        a = ctx.args
        ctx.require(a.input, *a.checkpoint)
        anchors = load_anchor_sets(a.anchors)
        models = [load_checkpoint(path) for path in a.checkpoint]
        predictions = []
        for scenario in load_scenarios(a.input):
            per_model = [
                predict_joint(scenario, anchors, params, ctx.config.raster, ctx.config.train.representation, joint=a.joint)
                for params in models
            ]
            predictions.append(per_model[0] if len(per_model) == 1 else ensemble_models(per_model))
        save_predictions(predictions, a.out)
        return {"scenarios": len(predictions), "models": len(models)}

    @app.command("ensemble", "average several prediction files", [
        arg("--pred", action="append", required=True),
        OUT,
    ])
    def ensemble(ctx: Context):
        ctx.require(*ctx.args.pred)
        runs = [load_predictions(path) for path in ctx.args.pred]
        if len({len(r) for r in runs}) != 1:
            raise ShapeMismatchError("prediction files cover different numbers of scenarios")
        merged = [ensemble_models(list(group)) for group in zip(*runs)]
        save_predictions(merged, ctx.args.out)
        return {"scenarios": len(merged), "models": len(runs)}

    # -------------------------
    # Evaluation
    # -------------------------
    @app.command("eval", "joint mAP, minADE/minFDE and losses, with the independent-product baseline", [
        arg("--pred", required=True),
        arg("--gt", required=True),
        ANCHORS, MAP_CONFIG,
        arg("--out", help="also write the JSON report here"),
    ], kind="map")
    def eval_(ctx: Context):
        predictions, truths = _scored(ctx)
        config = _map_config(ctx)
        report = evaluate(predictions, truths, config, ctx.config.loss)
        report.update(compare_baseline(predictions, truths, config, ctx.config.loss))
        if ctx.args.out:
            ctx.formatter.write_json(ctx.args.out, report)
        return report

    @app.command("sensitivity", "mAP gained per unit of loss for confidences vs trajectories", [
        arg("--pred", required=True),
        arg("--gt", required=True),
        ANCHORS, MAP_CONFIG,
        arg("--alpha", type=float, default=DEFAULT_ALPHA),
        arg("--out", help="also write the JSON report here"),
    ], kind="sensitivity")
    def sensitivity(ctx: Context):
        predictions, truths = _scored(ctx)
        report = sensitivity_analysis(predictions, truths, ctx.args.alpha, ctx.config.loss, _map_config(ctx)).to_json()
        if ctx.args.out:
            ctx.formatter.write_json(ctx.args.out, report)
        return report

    # -------------------------
    # Inspection
    # -------------------------
    @app.command("raster", "render one pair agent's view as a PPM image", [
        IN, OUT,
        arg("--scenario", type=int, default=0),
        arg("--agent", type=int, choices=[0, 1], default=0),
        arg("--rerasterize", metavar="PRED_FILE", help="draw the partner's top-1 prediction from this file"),
    ])
    def raster(ctx: Context):
        a = ctx.args
        ctx.require(a.input, a.rerasterize)
        scenarios = load_scenarios(a.input)
        if not 0 <= a.scenario < len(scenarios):
            raise InvariantError("scenario", f"index {a.scenario} outside 0..{len(scenarios) - 1}")
        scenario = scenarios[a.scenario]
        if a.rerasterize:
            predictions = load_predictions(a.rerasterize)
            if len(predictions) != len(scenarios):
                raise ShapeMismatchError(f"{len(predictions)} predictions for {len(scenarios)} scenarios")
            # slot 1 of the view is always the partner
            view = predictions[a.scenario] if a.agent == 0 else predictions[a.scenario].swapped()
            image = rerasterize(scenario, a.agent, view.marginal1.top1(), ctx.config.raster)
        else:
            image = rasterize(scenario, a.agent, ctx.config.raster)
        write_ppm(image, a.out)
        return {"height": int(image.shape[0]), "width": int(image.shape[1])}

    @app.command("spline-check", "dump the B-spline basis matrix as CSV", [
        arg("--out", help="CSV file (stdout when omitted)"),
    ])
    def spline_check(ctx: Context):
        basis = build_basis(NUM_OUT, ctx.config.model.num_ctrl, DEGREE)
        text = ctx.formatter.basis_csv(basis)
        if ctx.args.out:
            ctx.formatter.write_csv(ctx.args.out, text)
        else:
            print(text, end="")
        return {"max_partition_error": float(np.max(np.abs(basis.sum(axis=1) - 1.0)))}
