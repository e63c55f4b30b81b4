"""Command-line driver for the projection-selection pipeline.

Stages write their artifacts under the configured output directory and later
stages read them back, so each subcommand can be rerun in isolation:

    simulate -> pdi -> label -> train -> predict -> reconstruct -> evaluate
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import detectability, labeler, metrics, model, phantom, recon, report
from .config import RunConfig, load_config
from .errors import MissingArtifactError, ProjSelectError
from .geometry import fibonacci_sphere, pose_from_position, positions_to_json_obj
from .ste import SelectionMask


def _positions(cfg: RunConfig):
    return fibonacci_sphere(cfg.n_positions())


def _poses(cfg: RunConfig):
    g = cfg.geometry()
    return [pose_from_position(p, g) for p in _positions(cfg)]


def _load_scan(cfg: RunConfig, name: str):
    """All projections of one specimen in acquisition order, with their poses."""
    proj_dir = cfg.projections_dir(name)
    if not proj_dir.is_dir():
        raise MissingArtifactError(
            f"no projections for specimen {name!r}; run 'simulate' first", stage="simulate"
        )
    n = cfg.n_positions()
    images, poses = [], []
    for i in range(n):
        base = proj_dir / f"proj_{i:04d}"
        if not base.with_suffix(".json").exists():
            raise MissingArtifactError(
                f"projection {base.name} of specimen {name!r} is missing; run 'simulate' first",
                stage="simulate",
            )
        proj, _ = phantom.load_projection(base)
        images.append(proj.pixels)
        poses.append(proj.pose)
    return np.stack(images), poses


def _load_mask(path: Path, stage: str) -> SelectionMask:
    if not path.exists():
        raise MissingArtifactError(f"{path.name} is missing; run '{stage}' first", stage=stage)
    mask, _ = labeler.load_label_json(path)
    return mask


def cmd_simulate(cfg: RunConfig) -> None:
    g = cfg.geometry()
    positions = _positions(cfg)
    poses = [pose_from_position(p, g) for p in positions]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.positions_path(), "w") as f:
        json.dump(positions_to_json_obj(positions), f, sort_keys=True, indent=1)
    photons = cfg.photons()
    for si, (name, specimen) in enumerate(cfg.specimens()):
        digest = specimen.digest()
        proj_dir = cfg.projections_dir(name)
        proj_dir.mkdir(parents=True, exist_ok=True)
        for i, pose in enumerate(poses):
            rng = None
            if photons is not None:
                # One stream per (specimen, projection) keeps files reproducible.
                rng = np.random.default_rng((cfg.seed, si, i))
            proj = phantom.forward_project(specimen, pose, g, photons=photons, rng=rng)
            phantom.save_projection(proj_dir / f"proj_{i:04d}", proj, g, digest)
        print(f"simulate: wrote {len(poses)} projections for {name}")


def _pdi_for(cfg: RunConfig, name: str) -> np.ndarray:
    specimen = cfg.specimen_by_name(name)
    defect = specimen.defects[0]
    task = detectability.build_task(cfg.task_grid(specimen), defect.centre, cfg.roi_radius())
    return detectability.pdi_vector(_poses(cfg), task, cfg.mtf_model(), cfg.nps_model(), specimen)


def cmd_pdi(cfg: RunConfig) -> None:
    positions = _positions(cfg)
    for name, _ in cfg.specimens():
        d2 = _pdi_for(cfg, name)
        cfg.specimen_dir(name).mkdir(parents=True, exist_ok=True)
        detectability.export_pdi_csv(cfg.pdi_path(name), positions, d2)
        print(f"pdi: wrote {cfg.pdi_path(name)}")


def cmd_label(cfg: RunConfig) -> None:
    positions = _positions(cfg)
    delta_min = cfg.delta_min()
    for name, specimen in cfg.specimens():
        if not cfg.projections_dir(name).is_dir():
            raise MissingArtifactError(
                f"no projections for specimen {name!r}; run 'simulate' first", stage="simulate"
            )
        d2 = _pdi_for(cfg, name)
        problem = labeler.LabelProblem(d2=d2, positions=positions, k=cfg.k(), delta_min=delta_min)
        mask = labeler.select_greedy(problem)
        cfg.specimen_dir(name).mkdir(parents=True, exist_ok=True)
        labeler.save_label_json(cfg.label_path(name), mask, delta_min, specimen.digest())
        print(f"label: {name} selected {mask.count} of {mask.values.size}")


def cmd_train(cfg: RunConfig) -> None:
    tcfg = cfg.train_config()
    dataset = []
    for name in cfg.split()["train"]:
        images, _ = _load_scan(cfg, name)
        mask = _load_mask(cfg.label_path(name), stage="label")
        dataset.append((images, mask))
    trained, history = model.train(dataset, tcfg)
    model.save_checkpoint(cfg.checkpoint_path(), trained, tcfg)
    report.write_loss_history_csv(cfg.loss_history_path(), history)
    if cfg.figures_enabled():
        report.loss_curve_figure(cfg.out_dir / "loss_curve.png", history)
    first = float(history[0].mean())
    last = float(history[-1].mean())
    print(f"train: {tcfg.epochs} epochs, mean BCE {first:.4f} -> {last:.4f}")


def cmd_predict(cfg: RunConfig) -> None:
    ckpt_path = cfg.checkpoint_path()
    if not ckpt_path.exists():
        raise MissingArtifactError("checkpoint missing; run 'train' first", stage="train")
    reg, _ = model.load_checkpoint(ckpt_path)
    tcfg = cfg.train_config()
    for name, _ in cfg.specimens():
        images, _ = _load_scan(cfg, name)
        result = model.forward_pipeline(reg, images, tcfg)
        obj = {
            "n": int(images.shape[0]),
            "k": tcfg.k,
            "count": result.mask.count,
            "mask": [int(v) for v in result.mask.values],
            "scores": [float(s) for s in result.scores],
        }
        cfg.specimen_dir(name).mkdir(parents=True, exist_ok=True)
        with open(cfg.prediction_path(name), "w") as f:
            json.dump(obj, f, sort_keys=True, indent=1)
        print(f"predict: {name} selected {result.mask.count} projections")


def _subset(images: np.ndarray, poses, mask: SelectionMask):
    idx = mask.indices()
    if idx.size == 0:
        raise ProjSelectError("selection mask is empty; nothing to reconstruct")
    return [phantom.ProjectionImage(images[i], poses[i]) for i in idx]


def cmd_reconstruct(cfg: RunConfig) -> None:
    g = cfg.geometry()
    art = cfg.art_config()
    for name in cfg.evaluate_targets():
        specimen = cfg.specimen_by_name(name)
        grid = cfg.recon_grid(specimen)
        images, poses = _load_scan(cfg, name)
        all_projs = [phantom.ProjectionImage(images[i], poses[i]) for i in range(len(poses))]
        label_mask = _load_mask(cfg.label_path(name), stage="label")
        pred_path = cfg.prediction_path(name)
        if not pred_path.exists():
            raise MissingArtifactError(
                f"prediction for {name!r} missing; run 'predict' first", stage="predict"
            )
        with open(pred_path) as f:
            pred_obj = json.load(f)
        pred_mask = SelectionMask(
            values=np.asarray(pred_obj["mask"], dtype=np.int64), k=int(pred_obj["k"])
        )
        for method, projs in (
            ("full", all_projs),
            ("label", _subset(images, poses, label_mask)),
            ("prediction", _subset(images, poses, pred_mask)),
        ):
            vol = recon.art_reconstruct(projs, [p.pose for p in projs], g, grid, art)
            phantom.save_volume(cfg.recon_path(name, method), vol)
            print(f"reconstruct: {name}/{method} from {len(projs)} projections")


def cmd_evaluate(cfg: RunConfig) -> None:
    rows = []
    for name in cfg.evaluate_targets():
        specimen = cfg.specimen_by_name(name)
        roi = metrics.RoiSpec(centre=specimen.defects[0].centre, radius=cfg.roi_radius())
        volumes = {}
        for method in ("full", "label", "prediction"):
            base = cfg.recon_path(name, method)
            if not Path(str(base) + ".json").exists():
                raise MissingArtifactError(
                    f"reconstruction {base.name} missing; run 'reconstruct' first",
                    stage="reconstruct",
                )
            volumes[method] = phantom.load_volume(base)
        per_method = {}
        for method in ("label", "prediction"):
            per_method[method] = (
                metrics.rmse(volumes["full"], volumes[method], roi),
                metrics.ssim(volumes["full"], volumes[method], roi),
            )
            rows.append(
                {
                    "specimen": name,
                    "method": method,
                    "rmse": per_method[method][0],
                    "ssim": per_method[method][1],
                }
            )

        grid = volumes["full"].grid
        slices = cfg.evaluate_slices()
        if slices is None:
            centre_z = specimen.defects[0].centre[2]
            slices = [int((centre_z - grid.origin[2]) / grid.voxel_size)]
        slice_dir = cfg.specimen_dir(name) / "slices"
        slice_dir.mkdir(parents=True, exist_ok=True)
        normalized = {m: metrics.normalize(v, roi).data for m, v in volumes.items()}
        for iz in slices:
            iz = int(np.clip(iz, 0, grid.shape[2] - 1))
            for method, data in normalized.items():
                report.write_pgm(slice_dir / f"{method}_z{iz:03d}.pgm", data[:, :, iz])
        if cfg.figures_enabled():
            iz = int(np.clip(slices[0], 0, grid.shape[2] - 1))
            report.comparison_figure(
                cfg.specimen_dir(name) / "figure.png",
                {m: normalized[m][:, :, iz] for m in ("full", "label", "prediction")},
                {m: per_method[m] for m in per_method},
                title=f"{name}: axial slice z={iz}",
            )
        for method in ("label", "prediction"):
            r, s = per_method[method]
            print(f"evaluate: {name}/{method} rmse={r:.4f} ssim={s:.4f}")
    report.write_metrics_csv(cfg.report_path(), rows)
    print(f"evaluate: wrote {cfg.report_path()}")


COMMANDS = {
    "simulate": cmd_simulate,
    "pdi": cmd_pdi,
    "label": cmd_label,
    "train": cmd_train,
    "predict": cmd_predict,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="projselect",
        description="Select informative CT projections on a spherical trajectory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run configuration JSON")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, default=None, help="seed (overrides the config)")
        p.add_argument(
            "--stage-override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry by dotted path, e.g. train.epochs=5",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, out=args.out, seed=args.seed, overrides=args.stage_override)
        COMMANDS[args.command](cfg)
    except ProjSelectError as exc:
        print(f"error: command={args.command} message={exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: command={args.command} message={exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
