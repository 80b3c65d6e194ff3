"""Single command-line entry point for the full pipeline."""

import argparse
import json
import os
import sys

import numpy as np

from . import evalrep, render, synth, train
from .errors import (CalibrationError, EmptyShapeError, EmptyViewError,
                     FormatError, ShapeMismatchError, TrainingDivergedError)
from .synth import DatasetManifest
from .voxel import extract_surface_mesh, read_grid, write_obj

# every recognized configuration key and its default
CONFIG_DEFAULTS = {
    # dataset synthesis
    "n_shapes": 12,
    "resolution": 16,
    "train_fraction": 0.9,
    "views_per_shape": 4,
    "distance": 2.0,
    "elevation_range": [-np.pi / 3, np.pi / 3],
    # architecture
    "image_size": 32,
    "voxels": 16,
    "latent_dim": 64,
    "gan_latent_dim": 32,
    "base_channels": 16,
    "dtype": "float64",
    # training
    "stage": "completion",
    "lr": 0.1,
    "momentum": 0.9,
    "lambda": 10.0,
    "alpha": "auto",
    "critic_iters": 5,
    "epochs": 10,
    "batch": 8,
    "gan_epochs": 10,
    "gan_lr": 0.001,
    "gan_batch": 4,
    "gan_beta1": 0.5,
    "gan_beta2": 0.9,
    "finetune_epochs": 5,
    "finetune_lr": 0.1,
    # evaluation
    "threshold": 0.5,
    "cd_points": 1024,
    "eval_seed": 12345,
    "model": "checkpoint",
    "split": "test",
    "layer_id": -1,
    "top_k": 5,
    # paths / misc
    "seed": 0,
    "data_dir": "",
    "checkpoint": "",
    "completion_checkpoint": "",
    "gan_checkpoint": "",
    "report_a": "",
    "report_b": "",
    "shape_id": "",
    "view_id": 0,
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, overrides):
    config = dict(CONFIG_DEFAULTS)
    if path:
        with open(path) as f:
            user = json.load(f)
        for key in user:
            if key not in CONFIG_DEFAULTS:
                raise KeyError("unknown config key %r in %s" % (key, path))
        config.update(user)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise KeyError("override %r is not of the form key=value" % (item,))
        if key not in CONFIG_DEFAULTS:
            raise KeyError("unknown config key %r in --set override" % (key,))
        config[key] = _parse_value(value)
    return config


def _require(config, key, cmd):
    if not config.get(key):
        raise KeyError("config key %r is required by the %s command" % (key, cmd))
    return config[key]


def write_run_json(out_dir, command, config, threads):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump({"command": command, "config": config, "threads": threads},
                  f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def cmd_synth(config, out_dir):
    synth.generate_dataset(config, out_dir)
    return 0


def cmd_render(config, out_dir):
    data_dir = _require(config, "data_dir", "render")
    manifest = DatasetManifest.load(os.path.join(data_dir, "manifest.json"))
    W = config["image_size"]
    for entry in manifest.entries:
        grid = read_grid(os.path.join(data_dir, "shapes", entry["id"] + ".vxg"))
        view_dir = os.path.join(out_dir, "rendered", entry["id"])
        os.makedirs(view_dir, exist_ok=True)
        for k, view in enumerate(entry["views"]):
            cam = render.camera_from_angles(view["azimuth"], view["elevation"],
                                            view["distance"], W, W)
            maps = render.render_view(grid, cam)
            render.write_pfm(os.path.join(view_dir, "%d.depth.pfm" % k), maps.depth)
            render.write_pfm(os.path.join(view_dir, "%d.normal.pfm" % k), maps.normal)
            render.write_pbm(os.path.join(view_dir, "%d.sil.pbm" % k), maps.silhouette)
    return 0


def cmd_train(config, out_dir):
    stage = config["stage"]
    _require(config, "data_dir", "train")
    if stage == "completion":
        ckpt = train.train_completion(
            config, curve_path=os.path.join(out_dir, "loss_curve.csv"))
        ckpt.save(os.path.join(out_dir, "completion.ckpt"))
    elif stage == "gan":
        ckpt = train.train_gan(
            config, curve_path=os.path.join(out_dir, "loss_curve.csv"))
        ckpt.save(os.path.join(out_dir, "gan.ckpt"))
    else:
        raise KeyError("train stage must be 'completion' or 'gan', got %r" % (stage,))
    return 0


def cmd_finetune(config, out_dir):
    _require(config, "data_dir", "finetune")
    comp = train.load_checkpoint(_require(config, "completion_checkpoint", "finetune"))
    gan = train.load_checkpoint(_require(config, "gan_checkpoint", "finetune"))
    ckpt = train.finetune(config, comp, gan,
                          curve_path=os.path.join(out_dir, "loss_curve.csv"))
    ckpt.save(os.path.join(out_dir, "finetune.ckpt"))
    return 0


def cmd_eval(config, out_dir):
    _require(config, "data_dir", "eval")
    ckpt = None
    if config["model"] == "checkpoint":
        ckpt = train.load_checkpoint(_require(config, "checkpoint", "eval"))
    report = evalrep.evaluate(config, ckpt, split=config["split"])
    report.save_csv(os.path.join(out_dir, "report.csv"))
    agg = report.aggregate()
    with open(os.path.join(out_dir, "aggregates.json"), "w") as f:
        json.dump(agg, f, indent=2, sort_keys=True)
        f.write("\n")
    return 0


def cmd_compare(config, out_dir):
    a = evalrep.MetricsReport.load_csv(_require(config, "report_a", "compare"))
    b = evalrep.MetricsReport.load_csv(_require(config, "report_b", "compare"))
    deltas, summary = evalrep.compare_reports(a, b)
    evalrep.write_delta_csv(os.path.join(out_dir, "delta.csv"), deltas, summary)
    return 0


def cmd_export_mesh(config, out_dir):
    data_dir = _require(config, "data_dir", "export-mesh")
    shape_id = _require(config, "shape_id", "export-mesh")
    view_id = int(config["view_id"])
    manifest = DatasetManifest.load(os.path.join(data_dir, "manifest.json"))
    entry = next((e for e in manifest.entries if e["id"] == shape_id), None)
    if entry is None:
        raise KeyError("shape id %r not present in the manifest" % (shape_id,))
    if not (0 <= view_id < len(entry["views"])):
        raise KeyError("view id %d out of range for shape %r" % (view_id, shape_id))
    grid = read_grid(os.path.join(data_dir, "shapes", shape_id + ".vxg"))
    view = entry["views"][view_id]
    W = config["image_size"]
    cam = render.camera_from_angles(view["azimuth"], view["elevation"],
                                    view["distance"], W, W)
    maps = render.render_view(grid, cam)
    x = render.mask_maps(maps)
    ckpt = train.load_checkpoint(_require(config, "checkpoint", "export-mesh"))
    predict = evalrep._predict_factory(config, ckpt)
    pred = predict(grid, x)
    os.makedirs(out_dir, exist_ok=True)
    pv, pf = extract_surface_mesh(pred, config["threshold"])
    if pf.size == 0:
        print("warning: empty prediction for %s view %d" % (shape_id, view_id),
              file=sys.stderr)
    write_obj(os.path.join(out_dir, "pred.obj"), pv, pf)
    gv, gf = extract_surface_mesh(grid, config["threshold"])
    write_obj(os.path.join(out_dir, "gt.obj"), gv, gf)
    render.write_pfm(os.path.join(out_dir, "input.depth.pfm"), maps.depth)
    render.write_pfm(os.path.join(out_dir, "input.normal.pfm"), maps.normal)
    render.write_pbm(os.path.join(out_dir, "input.sil.pbm"), maps.silhouette)
    return 0


def cmd_activations(config, out_dir):
    _require(config, "data_dir", "activations")
    ckpt = train.load_checkpoint(_require(config, "checkpoint", "activations"))
    layer_id = int(config["layer_id"])
    if layer_id < 0:
        # default: last encoder conv layer
        net, _, _ = train.build_nets(config)
        layer_id = len(net.encoder) - 1
    ranking = evalrep.top_activations(config, ckpt, layer_id, int(config["top_k"]),
                                      split=config["split"])
    evalrep.write_activations_json(os.path.join(out_dir, "activations.json"), ranking)
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "render": cmd_render,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "export-mesh": cmd_export_mesh,
    "activations": cmd_activations,
}

_DOMAIN_ERRORS = (ValueError, KeyError, OSError, FormatError, ShapeMismatchError,
                  EmptyShapeError, EmptyViewError, CalibrationError,
                  TrainingDivergedError)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="voxprior",
        description="Shape-prior completion pipeline: synthesize voxel datasets, "
                    "render views, train, fine-tune and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help="run the %s step" % name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (defaults to VOXPRIOR_THREADS or 1)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("VOXPRIOR_THREADS", "1"))
    try:
        config = load_config(args.config, args.set)
        out_dir = args.out
        os.makedirs(out_dir, exist_ok=True)
        write_run_json(out_dir, args.command, config, threads)
        return _COMMANDS[args.command](config, out_dir)
    except _DOMAIN_ERRORS as exc:
        print("error: %s" % (exc,), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
