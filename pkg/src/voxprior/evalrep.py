"""Batch evaluation (IoU at native and downsampled resolution, Chamfer
distance via isosurface sampling), report comparison, and encoder
unit-activation rankings."""

import csv
import json
import os

import numpy as np

from . import autodiff as ad
from . import render, train
from .synth import DatasetManifest
from .voxel import (VoxelGrid, binarize, chamfer_distance, downsample, iou,
                    sample_isosurface_points)

CSV_HEADER = ("shape_id", "view_id", "iou_native", "iou_coarse", "cd", "flags")

DEFAULT_CD_POINTS = 1024
DEFAULT_EVAL_SEED = 12345


class MetricsReport:
    """Per-(shape, view) metric rows plus per-family and overall aggregates."""

    def __init__(self, rows, header_info):
        self.rows = sorted(rows, key=lambda r: (r["shape_id"], r["view_id"]))
        self.header_info = dict(header_info)

    def aggregate(self):
        """Mean metrics; flagged rows are excluded from the CD mean only."""
        groups = {}
        for row in self.rows:
            fam = row["shape_id"].rsplit("_", 1)[0]
            for key in (fam, "overall"):
                groups.setdefault(key, {"iou_native": [], "iou_coarse": [], "cd": [],
                                        "rows": 0, "cd_rows": 0})
                g = groups[key]
                g["rows"] += 1
                g["iou_native"].append(row["iou_native"])
                g["iou_coarse"].append(row["iou_coarse"])
                if row["cd"] is not None:
                    g["cd"].append(row["cd"])
                    g["cd_rows"] += 1
        out = {}
        for key, g in groups.items():
            out[key] = {
                "iou_native": float(np.mean(g["iou_native"])),
                "iou_coarse": float(np.mean(g["iou_coarse"])),
                "cd": float(np.mean(g["cd"])) if g["cd"] else None,
                "rows": g["rows"],
                "cd_rows": g["cd_rows"],
            }
        return out

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            for k in sorted(self.header_info):
                f.write("# %s=%s\n" % (k, self.header_info[k]))
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for row in self.rows:
                w.writerow([row["shape_id"], row["view_id"],
                            "%.12g" % row["iou_native"], "%.12g" % row["iou_coarse"],
                            "" if row["cd"] is None else "%.12g" % row["cd"],
                            row["flags"]])

    @classmethod
    def load_csv(cls, path):
        info = {}
        rows = []
        with open(path, newline="") as f:
            lines = [ln for ln in f]
        data_lines = []
        for ln in lines:
            if ln.startswith("# "):
                k, _, v = ln[2:].strip().partition("=")
                info[k] = v
            else:
                data_lines.append(ln)
        reader = csv.DictReader(data_lines)
        for rec in reader:
            rows.append({
                "shape_id": rec["shape_id"], "view_id": int(rec["view_id"]),
                "iou_native": float(rec["iou_native"]),
                "iou_coarse": float(rec["iou_coarse"]),
                "cd": float(rec["cd"]) if rec["cd"] else None,
                "flags": rec["flags"],
            })
        return cls(rows, info)


def _predict_factory(config, checkpoint):
    """Return a function (grid, maps_input) -> predicted VoxelGrid."""
    model = config.get("model", "checkpoint")
    if model == "gt":
        return lambda grid, x: grid
    net, _, _ = train.build_nets(config)
    net.load_params({k[len("completion."):]: v for k, v in checkpoint.arrays.items()
                     if k.startswith("completion.") and not k.startswith("completion.opt.")})

    def predict(grid, x):
        with ad.no_grad():
            out = net.forward(ad.as_tensor(x[None]), mode="eval")
        return VoxelGrid(np.clip(out.data[0], 0.0, 1.0).astype(np.float32))

    return predict


def evaluate(config, checkpoint=None, split="test"):
    """Render, complete and score every (shape, view) pair of a split."""
    data_dir = config["data_dir"]
    manifest = DatasetManifest.load(os.path.join(data_dir, "manifest.json"))
    image_size = config.get("image_size", 32)
    threshold = config.get("threshold", 0.5)
    cd_points = config.get("cd_points", DEFAULT_CD_POINTS)
    eval_seed = config.get("eval_seed", DEFAULT_EVAL_SEED)
    predict = _predict_factory(config, checkpoint)
    rows = []
    for entry in manifest.split(split):
        from .voxel import read_grid
        grid = read_grid(os.path.join(data_dir, "shapes", entry["id"] + ".vxg"))
        for k, view in enumerate(entry["views"]):
            cam = render.camera_from_angles(view["azimuth"], view["elevation"],
                                            view["distance"], image_size, image_size)
            x = render.mask_maps(render.render_view(grid, cam))
            pred = predict(grid, x)
            iou_native = iou(pred, grid, threshold)
            iou_coarse = iou(downsample(pred, 2), downsample(grid, 2), threshold)
            pred_bin = binarize(pred, threshold)
            flags = ""
            cd = None
            if pred_bin.occupied_count() == 0:
                flags = "empty_pred"
            else:
                p_pts = sample_isosurface_points(pred, cd_points, threshold, eval_seed)
                q_pts = sample_isosurface_points(grid, cd_points, threshold, eval_seed + 1)
                cd = chamfer_distance(p_pts, q_pts)
            rows.append({"shape_id": entry["id"], "view_id": k,
                         "iou_native": iou_native, "iou_coarse": iou_coarse,
                         "cd": cd, "flags": flags})
    return MetricsReport(rows, {
        "cd_points": cd_points, "eval_seed": eval_seed, "threshold": threshold,
        "split": split, "model": config.get("model", "checkpoint"),
    })


def compare_reports(a, b):
    """Per-row and aggregate metric deltas (b minus a) for matching row keys."""
    keys_a = {(r["shape_id"], r["view_id"]): r for r in a.rows}
    keys_b = {(r["shape_id"], r["view_id"]): r for r in b.rows}
    if set(keys_a) != set(keys_b):
        raise ValueError("reports have different row keys")
    deltas = []
    improved, compared = 0, 0
    for key in sorted(keys_a):
        ra, rb = keys_a[key], keys_b[key]
        d_cd = None
        if ra["cd"] is not None and rb["cd"] is not None:
            d_cd = rb["cd"] - ra["cd"]
            compared += 1
            if d_cd < 0:
                improved += 1
        deltas.append({
            "shape_id": key[0], "view_id": key[1],
            "d_iou_native": rb["iou_native"] - ra["iou_native"],
            "d_iou_coarse": rb["iou_coarse"] - ra["iou_coarse"],
            "d_cd": d_cd,
        })
    agg_a, agg_b = a.aggregate(), b.aggregate()
    summary = {
        "d_iou_native": agg_b["overall"]["iou_native"] - agg_a["overall"]["iou_native"],
        "d_iou_coarse": agg_b["overall"]["iou_coarse"] - agg_a["overall"]["iou_coarse"],
        "d_cd": (None if agg_a["overall"]["cd"] is None or agg_b["overall"]["cd"] is None
                 else agg_b["overall"]["cd"] - agg_a["overall"]["cd"]),
        "cd_improved_fraction": improved / compared if compared else None,
    }
    return deltas, summary


def write_delta_csv(path, deltas, summary):
    with open(path, "w", newline="") as f:
        for k in sorted(summary):
            f.write("# %s=%s\n" % (k, summary[k]))
        w = csv.writer(f)
        w.writerow(("shape_id", "view_id", "d_iou_native", "d_iou_coarse", "d_cd"))
        for d in deltas:
            w.writerow([d["shape_id"], d["view_id"], "%.12g" % d["d_iou_native"],
                        "%.12g" % d["d_iou_coarse"],
                        "" if d["d_cd"] is None else "%.12g" % d["d_cd"]])


def top_activations(config, checkpoint, layer_id, k, split="test"):
    """Per-unit ranking of the k validation inputs that activate an encoder
    layer's units most strongly, with the spatial argmax location of each."""
    data_dir = config["data_dir"]
    manifest = DatasetManifest.load(os.path.join(data_dir, "manifest.json"))
    image_size = config.get("image_size", 32)
    net, _, _ = train.build_nets(config)
    net.load_params({k2[len("completion."):]: v for k2, v in checkpoint.arrays.items()
                     if k2.startswith("completion.") and not k2.startswith("completion.opt.")})
    if not (0 <= layer_id < len(net.encoder)):
        raise ValueError("layer_id %d out of range [0, %d)" % (layer_id, len(net.encoder)))
    records = []  # (key, activation map per unit)
    for entry in manifest.split(split):
        from .voxel import read_grid
        grid = read_grid(os.path.join(data_dir, "shapes", entry["id"] + ".vxg"))
        for vk, view in enumerate(entry["views"]):
            cam = render.camera_from_angles(view["azimuth"], view["elevation"],
                                            view["distance"], image_size, image_size)
            x = render.mask_maps(render.render_view(grid, cam))
            with ad.no_grad():
                act = net.encode(ad.as_tensor(x[None]), mode="eval", upto=layer_id)
            records.append(((entry["id"], vk), act.data[0]))
    if not records:
        raise ValueError("no validation inputs in split %r" % (split,))
    n_units = records[0][1].shape[0]
    ranking = []
    for unit in range(n_units):
        scored = []
        for key, act in records:
            amap = act[unit]
            loc = np.unravel_index(int(np.argmax(amap)), amap.shape)
            scored.append({"shape_id": key[0], "view_id": key[1],
                           "activation": float(amap.max()),
                           "location": [int(loc[0]), int(loc[1])]})
        scored.sort(key=lambda s: (-s["activation"], s["shape_id"], s["view_id"]))
        top = scored[:min(k, len(scored))]
        degenerate = all(s["activation"] == 0.0 for s in scored)
        ranking.append({"unit": unit, "top": top, "degenerate": degenerate})
    return ranking


def write_activations_json(path, ranking):
    with open(path, "w") as f:
        json.dump(ranking, f, indent=2, sort_keys=True)
        f.write("\n")
