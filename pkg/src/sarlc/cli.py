"""Command-line entry point: synth, despeckle, features, dataset, train,
predict, evaluate, ecoregion-cv, report and the end-to-end pipeline driver.

Every flag has a counterpart in the JSON pipeline config; flags override the
config. Unknown config keys are rejected. Exit codes: 0 success, 1 runtime
failure, 2 usage error, 3 validation failure; failures print one
machine-parsable line (``error_code: message``).
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import baseline, dataset, evaluation, metrics, model, report, synthetic
from .despeckle import SEASON_ORDER, LeeParams, Season, multitemporal_despeckle
from .features import (
    SeasonDefinition,
    build_feature_cube,
    channel_names,
    cluster_by_season,
)
from .raster import RasterGrid, SceneMeta, read_raster, write_raster
from .rng import derive_seed

DEFAULT_CONFIG = {
    "io": {
        "workdir": "sarlc_run",
        "synthetic": {
            "seed": 1,
            "width": 256,
            "height": 256,
            "classes": 4,
            "enl": 4.0,
            "scenes_per_season": 5,
            "year": 2021,
            "tiles": 1,
            "profiles": "ladder",  # or "confusable" (needs classes = 5)
            "blob_class": None,
            "blob_fraction": 0.1,
            "blob_radius": 6,
            "ecoregions": 0,
            "ecoregion_mean_shift": 0.4,
        },
    },
    "seasons": None,  # optional SeasonDefinition JSON; None = calendar default
    "despeckle": {"window": 7, "noise_cv": "auto"},
    "features": {"kernel": 5},
    "dataset": {
        "size": 256,
        "stride": 128,
        "train_fraction": 0.7,
        "random_state": 42,
        "mode": "features",
        "k": 5,
    },
    "model": {
        "swin": {
            "embed_dim": 48,
            "patch_size": 4,
            "window": 7,
            "depths": [2, 2, 2, 2],
            "heads": [3, 6, 12, 24],
            "bottleneck_depth": 2,
            "mlp_ratio": 4,
        },
        "rf": {
            "n_trees": 100,
            "max_depth": 20,
            "min_leaf": 5,
            "features_per_split": 6,
            "pixel_cap": 200000,
        },
    },
    "train": {"lr": 1e-4, "epochs": 30, "batch": 1, "seed": 0},
    "evaluate": {"ecoregion_model": "rf"},
}


def _merge_config(defaults: dict, override: dict, path: str = "") -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ValueError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged[key] = _merge_config(defaults[key], value, where)
        else:
            merged[key] = value
    return merged


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(path) as fh:
        user = json.load(fh)
    return _merge_config(DEFAULT_CONFIG, user)


def _season_defs(config: dict) -> SeasonDefinition:
    doc = config.get("seasons")
    return SeasonDefinition.default() if doc is None else SeasonDefinition.from_json(doc)


def _lee_params(section: dict) -> LeeParams:
    noise_cv = section.get("noise_cv", "auto")
    if isinstance(noise_cv, str) and noise_cv != "auto":
        noise_cv = float(noise_cv)
    return LeeParams(window=int(section.get("window", 7)), noise_cv=noise_cv)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

EXTERNAL_OF_INTERNAL = {v: k for k, v in dataset.DEFAULT_CODE_TABLE.items()}


def write_world(out_dir: Path, spec: synthetic.WorldSpec, year: int, per_season: int) -> dict:
    """Materialise one synthetic tile: class map, legend labels, scenes."""
    out_dir.mkdir(parents=True, exist_ok=True)
    world = spec.build()
    write_raster(world.class_map, out_dir / "class_map")
    internal = world.class_map.band(0).astype(np.int64)
    external = np.vectorize(EXTERNAL_OF_INTERNAL.get)(internal).astype(np.float32)
    write_raster(RasterGrid(external[np.newaxis], nodata=-1.0), out_dir / "labels")
    dates = synthetic.seasonal_dates(year, per_season)
    scenes = synthetic.generate_time_series(world, dates)
    entries = []
    for i, (meta, grid) in enumerate(scenes):
        name = f"scene_{i:03d}"
        write_raster(grid, out_dir / name)
        entries.append({"path": name, **meta.to_dict()})
    manifest = {
        "seed": spec.seed,
        "enl": spec.enl,
        "n_classes": spec.n_classes,
        "width": spec.width,
        "height": spec.height,
        "class_map": "class_map",
        "labels": "labels",
        "scenes": entries,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def load_scenes(manifest_path: Path) -> list[tuple[SceneMeta, RasterGrid]]:
    with open(manifest_path) as fh:
        doc = json.load(fh)
    entries = doc if isinstance(doc, list) else doc["scenes"]
    base = manifest_path.parent
    return [(SceneMeta.from_dict(e), read_raster(base / e["path"])) for e in entries]


def cmd_synth(args) -> int:
    params = _synthetic_profiles(
        {"profiles": args.profiles, "classes": args.classes}
    )
    spec = synthetic.WorldSpec(
        seed=args.seed,
        width=args.width,
        height=args.height,
        n_classes=args.classes,
        enl=args.enl,
        class_params=params,
        blob_class=args.blob_class,
        blob_fraction=args.blob_fraction,
        blob_radius=args.blob_radius,
    )
    write_world(Path(args.out), spec, args.year, args.scenes_per_season)
    print(f"wrote synthetic world to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# despeckle / features
# ---------------------------------------------------------------------------


def cmd_despeckle(args) -> int:
    scenes = load_scenes(Path(args.stack))
    season = Season(args.season)
    stacks = cluster_by_season(scenes, SeasonDefinition.default())
    stack = stacks.get(season)
    if stack is None:
        raise ValueError(f"no scenes fall in season {season.value}")
    noise_cv = args.noise_cv if args.noise_cv == "auto" else float(args.noise_cv)
    params = LeeParams(window=args.window, noise_cv=noise_cv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for (meta, _), grid in zip(stack.scenes, multitemporal_despeckle(stack, params)):
        name = f"despeckled_{meta.acquisition_date.isoformat()}"
        write_raster(grid, out_dir / name)
        outputs.append({"path": name, **meta.to_dict()})
    with open(out_dir / "despeckle_manifest.json", "w") as fh:
        json.dump({"season": season.value, "window": args.window, "scenes": outputs}, fh, indent=1)
    print(f"despeckled {len(outputs)} scenes into {out_dir}")
    return 0


def cmd_features(args) -> int:
    scenes = load_scenes(Path(args.scenes))
    if args.season_defs:
        with open(args.season_defs) as fh:
            defs = SeasonDefinition.from_json(json.load(fh))
    else:
        defs = SeasonDefinition.default()
    stacks = cluster_by_season(scenes, defs)
    noise_cv = args.noise_cv if args.noise_cv == "auto" else float(args.noise_cv)
    cube = build_feature_cube(stacks, LeeParams(window=args.window, noise_cv=noise_cv))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_raster(cube.grid, out)
    meta = {
        "channels": channel_names(),
        "season_counts": {
            s.value: (0 if stacks.get(s) is None else stacks[s].count) for s in SEASON_ORDER
        },
        "empty_seasons": [s.value for s in SEASON_ORDER if stacks.get(s) is None],
    }
    with open(out.parent / (out.stem + ".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    print(f"wrote 28-band cube {out}")
    return 0


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


def _pair_inputs(cubes: str, labels: str) -> list[tuple[str, Path, Path]]:
    cube_path, label_path = Path(cubes), Path(labels)
    if cube_path.is_dir():
        pairs = []
        for header in sorted(cube_path.glob("*.json")):
            if header.name.endswith(".meta.json"):
                continue
            stem = header.stem
            lab = label_path / stem if label_path.is_dir() else label_path
            pairs.append((stem, header.with_suffix(""), Path(lab)))
        if not pairs:
            raise ValueError(f"no cubes found in {cubes}")
        return pairs
    return [(cube_path.stem, cube_path, label_path)]


def patch_id(sample: dataset.PatchSample) -> str:
    r, c = sample.offset
    return f"{sample.tile_id}_r{r:05d}_c{c:05d}"


def save_patches(samples: list[dataset.PatchSample], out_dir: Path) -> None:
    patches_dir = out_dir / "patches"
    patches_dir.mkdir(parents=True, exist_ok=True)
    for s in samples:
        pid = patch_id(s)
        write_raster(RasterGrid(s.features, nodata=np.nan), patches_dir / f"feat_{pid}")
        write_raster(
            RasterGrid(s.labels.astype(np.float32)[np.newaxis], nodata=-1.0),
            patches_dir / f"label_{pid}",
        )


def load_patches(data_dir: Path, subset: str = "all") -> list[dataset.PatchSample]:
    with open(data_dir / "split.json") as fh:
        split = json.load(fh)
    if subset == "all":
        ids = split["train"] + split["test"]
    elif subset in ("train", "test"):
        ids = split[subset]
    else:
        raise ValueError(f"subset must be train, test or all, got {subset!r}")
    samples = []
    for pid in ids:
        info = split["patches"][pid]
        feat = read_raster(data_dir / "patches" / f"feat_{pid}")
        lab = read_raster(data_dir / "patches" / f"label_{pid}")
        samples.append(
            dataset.PatchSample(
                features=feat.values.copy(),
                labels=lab.band(0).astype(np.int16),
                tile_id=info["tile"],
                offset=tuple(info["offset"]),
                ecoregion=info.get("ecoregion"),
            )
        )
    return samples


def build_dataset(
    pairs: list[tuple[str, Path, Path]],
    out_dir: Path,
    size: int,
    stride: int,
    random_state: int,
    train_fraction: float = 0.7,
    allow_empty_classes: bool = False,
    ecoregions: dict[str, int] | None = None,
    raw_samples: list[dataset.PatchSample] | None = None,
    report_lines: list[str] | None = None,
) -> dict:
    """Remap, mask, patch, split, normalize from train stats, write to disk."""
    samples: list[dataset.PatchSample] = list(raw_samples or [])
    label_map = dataset.LabelMap(allow_empty_classes=allow_empty_classes)
    for tile_id, cube_path, label_path in pairs:
        cube = read_raster(cube_path)
        labels = dataset.remap_labels(read_raster(label_path), label_map)
        masked = dataset.mask_nodata(cube, labels)
        region = None if ecoregions is None else ecoregions.get(tile_id)
        samples.extend(
            dataset.extract_patches(
                masked, labels, size=size, stride=stride, tile_id=tile_id, ecoregion=region
            )
        )
    split_spec = dataset.SplitSpec(train_fraction=train_fraction, random_state=random_state)
    train, test = dataset.split_train_test(samples, split_spec)
    stats = dataset.patch_norm_stats(train)
    train = dataset.normalize_patches(train, stats)
    test = dataset.normalize_patches(test, stats)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_patches(train + test, out_dir)
    doc = {
        "random_state": random_state,
        "train_fraction": train_fraction,
        "train": [patch_id(s) for s in train],
        "test": [patch_id(s) for s in test],
        "patches": {
            patch_id(s): {"tile": s.tile_id, "offset": list(s.offset), "ecoregion": s.ecoregion}
            for s in train + test
        },
    }
    if report_lines:
        doc["report"] = report_lines
        with open(out_dir / "report.json", "w") as fh:
            json.dump({"excluded": report_lines}, fh, indent=1)
    with open(out_dir / "split.json", "w") as fh:
        json.dump(doc, fh, indent=1)
    dataset.save_norm_stats(stats, out_dir / "norm_stats.json")
    return doc


def cmd_dataset(args) -> int:
    out_dir = Path(args.out)
    ecoregions = None
    if args.assignments:
        with open(args.assignments) as fh:
            ecoregions = {k: int(v) for k, v in json.load(fh).items()}
    if args.mode == "features":
        if not args.cubes or not args.labels:
            raise ValueError("features mode needs --cubes and --labels")
        pairs = _pair_inputs(args.cubes, args.labels)
        doc = build_dataset(
            pairs,
            out_dir,
            size=args.size,
            stride=args.stride,
            random_state=args.random_state,
            train_fraction=args.train_fraction,
            allow_empty_classes=args.allow_empty_classes,
            ecoregions=ecoregions,
        )
    else:  # timeseries
        if not args.scenes:
            raise ValueError("timeseries mode needs --scenes (directory of tile worlds)")
        tiles = []
        label_map = dataset.LabelMap(allow_empty_classes=args.allow_empty_classes)
        for manifest in sorted(Path(args.scenes).glob("*/manifest.json")):
            tile_id = manifest.parent.name
            scenes = load_scenes(manifest)
            stacks = cluster_by_season(scenes, SeasonDefinition.default())
            with open(manifest) as fh:
                doc_m = json.load(fh)
            labels = dataset.remap_labels(
                read_raster(manifest.parent / doc_m["labels"]), label_map
            )
            tiles.append((tile_id, stacks, labels))
        if not tiles:
            raise ValueError(f"no tile manifests under {args.scenes}")
        samples, lines = evaluation.timeseries_mode_dataset(
            tiles, k=args.k, size=args.size, stride=args.stride, ecoregions=ecoregions
        )
        if not samples:
            raise ValueError("every tile was excluded; nothing to build")
        doc = build_dataset(
            [],
            out_dir,
            size=args.size,
            stride=args.stride,
            random_state=args.random_state,
            train_fraction=args.train_fraction,
            raw_samples=samples,
            report_lines=lines,
        )
    print(f"wrote {len(doc['train'])} train / {len(doc['test'])} test patches to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train / predict / evaluate
# ---------------------------------------------------------------------------


def _swin_config(section: dict, in_channels: int) -> model.ModelConfig:
    return model.ModelConfig(
        in_channels=in_channels,
        n_classes=9,
        embed_dim=int(section["embed_dim"]),
        patch_size=int(section["patch_size"]),
        window=int(section["window"]),
        depths=tuple(section["depths"]),
        heads=tuple(section["heads"]),
        bottleneck_depth=int(section["bottleneck_depth"]),
        mlp_ratio=int(section["mlp_ratio"]),
    )


def train_swin(
    data_dir: Path, config: dict, ckpt: Path, seed: int, epochs: int | None = None,
    lr: float | None = None,
) -> None:
    samples = load_patches(data_dir, "train")
    in_channels = samples[0].features.shape[0]
    cfg = _swin_config(config["model"]["swin"], in_channels)
    tcfg = model.TrainConfig(
        lr=lr if lr is not None else float(config["train"]["lr"]),
        epochs=epochs if epochs is not None else int(config["train"]["epochs"]),
        batch=int(config["train"]["batch"]),
    )
    net = model.build_model(cfg, seed=seed)
    history = model.train_model(
        net,
        [s.features for s in samples],
        [s.labels for s in samples],
        tcfg,
        seed=seed,
    )
    params = dict(net.named_parameters())
    state = model.AdamState.init(params)  # moments not tracked across CLI runs
    model.save_checkpoint(ckpt, net, state)
    print(f"trained swin for {len(history)} epochs, final loss {history[-1]:.4f}")


def train_rf(data_dir: Path, config: dict, out_path: Path, seed: int) -> None:
    samples = load_patches(data_dir, "train")
    section = config["model"]["rf"]
    X, y = evaluation.flatten_pixels(samples)
    X, y = baseline.subsample_per_class(X, y, int(section["pixel_cap"]), seed)
    cfg = baseline.ForestConfig(
        n_trees=int(section["n_trees"]),
        max_depth=int(section["max_depth"]),
        min_leaf=int(section["min_leaf"]),
        features_per_split=int(section["features_per_split"]),
        seed=seed,
    )
    forest = baseline.fit(X, y, cfg)
    forest.save(out_path)
    print(f"trained forest of {cfg.n_trees} trees on {len(y)} pixels")


def cmd_train(args) -> int:
    config = load_config(args.config)
    data_dir = Path(args.data)
    if args.model == "swin":
        train_swin(data_dir, config, Path(args.checkpoint_out), args.seed, args.epochs, args.lr)
    else:
        train_rf(data_dir, config, Path(args.checkpoint_out), args.seed)
    return 0


def _load_predictor(checkpoint: Path):
    header = checkpoint if checkpoint.suffix == ".json" else checkpoint.with_suffix(".json")
    with open(header) as fh:
        kind = json.load(fh).get("kind")
    if kind == "swin_unet":
        net, _ = model.load_checkpoint(checkpoint)

        def predict(features: np.ndarray) -> np.ndarray:
            return model.predict_map(net, features)

        return predict
    if kind == "random_forest":
        forest = baseline.Forest.load(header)
        return lambda features: evaluation.predict_pixels(forest, features)
    raise ValueError(f"unknown checkpoint kind {kind!r} in {checkpoint}")


def cmd_predict(args) -> int:
    if not args.data and not args.cubes:
        raise ValueError("predict needs --data (patch mode) or --cubes (cube mode)")
    predictor = _load_predictor(Path(args.checkpoint))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    if args.data:
        samples = load_patches(Path(args.data), args.subset)
        for s in samples:
            pred = predictor(s.features)
            write_raster(
                RasterGrid(pred.astype(np.float32)[np.newaxis], nodata=-1.0),
                out_dir / f"pred_{patch_id(s)}",
            )
            count += 1
    else:
        stats = dataset.load_norm_stats(Path(args.norm_stats)) if args.norm_stats else None
        cube_path = Path(args.cubes)
        headers = (
            sorted(p for p in cube_path.glob("*.json") if not p.name.endswith(".meta.json"))
            if cube_path.is_dir()
            else [cube_path]
        )
        label_map = dataset.LabelMap()
        for header in headers:
            grid = read_raster(header)
            if args.labels:
                lab_path = Path(args.labels)
                lab_file = lab_path / header.stem if lab_path.is_dir() else lab_path
                labels = dataset.remap_labels(read_raster(lab_file), label_map)
                grid = dataset.mask_nodata(grid, labels)
            if stats is not None:
                grid = dataset.minmax_normalize(grid, stats)
            values = np.nan_to_num(grid.values, nan=0.0)
            pred = predictor(values)
            write_raster(
                RasterGrid(pred.astype(np.float32)[np.newaxis], nodata=-1.0),
                out_dir / f"pred_{header.stem}",
            )
            count += 1
    print(f"wrote {count} prediction maps to {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    pred_files = sorted(p for p in pred_dir.glob("pred_*.json"))
    if not pred_files:
        raise ValueError(f"no predictions under {pred_dir}")
    cm = None
    for pf in pred_files:
        stem = pf.stem[len("pred_") :]
        pred = read_raster(pf)
        truth_file = truth_dir / f"label_{stem}" if (truth_dir / f"label_{stem}.json").exists() else truth_dir / stem
        truth = read_raster(truth_file)
        c = metrics.confusion(pred, truth)
        cm = c if cm is None else cm.merge(c)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_metrics_csv(cm, out_dir / f"metrics_{args.label}.csv", label=args.label)
    metrics.write_confusion_csv(cm, out_dir / f"confusion_{args.label}.csv")
    s = metrics.summary(cm)
    print(f"{args.label}: oa={s['oa']:.4f} kappa={s['kappa']:.4f} f1={s['f1']:.4f}")
    return 0


def cmd_ecoregion_cv(args) -> int:
    config = load_config(args.config)
    samples = load_patches(Path(args.data), "all")
    if args.assignments:
        with open(args.assignments) as fh:
            assignment = evaluation.EcoregionAssignment({k: int(v) for k, v in json.load(fh).items()})
        assignment.require(sorted({s.tile_id for s in samples}))
        for s in samples:
            s.ecoregion = assignment.map[s.tile_id]
    trainer = _make_trainer(args.model, config)
    result = evaluation.ecoregion_cv(samples, trainer, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.write_csv(out)
    print(
        f"oa matrix written to {out}; diagonal mean {result.diagonal_mean():.4f}, "
        f"off-diagonal mean {result.off_diagonal_mean():.4f}"
    )
    return 0


def _make_trainer(kind: str, config: dict) -> evaluation.Trainer:
    if kind == "swin":
        in_channels = 28 if config["dataset"]["mode"] == "features" else 4 * int(config["dataset"]["k"])
        cfg = _swin_config(config["model"]["swin"], in_channels)
        tcfg = model.TrainConfig(
            lr=float(config["train"]["lr"]),
            epochs=int(config["train"]["epochs"]),
            batch=int(config["train"]["batch"]),
        )
        return evaluation.swin_trainer(cfg, tcfg)
    section = config["model"]["rf"]
    return evaluation.rf_trainer(
        baseline.ForestConfig(
            n_trees=int(section["n_trees"]),
            max_depth=int(section["max_depth"]),
            min_leaf=int(section["min_leaf"]),
            features_per_split=int(section["features_per_split"]),
            seed=0,
        ),
        pixel_cap=int(section["pixel_cap"]),
    )


def cmd_report(args) -> int:
    written = report.write_report(args.metrics, args.out)
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def _synthetic_profiles(synth_cfg: dict) -> dict[int, synthetic.ClassParams]:
    kind = synth_cfg["profiles"]
    n_classes = int(synth_cfg["classes"])
    if kind == "ladder":
        return synthetic.default_class_params(n_classes)
    if kind == "confusable":
        if n_classes != 5:
            raise ValueError("the confusable profile set defines exactly 5 class codes")
        return synthetic.confusable_class_params()
    raise ValueError(f"unknown profiles kind {kind!r} (use 'ladder' or 'confusable')")


def run_pipeline(config: dict) -> dict:
    """synth -> features -> dataset -> train x2 -> predict -> evaluate ->
    ecoregion-cv -> report. Returns a summary dict."""
    work = Path(config["io"]["workdir"])
    synth_cfg = config["io"]["synthetic"]
    ds_cfg = config["dataset"]
    seed = int(synth_cfg["seed"])
    n_tiles = int(synth_cfg["tiles"])
    n_regions = int(synth_cfg["ecoregions"])
    shift = float(synth_cfg["ecoregion_mean_shift"])
    lee = _lee_params(config["despeckle"])
    defs = _season_defs(config)

    # 1. synthetic worlds (one per tile; ecoregions scale the class means)
    tile_infos = []
    for t in range(n_tiles):
        tile_id = f"tile{t:02d}"
        region = (t % n_regions) if n_regions > 0 else None
        params = _synthetic_profiles(synth_cfg)
        if region is not None and region > 0:
            params = {
                code: synthetic.ClassParams(
                    mean_backscatter=tuple(m * (1.0 + shift) ** region for m in p.mean_backscatter),
                    texture_scale=p.texture_scale,
                )
                for code, p in params.items()
            }
        blob_class = synth_cfg["blob_class"]
        spec = synthetic.WorldSpec(
            seed=derive_seed(seed, t),
            width=int(synth_cfg["width"]),
            height=int(synth_cfg["height"]),
            n_classes=int(synth_cfg["classes"]),
            enl=float(synth_cfg["enl"]),
            class_params=params,
            blob_class=None if blob_class is None else int(blob_class),
            blob_fraction=float(synth_cfg["blob_fraction"]),
            blob_radius=int(synth_cfg["blob_radius"]),
        )
        write_world(work / "world" / tile_id, spec, int(synth_cfg["year"]), int(synth_cfg["scenes_per_season"]))
        tile_infos.append((tile_id, region))

    # 2. features or time-series channels, 3. dataset
    ecoregions = {tid: r for tid, r in tile_infos if r is not None} or None
    if ds_cfg["mode"] == "features":
        cubes_dir = work / "cubes"
        cubes_dir.mkdir(parents=True, exist_ok=True)
        pairs = []
        for tile_id, _ in tile_infos:
            scenes = load_scenes(work / "world" / tile_id / "manifest.json")
            cube = build_feature_cube(cluster_by_season(scenes, defs), lee)
            write_raster(cube.grid, cubes_dir / tile_id)
            pairs.append((tile_id, cubes_dir / tile_id, work / "world" / tile_id / "labels"))
        split_doc = build_dataset(
            pairs,
            work / "data",
            size=int(ds_cfg["size"]),
            stride=int(ds_cfg["stride"]),
            random_state=int(ds_cfg["random_state"]),
            train_fraction=float(ds_cfg["train_fraction"]),
            ecoregions=ecoregions,
        )
    else:
        tiles = []
        label_map = dataset.LabelMap()
        for tile_id, _ in tile_infos:
            scenes = load_scenes(work / "world" / tile_id / "manifest.json")
            labels = dataset.remap_labels(read_raster(work / "world" / tile_id / "labels"), label_map)
            tiles.append((tile_id, cluster_by_season(scenes, defs), labels))
        samples, lines = evaluation.timeseries_mode_dataset(
            tiles,
            k=int(ds_cfg["k"]),
            lee=lee,
            size=int(ds_cfg["size"]),
            stride=int(ds_cfg["stride"]),
            ecoregions=ecoregions,
        )
        if not samples:
            raise ValueError("every tile was excluded from the time-series dataset")
        split_doc = build_dataset(
            [],
            work / "data",
            size=int(ds_cfg["size"]),
            stride=int(ds_cfg["stride"]),
            random_state=int(ds_cfg["random_state"]),
            train_fraction=float(ds_cfg["train_fraction"]),
            raw_samples=samples,
            report_lines=lines,
        )

    # 4. train both models
    models_dir = work / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    train_seed = int(config["train"]["seed"])
    train_swin(work / "data", config, models_dir / "swin_ckpt", train_seed)
    train_rf(work / "data", config, models_dir / "forest.json", train_seed)

    # 5. predict + 6. evaluate on the held-out patches
    test_samples = load_patches(work / "data", "test")
    summary = {}
    eval_dir = work / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    for name, ckpt in (("swin", models_dir / "swin_ckpt"), ("rf", models_dir / "forest.json")):
        predictor = _load_predictor(ckpt)
        pred_dir = work / "pred" / name
        pred_dir.mkdir(parents=True, exist_ok=True)
        cm = None
        for s in test_samples:
            pred = predictor(s.features)
            write_raster(
                RasterGrid(pred.astype(np.float32)[np.newaxis], nodata=-1.0),
                pred_dir / f"pred_{patch_id(s)}",
            )
            c = metrics.confusion(pred, s.labels)
            cm = c if cm is None else cm.merge(c)
        metrics.write_metrics_csv(cm, eval_dir / f"metrics_{name}.csv", label=name)
        metrics.write_confusion_csv(cm, eval_dir / f"confusion_{name}.csv")
        summary[name] = metrics.summary(cm)

    # 7. cross-ecoregion OA matrix (skipped without region assignments)
    if ecoregions and len(set(ecoregions.values())) >= 2:
        all_samples = load_patches(work / "data", "all")
        trainer = _make_trainer(config["evaluate"]["ecoregion_model"], config)
        result = evaluation.ecoregion_cv(all_samples, trainer, seed=train_seed)
        result.write_csv(eval_dir / "oa_matrix.csv")
        summary["ecoregion_cv"] = {
            "regions": result.regions,
            "diagonal_mean": result.diagonal_mean(),
            "off_diagonal_mean": result.off_diagonal_mean(),
        }

    # 8. report
    report.write_report(
        [eval_dir / "metrics_swin.csv", eval_dir / "metrics_rf.csv"], work / "report"
    )
    summary["n_train"] = len(split_doc["train"])
    summary["n_test"] = len(split_doc["test"])
    with open(work / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return summary


def cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if args.workdir:
        config["io"]["workdir"] = args.workdir
    if args.random_state is not None:
        config["dataset"]["random_state"] = args.random_state
    if args.seed is not None:
        config["io"]["synthetic"]["seed"] = args.seed
    if args.epochs is not None:
        config["train"]["epochs"] = args.epochs
    summary = run_pipeline(config)
    for name in ("swin", "rf"):
        if name in summary:
            print(f"{name}: oa={summary[name]['oa']:.4f} kappa={summary[name]['kappa']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line machine-parsable usage errors
        print(f"usage_error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="sarlc", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic speckled world", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--enl", type=float, default=4.0)
    p.add_argument("--scenes-per-season", type=int, default=5)
    p.add_argument("--year", type=int, default=2021)
    p.add_argument("--profiles", choices=["ladder", "confusable"], default="ladder")
    p.add_argument("--blob-class", type=int, default=None,
                   help="paint this class as small discs instead of cells")
    p.add_argument("--blob-fraction", type=float, default=0.1)
    p.add_argument("--blob-radius", type=int, default=6)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("despeckle", help="multitemporal despeckle one season", formatter_class=fmt)
    p.add_argument("--stack", required=True, help="scene manifest JSON")
    p.add_argument("--season", required=True, choices=[s.value for s in SEASON_ORDER])
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--noise-cv", default="auto", help="float or 'auto'")
    p.set_defaults(func=cmd_despeckle)

    p = sub.add_parser("features", help="build the 28-band seasonal feature cube", formatter_class=fmt)
    p.add_argument("--scenes", required=True, help="scene manifest JSON")
    p.add_argument("--out", required=True, help="output cube path (stem)")
    p.add_argument("--season-defs", default=None, help="season definition JSON")
    p.add_argument("--window", type=int, default=7, help="ratio-filter window")
    p.add_argument("--noise-cv", default="auto")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("dataset", help="patches + split + normalization stats", formatter_class=fmt)
    p.add_argument("--cubes", default=None, help="cube raster file or directory")
    p.add_argument("--labels", default=None, help="label raster file or directory")
    p.add_argument("--scenes", default=None, help="worlds directory (timeseries mode)")
    p.add_argument("--out", required=True)
    p.add_argument("--random-state", type=int, default=42)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--stride", type=int, default=128)
    p.add_argument("--mode", choices=["features", "timeseries"], default="features")
    p.add_argument("--k", type=int, default=5, help="scenes per season (timeseries mode)")
    p.add_argument("--allow-empty-classes", action="store_true")
    p.add_argument("--assignments", default=None, help="tile -> ecoregion JSON")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the swin or rf classifier", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", choices=["swin", "rf"], default="swin")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="emit class-map rasters", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="dataset directory (patch mode)")
    p.add_argument("--subset", choices=["train", "test", "all"], default="test")
    p.add_argument("--cubes", default=None, help="cube raster file or directory")
    p.add_argument("--labels", default=None, help="labels for masking (cube mode)")
    p.add_argument("--norm-stats", default=None, help="norm_stats.json (cube mode)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="confusion matrix metrics", formatter_class=fmt)
    p.add_argument("--pred", required=True, help="directory of pred_* rasters")
    p.add_argument("--truth", required=True, help="directory of matching label rasters")
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="model", help="row label for metrics.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ecoregion-cv", help="cross-ecoregion OA matrix", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--assignments", default=None, help="tile -> ecoregion JSON")
    p.add_argument("--model", choices=["swin", "rf"], default="rf")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="oa matrix CSV path")
    p.set_defaults(func=cmd_ecoregion_cv)

    p = sub.add_parser("report", help="SVG charts + merged CSV from metrics files", formatter_class=fmt)
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="full synthetic end-to-end run", formatter_class=fmt)
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--workdir", default=None)
    p.add_argument("--random-state", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("SARLC_THREADS", "1")
    try:
        import torch

        torch.set_num_threads(max(1, int(threads)))
    except (ImportError, ValueError):
        pass
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, KeyError) as exc:
        print(f"validation_error: {exc}", file=sys.stderr)
        return 3
    except (OSError, RuntimeError) as exc:
        print(f"runtime_error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
