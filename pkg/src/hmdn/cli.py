"""Command-line front door: simulate datasets, train the two networks, run
predictions with plots, and evaluate baseline vs hierarchical estimates.

Every command is a pure function of its inputs on disk, its flags, and the
master seed: rerunning writes byte-identical outputs (none of the formats
carry timestamps). Per-stage random streams derive from the master seed
and the stage name, so stages can be rerun individually without disturbing
each other.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, evaluate, mdn, pipeline, plots, scenario
from .errors import DomainError, NumericError, ParseError, SchemaError, ShapeError
from .numcore import Rng

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    """Bad flag/argument combination; maps to exit code 2."""


_SIMULATE_DEFAULTS = {
    "scene": None,
    "out_dir": None,
    "n_train": 100,
    "n_test": 50,
    "seed": 0,
    "measurement_noise": False,
    "augment": None,
    "train_fraction": 0.8,
}

_TRAIN_DEFAULTS = {
    "which": None,
    "data": None,
    "model_out": None,
    "log_out": None,
    "seed": 0,
    "normalize": "zero_one",
    "components": None,  # g1 -> 5, g2 -> 3 unless given
    "hidden": "64,64",
    "activation": "tanh",
    "optimizer": "adam",
    "learning_rate": 1e-3,
    "epochs": 2000,
    "batch_size": 64,
    "sigma_floor": 1e-3,
    "lux_columns": None,
    "lux_transform": "log",
    "input_dim": None,
    "target_dim": None,
}

_PREDICT_DEFAULTS = {
    "g1": None,
    "g2": None,
    "data": None,
    "scene": None,
    "out_dir": None,
    "records": "0,1,2",
    "conditions": "all",
    "m": 100,
    "n": 20,
    "seed": 0,
    "normalize": "zero_one",
    "lux_transform": "log",
    "weighted": False,
    "no_plots": False,
}

_EVALUATE_DEFAULTS = {
    "g1": None,
    "g2": None,
    "data": None,
    "out_dir": None,
    "conditions": "all",
    "m": 100,
    "n": 20,
    "seed": 0,
    "normalize": "zero_one",
    "lux_transform": "log",
    "bootstrap": 10_000,
    "from_dump": None,
}


def _merge_options(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    opts = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise UsageError(f"{config_path}: config file must hold a JSON object")
        for key, value in doc.items():
            if key not in defaults:
                raise UsageError(f"{config_path}: unknown option {key!r}")
            opts[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def _require(opts: dict, *keys) -> None:
    for key in keys:
        if opts[key] is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _load_scene(opts) -> scenario.Scene:
    if opts.get("scene"):
        return scenario.load_scene(opts["scene"])
    return scenario.paper_room_scene()


def _out_dir(opts) -> Path:
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model_file(path_str: str, which: str) -> mdn.MdnModel:
    path = Path(path_str)
    if not path.exists():
        raise FileNotFoundError(
            f"model file {path} not found; train it first with "
            f"`hmdn train --which {which} --data <train.csv> --model-out {path}`"
        )
    return dataio.load_model(path)


def _lux_transform(values: np.ndarray, transform: str) -> np.ndarray:
    """The observable g2 models: raw lux, or its natural log (default).

    The log recoding is monotone, so candidate ranking is the quantity the
    selection needs either way; it tames the several-decade dynamic range
    of direct sunlight vs night lighting. Train and predict must use the
    same setting.
    """
    if transform == "identity":
        return values
    if transform == "log":
        return np.log(np.maximum(values, 1e-12))
    raise UsageError(f"--lux-transform must be identity or log, got {transform!r}")


def _lux_columns(table: dataio.FingerprintTable, conditions: str, transform: str) -> dict:
    """condition name -> per-record observable column, in CSV column order."""
    available = {
        col[len("LUX_") :]: col for col in table.metadata if col.startswith("LUX_")
    }
    if not available:
        raise SchemaError("dataset has no LUX_<condition> columns")
    if conditions == "all":
        wanted = list(available)
    else:
        wanted = [c.strip() for c in conditions.split(",") if c.strip()]
        missing = [c for c in wanted if c not in available]
        if missing:
            raise UsageError(
                f"condition {missing[0]!r} not in dataset (has {sorted(available)})"
            )
    return {
        c: _lux_transform(table.metadata_floats(available[c]), transform) for c in wanted
    }


def _dataset_extra_columns(ds: scenario.SimulatedDataset) -> dict:
    extra = {f"LUX_{name}": values for name, values in ds.lux.items()}
    if ds.lux_noisy is not None:
        extra |= {f"LUXN_{name}": values for name, values in ds.lux_noisy.items()}
    return extra


def cmd_simulate(args) -> int:
    opts = _merge_options(_SIMULATE_DEFAULTS, args)
    _require(opts, "out_dir")
    scene = _load_scene(opts)
    out = _out_dir(opts)
    master = Rng(int(opts["seed"]))
    noise = bool(opts["measurement_noise"])

    if opts["augment"]:
        return _simulate_augment(opts, scene, out, master, noise)

    if int(opts["n_train"]) < 1 or int(opts["n_test"]) < 1:
        raise UsageError("n-train and n-test must both be >= 1")
    for name, count, rng in (
        ("train", int(opts["n_train"]), master.spawn("simulate", "train")),
        ("test", int(opts["n_test"]), master.spawn("simulate", "test")),
    ):
        ds = scenario.generate_dataset(scene, count, rng, measurement_noise=noise)
        path = out / f"{name}.csv"
        dataio.write_dataset_csv(
            path, ds.wap_names, ds.rssi, ds.positions, extra=_dataset_extra_columns(ds)
        )
        print(f"{name}: {ds.n_records} records -> {path}")
    return EXIT_OK


def _simulate_augment(opts, scene, out, master: Rng, noise: bool) -> int:
    """Graft simulated illumination onto a real fingerprint CSV: coordinates
    are mapped into the room, lux columns appended, originals preserved under
    ORIG_ columns, and the result split into train/test files."""
    table = dataio.load_csv(opts["augment"])
    rng = master.spawn("simulate", "augment") if noise else None
    mapped, lux, lux_noisy = scenario.augment_with_illuminance(table.coords, scene, rng)

    def fmt_col(values):
        return tuple(format(float(v), ".17g") for v in values)

    metadata = dict(table.metadata)
    metadata["ORIG_" + table.schema.x_column] = fmt_col(table.coords[:, 0])
    metadata["ORIG_" + table.schema.y_column] = fmt_col(table.coords[:, 1])
    for name, values in lux.items():
        metadata[f"LUX_{name}"] = fmt_col(values)
    if lux_noisy is not None:
        for name, values in lux_noisy.items():
            metadata[f"LUXN_{name}"] = fmt_col(values)
    augmented = dataio.FingerprintTable(
        wap_names=table.wap_names,
        rssi=table.rssi,
        coords=mapped,
        metadata=metadata,
        schema=table.schema,
    )
    spec = dataio.SplitSpec(
        train_fraction=float(opts["train_fraction"]), seed=int(opts["seed"])
    )
    train_part, test_part = dataio.split(augmented, spec)
    for name, part in (("train", train_part), ("test", test_part)):
        path = out / f"{name}.csv"
        dataio.table_to_csv(part, path)
        print(f"{name}: {part.n_records} records (augmented) -> {path}")
    return EXIT_OK


def _training_pairs(table, which: str, opts):
    if which == "g1":
        X = dataio.normalize_rssi(table, opts["normalize"]).features
        Y = table.coords
    else:
        lux_cols = opts["lux_columns"]
        if lux_cols is None:
            names = [c for c in table.metadata if c.startswith("LUX_")]
        else:
            names = [c.strip() for c in str(lux_cols).split(",") if c.strip()]
        if not names:
            raise SchemaError("no lux columns available to train g2 on")
        columns = [
            _lux_transform(table.metadata_floats(c), opts["lux_transform"]) for c in names
        ]
        # pool conditions: every record contributes one (position, lux) pair
        # per column, which is what makes position -> lux one-to-many
        X = np.vstack([table.coords] * len(columns))
        Y = np.concatenate(columns).reshape(-1, 1)
    return X, Y


def cmd_train(args) -> int:
    opts = _merge_options(_TRAIN_DEFAULTS, args)
    _require(opts, "which", "data", "model_out")
    which = opts["which"]
    if which not in ("g1", "g2"):
        raise UsageError(f"--which must be g1 or g2, got {which!r}")
    table = dataio.load_csv(opts["data"])
    X, Y = _training_pairs(table, which, opts)

    if opts["input_dim"] is not None and int(opts["input_dim"]) != X.shape[1]:
        raise UsageError(
            f"{which} input dimension must equal {X.shape[1]} "
            f"({'normalized WAP count' if which == 'g1' else 'coordinates'}), "
            f"got {opts['input_dim']}"
        )
    if opts["target_dim"] is not None and int(opts["target_dim"]) != Y.shape[1]:
        raise UsageError(f"{which} target dimension must equal {Y.shape[1]}")

    components = opts["components"]
    if components is None:
        components = 5 if which == "g1" else 3
    hidden = tuple(int(h) for h in str(opts["hidden"]).split(",") if h.strip())
    config = mdn.MdnConfig(
        input_dim=X.shape[1],
        target_dim=Y.shape[1],
        n_components=int(components),
        hidden_layers=hidden,
        hidden_activation=opts["activation"],
        learning_rate=float(opts["learning_rate"]),
        optimizer=opts["optimizer"],
        epochs=int(opts["epochs"]),
        batch_size=int(opts["batch_size"]),
        sigma_floor=float(opts["sigma_floor"]),
        seed=Rng(int(opts["seed"])).spawn("train", which).seed,
    )
    model = mdn.train((X, Y), config)

    model_out = Path(opts["model_out"])
    model_out.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_model(model, model_out)
    log_out = Path(opts["log_out"]) if opts["log_out"] else model_out.with_suffix(
        model_out.suffix + ".log.csv"
    )
    with open(log_out, "w", encoding="utf-8") as fh:
        fh.write("epoch,nll\n")
        for i, v in enumerate(model.training_log, start=1):
            fh.write(f"{i},{format(v, '.17g')}\n")
    print(f"{which}: trained {len(model.training_log)} epochs -> {model_out}")
    print(f"final nll {format(model.training_log[-1], '.6g')}")
    return EXIT_OK


def _prediction_inputs(opts):
    table = dataio.load_csv(opts["data"])
    if table.n_records == 0:
        raise UsageError("test set is empty")
    g1 = _load_model_file(opts["g1"], "g1")
    g2 = _load_model_file(opts["g2"], "g2")
    features = dataio.normalize_rssi(table, opts["normalize"]).features
    if features.shape[1] != g1.config.input_dim:
        raise ShapeError(
            f"dataset has {features.shape[1]} WAP features, g1 expects {g1.config.input_dim}"
        )
    lux = _lux_columns(table, opts["conditions"], opts["lux_transform"])
    pipe = pipeline.HmdnPipeline(
        g1=g1, g2=g2, n_candidates=int(opts["m"]), n_selected=int(opts["n"])
    )
    return table, pipe, features, lux


def _parse_records(spec: str, n_records: int):
    if spec == "all":
        return list(range(n_records))
    try:
        ids = [int(t) for t in str(spec).split(",") if t.strip() != ""]
    except ValueError:
        raise UsageError(f"--records must be 'all' or comma-separated indices, got {spec!r}")
    bad = [i for i in ids if not 0 <= i < n_records]
    if bad:
        raise UsageError(f"record index {bad[0]} out of range (dataset has {n_records})")
    return ids


def cmd_predict(args) -> int:
    opts = _merge_options(_PREDICT_DEFAULTS, args)
    _require(opts, "g1", "g2", "data", "out_dir")
    table, pipe, features, lux = _prediction_inputs(opts)
    record_ids = _parse_records(opts["records"], table.n_records)
    out = _out_dir(opts)
    master_seed = int(opts["seed"])

    records = pipeline.run_predictions(
        pipe,
        features,
        table.coords,
        lux,
        record_ids,
        master_seed,
        weighted=bool(opts["weighted"]),
    )
    dump_path = out / "predictions.txt"
    pipeline.write_predictions(
        dump_path, records, master_seed, pipe.n_candidates, pipe.n_selected
    )
    print(f"predictions: {len(records)} -> {dump_path}")

    if not opts["no_plots"]:
        scene = _load_scene(opts)
        for r in records:
            plot_path = out / f"plot_r{r.record_id:03d}_{r.condition}.svg"
            plots.write_scatter_svg(plot_path, scene, r)
        print(f"plots: {len(records)} svg files -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    opts = _merge_options(_EVALUATE_DEFAULTS, args)
    _require(opts, "out_dir")
    out = _out_dir(opts)
    n_boot = int(opts["bootstrap"])

    if opts["from_dump"]:
        metrics = evaluate.metrics_from_dump(opts["from_dump"], n_boot)
    else:
        _require(opts, "g1", "g2", "data")
        table, pipe, features, lux = _prediction_inputs(opts)
        records = pipeline.run_predictions(
            pipe, features, table.coords, lux, range(table.n_records), int(opts["seed"])
        )
        metrics = evaluate.compute_metrics(records, int(opts["seed"]), n_boot)

    table_text = evaluate.format_metrics_table(metrics)
    (out / "metrics.txt").write_text(table_text + "\n", encoding="utf-8")
    evaluate.write_metrics_csv(metrics, out / "metrics.csv")
    print(table_text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmdn",
        description="mixture density networks, hierarchically composed, on a synthetic room",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of options (flags override it)")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "generate synthetic train/test fingerprint datasets")
    p.add_argument("--scene", help="scene JSON (default: bundled paper room)")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--measurement-noise", dest="measurement_noise", action="store_const", const=True
    )
    p.add_argument("--augment", help="real fingerprint CSV to augment with simulated lux")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)

    p = add("train", cmd_train, "train one of the two networks")
    p.add_argument("--which", choices=("g1", "g2"))
    p.add_argument("--data")
    p.add_argument("--model-out", dest="model_out")
    p.add_argument("--log-out", dest="log_out")
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", choices=("zero_one", "powed"))
    p.add_argument("--components", type=int)
    p.add_argument("--hidden", help="comma-separated hidden widths, empty for affine")
    p.add_argument("--activation", choices=("tanh", "relu"))
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--sigma-floor", dest="sigma_floor", type=float)
    p.add_argument("--lux-columns", dest="lux_columns")
    p.add_argument("--lux-transform", dest="lux_transform", choices=("identity", "log"))
    p.add_argument("--input-dim", dest="input_dim", type=int)
    p.add_argument("--target-dim", dest="target_dim", type=int)

    p = add("predict", cmd_predict, "dump candidate clouds, selections, and plots")
    p.add_argument("--g1")
    p.add_argument("--g2")
    p.add_argument("--data")
    p.add_argument("--scene")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--records", help="'all' or comma-separated record indices")
    p.add_argument("--conditions", help="'all' or comma-separated condition names")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", choices=("zero_one", "powed"))
    p.add_argument("--lux-transform", dest="lux_transform", choices=("identity", "log"))
    p.add_argument("--weighted", action="store_const", const=True)
    p.add_argument("--no-plots", dest="no_plots", action="store_const", const=True)

    p = add("evaluate", cmd_evaluate, "error metrics: baseline vs hierarchical")
    p.add_argument("--g1")
    p.add_argument("--g2")
    p.add_argument("--data")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--conditions")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", choices=("zero_one", "powed"))
    p.add_argument("--lux-transform", dest="lux_transform", choices=("identity", "log"))
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--from-dump", dest="from_dump")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_USAGE if exit_.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ParseError, ShapeError, DomainError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, PermissionError, IsADirectoryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
