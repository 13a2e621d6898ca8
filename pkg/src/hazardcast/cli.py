"""Command-line interface: ingest | train | evaluate | explain | global | render | synth.

Every subcommand reads an optional JSON config (sections: data, model, train,
explain), lets long-form flags override it, routes all randomness through a
single --seed, and drops a manifest JSON next to its outputs with the
resolved configuration, input digests and output list, so any run can be
reproduced from the manifest alone.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .explain import (AttributionMatrix, baseline_window, explain_instance,
                      global_aggregate, instance_seed, select_segments)
from .hazards import HAZARDS, hazard_index
from .ingest import (CountyDayTable, IngestError, SeverityPolicy, aggregate_to_county,
                     apply_standardizer, build_targets, filter_severity,
                     fit_standardizer, parse_daily_weather, parse_storm_events)
from .models import CheckpointError, ModelCheckpoint, ModelConfig
from .report import render_heatmap, warning_probability
from .synth import SynthConfig, generate
from .training import (TrainConfig, TrainingDiverged, evaluate, save_history,
                       save_metrics, train)
from .windowing import SplitError, SplitSpec, chrono_split, make_windows

DEFAULTS = {
    "data": {
        "county": None,
        "window_days": 14,
        "length": 90,
        "stride": 1,
        "train_frac": 0.7,
        "val_frac": 0.15,
        "test_frac": 0.15,
        "max_missing_frac": 0.1,
        "max_gap_days": 3,
        "min_damage_usd": 10000.0,
        "keep_if_casualties": True,
    },
    "model": {
        "architecture": "bilstm",
        "hidden_size": 64,
        "attention_size": 32,
        "d_model": 32,
        "heads": 4,
        "layers": 2,
        "ffn_size": 64,
    },
    "train": {
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "weight_decay": 0.01,
        "batch_size": 32,
        "max_epochs": 100,
        "patience": 10,
        "include_stirling": False,
    },
    "explain": {
        "top_events": 3,
        "top_features": 3,
        "nsamples": 2000,
        "tolerance": None,
        "method": "shap_magnitude",
        "k": 5,
        "threshold": 1.5,
        "instances": 25,
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):   # exit code 1, not argparse's 2
        raise UsageError(f"{self.prog}: {message}")


def _known_flags(parser: argparse.ArgumentParser) -> list[str]:
    flags: set[str] = set()
    stack = [parser]
    while stack:
        p = stack.pop()
        for action in p._actions:
            flags.update(action.option_strings)
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
    return sorted(flags)


def _suggest_flags(message: str, parser: argparse.ArgumentParser) -> str:
    if "unrecognized arguments:" not in message:
        return message
    bad = [tok for tok in message.split("unrecognized arguments:")[1].split()
           if tok.startswith("--")]
    known = _known_flags(parser)
    notes = []
    for flag in bad:
        close = difflib.get_close_matches(flag, known, n=1)
        if close:
            notes.append(f"did you mean {close[0]} instead of {flag}?")
    return message + ("" if not notes else " (" + "; ".join(notes) + ")")


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IngestError(f"config {path}: not valid JSON ({e})") from None
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"config {path}: unknown sections {sorted(unknown)}; "
                         f"expected subset of {sorted(DEFAULTS)}")
    for section, values in doc.items():
        bad = set(values) - set(DEFAULTS[section])
        if bad:
            raise UsageError(f"config {path}: unknown keys {sorted(bad)} in "
                             f"section {section!r}")
    return doc


def resolve_config(args, overrides: dict[tuple[str, str], object]) -> dict:
    """defaults <- config file <- explicit flags."""
    resolved = {s: dict(v) for s, v in DEFAULTS.items()}
    if getattr(args, "config", None):
        for section, values in load_config(args.config).items():
            resolved[section].update(values)
    for (section, key), value in overrides.items():
        if value is not None:
            resolved[section][key] = value
    return resolved


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(manifest_path, command: str, args_echo: dict, config: dict,
                   seed: int, inputs: list, outputs: list) -> None:
    doc = {
        "tool": "hazardcast",
        "version": __version__,
        "command": command,
        "seed": seed,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in args_echo.items()},
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    Path(manifest_path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _manifest_for(out_path) -> Path:
    out_path = Path(out_path)
    if out_path.suffix:
        return out_path.with_name(out_path.stem + ".manifest.json")
    return out_path / "manifest.json"


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    config = resolve_config(args, {})
    synth_config = SynthConfig(seed=args.seed, days=args.days, features=args.features,
                               county=args.county)
    out = generate(synth_config, args.out)
    write_manifest(_manifest_for(Path(args.out)), "synth",
                   {"out": args.out, "days": args.days, "features": args.features,
                    "county": args.county},
                   config, args.seed, [],
                   [out.weather_csv, out.events_csv, out.truth_json])
    print(f"synth: wrote {out.weather_csv} ({args.days} days, {args.features} features)")
    return 0


def cmd_ingest(args) -> int:
    config = resolve_config(args, {
        ("data", "county"): args.county,
        ("data", "window_days"): args.window_days,
        ("data", "length"): args.length,
        ("data", "max_missing_frac"): args.max_missing_frac,
        ("data", "max_gap_days"): args.max_gap_days,
        ("data", "min_damage_usd"): args.min_damage,
    })
    data = config["data"]
    if not data["county"]:
        raise UsageError("ingest needs --county (or data.county in the config)")

    records = parse_daily_weather(args.weather)
    events, stats = parse_storm_events(args.events)
    policy = SeverityPolicy(min_damage_usd=data["min_damage_usd"],
                            keep_if_casualties=data["keep_if_casualties"])
    severe = filter_severity(events, policy)
    stations = set(args.stations.split(",")) if args.stations else None

    table = aggregate_to_county(records, data["county"], station_ids=stations,
                                max_missing_frac=data["max_missing_frac"],
                                max_gap_days=data["max_gap_days"],
                                min_days=2 * data["length"])
    table = build_targets(table, severe, window_days=data["window_days"])

    # leakage guard: fit statistics on the leading train fraction of labeled days
    n_fit = max(int(data["train_frac"] * table.n_labeled), 1)
    std = fit_standardizer(table, (table.dates[0], table.dates[n_fit - 1]))
    table = apply_standardizer(table, std)
    table.save(args.out, config_echo=data)

    write_manifest(_manifest_for(args.out), "ingest",
                   {"weather": args.weather, "events": args.events,
                    "county": data["county"], "out": args.out,
                    "stations": args.stations},
                   config, args.seed, [args.weather, args.events],
                   [args.out, CountyDayTable.sidecar_path(args.out)])
    print(f"ingest: {len(records)} station-days, {len(events)} events parsed "
          f"({stats.dropped_unmapped} unmapped dropped), {len(severe)} severe kept")
    print(f"ingest: table {table.n_days} days x {len(table.feature_names)} features "
          f"-> {args.out}")
    return 0


def _load_table_and_windows(table_path, config) -> tuple:
    table = CountyDayTable.load(table_path)
    data = config["data"]
    samples = make_windows(table, data["length"], data["stride"])
    spec = SplitSpec(data["train_frac"], data["val_frac"], data["test_frac"])
    splits = chrono_split(samples, spec)
    return table, samples, splits


def cmd_train(args) -> int:
    config = resolve_config(args, {
        ("data", "length"): args.length,
        ("data", "stride"): args.stride,
        ("model", "architecture"): args.arch,
        ("model", "hidden_size"): args.hidden_size,
        ("train", "learning_rate"): args.learning_rate,
        ("train", "max_epochs"): args.epochs,
        ("train", "batch_size"): args.batch_size,
        ("train", "patience"): args.patience,
    })
    table, samples, splits = _load_table_and_windows(args.data, config)

    model_config = ModelConfig(input_features=len(table.feature_names),
                               seed=args.seed, **config["model"])
    train_config = TrainConfig(seed=args.seed, **config["train"])
    checkpoint, history = train(model_config, train_config, splits,
                                table.feature_names,
                                standardizer=table.standardizer.to_dict()
                                if table.standardizer else None)
    checkpoint.save(args.out)
    history_path = Path(args.out).with_name(Path(args.out).stem + ".history.csv")
    save_history(history, history_path)

    write_manifest(_manifest_for(args.out), "train",
                   {"data": args.data, "arch": model_config.architecture,
                    "out": args.out},
                   config, args.seed, [args.data], [args.out, history_path])
    best = min(history, key=lambda h: h.val_loss)
    print(f"train: {model_config.architecture} for {len(history)} epochs on "
          f"{len(splits[0])} samples; best val loss {best.val_loss:.4f} "
          f"(epoch {best.epoch}) -> {args.out}")
    return 0


def _pick_split(splits, samples, which: str) -> tuple[list, int]:
    """The chosen sample list plus its chronological index offset."""
    if which == "all":
        return samples, 0
    try:
        idx = ("train", "val", "test").index(which)
    except ValueError:
        raise UsageError(f"--split must be train, val, test or all, got {which!r}") from None
    return splits[idx], sum(len(s) for s in splits[:idx])


def cmd_evaluate(args) -> int:
    config = resolve_config(args, {
        ("data", "length"): args.length,
        ("data", "stride"): args.stride,
    })
    checkpoint = ModelCheckpoint.load(args.ckpt)
    table, samples, splits = _load_table_and_windows(args.data, config)
    chosen, _ = _pick_split(splits, samples, args.split)
    metrics = evaluate(checkpoint, chosen)
    save_metrics(metrics, args.out)

    write_manifest(_manifest_for(args.out), "evaluate",
                   {"ckpt": args.ckpt, "data": args.data, "split": args.split,
                    "out": args.out},
                   config, args.seed, [args.ckpt, args.data], [args.out])
    print(f"evaluate[{args.split}]: MAE {metrics.mae:.4f}, RMSE {metrics.rmse:.4f} "
          f"over {len(chosen)} samples -> {args.out}")
    return 0


def _explain_one(model, table, sample, hazard, config, seed, index):
    ex = config["explain"]
    baseline = baseline_window(table, len(sample.dates))
    attr = explain_instance(
        model, sample.inputs, baseline, hazard,
        top_events=ex["top_events"], top_features=ex["top_features"],
        tolerance=ex["tolerance"], nsamples=ex["nsamples"],
        seed=instance_seed(seed, index, hazard_index(hazard)),
        dates=sample.dates, feature_names=table.feature_names)
    if ex["method"] == "attention":
        with ad.no_grad():
            alpha = model.forward(sample.inputs[None]).attention[0]
        selection = select_segments(attention=alpha, method="attention",
                                    threshold=ex["threshold"],
                                    prune_index=attr.prune_index)
    else:
        selection = select_segments(attr=attr, method="shap_magnitude", k=ex["k"])
    return attr, selection


def cmd_explain(args) -> int:
    config = resolve_config(args, {
        ("data", "length"): args.length,
        ("data", "stride"): args.stride,
        ("explain", "top_events"): args.top_events,
        ("explain", "top_features"): args.top_features,
        ("explain", "method"): args.method,
    })
    if args.hazard not in HAZARDS:
        raise UsageError(f"--hazard must be one of {', '.join(HAZARDS)}, got {args.hazard!r}")
    checkpoint = ModelCheckpoint.load(args.ckpt)
    table, samples, _ = _load_table_and_windows(args.data, config)
    if not 0 <= args.index < len(samples):
        raise UsageError(f"--index must be in [0, {len(samples)}), got {args.index}")
    model = checkpoint.build_model()
    sample = samples[args.index]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    attr, selection = _explain_one(model, table, sample, args.hazard, config,
                                   args.seed, args.index)
    attr_path = out_dir / f"attribution_{args.index:05d}_{args.hazard}.csv"
    attr.save(attr_path, extra={"selection": selection, "index": args.index,
                                "anchor_date": sample.anchor_date.isoformat()})

    rates = model.predict_rates(sample.inputs[None])[0]
    probs = warning_probability(rates)
    probs_path = out_dir / f"warning_{args.index:05d}.csv"
    with probs_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["hazard", "expected_count", "p_at_least_one"])
        for name, lam, p in zip(HAZARDS, rates, probs):
            writer.writerow([name, f"{lam:.6f}", f"{p:.6f}"])

    write_manifest(_manifest_for(out_dir), "explain",
                   {"ckpt": args.ckpt, "data": args.data, "index": args.index,
                    "hazard": args.hazard, "out": args.out},
                   config, args.seed, [args.ckpt, args.data],
                   [attr_path, probs_path])
    print(f"explain: sample {args.index} ({sample.anchor_date}) hazard {args.hazard}: "
          f"rate {attr.fx:.4f} vs baseline {attr.base_value:.4f}, "
          f"prune_index {attr.prune_index}, selected timesteps {selection}")
    return 0


def cmd_global(args) -> int:
    config = resolve_config(args, {
        ("data", "length"): args.length,
        ("data", "stride"): args.stride,
        ("explain", "instances"): args.instances,
        ("explain", "method"): args.method,
    })
    if args.hazard not in HAZARDS:
        raise UsageError(f"--hazard must be one of {', '.join(HAZARDS)}, got {args.hazard!r}")
    checkpoint = ModelCheckpoint.load(args.ckpt)
    table, samples, splits = _load_table_and_windows(args.data, config)
    chosen, offset = _pick_split(splits, samples, args.split)
    model = checkpoint.build_model()

    n = min(config["explain"]["instances"], len(chosen))
    picks = sorted(set(np.linspace(0, len(chosen) - 1, n).round().astype(int)))
    out_dir = Path(args.out)
    (out_dir / "instances").mkdir(parents=True, exist_ok=True)

    instances = []
    outputs = []
    for i in picks:
        sample = chosen[i]
        attr, selection = _explain_one(model, table, sample, args.hazard, config,
                                       args.seed, offset + i)
        path = out_dir / "instances" / f"attribution_{offset + i:05d}.csv"
        attr.save(path, extra={"selection": selection, "index": int(offset + i),
                               "anchor_date": sample.anchor_date.isoformat()})
        outputs.append(path)
        instances.append((attr, selection))

    matrix = global_aggregate(instances, selection_method=config["explain"]["method"],
                              params={"k": config["explain"]["k"],
                                      "threshold": config["explain"]["threshold"],
                                      "instances": len(instances)})
    global_path = out_dir / f"global_{args.hazard}.csv"
    matrix.save(global_path)
    outputs.append(global_path)

    write_manifest(_manifest_for(out_dir), "global",
                   {"ckpt": args.ckpt, "data": args.data, "hazard": args.hazard,
                    "split": args.split, "out": args.out},
                   config, args.seed, [args.ckpt, args.data], outputs)
    print(f"global: aggregated {len(instances)} instances for {args.hazard} "
          f"-> {global_path}")
    return 0


def _read_matrix_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 2:
            raise IngestError(f"{path}: expected a labeled matrix CSV")
        col_labels = header[1:]
        row_labels, rows = [], []
        for row in reader:
            row_labels.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise IngestError(f"{path}: non-numeric matrix cell in row "
                                  f"{row_labels[-1]!r}") from None
    return rows, row_labels, col_labels


def cmd_render(args) -> int:
    config = resolve_config(args, {})
    rows, row_labels, col_labels = _read_matrix_csv(args.matrix)
    values = np.asarray(rows, dtype=np.float64)
    if not args.signed:
        values = np.abs(values)
    svg = render_heatmap(values, row_labels, col_labels, scale=args.scale,
                         title=args.title)
    Path(args.out).write_text(svg, encoding="utf-8")

    write_manifest(_manifest_for(args.out), "render",
                   {"matrix": args.matrix, "out": args.out, "scale": args.scale,
                    "signed": args.signed, "title": args.title},
                   config, args.seed, [args.matrix], [args.out])
    print(f"render: {args.matrix} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="hazardcast",
                     description="Multi-hazard count forecasts from daily weather, "
                                 "with Shapley explanations")
    parser.add_argument("--version", action="version", version=f"hazardcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (sections: data, model, train, explain)")
        p.add_argument("--seed", type=int, default=0, help="seed for all randomness")

    p = sub.add_parser("synth", help="generate synthetic weather/event CSVs with known law")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--days", type=int, default=3000)
    p.add_argument("--features", type=int, default=6)
    p.add_argument("--county", default="SYNTH")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("ingest", help="weather+events CSVs -> standardized county table")
    common(p)
    p.add_argument("--weather", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--county")
    p.add_argument("--out", required=True, help="output table CSV path")
    p.add_argument("--stations", help="comma-separated station ids to keep")
    p.add_argument("--window-days", dest="window_days", type=int)
    p.add_argument("--length", type=int, help="planned model lookback (sizes the table check)")
    p.add_argument("--max-missing-frac", dest="max_missing_frac", type=float)
    p.add_argument("--max-gap-days", dest="max_gap_days", type=int)
    p.add_argument("--min-damage", dest="min_damage", type=float)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("train", help="fit a model on an ingested table")
    common(p)
    p.add_argument("--data", required=True, help="table CSV from ingest")
    p.add_argument("--out", required=True, help="checkpoint JSON path")
    p.add_argument("--arch", choices=("lstm", "bilstm", "transformer"))
    p.add_argument("--length", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--hidden-size", dest="hidden_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="MAE/RMSE of a checkpoint on a split")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--length", type=int)
    p.add_argument("--stride", type=int)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("explain", help="local attribution for one sample and hazard")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, required=True, help="sample index (chronological)")
    p.add_argument("--hazard", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--length", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--top-events", dest="top_events", type=int)
    p.add_argument("--top-features", dest="top_features", type=int)
    p.add_argument("--method", choices=("shap_magnitude", "attention"))
    p.set_defaults(handler=cmd_explain)

    p = sub.add_parser("global", help="seasonal feature-importance matrix over many samples")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--hazard", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="test")
    p.add_argument("--instances", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--method", choices=("shap_magnitude", "attention"))
    p.set_defaults(handler=cmd_global)

    p = sub.add_parser("render", help="labeled matrix CSV -> SVG heatmap")
    common(p)
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", choices=("linear", "log1p"), default="linear")
    p.add_argument("--title")
    p.add_argument("--signed", action="store_true",
                   help="do not take magnitudes before rendering")
    p.set_defaults(handler=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except UsageError as e:
            raise UsageError(_suggest_flags(str(e), parser)) from None
        return args.handler(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (IngestError, CheckpointError, SplitError, FileNotFoundError,
            ad.ShapeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
