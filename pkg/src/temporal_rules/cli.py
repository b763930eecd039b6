"""The ``trc`` command line: simulate, optimize, classify, evaluate, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from pythonjsonlogger.json import JsonFormatter

from temporal_rules import __version__
from temporal_rules.compactness import CompactnessMeasure
from temporal_rules.config import Config, LogFormat
from temporal_rules.dataset import ID_COLUMN, aggregate, load_temporal_csv
from temporal_rules.errors import TrcError
from temporal_rules.evaluation import (
    DEFAULT_FEATURE_SETS,
    FeatureSet,
    ProbeProtocol,
    agreement_matrix,
    compare_labelings,
    derive_attributes,
)
from temporal_rules.manifest import RunManifest, manifest_path_for
from temporal_rules.optimizer import DeParams, brute_force, differential_evolution
from temporal_rules.report import (
    agreement_table,
    auc_table,
    class_size_table,
    parameter_table,
    round_profile,
    write_profile,
)
from temporal_rules.rules import (
    CLASS_COLUMN,
    CandidateClassifier,
    RuleTemplate,
    bundled_templates,
    bundled_text,
    classify,
    load_bundled_template,
    load_rule_spec,
    parse_rule_spec,
    read_labels,
    write_labels,
)
from temporal_rules.simulation import SimConfig, read_tables, simulate

log = logging.getLogger(__name__)


def _configure_logging(config: Config, verbose: bool = False) -> None:
    """Send logs to stderr, as text or JSON; stdout carries results only."""
    handler = logging.StreamHandler(sys.stderr)
    if config.log_format is LogFormat.JSON:
        handler.setFormatter(
            JsonFormatter(
                fmt="%(asctime)s %(levelname)s %(name)s %(message)s",
                rename_fields={"asctime": "timestamp", "levelname": "level", "name": "logger"},
                static_fields={"service": "trc", "version": __version__},
                timestamp=True,
            )
        )
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else config.log_level)


def _init_sentry(config: Config) -> None:
    """Initialize Sentry error tracking if DSN is configured."""
    if not config.sentry_dsn:
        return

    import sentry_sdk

    sentry_sdk.init(
        dsn=config.sentry_dsn,
        release=f"temporal-rules@{__version__}",
        environment=config.sentry_environment,
        traces_sample_rate=0,
    )
    log.info("Sentry initialized", extra={"environment": config.sentry_environment})


def _write_json(payload: dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def _load_template(args: argparse.Namespace, manifest: RunManifest) -> RuleTemplate:
    if args.template:
        manifest.options["template"] = args.template
        return load_bundled_template(args.template)
    path = Path(args.rules)
    manifest.add_input(path)
    return load_rule_spec(path)


def _finish(manifest: RunManifest, started: float, anchor: Path) -> None:
    manifest.duration_seconds = round(time.monotonic() - started, 3)
    manifest.write(manifest_path_for(anchor))


# --- Subcommands ---


def cmd_simulate(args: argparse.Namespace, _config: Config) -> None:
    """Generate a synthetic public goods game panel with planted labels."""
    started = time.monotonic()
    manifest = RunManifest("simulate")
    if args.config:
        manifest.add_input(Path(args.config))
        sim = SimConfig.load(Path(args.config))
    else:
        manifest.options["template"] = "pgg_sim"
        sim = SimConfig.from_dict(json.loads(bundled_text("pgg_sim")))
    seed = sim.seed if args.seed is None else args.seed
    manifest.seed = seed

    output = simulate(sim.params, sim.roster, seed=seed)
    out_dir = Path(args.out)
    for path in output.write(out_dir):
        manifest.add_output(path)
    _finish(manifest, started, out_dir)

    print(f"Simulated {output.panel.n_objects} players x {output.panel.n_times} rounds -> {out_dir}")
    print(class_size_table(output.truth.class_sizes()))


def cmd_optimize(args: argparse.Namespace, config: Config) -> None:
    """Search the template's threshold grid for the minimal-cost classifier."""
    started = time.monotonic()
    manifest = RunManifest("optimize", seed=args.seed)
    data_path = Path(args.data)
    manifest.add_input(data_path)
    data = load_temporal_csv(data_path)
    template = _load_template(args, manifest)
    measure = CompactnessMeasure(args.measure)
    workers = args.workers if args.workers is not None else config.workers
    manifest.options.update({"measure": measure.value, "mode": args.mode, "workers": workers})

    if args.mode == "brute":
        result = brute_force(template, data, measure, workers=workers, cap=config.grid_cap)
    else:
        de = DeParams(
            population_size=args.de_pop if args.de_pop is not None else config.de.population_size,
            generations=args.de_gens if args.de_gens is not None else config.de.generations,
            differential_weight=args.de_f if args.de_f is not None else config.de.differential_weight,
            crossover_rate=args.de_cr if args.de_cr is not None else config.de.crossover_rate,
            seed=args.seed,
        )
        manifest.options["de"] = {
            "population_size": de.population_size,
            "generations": de.generations,
            "differential_weight": de.differential_weight,
            "crossover_rate": de.crossover_rate,
        }
        result = differential_evolution(template, data, measure, de)

    out = Path(args.out)
    payload = {"measure": measure.value, "mode": args.mode, **result.to_dict(), "template": template.to_dict()}
    manifest.add_output(_write_json(payload, out))
    if args.labels_out:
        labels_path = Path(args.labels_out)
        manifest.add_output(write_labels(result.labeling, labels_path, data.object_ids))
    _finish(manifest, started, out)

    print(parameter_table(template, result.candidate.bindings))
    print(f"\nCost {result.cost.total:.6g}  ties {result.ties}  evaluated {result.evaluated}")


def cmd_classify(args: argparse.Namespace, _config: Config) -> None:
    """Label every object with a bound classifier."""
    started = time.monotonic()
    manifest = RunManifest("classify")
    data_path = Path(args.data)
    manifest.add_input(data_path)
    data = load_temporal_csv(data_path)
    template = _load_template(args, manifest)
    bindings_path = Path(args.bindings)
    manifest.add_input(bindings_path)
    doc = json.loads(bindings_path.read_text(encoding="utf-8"))
    candidate = CandidateClassifier.from_bindings(template, doc.get("bindings", doc))

    view = aggregate(data, template.aggregates)
    labeling = classify(view, candidate)
    out = Path(args.out)
    manifest.add_output(write_labels(labeling, out, data.object_ids))
    if args.aggregates_out:
        manifest.add_output(view.to_csv(Path(args.aggregates_out)))
    _finish(manifest, started, out)

    print(class_size_table(labeling.class_sizes(template.classes)))


def cmd_evaluate(args: argparse.Namespace, config: Config) -> None:
    """Compare two labelings: agreement matrix and probe AUC per feature set."""
    started = time.monotonic()
    manifest = RunManifest("evaluate", seed=args.seed)
    data_path, a_path, b_path = Path(args.data), Path(args.labels_a), Path(args.labels_b)
    for path in (data_path, a_path, b_path):
        manifest.add_input(path)
    data = load_temporal_csv(data_path)
    label_a, label_b = read_labels(a_path), read_labels(b_path)
    names = (args.name_a, args.name_b)

    derived = None
    if args.tables:
        tables_path = Path(args.tables)
        manifest.add_input(tables_path)
        derived = derive_attributes(
            data,
            read_tables(tables_path),
            endowment=args.endowment,
            mpcr=args.mpcr,
            group_size=args.group_size,
        )
    if args.features:
        feature_sets = FeatureSet.parse_list(args.features)
    elif derived is not None:
        feature_sets = list(DEFAULT_FEATURE_SETS)
    else:
        feature_sets = [fs for fs in DEFAULT_FEATURE_SETS if not fs.needs_derived]
        log.warning(
            "No contribution tables given; evaluating only feature sets without derived attributes",
            extra={"feature_sets": [fs.value for fs in feature_sets]},
        )

    protocol = ProbeProtocol(
        test_fraction=args.test_frac if args.test_frac is not None else config.protocol.test_fraction,
        repeats=args.repeats if args.repeats is not None else config.protocol.repeats,
        k=args.k if args.k is not None else config.protocol.k,
        seed=args.seed,
    )
    matrix = agreement_matrix(label_a, label_b)
    comparison = compare_labelings(
        data, label_a, label_b, feature_sets, protocol, derived=derived, names=names
    )

    out = Path(args.out)
    text_path = out.with_suffix(".txt")
    payload = {"labelings": list(names), "agreement": matrix.to_dict(), "auc": comparison.to_dict()}
    manifest.add_output(_write_json(payload, out))
    text = "\n\n".join(
        [
            agreement_table(matrix, f"Agreement (% of {names[0]} class in {names[1]} class)"),
            "Mean AUC",
            auc_table(comparison),
        ]
    )
    text_path.write_text(text + "\n", encoding="utf-8")
    manifest.add_output(text_path)
    if derived is not None:
        cells = out.with_name(f"{out.stem}_derived.csv")
        summary = out.with_name(f"{out.stem}_derived_summary.csv")
        for path in derived.write(cells, summary):
            manifest.add_output(path)
    _finish(manifest, started, out)

    print(text)


def _is_label_file(path: Path) -> bool:
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip()
    return header == f"{ID_COLUMN},{CLASS_COLUMN}"


def cmd_report(args: argparse.Namespace, _config: Config) -> None:
    """Assemble text tables and per-class round profiles from a run directory."""
    started = time.monotonic()
    manifest = RunManifest("report")
    in_dir = Path(args.in_dir)
    out = Path(args.out)
    panel_path = in_dir / args.panel
    manifest.add_input(panel_path)
    data = load_temporal_csv(panel_path)
    attributes = [a.strip() for a in args.attributes.split(",")]

    sections: list[str] = []
    for best_path in sorted(in_dir.glob("*.json")):
        if best_path.name.endswith(".manifest.json") or best_path.name == "manifest.json":
            continue
        doc = json.loads(best_path.read_text(encoding="utf-8"))
        if "bindings" in doc and "template" in doc:
            manifest.add_input(best_path)
            template = parse_rule_spec(json.dumps(doc["template"]))
            sections.append(f"Parameters ({best_path.name})\n{parameter_table(template, doc['bindings'])}")
        elif "agreement" in doc and "auc" in doc and best_path.with_suffix(".txt").is_file():
            manifest.add_input(best_path.with_suffix(".txt"))
            sections.append(f"Evaluation ({best_path.name})\n{best_path.with_suffix('.txt').read_text(encoding='utf-8').rstrip()}")

    label_files = [p for p in sorted(in_dir.glob("*.csv")) if _is_label_file(p)]
    for label_path in label_files:
        manifest.add_input(label_path)
        labeling = read_labels(label_path)
        sections.append(f"Classes ({label_path.name})\n{class_size_table(labeling.class_sizes())}")
        for attr in attributes:
            frame = round_profile(data, labeling, attr)
            target = out.parent / f"profile_{label_path.stem}_{attr}.csv"
            manifest.add_output(write_profile(frame, target))

    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n\n".join(sections) + "\n", encoding="utf-8")
    manifest.add_output(out)
    _finish(manifest, started, out)
    log.info("Report assembled", extra={"sections": len(sections), "label_files": len(label_files)})
    print(out.read_text(encoding="utf-8"), end="")


def cmd_templates(args: argparse.Namespace, _config: Config) -> None:
    """List bundled documents, or print one."""
    if args.name:
        print(bundled_text(args.name), end="")
        return
    for name in bundled_templates():
        print(name)


# --- Parser ---


def _add_template_args(sp: argparse.ArgumentParser) -> None:
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--rules", help="rule template JSON file")
    group.add_argument("--template", help="bundled rule template name (see 'trc templates')")


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser."""
    parser = argparse.ArgumentParser(
        prog="trc",
        description="Optimize rule-based classifiers for temporal panel data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")

    sub = parser.add_subparsers(dest="command")

    # simulate
    sp = sub.add_parser("simulate", help="generate a synthetic public goods game panel")
    sp.add_argument("--config", help="simulator config JSON (default: bundled pgg_sim)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, help="override the config seed")
    sp.set_defaults(func=cmd_simulate)

    # optimize
    sp = sub.add_parser("optimize", help="find the minimal-cost candidate classifier")
    sp.add_argument("--data", required=True, help="panel CSV")
    _add_template_args(sp)
    sp.add_argument(
        "--measure",
        choices=[m.value for m in CompactnessMeasure],
        default=CompactnessMeasure.STDDEV.value,
        help="compactness measure (default: stddev)",
    )
    sp.add_argument("--mode", choices=["brute", "de"], default="brute", help="search mode (default: brute)")
    sp.add_argument("--de-pop", type=int, help="DE population size")
    sp.add_argument("--de-gens", type=int, help="DE generations")
    sp.add_argument("--de-f", type=float, help="DE differential weight")
    sp.add_argument("--de-cr", type=float, help="DE crossover rate")
    sp.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    sp.add_argument("--workers", type=int, help="brute-force worker processes")
    sp.add_argument("--out", required=True, help="result JSON path")
    sp.add_argument("--labels-out", help="also write the best labeling as CSV")
    sp.set_defaults(func=cmd_optimize)

    # classify
    sp = sub.add_parser("classify", help="label objects with bound thresholds")
    sp.add_argument("--data", required=True, help="panel CSV")
    _add_template_args(sp)
    sp.add_argument("--bindings", required=True, help="optimize result JSON or a bindings object")
    sp.add_argument("--out", required=True, help="labels CSV path")
    sp.add_argument("--aggregates-out", help="also write the aggregated attributes as CSV")
    sp.set_defaults(func=cmd_classify)

    # evaluate
    sp = sub.add_parser("evaluate", help="compare two labelings")
    sp.add_argument("--data", required=True, help="panel CSV")
    sp.add_argument("--labels-a", required=True, help="first labels CSV")
    sp.add_argument("--labels-b", required=True, help="second labels CSV")
    sp.add_argument("--name-a", default="A", help="column name for the first labeling")
    sp.add_argument("--name-b", default="B", help="column name for the second labeling")
    sp.add_argument("--tables", help="contribution tables CSV (enables derived feature sets)")
    sp.add_argument("--features", help="comma-separated feature sets")
    sp.add_argument("--repeats", type=int, help="number of hold-out splits")
    sp.add_argument("--test-frac", type=float, help="held-out fraction")
    sp.add_argument("--k", type=int, help="neighbours in the probe")
    sp.add_argument("--endowment", type=float, default=20, help="tokens per round (default: 20)")
    sp.add_argument("--mpcr", type=float, default=0.4, help="marginal per-capita return (default: 0.4)")
    sp.add_argument("--group-size", type=int, default=4, help="players per group (default: 4)")
    sp.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    sp.add_argument("--out", required=True, help="report JSON path; text goes next to it")
    sp.set_defaults(func=cmd_evaluate)

    # report
    sp = sub.add_parser("report", help="assemble tables and round profiles from a run directory")
    sp.add_argument("--in", dest="in_dir", required=True, help="run directory")
    sp.add_argument("--out", required=True, help="text report path")
    sp.add_argument("--panel", default="panel.csv", help="panel file inside the run directory")
    sp.add_argument(
        "--attributes",
        default="contribution,belief",
        help="comma-separated attributes to profile (default: contribution,belief)",
    )
    sp.set_defaults(func=cmd_report)

    # templates
    sp = sub.add_parser("templates", help="list or print bundled templates")
    sp.add_argument("name", nargs="?", help="template to print")
    sp.set_defaults(func=cmd_templates)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    """Parse *argv*, run the subcommand and return the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = Config.from_env()
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    _configure_logging(config, verbose=args.verbose)
    _init_sentry(config)

    if not hasattr(args, "func"):
        parser.print_help()
        return 1

    try:
        args.func(args, config)
    except TrcError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception:
        log.exception("Unexpected failure", extra={"command": args.command})
        return 1
    return 0
