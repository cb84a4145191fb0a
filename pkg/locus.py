"""
Command-line entry point.

    python locus.py synth --out bench/
    python locus.py sdf bench/s000.grid s000.sdf
    python locus.py detect s000.sdf --out s000_kp.csv
    python locus.py describe s000.sdf s000_kp.csv --out s000_desc.csv
    python locus.py match s000.sdf s001.sdf --out result.csv --dump-pairs inliers.csv
    python locus.py eval bench/ --preset synthetic --planned --out curve.csv
    python locus.py ablate bench/ --preset synthetic --out-dir ablation/
    python locus.py grid-search bench/ --grid detect.sigma=1.5,2.0 --out table.csv
    python locus.py render s000.sdf --pair s001.sdf --out overlay.pgm

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from config import (D_THRESHOLDS, PGM_UNKNOWN_BYTE, SYNTHETIC_PRESET, Config, config_from_mapping, dump_config,
                    parse_key_values, replace_params, resolve_seed)
from describe import describe_keypoints, gradient_field, save_descriptors
from detect import detect_keypoints, load_keypoints, save_keypoints, smooth
from errors import ConfigError, LocusError
from evaluation import (ablation_free_space, evaluate, grid_search, outcomes_frame, planned_pairs,
                        sample_pairs, summary_text)
from grid import load_dataset, load_grid, load_pairs_manifest, load_pgm
from match import inlier_pairs_frame, result_frame
from pipeline import features_from_sdf, match_features
from render import match_image, overlay_image, plot_pr_curves, save_pgm
from sdf import export_pgm, load_sdf, save_sdf, submap_to_sdf
from synth import dump_synth_spec, generate_benchmark, load_synth_spec, save_benchmark

logger = logging.getLogger("locus")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

PRESETS = {"synthetic": SYNTHETIC_PRESET}


class UsageError(Exception):
    def __init__(self, message, usage=""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so run() controls the exit code."""

    def error(self, message):
        raise UsageError(message, self.format_usage())


def _float_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _key_value(text):
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def _add_config_options(p):
    p.add_argument("--config", "--params", dest="config", help="key = value parameter file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="calibrated parameter preset applied before --config")
    p.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                   metavar="KEY=VALUE", help="override one parameter, repeatable")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")


def _add_eval_options(p):
    p.add_argument("dataset", help="dataset directory with poses.txt")
    p.add_argument("--pairs", type=int, help="number of sampled pairs (default eval.n_pairs)")
    p.add_argument("--planned", action="store_true", help="use the pairs listed in pairs.txt")
    p.add_argument("--seed", type=int, help="overrides eval.rng_seed and $LOCUS_SEED")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.add_argument("--decision-only", action="store_true", help="score by label agreement alone")


def build_parser():
    parser = _Parser(prog="locus", description="Free-space place recognition on 2D submaps")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--spec", help="world/plan key = value file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides world.seed and $LOCUS_SEED")
    p.add_argument("--print-spec", action="store_true", help="print the resolved spec and exit")

    p = sub.add_parser("sdf", help="occupancy grid -> signed distance field")
    p.add_argument("input", help="grid file, or PGM when --header is given")
    p.add_argument("output", help="SDF file")
    p.add_argument("--header", help="sidecar header for a PGM input")
    p.add_argument("--unknown-byte", type=int, default=PGM_UNKNOWN_BYTE, help="PGM byte meaning unknown")
    p.add_argument("--pgm", help="also write a debug PGM of the field")
    _add_config_options(p)

    p = sub.add_parser("detect", help="detect keypoints on an SDF")
    p.add_argument("input", help="SDF file")
    p.add_argument("--out", required=True, help="keypoint CSV")
    _add_config_options(p)

    p = sub.add_parser("describe", help="describe keypoints")
    p.add_argument("input", help="SDF file")
    p.add_argument("keypoints", help="keypoint CSV")
    p.add_argument("--out", required=True, help="descriptor CSV")
    _add_config_options(p)

    p = sub.add_parser("match", help="match two SDF submaps")
    p.add_argument("a", help="SDF file of submap a")
    p.add_argument("b", help="SDF file of submap b")
    p.add_argument("--out", required=True, help="result CSV")
    p.add_argument("--dump-pairs", help="CSV of inlier coordinate pairs")
    p.add_argument("--seed", type=int, help="overrides match.rng_seed and $LOCUS_SEED")
    _add_config_options(p)

    p = sub.add_parser("eval", help="precision-recall evaluation on a dataset")
    _add_eval_options(p)
    p.add_argument("--out", required=True, help="curve CSV")
    p.add_argument("--summary", help="recall at precision 1.0 summary file")
    p.add_argument("--outcomes", help="per-pair outcome CSV")
    p.add_argument("--plot", help="precision-recall figure")
    _add_config_options(p)

    p = sub.add_parser("ablate", help="free-space distance ablation")
    _add_eval_options(p)
    p.add_argument("--d-thresholds", type=_float_list, default=list(D_THRESHOLDS),
                   help="comma-separated meters, an unmasked run is always added")
    p.add_argument("--out-dir", required=True, help="directory for curves and summary")
    p.add_argument("--plot", help="precision-recall figure of every run")
    _add_config_options(p)

    p = sub.add_parser("grid-search", help="exhaustive parameter search")
    _add_eval_options(p)
    p.add_argument("--grid", action="append", type=_key_value, default=[], metavar="KEY=V1,V2",
                   help="parameter and candidate values, repeatable")
    p.add_argument("--out", required=True, help="table CSV")
    p.add_argument("--best-config", help="write the winning configuration here")
    _add_config_options(p)

    p = sub.add_parser("render", help="PGM overlay of an SDF, keypoints and inlier links")
    p.add_argument("input", help="SDF file")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--pair", help="second SDF; draws both side by side with inlier links")
    source.add_argument("--keypoints", help="keypoint CSV to draw instead of detecting")
    p.add_argument("--scale", type=int, default=4, help="pixels per cell")
    p.add_argument("--seed", type=int, help="overrides match.rng_seed and $LOCUS_SEED")
    p.add_argument("--out", required=True, help="output PGM")
    _add_config_options(p)
    return parser


def resolve_config(args):
    """Defaults, then --preset, then --config, then --set."""
    config = Config()
    if getattr(args, "preset", None):
        config = config_from_mapping(PRESETS[args.preset], base=config)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            config = config_from_mapping(parse_key_values(f.read(), args.config), base=config)
    if getattr(args, "overrides", None):
        config = config_from_mapping(dict(args.overrides), base=config)
    return config


def _with_match_seed(config, seed):
    match = replace_params(config.match, "match.rng_seed", rng_seed=resolve_seed(seed, config.match.rng_seed))
    return replace(config, match=match)


def _with_eval_settings(config, args):
    changes = {"rng_seed": resolve_seed(args.seed, config.eval.rng_seed)}
    if args.pairs is not None:
        changes["n_pairs"] = args.pairs
    if args.decision_only:
        changes["decision_only"] = True
    return replace(config, eval=replace_params(config.eval, "eval", **changes))


def _sdf_features(path, config):
    sdf = load_sdf(path)
    return sdf, features_from_sdf(sdf, config, Path(path).stem)


def cmd_synth(args):
    spec, plan, n_submaps = load_synth_spec(args.spec)
    spec = replace(spec, seed=resolve_seed(args.seed, spec.seed))
    if args.print_spec:
        print(dump_synth_spec(spec, plan, n_submaps), end="")
        return EXIT_OK
    dataset = generate_benchmark(spec, plan, n_submaps)
    save_benchmark(dataset, args.out)
    Path(args.out, "synth.txt").write_text(dump_synth_spec(spec, plan, n_submaps), encoding="ascii")
    print(f"Wrote {len(dataset.submaps)} submaps and {len(dataset.pairs)} planned pairs to {args.out}")
    return EXIT_OK


def cmd_sdf(args, config):
    if args.header:
        submap = load_pgm(args.input, args.header, args.unknown_byte)
    else:
        submap = load_grid(args.input)
    sdf = submap_to_sdf(submap, config.grid.p_occ)
    save_sdf(sdf, args.output, submap.id, submap.pose)
    if args.pgm:
        export_pgm(sdf, args.pgm)
    print(f"Wrote SDF {sdf.width}x{sdf.height} for {submap.id} to {args.output}")
    return EXIT_OK


def cmd_detect(args, config):
    sdf = load_sdf(args.input)
    keypoints = detect_keypoints(sdf, config.detector, config.descriptor.radius)
    save_keypoints(keypoints, args.out)
    print(f"Detected {len(keypoints)} keypoints")
    return EXIT_OK


def cmd_describe(args, config):
    sdf = load_sdf(args.input)
    keypoints = load_keypoints(args.keypoints)
    grad = gradient_field(smooth(sdf, config.detector.sigma))
    descriptors = describe_keypoints(grad, keypoints, config.descriptor)
    save_descriptors(descriptors, args.out)
    print(f"Described {len(descriptors)} of {len(keypoints)} keypoints")
    return EXIT_OK


def cmd_match(args, config):
    config = _with_match_seed(config, args.seed)
    _, fa = _sdf_features(args.a, config)
    _, fb = _sdf_features(args.b, config)
    result = match_features(fa, fb, config.match)
    result_frame(result).to_csv(args.out, index=False, float_format="%.9f")
    if args.dump_pairs:
        inlier_pairs_frame(result, fa.keypoints, fb.keypoints).to_csv(args.dump_pairs, index=False,
                                                                      float_format="%.9f")
    verdict = "MATCH" if result.accepted else "no match"
    print(f"{verdict}: {result.n_inliers} inliers of {result.total_correspondences} correspondences")
    return EXIT_OK


def _load_pairs(args, config):
    submaps = load_dataset(args.dataset)
    ev = config.eval
    if args.planned:
        plan = load_pairs_manifest(args.dataset)
        if not plan:
            raise LocusError(f"--planned given but {args.dataset} has no pairs.txt")
        pairs = planned_pairs(submaps, plan, ev.rng_seed, ev.overlap_threshold)
    else:
        pairs = sample_pairs(submaps, ev.n_pairs, ev.rng_seed, ev.overlap_threshold)
    return submaps, pairs


def cmd_eval(args, config):
    config = _with_eval_settings(config, args)
    submaps, pairs = _load_pairs(args, config)
    result = evaluate(submaps, pairs, config, jobs=args.jobs)
    result.curve.save(args.out)
    summary = summary_text({"recall_at_precision_1": result.curve})
    if args.summary:
        Path(args.summary).write_text(summary, encoding="ascii")
    if args.outcomes:
        outcomes_frame(result.outcomes).to_csv(args.outcomes, index=False, float_format="%.6f")
    if args.plot:
        plot_pr_curves({"pipeline": result.curve}, args.plot)
    print(f"Evaluated {len(pairs)} pairs: {summary.strip()}")
    return EXIT_OK


def _threshold_name(d):
    return "inf" if math.isinf(d) else f"{d:g}"


def cmd_ablate(args, config):
    config = _with_eval_settings(config, args)
    submaps, pairs = _load_pairs(args, config)
    runs = ablation_free_space(submaps, pairs, config, args.d_thresholds, jobs=args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curves = {}
    for d, ev in runs.items():
        name = _threshold_name(d)
        ev.curve.save(out / f"curve_d{name}.csv")
        curves[f"d_threshold_{name}"] = ev.curve
    (out / "summary.txt").write_text(summary_text(curves), encoding="ascii")
    if args.plot:
        plot_pr_curves(curves, args.plot, title="Free-space ablation")
    print(f"Ablation over {len(runs)} runs written to {out}")
    return EXIT_OK


def _grid_values(grid_args):
    grid = {}
    for key, raw in grid_args:
        grid[key] = [v.strip() for v in raw.split(",") if v.strip()]
    return grid


def cmd_grid_search(args, config):
    config = _with_eval_settings(config, args)
    submaps, pairs = _load_pairs(args, config)
    result = grid_search(submaps, pairs, _grid_values(args.grid), config, jobs=args.jobs)
    result.table.to_csv(args.out, index=False, float_format="%.6f")
    if args.best_config:
        Path(args.best_config).write_text(dump_config(result.best_config), encoding="ascii")
    print(f"Best of {len(result.table)} cells: {result.best_values}")
    return EXIT_OK


def cmd_render(args, config):
    config = _with_match_seed(config, args.seed)
    if args.keypoints:
        sdf_a = load_sdf(args.input)
        image = overlay_image(sdf_a, load_keypoints(args.keypoints), args.scale)
    elif args.pair:
        sdf_a, fa = _sdf_features(args.input, config)
        sdf_b, fb = _sdf_features(args.pair, config)
        result = match_features(fa, fb, config.match)
        image = match_image(sdf_a, fa.keypoints, sdf_b, fb.keypoints, result, args.scale)
    else:
        sdf_a, fa = _sdf_features(args.input, config)
        image = overlay_image(sdf_a, fa.keypoints, args.scale)
    save_pgm(image, args.out)
    print(f"Wrote {args.out}")
    return EXIT_OK


COMMANDS = {
    "sdf": cmd_sdf,
    "detect": cmd_detect,
    "describe": cmd_describe,
    "match": cmd_match,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grid-search": cmd_grid_search,
    "render": cmd_render,
}


def _dispatch(args):
    if args.command == "synth":
        return cmd_synth(args)
    config = resolve_config(args)
    if args.print_config:
        print(dump_config(config), end="")
        return EXIT_OK
    return COMMANDS[args.command](args, config)


def run(argv=None):
    """Parse argv, run one subcommand and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(e.usage)
        sys.stderr.write(f"locus: error: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as e:
        sys.stderr.write(f"locus: config error: {e}\n")
        return EXIT_DATA
    except (LocusError, OSError) as e:
        sys.stderr.write(f"locus: error: {e}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(run())
