"""stainforge command line: calibration, estimation, augmentation, evaluation.

Exit codes: 0 success, 1 usage error, 2 data error. All randomness flows
from an explicit --seed; logs are line-delimited JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import stainlib
from .color import ColorSpace
from .errors import StainforgeError
from .evaluation import compare, icc_consistency, parse_manifest, report_csv, report_markdown
from .icc import parse_profile, to_srgb
from .patchio import read_png, write_png
from .pipeline import (
    AugmentConfig,
    BaselineParams,
    IDENTITY_DOMAIN,
    Method,
    SlideContext,
    augment,
    domain_buckets,
    schedule_domains,
)
from .stain import EstimationParams, StainMatrix

_QUIET = False


def _log(event: str, **fields) -> None:
    if not _QUIET:
        print(json.dumps({"event": event, **fields}, sort_keys=True),
              file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _thread_count(value: int | None) -> int:
    if value is not None:
        return max(value, 1)
    env = os.environ.get("STAINFORGE_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def _collect_pngs(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(path.glob("*.png"))
    return [path]


def _load_source_stains(path: Path) -> StainMatrix:
    obj = json.loads(path.read_text(encoding="utf-8"))
    return StainMatrix.from_vectors(obj["h"], obj["e"])


def _stains_to_json(stains: StainMatrix, pixel_count: int | None = None) -> str:
    payload = {
        "h": [float(v) for v in stains.hematoxylin],
        "e": [float(v) for v in stains.eosin],
    }
    if pixel_count is not None:
        payload["pixel_count"] = pixel_count
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def build_parser() -> _Parser:
    parser = _Parser(prog="stainforge", description=__doc__)
    parser.add_argument("--quiet", action="store_true",
                        help="suppress JSON logs on stderr")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("icc-convert", help="convert a patch to sRGB via an ICC profile")
    p.add_argument("--profile", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("estimate-stains", help="estimate a slide's stain vectors")
    p.add_argument("--in", dest="input", required=True, type=Path,
                   help="slide directory of PNG patches (or a single PNG)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0,
                   help="generator seed for pixel subsampling (default 0)")
    p.add_argument("--beta", type=float, default=0.15)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--max-pixels", type=int, default=200_000)

    p = sub.add_parser("build-library", help="build a stain vector library from slides")
    p.add_argument("--in", dest="input", required=True, type=Path,
                   help="directory holding one sub-directory of patches per slide")
    p.add_argument("--meta", required=True, type=Path,
                   help="CSV with columns slide_id,lab,scanner,indication"
                        " (optional created_at)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.15)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--max-pixels", type=int, default=200_000)
    p.add_argument("--created-at", default="1970-01-01T00:00:00Z",
                   help="timestamp for rows without a created_at column "
                        "(fixed default keeps output bytes reproducible)")

    p = sub.add_parser("augment", help="apply a method transform plus baseline augmentations")
    p.add_argument("--method", choices=[m.value for m in Method],
                   help="required unless --config provides it; flags beat config")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--library", type=Path, help="stain vector library (sva)")
    p.add_argument("--source-stains", type=Path,
                   help="JSON stain matrix of the source slide (sva)")
    p.add_argument("--profile", type=Path, help="ICC profile (icc)")
    p.add_argument("--st-command", help="adapter command template (st)")
    p.add_argument("--targets", help="comma-separated target domains")
    p.add_argument("--manifest", type=Path,
                   help="write a per-patch method/target/seed audit CSV")
    p.add_argument("--config", type=Path, help="TOML file mirroring the config")
    p.add_argument("--threads", type=int)
    p.add_argument("--inference", action="store_true",
                   help="inference-time path: no augmentation, ICC only")
    p.add_argument("--no-identity", action="store_true",
                   help="exclude the identity domain from scheduling")

    p = sub.add_parser("eval", help="bootstrapped macro-F1 comparison report")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--classes", required=True, type=int)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, type=Path, help="markdown report path")
    p.add_argument("--csv", type=Path,
                   help="CSV report path (default: --out with .csv suffix)")

    p = sub.add_parser("icc-consistency", help="paired-scanner intraclass correlation")
    p.add_argument("--pairs", required=True, type=Path,
                   help="CSV with columns slide_id,value_a,value_b")

    p = sub.add_parser("report-plot", help="render the comparison report as an SVG chart")
    p.add_argument("--report", required=True, type=Path, help="CSV from 'eval'")
    p.add_argument("--out", required=True, type=Path)

    return parser


def _cmd_icc_convert(args) -> int:
    profile = parse_profile(args.profile.read_bytes())
    patch = read_png(args.input, space=ColorSpace.DEVICE_RGB)
    result, clipped = to_srgb(patch, profile, return_clip_count=True)
    write_png(result, args.out)
    _log("icc-convert", input=str(args.input), output=str(args.out),
         clipped_pixels=clipped)
    return 0


def _estimation_params(args) -> EstimationParams:
    return EstimationParams(beta=args.beta, alpha=args.alpha,
                            max_pixels=args.max_pixels)


def _cmd_estimate_stains(args) -> int:
    paths = _collect_pngs(args.input)
    if not paths:
        raise StainforgeError(f"no PNG patches under {args.input}")
    patches = [read_png(p) for p in paths]
    record = stainlib.build_record(
        patches, slide_id=args.input.name, lab="", scanner="", indication="",
        params=_estimation_params(args), rng=np.random.default_rng(args.seed))
    args.out.write_text(_stains_to_json(record.stains, record.pixel_count),
                        encoding="utf-8")
    _log("estimate-stains", input=str(args.input), output=str(args.out),
         patches=len(patches), pixel_count=record.pixel_count)
    return 0


def _cmd_build_library(args) -> int:
    import csv as csv_module

    with open(args.meta, newline="", encoding="utf-8") as handle:
        meta_rows = list(csv_module.DictReader(handle))
    library = stainlib.StainVectorLibrary()
    params = _estimation_params(args)
    for row in meta_rows:
        slide_dir = args.input / row["slide_id"]
        paths = _collect_pngs(slide_dir)
        if not paths:
            raise StainforgeError(f"no patches for slide {row['slide_id']!r}")
        patches = [read_png(p) for p in paths]
        record = stainlib.build_record(
            patches, slide_id=row["slide_id"], lab=row["lab"],
            scanner=row["scanner"], indication=row["indication"],
            params=params, rng=np.random.default_rng(args.seed),
            created_at=row.get("created_at") or args.created_at)
        library.add(record)
        _log("library-record", slide_id=row["slide_id"],
             scanner=row["scanner"], pixel_count=record.pixel_count)
    stainlib.save(library, args.out)
    counts = stainlib.stats(library)
    _log("build-library", output=str(args.out), **counts)
    return 0


def _toml_config(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib

    with open(path, "rb") as handle:
        obj = tomllib.load(handle)
    baseline_obj = obj.get("baseline", {})
    tuple_fields = {"rotate", "rotate_arbitrary", "hue", "saturation",
                    "contrast", "brightness"}
    obj["baseline"] = BaselineParams(**{
        key: tuple(value) if key in tuple_fields and value is not None else value
        for key, value in baseline_obj.items()})
    return obj


def _cmd_augment(args, parser: _Parser) -> int:
    library = None
    profile = None
    source_stains = None

    cfg = _toml_config(args.config) if args.config is not None else None

    # Explicit flags beat config values; --seed is always explicit.
    method_name = args.method or (cfg.get("method") if cfg else None)
    if method_name is None:
        parser.error("--method is required (directly or via --config)")
    method = Method(method_name)

    library_path = args.library or (cfg.get("library") if cfg else None)
    profile_path = args.profile or (cfg.get("profile") if cfg else None)
    st_command = args.st_command or (cfg.get("st_command") if cfg else None)

    if method is Method.SVA:
        if library_path is None:
            parser.error("--library is required for --method sva")
        if args.source_stains is None:
            parser.error("--source-stains is required for --method sva")
        library = stainlib.load(library_path)
        source_stains = _load_source_stains(args.source_stains)
    elif method is Method.ICC_CAL:
        if profile_path is None:
            parser.error("--profile is required for --method icc")
        profile = parse_profile(Path(profile_path).read_bytes())
    elif method is Method.ST_HOOK and st_command is None:
        parser.error("--st-command is required for --method st")

    targets: tuple[str, ...] = ()
    if args.targets:
        targets = tuple(t for t in args.targets.split(",") if t)
    elif cfg is not None and cfg.get("targets"):
        targets = tuple(cfg["targets"])
    elif method is Method.SVA and library is not None:
        targets = tuple(library.scanners)

    config = AugmentConfig(
        method=method, seed=args.seed, targets=targets,
        baseline=cfg["baseline"] if cfg else BaselineParams(),
        library_path=str(library_path) if library_path else None,
        profile_path=str(profile_path) if profile_path else None,
        st_command=st_command,
        include_identity=(cfg.get("include_identity", True) if cfg else True)
        and not args.no_identity,
    )

    paths = _collect_pngs(args.input)
    if not paths:
        raise StainforgeError(f"no PNG patches under {args.input}")
    args.out.mkdir(parents=True, exist_ok=True)

    if method in (Method.SVA, Method.ST_HOOK) and not args.inference:
        buckets = domain_buckets(config)
        domains = schedule_domains(len(paths), buckets,
                                   np.random.default_rng(config.seed))
    else:
        domains = [None] * len(paths)

    space = ColorSpace.DEVICE_RGB if method is Method.ICC_CAL else ColorSpace.UNSPECIFIED

    def process(index: int) -> tuple[str, str]:
        patch = read_png(paths[index], space=space)
        context = SlideContext(source_stains=source_stains, profile=profile,
                               domain=domains[index])
        result = augment(patch, context, config, patch_index=index,
                         library=library, training=not args.inference)
        out_path = args.out / paths[index].name
        write_png(result, out_path)
        return str(out_path), domains[index] or IDENTITY_DOMAIN

    workers = _thread_count(args.threads)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(process, range(len(paths))))

    if args.manifest is not None:
        lines = ["patch,method,target,seed,patch_index"]
        for index, (out_path, domain) in enumerate(results):
            lines.append(f"{out_path},{method.value},{domain},"
                         f"{config.seed},{index}")
        args.manifest.write_text("".join(line + "\n" for line in lines),
                                 encoding="utf-8")

    _log("augment", method=method.value, patches=len(paths),
         threads=workers, out=str(args.out), inference=args.inference)
    return 0


def _cmd_eval(args) -> int:
    rows = parse_manifest(args.manifest)
    result = compare(rows, n_classes=args.classes, rounds=args.rounds,
                     seed=args.seed)
    markdown = report_markdown(result)
    args.out.write_text(markdown, encoding="utf-8")
    csv_path = args.csv or args.out.with_suffix(".csv")
    csv_path.write_text(report_csv(result), encoding="utf-8")
    _log("eval", manifest=str(args.manifest), rows=len(result),
         out=str(args.out), csv=str(csv_path))
    return 0


def _cmd_icc_consistency(args) -> int:
    import csv as csv_module

    with open(args.pairs, newline="", encoding="utf-8") as handle:
        reader = csv_module.DictReader(handle)
        pairs = [(float(row["value_a"]), float(row["value_b"]))
                 for row in reader]
    value = icc_consistency(pairs)
    print(json.dumps({"icc": value, "pairs": len(pairs)}))
    _log("icc-consistency", pairs=len(pairs), icc=value)
    return 0


def _cmd_report_plot(args) -> int:
    from .report import read_report_csv, render_report_chart

    rows = read_report_csv(args.report)
    render_report_chart(rows, args.out)
    _log("report-plot", report=str(args.report), out=str(args.out),
         rows=len(rows))
    return 0


def run(argv: list[str] | None = None) -> int:
    global _QUIET
    parser = build_parser()
    args = parser.parse_args(argv)
    _QUIET = args.quiet

    try:
        if args.command == "icc-convert":
            return _cmd_icc_convert(args)
        if args.command == "estimate-stains":
            return _cmd_estimate_stains(args)
        if args.command == "build-library":
            return _cmd_build_library(args)
        if args.command == "augment":
            return _cmd_augment(args, parser)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "icc-consistency":
            return _cmd_icc_consistency(args)
        if args.command == "report-plot":
            return _cmd_report_plot(args)
        parser.error(f"unknown command {args.command!r}")
    except StainforgeError as exc:
        _log("error", kind=type(exc).__name__, message=str(exc))
        print(f"stainforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        _log("error", kind=type(exc).__name__, message=str(exc))
        print(f"stainforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
