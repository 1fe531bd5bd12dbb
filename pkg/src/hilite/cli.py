"""Command-line entry point.

Every successful invocation prints one JSON run report on stdout and exits
0. Domain errors print ``{"code": ..., "message": ...}`` and exit 1; usage
errors exit 2 with argparse's usage text on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import diffusion, imagecore, metrics, prior, pyramid, qc
from .errors import HiliteError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class RunReport:
    subcommand: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    seed: Optional[int] = None
    elapsed: float = 0.0


class UsageError(Exception):
    pass


def jsonable(value):
    """Replace non-finite floats with the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(value, dict):
        return {k: jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, np.integer):
        return int(value)
    return value


def _dump(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path: Path, text: str, report: RunReport) -> None:
    path.write_text(text, encoding="utf-8")
    report.outputs.append(str(path))


def _default_jobs() -> int:
    raw = os.environ.get("HILITE_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# pyramid


def cmd_pyramid_decompose(args, report: RunReport) -> None:
    img = imagecore.load_image(args.image)
    report.inputs.append(args.image)
    pyr = pyramid.decompose(img, args.depth)
    out = _out_dir(args)
    report.outputs.extend(str(p) for p in pyramid.save_pyramid(pyr, out))
    report.metrics.update({"depth": pyr.depth, "height": img.shape[0], "width": img.shape[1]})


def cmd_pyramid_reconstruct(args, report: RunReport) -> None:
    pyr = pyramid.load_pyramid(args.pyramid_dir)
    report.inputs.append(args.pyramid_dir)
    img = pyramid.reconstruct(pyr, clamp=True)
    out = _out_dir(args)
    path = out / "reconstructed.png"
    imagecore.save_image(img, path, bit_depth=args.bit_depth)
    report.outputs.append(str(path))
    report.metrics.update({"depth": pyr.depth, "height": img.shape[0], "width": img.shape[1]})


# --------------------------------------------------------------------------
# prior


def cmd_prior_gen(args, report: RunReport) -> None:
    hl = imagecore.load_image(args.highlight)
    gt = imagecore.load_image(args.gt)
    report.inputs.extend([args.highlight, args.gt])
    cfg = prior.PriorConfig(alpha_percentile=args.alpha, apply_stretch=not args.no_stretch, bins=args.bins)
    if args.depth > 0:
        hl = np.clip(pyramid.decompose(hl, args.depth).base, 0.0, 1.0)
        gt = np.clip(pyramid.decompose(gt, args.depth).base, 0.0, 1.0)
    soft = prior.soft_mask(hl, gt, cfg)
    threshold, binary = prior.otsu_threshold(soft, cfg.bins)
    out = _out_dir(args)
    soft_path = out / "soft_mask.png"
    bin_path = out / "binary_mask.png"
    imagecore.save_image(soft, soft_path, bit_depth=16)
    imagecore.save_image(binary.astype(np.float32), bin_path, bit_depth=8)
    record = {
        "threshold": threshold,
        "alpha_percentile": cfg.alpha_percentile,
        "stretch_applied": cfg.apply_stretch,
        "bins": cfg.bins,
        "depth": args.depth,
        "mask_fraction": float(binary.mean()),
    }
    report.outputs.extend([str(soft_path), str(bin_path)])
    _write_text(out / "prior.json", _dump(record), report)
    report.metrics.update(record)


# --------------------------------------------------------------------------
# maskeval

MASK_METHODS = {
    "input_otsu": "Input + Otsu",
    "residual_otsu": "Residual + Otsu",
    "residual_stretch_otsu": "Residual + Stretch + Otsu",
}


def shiq_triplets(root: Path, suffixes: tuple[str, str, str]) -> list[tuple[str, Path, Path, Path]]:
    """``(name, input, diffuse, mask)`` for every complete ``<name>_<A|D|T>.png`` triplet."""
    a_sfx, d_sfx, t_sfx = suffixes
    found = []
    for path in sorted(root.glob(f"*_{a_sfx}.png")):
        name = path.name[: -len(f"_{a_sfx}.png")]
        diffuse = root / f"{name}_{d_sfx}.png"
        mask = root / f"{name}_{t_sfx}.png"
        if diffuse.is_file() and mask.is_file():
            found.append((name, path, diffuse, mask))
    return found


def evaluate_masks(hl, gt, gt_mask, cfg: prior.PriorConfig) -> dict[str, metrics.ConfusionCounts]:
    truth = np.asarray(imagecore.to_grayscale(gt_mask)) > 0.5
    preds = {
        "input_otsu": prior.input_otsu(hl, cfg.bins),
        "residual_otsu": prior.generate_prior(
            hl, gt, prior.PriorConfig(cfg.alpha_percentile, apply_stretch=False, bins=cfg.bins))[1],
        "residual_stretch_otsu": prior.generate_prior(
            hl, gt, prior.PriorConfig(cfg.alpha_percentile, apply_stretch=True, bins=cfg.bins))[1],
    }
    return {k: metrics.mask_confusion(v, truth) for k, v in preds.items()}


def _safe_ber(c: metrics.ConfusionCounts) -> float:
    try:
        return metrics.ber(c)
    except HiliteError:
        return math.nan


def cmd_maskeval(args, report: RunReport) -> None:
    root = Path(args.data_dir)
    report.inputs.append(str(root))
    triplets = shiq_triplets(root, tuple(args.suffixes.split(",")))
    if not triplets:
        raise HiliteError(f"no <name>_A/_D/_T.png triplets in {root}")
    cfg = prior.PriorConfig(alpha_percentile=args.alpha, bins=args.bins)

    def one(t):
        name, a, d, m = t
        return name, evaluate_masks(imagecore.load_image(a), imagecore.load_image(d),
                                    imagecore.load_image(m), cfg)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(one, triplets))

    out = _out_dir(args)
    rows = []
    pooled = {k: metrics.ConfusionCounts(0, 0, 0, 0) for k in MASK_METHODS}
    per_image = {k: ([], []) for k in MASK_METHODS}
    for name, counts in results:
        for method, c in counts.items():
            acc, b = metrics.accuracy(c), _safe_ber(c)
            pooled[method] = pooled[method] + c
            per_image[method][0].append(acc)
            if not math.isnan(b):
                per_image[method][1].append(b)
            rows.append([name, method, c.tp, c.fp, c.tn, c.fn, f"{acc:.6f}", "" if math.isnan(b) else f"{b:.6f}"])
    csv_path = out / "maskeval.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "method", "tp", "fp", "tn", "fn", "acc", "ber"])
        w.writerows(rows)
    report.outputs.append(str(csv_path))

    summary = {}
    for method, label in MASK_METHODS.items():
        accs, bers = per_image[method]
        summary[method] = {
            "label": label,
            "pooled_acc": metrics.accuracy(pooled[method]),
            "pooled_ber": _safe_ber(pooled[method]),
            "mean_acc": float(np.mean(accs)),
            "mean_ber": float(np.mean(bers)) if bers else math.nan,
            "images": len(accs),
        }
        report.metrics[f"{method}.acc"] = summary[method]["mean_acc"]
        report.metrics[f"{method}.ber"] = summary[method]["mean_ber"]
    summary["alpha_percentile"] = cfg.alpha_percentile
    _write_text(out / "maskeval.json", _dump(summary), report)


# --------------------------------------------------------------------------
# metrics


def compare_images(a, b) -> dict:
    return {
        "psnr_db": metrics.psnr(a, b),
        "ssim": metrics.ssim(a, b),
        "rmse_255": metrics.rmse(a, b, scale=255),
    }


def cmd_metrics_cmp(args, report: RunReport) -> None:
    a = imagecore.load_image(args.a)
    b = imagecore.load_image(args.b)
    report.inputs.extend([args.a, args.b])
    result = compare_images(a, b)
    report.metrics.update(result)
    if args.out:
        _write_text(_out_dir(args) / "metrics.json", _dump(result), report)


def cmd_metrics_batch(args, report: RunReport) -> None:
    dir_a, dir_b = Path(args.dir_a), Path(args.dir_b)
    report.inputs.extend([str(dir_a), str(dir_b)])
    names = sorted(
        p.name for p in dir_a.iterdir()
        if p.is_file() and imagecore.is_image_file(p) and (dir_b / p.name).is_file()
    )
    if not names:
        raise HiliteError(f"no file names shared by {dir_a} and {dir_b}")

    def one(name):
        return compare_images(imagecore.load_image(dir_a / name), imagecore.load_image(dir_b / name))

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(one, names))

    out = _out_dir(args)
    jsonl = out / "metrics.jsonl"
    with open(jsonl, "w", encoding="utf-8") as fh:
        for name, r in zip(names, results):
            fh.write(json.dumps(jsonable({"name": name, **r}), sort_keys=True) + "\n")
    report.outputs.append(str(jsonl))

    finite_psnr = [r["psnr_db"] for r in results if math.isfinite(r["psnr_db"])]
    rollup = {
        "psnr_db": float(np.mean(finite_psnr)) if finite_psnr else math.inf,
        "ssim": float(np.mean([r["ssim"] for r in results])),
        "rmse_255": float(np.mean([r["rmse_255"] for r in results])),
    }
    csv_path = out / "metrics.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "psnr_db", "ssim", "rmse_255"])
        for name, r in zip(names, results):
            w.writerow([name, *(jsonable(r[k]) for k in ("psnr_db", "ssim", "rmse_255"))])
        w.writerow(["mean", *(jsonable(rollup[k]) for k in ("psnr_db", "ssim", "rmse_255"))])
    report.outputs.append(str(csv_path))
    report.metrics.update(rollup)
    report.metrics["pairs"] = len(names)
    report.metrics["identical_pairs"] = len(results) - len(finite_psnr)


# --------------------------------------------------------------------------
# qc


def _alignment_cfg(args) -> qc.AlignmentConfig:
    return qc.AlignmentConfig(dilation=args.dilation, max_shift=args.max_shift, residual_tol=args.residual_tol)


def cmd_qc_scan(args, report: RunReport) -> None:
    report.inputs.append(args.root)
    m = qc.scan_manifest(args.root, layout=args.layout)
    out = _out_dir(args)
    qc.write_manifest_csv(m, out / "manifest.csv")
    qc.write_manifest_jsonl(m, out / "manifest.jsonl")
    report.outputs.extend([str(out / "manifest.csv"), str(out / "manifest.jsonl")])
    skipped = "".join(json.dumps(asdict(s)) + "\n" for s in m.skipped)
    _write_text(out / "skipped.jsonl", skipped, report)
    report.metrics.update({"pairs": len(m), "skipped": len(m.skipped)})


def cmd_qc_check(args, report: RunReport) -> None:
    report.inputs.append(args.manifest)
    m = qc.read_manifest(args.manifest)
    cfg = _alignment_cfg(args)
    reports = qc.check_all(m, cfg, jobs=args.jobs)
    kept = qc.Manifest([r for r, rep in zip(m.records, reports) if rep.aligned])
    rejected = [rep for rep in reports if not rep.aligned]
    out = _out_dir(args)
    qc.write_manifest_csv(kept, out / "kept.csv")
    qc.write_reports_jsonl(reports, out / "reports.jsonl")
    qc.write_reports_jsonl(rejected, out / "rejected.jsonl")
    report.outputs.extend(str(out / n) for n in ("kept.csv", "reports.jsonl", "rejected.jsonl"))
    report.metrics.update({"pairs": len(m), "kept": len(kept), "rejected": len(rejected)})


def cmd_qc_sample(args, report: RunReport) -> None:
    report.inputs.append(args.manifest)
    m = qc.read_manifest(args.manifest)
    strata = [s for s in args.strata.split(",") if s]
    sampled = qc.stratified_sample(m, args.fraction, strata, args.seed)
    out = _out_dir(args)
    qc.write_manifest_csv(sampled, out / "sample.csv")
    report.outputs.append(str(out / "sample.csv"))
    report.seed = args.seed
    report.metrics.update({"pairs": len(m), "sampled": len(sampled), "strata": len(qc.strata_groups(m, strata))})


# --------------------------------------------------------------------------
# diffusion


def cmd_diffusion_demo(args, report: RunReport) -> None:
    gt = imagecore.load_image(args.image)
    report.inputs.append(args.image)
    hl = gt
    if args.highlight:
        hl = imagecore.load_image(args.highlight)
        report.inputs.append(args.highlight)
        if hl.shape != gt.shape:
            raise HiliteError(f"highlight image {hl.shape} and image {gt.shape} differ in shape")
    sched = diffusion.linear_schedule(args.steps, args.beta_start, args.beta_end)
    pyr_gt = pyramid.decompose(gt, args.depth)
    pyr_in = pyramid.decompose(hl, args.depth)
    top = args.depth - 1
    h_in = pyr_in.highs[top]
    x0 = diffusion.build_target(pyr_gt.highs[top], h_in).astype(np.float64)
    y = diffusion.build_conditioning(h_in, pyr_in.base, pyr_gt.base)

    def oracle(x_t, t, cond):
        return x0

    steps = []

    def record(i, t, x_t, x0_hat):
        steps.append({
            "step": i,
            "t": t,
            "alpha_bar": sched.alpha_bar(t),
            "x0_max_abs_error": float(np.max(np.abs(x0_hat - x0))),
            "xt_rms_deviation": float(np.sqrt(np.mean((x_t - math.sqrt(sched.alpha_bar(t)) * x0) ** 2))),
        })

    x0_hat = diffusion.sample(oracle, y, sched, args.n_steps, args.seed, shape=x0.shape, callback=record)
    highs = list(pyr_in.highs)
    highs[top] = h_in + x0_hat
    recovered = pyramid.reconstruct(pyramid.Pyramid(highs=highs, base=pyr_gt.base))
    out = _out_dir(args)
    path = out / "recovered.png"
    imagecore.save_image(recovered, path, bit_depth=args.bit_depth)
    report.outputs.append(str(path))
    summary = {
        "dm_loss": diffusion.dm_loss(x0, x0_hat),
        # only the top band and the base are replaced; finer bands stay those of the input
        "band_max_abs_error": float(np.max(np.abs(highs[top] - pyr_gt.highs[top]))),
        "recovered_max_abs_error": float(np.max(np.abs(recovered - gt))),
        "n_steps": args.n_steps,
        "schedule_steps": sched.steps,
        "depth": args.depth,
    }
    _write_text(out / "diffusion_report.json", _dump({**summary, "steps": steps}), report)
    report.seed = args.seed
    report.metrics.update(summary)


# --------------------------------------------------------------------------
# parser


def _add_out(p, required=True):
    p.add_argument("--out", required=required, help="output directory (created if missing)")


def _add_jobs(p):
    p.add_argument("--jobs", type=int, default=_default_jobs(),
                   help="worker threads (default: $HILITE_JOBS or 1)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="hilite", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file of flag defaults; explicit flags win")
    top = parser.add_subparsers(dest="command", required=True)
    leaves: dict[str, argparse.ArgumentParser] = {}

    def leaf(sub, name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        return p

    pyr = top.add_parser("pyramid", help="Laplacian pyramid").add_subparsers(dest="action", required=True)
    p = leaf(pyr, "decompose", cmd_pyramid_decompose, "split an image into high bands and a base")
    p.add_argument("image")
    p.add_argument("--depth", type=int, default=pyramid.DEFAULT_DEPTH)
    _add_out(p)
    leaves["pyramid decompose"] = p
    p = leaf(pyr, "reconstruct", cmd_pyramid_reconstruct, "collapse an exported pyramid directory")
    p.add_argument("pyramid_dir")
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    _add_out(p)
    leaves["pyramid reconstruct"] = p

    pri = top.add_parser("prior", help="highlight location prior").add_subparsers(dest="action", required=True)
    p = leaf(pri, "gen", cmd_prior_gen, "soft and binary highlight masks from a pair")
    p.add_argument("highlight")
    p.add_argument("gt")
    p.add_argument("--alpha", type=float, default=prior.DEFAULT_ALPHA, help="percentile cut (0-100)")
    p.add_argument("--no-stretch", action="store_true", help="skip contrast stretching")
    p.add_argument("--bins", type=int, default=prior.DEFAULT_BINS)
    p.add_argument("--depth", type=int, default=0,
                   help="compute on the pyramid base of this depth (0: full resolution)")
    _add_out(p)
    leaves["prior gen"] = p

    p = leaf(top, "maskeval", cmd_maskeval, "ACC/BER of residual masks on SHIQ-style triplets")
    p.add_argument("data_dir")
    p.add_argument("--alpha", type=float, default=prior.DEFAULT_ALPHA)
    p.add_argument("--bins", type=int, default=prior.DEFAULT_BINS)
    p.add_argument("--suffixes", default="A,D,T", help="input,diffuse,mask file suffixes")
    _add_jobs(p)
    _add_out(p)
    leaves["maskeval"] = p

    met = top.add_parser("metrics", help="PSNR / SSIM / RMSE").add_subparsers(dest="action", required=True)
    p = leaf(met, "cmp", cmd_metrics_cmp, "compare two images")
    p.add_argument("a")
    p.add_argument("b")
    _add_out(p, required=False)
    leaves["metrics cmp"] = p
    p = leaf(met, "batch", cmd_metrics_batch, "compare same-named images in two directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    _add_jobs(p)
    _add_out(p)
    leaves["metrics batch"] = p

    q = top.add_parser("qc", help="dataset quality control").add_subparsers(dest="action", required=True)
    p = leaf(q, "scan", cmd_qc_scan, "build a manifest from a dataset directory")
    p.add_argument("root")
    p.add_argument("--layout", default="default", choices=qc.LAYOUTS)
    _add_out(p)
    leaves["qc scan"] = p
    p = leaf(q, "check", cmd_qc_check, "reject misaligned pairs")
    p.add_argument("manifest")
    p.add_argument("--dilation", type=int, default=qc.AlignmentConfig.dilation)
    p.add_argument("--max-shift", type=int, default=qc.AlignmentConfig.max_shift)
    p.add_argument("--residual-tol", type=float, default=qc.AlignmentConfig.residual_tol)
    _add_jobs(p)
    _add_out(p)
    leaves["qc check"] = p
    p = leaf(q, "sample", cmd_qc_sample, "stratified sample of a manifest")
    p.add_argument("manifest")
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--strata", default="category,light,language,angle,environment")
    p.add_argument("--seed", type=int, required=True)
    _add_out(p)
    leaves["qc sample"] = p

    dif = top.add_parser("diffusion", help="diffusion forward/reverse math").add_subparsers(dest="action", required=True)
    p = leaf(dif, "demo", cmd_diffusion_demo, "round trip with a perfect x0 oracle")
    p.add_argument("image", help="highlight-free (target) image")
    p.add_argument("--highlight", help="input image; defaults to IMAGE itself")
    p.add_argument("--depth", type=int, default=pyramid.DEFAULT_DEPTH)
    p.add_argument("--steps", type=int, default=diffusion.DEFAULT_STEPS, help="schedule length T")
    p.add_argument("--n-steps", type=int, default=10, help="sampler steps")
    p.add_argument("--beta-start", type=float, default=diffusion.DEFAULT_BETA_START)
    p.add_argument("--beta-end", type=float, default=diffusion.DEFAULT_BETA_END)
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    p.add_argument("--seed", type=int, required=True)
    _add_out(p)
    leaves["diffusion demo"] = p
    return parser, leaves


def _command_name(args) -> str:
    return " ".join(x for x in (args.command, getattr(args, "action", None)) if x)


def _load_config(path: str) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return data


def parse(argv) -> argparse.Namespace:
    parser, leaves = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            data = _load_config(args.config)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        name = _command_name(args)
        leaf = leaves[name]
        internal = {"help", "func", "config"}
        known = {a.dest for a in leaf._actions} - internal
        anywhere = {a.dest for p in leaves.values() for a in p._actions} - internal
        defaults = {}
        # top-level keys are shared: they apply where the command has the
        # option and must exist on some command; a [section] named after the
        # command (e.g. [prior] or ["qc check"]) overrides them and is strict
        for key, value in data.items():
            if isinstance(value, dict):
                continue
            dest = key.replace("-", "_")
            if dest not in anywhere:
                parser.error(f"config key {key!r} is not an option of any command")
            if dest in known:
                defaults[dest] = value
        for section in (args.command, name):
            if not isinstance(data.get(section), dict):
                continue
            for key, value in data[section].items():
                dest = key.replace("-", "_")
                if dest not in known:
                    parser.error(f"config key {key!r} in [{section}] is not an option of '{name}'")
                defaults[dest] = value
        leaf.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def run(argv=None) -> int:
    args = parse(sys.argv[1:] if argv is None else argv)
    report = RunReport(subcommand=_command_name(args))
    start = time.perf_counter()
    try:
        if hasattr(args, "jobs") and args.jobs < 1:
            raise HiliteError("--jobs must be at least 1")
        args.func(args, report)
    except HiliteError as exc:
        print(json.dumps({"code": exc.code, "message": str(exc)}))
        return 1
    except (ValueError, OSError) as exc:
        code = "invalid_value" if isinstance(exc, ValueError) else "io_error"
        print(json.dumps({"code": code, "message": str(exc)}))
        return 1
    report.elapsed = round(time.perf_counter() - start, 6)
    print(json.dumps(jsonable(asdict(report)), sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
