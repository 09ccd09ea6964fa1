"""Command-line entry point.

Subcommands mirror the pipeline stages; every path defaults to a location
under --workdir so a full run is `dataset`, `pretrain`, `train`, `sample`,
`eval` with no other wiring. Exit codes: 0 ok, 2 configuration/usage
error, 3 runtime failure (including NaN aborts and failed grad checks).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .ablation import DEFAULT_VALUES, AblationSpec, run_ablation
from .config import Config, ConfigError, load_config
from .pipeline import run_dataset, run_eval, run_pretrain, run_sample, run_train
from .training import GRADCHECK_COMPONENTS, gradcheck


def _load(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "count", None) is not None:
        overrides["sample_count"] = args.count
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg.validate()


def _path(args, attr: str, default: str) -> str:
    value = getattr(args, attr, None)
    return value if value is not None else os.path.join(args.workdir, default)


def cmd_dataset(args) -> int:
    cfg = _load(args)
    out = _path(args, "out", "data")
    try:
        manifest = run_dataset(cfg, out, overwrite=args.overwrite)
    except FileExistsError as exc:
        raise ConfigError(str(exc)) from exc
    n_train = len(manifest.split_indices("train"))
    n_eval = len(manifest.split_indices("eval"))
    print(f"wrote {manifest.count} scenes ({n_train} train / {n_eval} eval) to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load(args)
    path, accuracy = run_pretrain(cfg, _path(args, "data", "data"), _path(args, "out", "semantic.ckpt"))
    print(f"semantic encoder saved to {path} (eval accuracy {accuracy:.4f})")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _path(args, "out", "train")
    final = run_train(cfg, _path(args, "data", "data"), _path(args, "semantic", "semantic.ckpt"),
                      out, resume=args.resume)
    print(f"trained {cfg.steps} steps; final checkpoint {final}")
    print(f"loss log {os.path.join(out, 'loss_log.csv')}")
    return 0


def cmd_sample(args) -> int:
    cfg = _load(args)
    out = _path(args, "out", "samples")
    written = run_sample(cfg, _path(args, "data", "data"),
                         _path(args, "checkpoint", os.path.join("train", "final.ckpt")),
                         out, blank_prior=args.blank_prior)
    print(f"wrote {len(written)} samples to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _path(args, "out", "eval")
    result = run_eval(cfg, _path(args, "data", "data"),
                      _path(args, "checkpoint", os.path.join("train", "final.ckpt")),
                      _path(args, "samples", "samples"), out)
    if args.json:
        print(result.report.to_json())
    else:
        r = result.report
        print(f"clip_score {r.clip_score:.6f}  fid {r.fid:.6f}  ssim {r.ssim:.6f}  "
              f"n_items {r.n_items}  feature_space {r.feature_space}")
        print(f"report written to {os.path.join(out, 'report.json')}")
    return 0


def _parse_values(axis: str, text: str | None):
    if text is None:
        return DEFAULT_VALUES[axis]
    cast = float if axis == "struct_weight" else int
    try:
        return tuple(cast(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"cannot parse --values {text!r} for axis {axis}: {exc}") from exc


def cmd_ablate(args) -> int:
    cfg = _load(args)
    spec = AblationSpec(axis=args.axis, values=_parse_values(args.axis, args.values),
                        base=cfg, seed=cfg.seed)
    out = _path(args, "out", "ablation")
    rows = run_ablation(spec, out)
    for r in rows:
        if r["status"] == "ok":
            print(f"{args.axis}={r['axis_value']}: clip {r['clip_score']:.4f} "
                  f"fid {r['fid']:.4f} ssim {r['ssim']:.4f} l_total {r['final_l_total']:.4f}")
        else:
            print(f"{args.axis}={r['axis_value']}: {r['status']}")
    print(f"table written to {os.path.join(out, 'ablation.csv')}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck(args.component, args.tolerance)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        for name, entry in report.items():
            flag = "ok" if entry["passed"] else "FAIL"
            print(f"{name}: max_rel_error {entry['max_rel_error']:.3e} "
                  f"({entry['n_checks']} coords) {flag}")
    return 0 if all(entry["passed"] for entry in report.values()) else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structdiff",
        description="edge-guided text-to-image diffusion on a synthetic shapes corpus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
        p.add_argument("--workdir", default=".", help="base directory for default paths")
        p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("dataset", help="generate the synthetic corpus")
    common(p)
    p.add_argument("--out", help="corpus directory (default workdir/data)")
    p.add_argument("--overwrite", action="store_true", help="replace an existing corpus")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("pretrain", help="fit and freeze the semantic encoder")
    common(p)
    p.add_argument("--data", help="corpus directory")
    p.add_argument("--out", help="semantic checkpoint path")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train encoders and denoiser")
    common(p)
    p.add_argument("--data", help="corpus directory")
    p.add_argument("--semantic", help="frozen semantic checkpoint")
    p.add_argument("--out", help="training output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int, help="override config steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample images for the eval split")
    common(p)
    p.add_argument("--data", help="corpus directory")
    p.add_argument("--checkpoint", help="training checkpoint")
    p.add_argument("--out", help="sample output directory")
    p.add_argument("--blank-prior", action="store_true", help="replace edge priors with zeros")
    p.add_argument("--count", type=int, help="sample only the first N eval records")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score samples against the corpus")
    common(p)
    p.add_argument("--data", help="corpus directory")
    p.add_argument("--checkpoint", help="training checkpoint")
    p.add_argument("--samples", help="directory of generated samples")
    p.add_argument("--out", help="evaluation output directory")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one config axis end to end")
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(DEFAULT_VALUES))
    p.add_argument("--values", help="comma-separated axis values (defaults per axis)")
    p.add_argument("--out", help="sweep output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--component", default="all",
                   choices=GRADCHECK_COMPONENTS + ("all",))
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors already print to stderr
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
