"""Command-line entry points.

Every subcommand writes its outputs plus ``manifest.json`` (argv, full
config snapshot, seed, library versions) into ``--out-dir``.
Exit codes: 0 success, 1 module/IO error, 2 usage error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import platform
import sys
import time
from dataclasses import fields
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from . import evaluators as ev
from .chamfer import chamfer_distance
from .dmm import DmmConfig, fit_dmm
from .errors import MeshParamError
from .geometry import AirfoilCurve, load_dat, naca_corpus, naca_generate, save_dat
from .losses import Batch, LossWeights, append_loss_csv, loss_grad_weights
from .lsm import LsmCheckpoint, LsmConfig, decode_surface, infer_latent, sample_novel, train_lsm
from .mesh import mesh_quality, o_mesh, read_su2_mesh, sample_template, write_su2_mesh
from .net import ActivationBlend, DeformationNet
from . import plots
from . import shapeopt as so

log = logging.getLogger("meshparam")

COMMANDS = ("gen-naca", "train-lsm", "fit-dmm", "reconstruct", "deform-mesh", "sample-latent", "optimize", "mesh-quality", "bench-reg")


# ------------------------------------------------------------------ config


def load_config(paths=(), overrides=()):
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cfg.read_string(resources.files("meshparam").joinpath("defaults.ini").read_text())
    for p in paths:
        if not cfg.read(p):
            raise FileNotFoundError(f"config file not found: {p}")
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not cfg.has_section(section):
            raise ValueError(f"bad override {item!r}; expected section.key=value")
        cfg.set(section, name, value.strip())
    return cfg


def _coerce(raw, like):
    raw = raw.strip()
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(float(raw))
    if isinstance(like, float):
        return float(raw)
    return raw


def _fill(cls, section, **extra):
    """Dataclass built from its defaults, overridden by matching keys in ``section``."""
    kwargs = {}
    for f in fields(cls):
        if f.name in extra or f.name not in section:
            continue
        default = cls.__dataclass_fields__[f.name].default
        if isinstance(default, (bool, int, float)):
            kwargs[f.name] = _coerce(section[f.name], default)
    return cls(**kwargs, **extra)


def _activation(cfg):
    s = cfg["activation"]
    return ActivationBlend(s.getfloat("relu_weight"), s.getfloat("sine_weight"), s.getfloat("sine_frequency"))


def _optional_float(raw):
    return float(raw) if raw and raw.strip() else None


# ------------------------------------------------------------- utilities


# config section whose seed governs each command
_SEED_SECTION = {"train-lsm": "lsm", "fit-dmm": "dmm", "optimize": "optimize", "bench-reg": "bench", "sample-latent": "mesh"}


def _run_seed(args, cfg):
    if getattr(args, "seed", None) is not None:
        return args.seed
    section = _SEED_SECTION.get(args.command)
    if args.command == "reconstruct":
        section = args.model
    return cfg[section].getint("seed") if section else None


def _write_manifest(out_dir, args, cfg, outputs, extra=None):
    versions = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("scipy", "threadpoolctl", "artifact"):
        try:
            versions[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "config": {s: dict(cfg[s]) for s in cfg.sections()},
        "seed": _run_seed(args, cfg),
        "versions": versions,
        "outputs": sorted(str(o) for o in outputs),
        **(extra or {}),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _target(spec, cfg):
    """A .dat path or a NACA designation."""
    p = Path(spec)
    if p.suffix.lower() == ".dat" or p.exists():
        return load_dat(p)
    return naca_generate(spec, cfg["naca"].getint("points"), cfg["naca"].get("spacing"))


def _template_mesh(path, cfg):
    if path:
        return read_su2_mesh(path)
    m = cfg["mesh"]
    base = naca_generate(m.get("template_code"), cfg["naca"].getint("points"), cfg["naca"].get("spacing"))
    return o_mesh(base, m.getint("n_radial"), m.getfloat("radius"), m.getfloat("first_height"), m.get("kind"))


def _sample(mesh, cfg):
    m = cfg["mesh"]
    n_volume = m.get("n_volume", "").strip()
    return sample_template(mesh, None, int(n_volume) if n_volume else None, m.getfloat("fixed_band"), m.getint("seed"))


def _lsm_config(cfg):
    return _fill(LsmConfig, cfg["lsm"], activation=_activation(cfg))


def _dmm_config(cfg):
    return _fill(DmmConfig, cfg["dmm"], activation=_activation(cfg))


def _evaluator(cfg):
    e = cfg["evaluator"]
    kind = e.get("kind")
    if kind == "toy":
        return ev.ToyObjective(e.getfloat("alpha"), e.getfloat("beta"), _optional_float(e.get("area_target")))
    if kind == "panel":
        return ev.PanelMethod(e.getfloat("alpha_deg"), e.getfloat("v_inf"), e.getfloat("fd_step"))
    if kind == "file":
        return ev.FileAdjointExchange(e.get("workdir"), e.getfloat("timeout"))
    raise ValueError(f"unknown evaluator kind {kind!r}")


# -------------------------------------------------------------- commands


def cmd_gen_naca(args, cfg, out):
    n = args.points or cfg["naca"].getint("points")
    curve = naca_generate(args.code, n, cfg["naca"].get("spacing"))
    path = out / f"naca{args.code}.dat"
    save_dat(curve, path)
    print(path)
    return [path]


def cmd_train_lsm(args, cfg, out):
    lcfg = _lsm_config(cfg)
    if args.corpus:
        corpus = [load_dat(p) for p in args.corpus]
    else:
        corpus = naca_corpus(cfg["lsm"].getint("corpus_size"), cfg["naca"].getint("points"), cfg["lsm"].getint("corpus_seed"))
    mesh = _template_mesh(args.template, cfg)
    sample = _sample(mesh, cfg)
    csv_path = out / "lsm_loss.csv"
    csv_path.unlink(missing_ok=True)

    def report(epoch, loss):
        append_loss_csv(csv_path, epoch, loss)
        log.info("epoch %d chamfer %.3e dist %.3e", epoch, loss.chamfer, loss.dist)

    ckpt = train_lsm(corpus, sample, lcfg, callback=report)
    path = out / "lsm.npz"
    ckpt.save(path)
    svg = out / "lsm_loss.svg"
    plots.loss_curves(svg, {"chamfer": [b.chamfer for b in ckpt.history], "dist": [b.dist for b in ckpt.history]})
    print(f"{path}  final mean chamfer {ckpt.history[-1].chamfer:.3e}")
    return [path, csv_path, svg]


def cmd_fit_dmm(args, cfg, out):
    target = _target(args.target, cfg)
    mesh = _template_mesh(args.template, cfg)
    sample = _sample(mesh, cfg)
    csv_path = out / "dmm_loss.csv"
    csv_path.unlink(missing_ok=True)
    res = fit_dmm(target, sample, _dmm_config(cfg), callback=lambda i, l: append_loss_csv(csv_path, i, l))
    path = out / "dmm.npz"
    res.net.save(path)
    mesh_out = out / "deformed.su2"
    deformed = so.decode_mesh(so.DmmModel(res.net), mesh)
    write_su2_mesh(deformed, mesh_out)
    loss_svg, wire_svg = out / "dmm_loss.svg", out / "deformed_mesh.svg"
    plots.loss_curves(loss_svg, {"chamfer": [b.chamfer for b in res.history], "dist": [b.dist for b in res.history]})
    plots.mesh_wireframe(wire_svg, deformed)
    print(f"{path}  chamfer {res.loss.chamfer:.3e}")
    return [path, csv_path, mesh_out, loss_svg, wire_svg]


def cmd_reconstruct(args, cfg, out):
    target = _target(args.target, cfg)
    mesh = _template_mesh(args.template, cfg)
    sample = _sample(mesh, cfg)
    if args.model == "lsm":
        if not args.checkpoint:
            raise ValueError("--checkpoint is required for --model lsm")
        ckpt = LsmCheckpoint.load(args.checkpoint)
        z = infer_latent(ckpt, target, sample)
        model = so.LsmModel(ckpt, z)
        np.save(out / "latent.npy", z)
    else:
        model = so.DmmModel(fit_dmm(target, sample, _dmm_config(cfg)).net)
        model.net.save(out / "dmm.npz")
    outputs = []
    meshes = [("a", mesh)] + ([("b", read_su2_mesh(args.also_template))] if args.also_template else [])
    curves = [target.points]
    for tag, m in meshes:
        deformed = so.decode_mesh(model, m)
        p = out / f"deformed_{tag}.su2"
        write_su2_mesh(deformed, p)
        surf = deformed.vertices[deformed.surface_loop()]
        curves.append(surf)
        print(f"{p}  marker chamfer {chamfer_distance(surf, target.points):.3e}  inverted {mesh_quality(deformed).inverted_count}")
        outputs.append(p)
    svg = out / "reconstruct.svg"
    plots.airfoil_overlay(svg, curves)
    return outputs + [svg]


def _lsm_latent(ckpt, args):
    if args.latent:
        return np.load(args.latent)
    return ckpt.latents.vectors[args.row]


def cmd_deform_mesh(args, cfg, out):
    mesh = read_su2_mesh(args.mesh)
    if args.model == "lsm":
        ckpt = LsmCheckpoint.load(args.checkpoint)
        model = so.LsmModel(ckpt, _lsm_latent(ckpt, args))
    else:
        model = so.DmmModel(DeformationNet.load(args.checkpoint))
    deformed = so.decode_mesh(model, mesh)
    p, svg = out / "deformed.su2", out / "deformed_mesh.svg"
    write_su2_mesh(deformed, p)
    plots.mesh_wireframe(svg, deformed)
    print(p)
    return [p, svg]


def cmd_sample_latent(args, cfg, out):
    ckpt = LsmCheckpoint.load(args.checkpoint)
    sample = _sample(_template_mesh(args.template, cfg), cfg)
    z = sample_novel(ckpt, sample, args.base, args.scale, seed=args.seed)
    surf = decode_surface(ckpt, z, sample.surface)
    dat, zp, svg = out / "sample.dat", out / "sample_latent.npy", out / "sample.svg"
    save_dat(AirfoilCurve(surf, f"latent sample base={args.base} scale={args.scale} seed={args.seed}"), dat)
    np.save(zp, z)
    plots.airfoil_overlay(svg, [decode_surface(ckpt, ckpt.latents.vectors[args.base], sample.surface), surf])
    print(dat)
    return [dat, zp, svg]


def _constraint_weights(cfg):
    o = cfg["optimize"]
    return {so.T1: o.getfloat("w_t1"), so.M1: o.getfloat("w_m1"), so.M2: o.getfloat("w_m2"), so.M3: o.getfloat("w_m3"), so.M4: o.getfloat("w_m4"), so.E1: o.getfloat("w_e1")}


def _cell(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def cmd_optimize(args, cfg, out):
    mesh = _template_mesh(args.template, cfg)
    sample = _sample(mesh, cfg)
    fine = None
    if args.fine_template:
        fm = read_su2_mesh(args.fine_template)
        fine = so.Stage(_sample(fm, cfg), fm)
    if args.model == "lsm":
        if not args.checkpoint:
            raise ValueError("--checkpoint is required for --model lsm")
        ckpt = LsmCheckpoint.load(args.checkpoint)
        z0 = np.load(args.latent) if args.latent else infer_latent(ckpt, sample.surface, sample)
        model = so.LsmModel(ckpt, z0)
    else:
        net = DeformationNet.load(args.checkpoint) if args.checkpoint else _dmm_config(cfg).new_net()
        model = so.DmmModel(net, _dmm_config(cfg))
    evaluator = _evaluator(cfg)
    ocfg = _fill(so.OptimConfig, cfg["optimize"])
    if args.steps is not None:
        ocfg.steps = args.steps
    constraints = so.default_constraints(model.kind, evaluator.gradient_kind, _constraint_weights(cfg))
    every = cfg["optimize"].getint("snapshot_every")
    log_path = out / "optimize_log.csv"
    initial = so.decode_surface(model, sample.surface)
    outputs = [log_path]
    keys = ["step", "objective", "total", *[c.kind for c in constraints], "fresh", "discarded", "stage", "reparam_count"]
    with log_path.open("w") as fh:
        fh.write(",".join(keys) + "\n")

        def on_step(state, row):
            fh.write(",".join(_cell(row.get(k, "")) for k in keys) + "\n")
            if every > 0 and row["step"] % every == 0:
                p = out / f"snapshot_{row['step']:05d}.svg"
                plots.airfoil_overlay(p, [initial, so.decode_surface(state.model, sample.surface)], title=f"step {row['step']}")
                outputs.append(p)

        state = so.optimize(model, evaluator, sample, mesh, constraints, ocfg, fine, callback=on_step)
    stage_mesh = fine.mesh if state.template_stage == "fine" else mesh
    final = so.decode_mesh(state.model, stage_mesh)
    final_path = out / "final.su2"
    write_su2_mesh(final, final_path)
    svg = out / "optimized.svg"
    plots.airfoil_overlay(svg, [initial, so.decode_surface(state.model, sample.surface)])
    obj = state.column("objective")
    curves = out / "optimize_loss.svg"
    plots.loss_curves(curves, {"objective": obj, "total": state.column("total")})
    outputs.append(curves)
    q = mesh_quality(final)
    print(f"objective {obj[0]:.6g} -> {obj[-1]:.6g}; reparameterizations {state.reparam_count}; inverted cells {q.inverted_count}")
    return outputs + [final_path, svg]


def cmd_mesh_quality(args, cfg, out):
    q = mesh_quality(read_su2_mesh(args.mesh))
    report = {
        "min_signed_area": q.min_signed_area,
        "inverted_count": q.inverted_count,
        "max_skewness": q.max_skewness,
        "min_orthogonality": q.min_orthogonality,
        "aspect_ratio_range": list(q.aspect_ratio_range),
    }
    p = out / "quality.json"
    p.write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return [p]


def time_regularization(sizes, repeats=3, chunk=2048, hidden_width=256, hidden_layers=2, seed=0):
    """Best-of-``repeats`` wall time of one l_reg value+gradient pass over M volume points."""
    rng = np.random.default_rng(np.uint64(seed))
    net = DeformationNet([2] + [hidden_width] * hidden_layers + [2], 0, seed=seed)
    net.params[-2] = rng.normal(0.0, 1e-2, net.params[-2].shape)  # non-trivial deformation
    weights = LossWeights(w_reg=1e-3, w_z=0.0)
    rows = []
    for m in sizes:
        pts = rng.uniform(-1.0, 1.0, (m, 2))
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            for c in range(0, m, chunk):
                block = pts[c : c + chunk]
                loss_grad_weights(net, Batch(None, block, np.arange(min(8, len(block))), None), weights, terms=("l_dist", "l_def"))
            best = min(best, time.perf_counter() - t0)
        rows.append((m, best))
    return rows


def loglog_fit(rows):
    x, y = np.log(np.asarray(rows, dtype=np.float64)).T
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    return float(slope), float(1.0 - np.sum(resid**2) / np.sum((y - y.mean()) ** 2))


def cmd_bench_reg(args, cfg, out):
    b = cfg["bench"]
    sizes = [int(s) for s in (args.sizes or b.get("sizes")).split(",")]
    rows = time_regularization(sizes, b.getint("repeats"), b.getint("chunk"), b.getint("hidden_width"), b.getint("hidden_layers"), b.getint("seed"))
    p = out / "bench_reg.csv"
    p.write_text("M,seconds\n" + "".join(f"{m},{t!r}\n" for m, t in rows))
    slope, r2 = loglog_fit(rows)
    print(f"log-log slope {slope:.3f}  R^2 {r2:.4f}")
    return [p]


# ------------------------------------------------------------------ parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", default=[], help="extra INI file(s) layered over the defaults")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="single config override")
    common.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="meshparam", description="Neural airfoil and CFD-mesh parameterization toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-naca", parents=[common], help="write a NACA section as a Selig .dat file")
    s.add_argument("code")
    s.add_argument("--points", type=int)

    s = sub.add_parser("train-lsm", parents=[common], help="train the latent model on a corpus")
    s.add_argument("--corpus", nargs="*", help=".dat files (default: seeded NACA corpus)")
    s.add_argument("--template", help="template SU2 mesh (default: generated O-mesh)")

    s = sub.add_parser("fit-dmm", parents=[common], help="fit a direct-mapping network to one target")
    s.add_argument("--target", required=True, help=".dat file or NACA designation")
    s.add_argument("--template")

    s = sub.add_parser("reconstruct", parents=[common], help="reconstruct a target and deform template mesh(es)")
    s.add_argument("--model", choices=("lsm", "dmm"), required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--template")
    s.add_argument("--also-template", help="second template mesh decoded with the same parameters")

    s = sub.add_parser("deform-mesh", parents=[common], help="apply a trained model to a mesh")
    s.add_argument("--model", choices=("lsm", "dmm"), required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--row", type=int, default=0, help="latent table row (lsm)")
    s.add_argument("--latent", help=".npy latent vector (lsm; overrides --row)")

    s = sub.add_parser("sample-latent", parents=[common], help="decode a perturbed latent vector")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--base", type=int, default=0)
    s.add_argument("--scale", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--template")

    s = sub.add_parser("optimize", parents=[common], help="constrained shape optimization")
    s.add_argument("--model", choices=("lsm", "dmm"), required=True)
    s.add_argument("--checkpoint", help="lsm checkpoint (required) or dmm network (default: identity)")
    s.add_argument("--latent", help="initial latent .npy (lsm; default: inferred from the template airfoil)")
    s.add_argument("--template")
    s.add_argument("--fine-template")
    s.add_argument("--steps", type=int)

    s = sub.add_parser("mesh-quality", parents=[common], help="quality report of an SU2 mesh")
    s.add_argument("mesh")

    s = sub.add_parser("bench-reg", parents=[common], help="time the mesh regularization against sample count")
    s.add_argument("--sizes", help="comma-separated sample counts")
    return p


HANDLERS = {
    "gen-naca": cmd_gen_naca,
    "train-lsm": cmd_train_lsm,
    "fit-dmm": cmd_fit_dmm,
    "reconstruct": cmd_reconstruct,
    "deform-mesh": cmd_deform_mesh,
    "sample-latent": cmd_sample_latent,
    "optimize": cmd_optimize,
    "mesh-quality": cmd_mesh_quality,
    "bench-reg": cmd_bench_reg,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)  # usage errors exit with status 2
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
    except (ValueError, OSError, configparser.Error) as exc:
        print(f"meshparam: error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                outputs = HANDLERS[args.command](args, cfg, out)
        else:
            outputs = HANDLERS[args.command](args, cfg, out)
        _write_manifest(out, args, cfg, outputs)
    except (MeshParamError, ValueError, OSError, KeyError) as exc:
        print(f"meshparam {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
