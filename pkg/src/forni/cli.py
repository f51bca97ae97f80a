"""Command-line entry point: ``forni {phantom,estimate,dti,evaluate}``.

Exit codes: 0 success, 1 usage, 2 bad data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import EstimationConfig, cfari, default_mask, estimate, sweep_order
from .dti import NumericDomainError, RankDeficientError, fa_md, fit_tensors, tensor_to_six
from .geometry import build_dictionary, default_basis
from .io import (
    DataError,
    load_dwi,
    load_fo_file,
    load_volume,
    save_fo_file,
    save_volume,
    write_gradient_table,
)
from .metrics import aggregate, e_fo
from .phantom import SpecError, default_spec, load_spec, make_phantom, save_spec

log = logging.getLogger("forni")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

REGION_NAMES = {1: "noncrossing", 2: "two-way", 3: "three-way"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_phantom(args):
    spec = load_spec(args.spec) if args.spec else default_spec()
    snr = None if args.noise_free else args.snr
    truth, scheme, signals = make_phantom(spec, snr, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(out / "dwi.nii", signals)
    write_gradient_table(out / "dwi", scheme)
    save_volume(out / "mask.nii", truth.mask)
    save_volume(out / "regions.nii", truth.count)
    voxels = np.argwhere(truth.mask)
    save_fo_file(out / "truth", truth.shape, voxels, [truth.fo_set(v) for v in voxels],
                 {"kind": "ground-truth", "snr": snr or 0, "seed": args.seed,
                  "software": f"forni {__version__}"})
    save_spec(out / "spec.yaml", spec)
    log.info("phantom written to %s (%d occupied voxels)", out, len(voxels))


def _mask_for(args, data):
    if args.mask:
        mask, _, _ = load_volume(args.mask)
        if mask.shape != data.signals.shape[:3]:
            raise DataError(f"{args.mask}: mask shape {mask.shape} does not match the DWI")
        return mask > 0
    return default_mask(data.s0)


def cmd_estimate(args):
    data = load_dwi(args.dwi, args.bval, args.bvec)
    mask = _mask_for(args, data)
    cfg = EstimationConfig(
        alpha=args.alpha, beta=args.beta, mu=args.mu, f_th=args.fth, theta_r=args.theta_r,
        n_parallel=args.np, t_max=args.max_iter, eps_conv=args.eps_conv, workers=args.workers,
    )
    basis = default_basis(args.basis_order, args.lambda1, args.lambda2)
    G = build_dictionary(basis, data.scheme)
    if args.init == "cfari":
        init_beta = cfg.beta if args.init_beta is None else args.init_beta
        init = cfari(data.signals, mask, basis, G, init_beta, cfg.f_th, cfg.tol, cfg.max_iter)
    else:
        fo = load_fo_file(args.init)
        init = [np.unique(basis.nearest(fo.fo_set(v))) if fo.count[tuple(v)] else []
                for v in sweep_order(mask)]
    field = estimate(data.signals, mask, basis, G, cfg, init=init, scheme=data.scheme)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in asdict(cfg).items() if k != "workers"}
    meta = {
        "kind": "cfari" if cfg.alpha == 0 else "forni",
        "basis": {"order": args.basis_order, "n": len(basis),
                  "lambda1": args.lambda1, "lambda2": args.lambda2},
        "config": config,
        "init": args.init if args.init != "cfari" else f"cfari(beta={args.init_beta or cfg.beta})",
        "software": f"forni {__version__}",
    }
    save_fo_file(out / "fos", mask.shape, field.voxels, field.fo_sets(), meta,
                 data.affine, data.voxel_size)
    unconverged = np.zeros(mask.shape)
    unconverged[tuple(field.voxels.T)] = ~field.converged
    save_volume(out / "unconverged.nii", unconverged, data.affine, data.voxel_size)
    if args.save_fractions:
        frac = np.zeros(mask.shape + (len(basis),), dtype=np.float32)
        frac[tuple(field.voxels.T)] = field.fractions
        save_volume(out / "fractions.nii", frac, data.affine, data.voxel_size)
    diag = {"sweeps": field.diagnostics["sweeps"], "unconverged": field.diagnostics["unconverged"],
            "voxels": len(field)}
    _json(out / "diagnostics.json", diag)
    if args.dump_solver:
        rows = ["x,y,z,objective,kkt,iterations,converged"]
        for m, v in enumerate(field.voxels):
            rows.append(f"{v[0]},{v[1]},{v[2]},{field.objective_terms[m]:.17g},"
                        f"{field.kkt[m]:.3e},{field.iterations[m]},{int(field.converged[m])}")
        (out / "solver.csv").write_text("\n".join(rows) + "\n")
    log.info("estimated %d voxels, %d sweeps", len(field), len(diag["sweeps"]))


def cmd_dti(args):
    data = load_dwi(args.dwi, args.bval, args.bvec)
    mask = _mask_for(args, data)
    D = fit_tensors(data.signals[mask], data.scheme)
    fa, md = fa_md(D)
    six = np.zeros(mask.shape + (6,))
    six[mask] = tensor_to_six(D)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(out / "tensor.nii", six, data.affine, data.voxel_size)
    for name, values in (("fa", fa), ("md", md)):
        vol = np.zeros(mask.shape)
        vol[mask] = values
        save_volume(out / f"{name}.nii", vol, data.affine, data.voxel_size)


def cmd_evaluate(args):
    est = load_fo_file(args.est)
    truth = load_fo_file(args.truth)
    if est.shape != truth.shape:
        raise DataError(f"grids differ: {est.shape} vs {truth.shape}")
    voxels = np.argwhere(truth.count > 0)
    errors = np.array([e_fo(est.fo_set(v), truth.fo_set(v)) for v in voxels])
    unmatched = int(sum((est.count[tuple(v)] == 0) for v in voxels))
    if args.regions:
        labels_vol, _, _ = load_volume(args.regions)
        if labels_vol.shape != truth.shape:
            raise DataError(f"{args.regions}: region grid does not match")
        labels = labels_vol[tuple(voxels.T)].astype(np.int64)
        names = None
    else:
        labels = np.minimum(truth.count[tuple(voxels.T)], 3)
        names = {k: v for k, v in REGION_NAMES.items() if k in set(labels.tolist())}
    report = aggregate(errors, labels, names, unmatched)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    report.to_json(out.with_suffix(".json"))
    if args.error_map:
        vol = np.zeros(truth.shape)
        vol[tuple(voxels.T)] = errors
        save_volume(args.error_map, vol, truth.affine)
    print(report.to_csv(), end="")


def build_parser():
    p = _Parser(prog="forni", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"forni {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ph = sub.add_parser("phantom", help="generate the digital crossing phantom")
    ph.add_argument("--spec", help="phantom spec (YAML); default layout if omitted")
    ph.add_argument("--snr", type=float, default=20.0, help="SNR on b0; 0 disables noise")
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--noise-free", action="store_true")
    ph.add_argument("--out-dir", required=True)
    ph.set_defaults(func=cmd_phantom)

    es = sub.add_parser("estimate", help="estimate fiber orientations")
    d = EstimationConfig()
    _dwi_args(es)
    es.add_argument("--alpha", type=float, default=d.alpha)
    es.add_argument("--beta", type=float, default=d.beta)
    es.add_argument("--mu", type=float, default=d.mu)
    es.add_argument("--fth", type=float, default=d.f_th)
    es.add_argument("--theta-r", type=float, default=d.theta_r)
    es.add_argument("--np", type=int, default=d.n_parallel, help="voxels per parallel group")
    es.add_argument("--workers", type=int, default=1, help="threads solving a group")
    es.add_argument("--max-iter", type=int, default=d.t_max, help="maximum sweeps")
    es.add_argument("--eps-conv", type=float, default=d.eps_conv)
    es.add_argument("--basis-order", type=int, default=12)
    es.add_argument("--lambda1", type=float, default=2.0e-3)
    es.add_argument("--lambda2", type=float, default=0.5e-3)
    es.add_argument("--init", default="cfari", help="'cfari' or an FO-field prefix")
    es.add_argument("--init-beta", type=float, default=None, help="beta of the CFARI start")
    es.add_argument("--save-fractions", action="store_true")
    es.add_argument("--dump-solver", action="store_true", help="write per-voxel solver stats")
    es.set_defaults(func=cmd_estimate)

    dt = sub.add_parser("dti", help="single-tensor fit, FA and MD")
    _dwi_args(dt)
    dt.set_defaults(func=cmd_dti)

    ev = sub.add_parser("evaluate", help="FO error report against ground truth")
    ev.add_argument("--est", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--regions")
    ev.add_argument("--error-map")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)
    return p


def _dwi_args(p):
    p.add_argument("--dwi", required=True)
    p.add_argument("--bval", required=True)
    p.add_argument("--bvec", required=True)
    p.add_argument("--mask")
    p.add_argument("--out-dir", required=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (NumericDomainError, RankDeficientError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"forni: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SpecError, FileNotFoundError, ValueError) as exc:
        print(f"forni: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
