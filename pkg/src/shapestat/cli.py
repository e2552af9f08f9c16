"""Command-line entry point.

Every command writes its delimited outputs, any figures, and a
``manifest.json`` into the directory given by ``--out``; ``shapestat replay
<manifest> --out NEW`` re-runs the recorded command with identical
parameters.  Randomness is controlled by ``--seed`` through per-replicate
streams, so outputs are byte-identical across replays and thread counts
(``SHAPESTAT_THREADS`` caps worker threads).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats as _sstats

from . import __version__, report
from .asymptotics import clt_normality_experiment, one_sample_test
from .difftensor import load_tensors, mean_tensor, save_tensors
from .frusta import (
    FrustumParams,
    GrowthMode,
    StandScenario,
    bootstrap_band,
    cylinder_geodesic,
    distance_to_geodesic,
    frustum_config,
    frustum_raw,
    frustum_size,
    growth_curve,
    synthetic_stand,
)
from .geometry import ShapePoint, SizeShapePoint, to_preshape, uncenter
from .io import Dataset, RunManifest, load_dataset, save_dataset, write_csv
from .means import MeanConfig, Rho, frechet_mean
from .perturbation import (
    CSV_HEADER,
    ErrorShape,
    PerturbationKind,
    PerturbationSpec,
    compatibility_experiment,
)

_RHO = {"full": Rho.FULL_PROCRUSTES, "partial": Rho.PARTIAL_PROCRUSTES,
        "ziezold": Rho.ZIEZOLD}

TABLE1_MUS = {
    "iso": (np.eye(3) / np.sqrt(3.0)),
    "aniso": (np.diag([1.0, 0.3, 0.1]) / np.sqrt(1.1)),
    "neardeg": (np.diag([1.0, 0.01, 0.0]) / np.sqrt(1.001)),
}
TABLE1_SIGMAS = {
    "iso": (0.5, 0.1, 0.01),
    "aniso": (0.5, 0.1, 0.01),
    "neardeg": (0.1, 0.01, 0.001),
}
TABLE2_MUS = {
    "iso": np.eye(3),
    "aniso": np.diag([1.0, 0.3, 0.1]),
    "neardeg": np.diag([1.0, 0.01, 0.0]),
}
TABLE2_SIGMAS = (0.1, 0.01, 0.001)

CLT_MU = np.diag([1.0, -1.0, 0.0]) / np.sqrt(2.0)
CLT_NU = np.eye(3) / np.sqrt(3.0)

UNIFORM_STARTS = ((1.07, 0.93), (1.10, 0.90), (1.15, 0.85))
CONSTANT_STARTS = ((1.025, 0.975), (1.05, 0.95), (1.10, 0.90))


def _dataset_points(ds: Dataset, rho: Rho):
    if rho is Rho.PARTIAL_PROCRUSTES:
        return list(ds.configurations)
    return [to_preshape(c) for c in ds.configurations]


def _run_mean(params, out: Path):
    ds = load_dataset(params["data"], params.get("fmt"))
    rho = _RHO[params["rho"]]
    cfg = MeanConfig(rho=rho, tol=params["tol"], max_iter=params["max_iter"],
                     restarts=params["restarts"], seed=params["seed"])
    result = frechet_mean(_dataset_points(ds, rho), cfg)
    raw = uncenter(result.mean.rep)
    save_dataset(out / "mean.csv", Dataset(m=raw.shape[0], k=raw.shape[1], objects=[raw]))
    extras = {
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "dropped_scales": result.dropped_scales,
        "restart_spread": result.restart_spread,
        "n": len(ds.objects),
    }
    return {"mean": "mean.csv"}, extras, 0 if result.converged else 1


def _run_test(params, out: Path):
    ds = load_dataset(params["data"], params.get("fmt"))
    hyp_ds = load_dataset(params["hypothesis"])
    rho = _RHO[params["rho"]]
    hyp_conf = hyp_ds.configurations[0]
    if rho is Rho.PARTIAL_PROCRUSTES:
        hyp = SizeShapePoint(hyp_conf)
    else:
        hyp = ShapePoint(to_preshape(hyp_conf))
    rep = one_sample_test(_dataset_points(ds, rho), hyp, rho,
                          alpha=params["alpha"], calibration=params["calibration"])
    write_csv(out / "test.csv",
              ["statistic", "dof", "p_value", "rejected", "alpha", "n", "calibration"],
              [[rep.statistic, rep.dof, rep.p_value, int(rep.rejected), rep.alpha,
                rep.n, rep.calibration]])
    extras = {"p_value": rep.p_value, "rejected": rep.rejected,
              "n_excluded": rep.n_excluded}
    return {"test": "test.csv"}, extras, 0


def _run_table(params, out: Path, kind: PerturbationKind, mus, default_sigmas,
               error_shape: ErrorShape, name: str):
    rho = _RHO[params["rho"]]
    rows = []
    idx = 0
    for mu_id in params["mu_ids"]:
        if mu_id not in mus:
            raise ValueError(f"unknown mu id {mu_id!r}; choices: {sorted(mus)}")
        sigmas = params["sigmas"] if params["sigmas"] else default_sigmas[mu_id]
        for sigma in sigmas:
            spec = PerturbationSpec(kind=kind, mu=mus[mu_id], sigma=float(sigma),
                                    error_shape=error_shape)
            rep = compatibility_experiment(spec, params["n"], params["N"], rho,
                                           seed=params["seed"], mu_id=mu_id,
                                           stream_key=(idx,))
            rows.append(rep.csv_row())
            idx += 1
    csv_path = out / f"{name}.csv"
    write_csv(csv_path, CSV_HEADER, rows)
    png = report.plot_compatibility(csv_path, out / f"{name}.png",
                                    title=f"{name}: d_hat vs sigma_hat")
    return ({name: f"{name}.csv", "figure": Path(png).name},
            {"rows": len(rows)}, 0)


def _run_table1(params, out: Path):
    sig = {mid: TABLE1_SIGMAS[mid] for mid in TABLE1_MUS}
    return _run_table(params, out, PerturbationKind.GOODALL, TABLE1_MUS, sig,
                      ErrorShape.ISOTROPIC, "table1")


def _run_table2(params, out: Path):
    sig = {mid: TABLE2_SIGMAS for mid in TABLE2_MUS}
    return _run_table(params, out, PerturbationKind.DIFFUSION_TENSOR, TABLE2_MUS, sig,
                      ErrorShape.UPPER_TRIANGULAR, "table2")


def _run_cltfig(params, out: Path):
    spec = PerturbationSpec(kind=PerturbationKind.GEODESIC, mu=CLT_MU,
                            sigma=params["sigma"], nu=CLT_NU, s_dist=params["s_dist"])
    res = clt_normality_experiment(spec, params["n"], params["replicates"],
                                   seed=params["seed"])
    csv_path = out / "coordinates.csv"
    write_csv(csv_path, ["replicate", "coordinate"],
              [[j, v] for j, v in enumerate(res.coords)])
    ks = _sstats.kstest(res.coords, "norm")
    png = report.plot_coordinate_histogram(csv_path, out / "cltfig.png")
    extras = dict(res.metadata)
    extras.update({"ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue)})
    return ({"coordinates": "coordinates.csv", "figure": Path(png).name}, extras, 0)


def _strictly_increasing(sizes):
    out = np.maximum.accumulate(np.asarray(sizes, dtype=float))
    for i in range(1, len(out)):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] * (1.0 + 1e-9)
    return out


def _start_radius(kappa: int, alpha: float, t: float, target_size: float) -> float:
    a2 = b2 = kappa / 2.0
    C = a2 * (1.0 + t**2) + b2 * (alpha**2 + (alpha * t) ** 2)
    return float(np.sqrt((target_size**2 - kappa / 2.0) / C))


def _run_frusta(params, out: Path):
    stand = synthetic_stand(params["ages"], params["trees"],
                            StandScenario(params["scenario"]), seed=params["seed"],
                            kappa=params["kappa"], change_point=params["change_point"])
    stand_rows = []
    for age, age_params in zip(stand.ages, stand.params):
        for tree, p in enumerate(age_params):
            stand_rows.append([age, tree, p.kappa] + list(frustum_raw(p).ravel()))
    coord_names = [f"c{i}" for i in range(6 * params["kappa"])]
    write_csv(out / "stand.csv", ["age", "tree", "kappa"] + coord_names, stand_rows)

    seg = cylinder_geodesic(params["kappa"], params["r0"], params["r1"])
    band = bootstrap_band(stand.shapes, params["B"], params["level"], seg,
                          seed=params["seed"], rho=_RHO[params["rho"]],
                          metric=params["metric"], ages=stand.ages)
    band_csv = out / "band.csv"
    write_csv(band_csv, ["age", "estimate", "lower", "upper"],
              [[a, e, lo, hi] for a, e, lo, hi in
               zip(band.ages, band.estimates, band.lowers, band.uppers)])

    outputs = {"stand": "stand.csv", "band": "band.csv"}
    curves_csv = None
    if params["compare"] != "none":
        sizes = _strictly_increasing(
            [np.mean([frustum_size(p) for p in ps]) for ps in stand.params])
        curve_rows = []
        modes = []
        if params["compare"] in ("uniform", "both"):
            modes += [(GrowthMode.UNIFORM_INCREMENT, UNIFORM_STARTS, "uniform")]
        if params["compare"] in ("constant", "both"):
            modes += [(GrowthMode.CONSTANT_SHAPE_RATIOS, CONSTANT_STARTS, "constant")]
        for mode, starts, tag in modes:
            for alpha, t in starts:
                r = _start_radius(params["kappa"], alpha, t, sizes[0])
                start = FrustumParams(kappa=params["kappa"], alpha=alpha, beta=alpha,
                                      r=r, t=t)
                curve = growth_curve(mode, start, sizes, len(sizes))
                label = f"{tag} a={alpha} t={t}"
                for age, p in zip(stand.ages, curve):
                    d = distance_to_geodesic(frustum_config(p), seg,
                                             metric=params["metric"])[0]
                    curve_rows.append([label, age, d])
        curves_csv = out / "growth_curves.csv"
        write_csv(curves_csv, ["label", "age", "distance"], curve_rows)
        outputs["growth_curves"] = "growth_curves.csv"
    png = report.plot_band(band_csv, out / "frusta.png", curves_csv)
    outputs["figure"] = Path(png).name
    extras = {"band_metadata": band.metadata, "stand_metadata": stand.metadata,
              "n_failures": band.n_failures}
    return outputs, extras, 0


def _run_dtmean(params, out: Path):
    tensors = load_tensors(params["data"])
    mean = mean_tensor(tensors, _RHO[params["rho"]])
    save_tensors(out / "mean_tensor.csv", [mean])
    return ({"mean_tensor": "mean_tensor.csv"},
            {"n": len(tensors), "m": mean.m}, 0)


RUNNERS = {
    "mean": _run_mean,
    "test": _run_test,
    "table1": _run_table1,
    "table2": _run_table2,
    "cltfig": _run_cltfig,
    "frusta": _run_frusta,
    "dtmean": _run_dtmean,
}


def run_command(command: str, params: dict, out_dir) -> int:
    """Run one command, writing outputs plus manifest.json into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    outputs, extras, code = RUNNERS[command](params, out)
    manifest = RunManifest(command=command, parameters=params,
                           seed=int(params.get("seed", 0)), version=__version__,
                           wall_time_s=time.perf_counter() - t0,
                           outputs=outputs, extras=extras)
    manifest.save(out / "manifest.json")
    for name, rel in outputs.items():
        print(f"[shapestat:{command}] wrote {out / rel}")
    return code


def _add_common(p, seed=0):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=seed)


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapestat",
                                 description="mean shapes, inference and "
                                             "perturbation-model diagnostics")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mean", help="Frechet mean of a landmark dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--fmt", choices=["csv", "json"], default=None)
    p.add_argument("--rho", choices=sorted(_RHO), default="full")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=200, dest="max_iter")
    p.add_argument("--restarts", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("test", help="one-sample location test")
    p.add_argument("--data", required=True)
    p.add_argument("--fmt", choices=["csv", "json"], default=None)
    p.add_argument("--hypothesis", required=True, help="dataset file with one object")
    p.add_argument("--rho", choices=sorted(_RHO), default="full")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--calibration", choices=["f", "chisq"], default="f")
    _add_common(p)

    for name, default_rho in (("table1", "full"), ("table2", "partial")):
        p = sub.add_parser(name, help=f"compatibility sweep ({name})")
        p.add_argument("--n", type=int, default=10000, help="sample size per replicate")
        p.add_argument("--N", type=int, default=10, help="number of replicates")
        p.add_argument("--rho", choices=sorted(_RHO), default=default_rho)
        p.add_argument("--sigma", type=_float_list, default=None, dest="sigmas",
                       help="comma-separated sigmas (default: per-mean presets)")
        p.add_argument("--mu-id", dest="mu_ids", action="append", default=None,
                       help="restrict to one perturbation mean (repeatable)")
        _add_common(p)

    p = sub.add_parser("cltfig", help="normality of the mean drift coordinate")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--replicates", type=int, default=2000)
    p.add_argument("--s-dist", type=float, default=0.1, dest="s_dist")
    p.add_argument("--sigma", type=float, default=0.0)
    _add_common(p)

    p = sub.add_parser("frusta", help="synthetic stand, band and growth curves")
    p.add_argument("--ages", type=int, default=40)
    p.add_argument("--trees", type=int, default=5)
    p.add_argument("--scenario", choices=[s.value for s in StandScenario],
                   default=StandScenario.TOWARD_THEN_AWAY.value)
    p.add_argument("--change-point", type=float, default=0.2, dest="change_point")
    p.add_argument("--kappa", type=int, default=36)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--r0", type=float, default=0.5)
    p.add_argument("--r1", type=float, default=2.0)
    p.add_argument("--metric", choices=["intrinsic", "procrustes", "ziezold"],
                   default="intrinsic")
    p.add_argument("--rho", choices=["full", "ziezold"], default="full")
    p.add_argument("--compare", choices=["none", "uniform", "constant", "both"],
                   default="both")
    _add_common(p)

    p = sub.add_parser("dtmean", help="mean of a tensor sample")
    p.add_argument("--data", required=True, help="upper-triangle tensor CSV")
    p.add_argument("--rho", choices=["partial", "ziezold"], default="partial")
    _add_common(p)

    p = sub.add_parser("replay", help="re-run a recorded manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    ns = ap.parse_args(argv)
    try:
        if ns.command == "replay":
            manifest = RunManifest.load(ns.manifest)
            return run_command(manifest.command, manifest.parameters, ns.out)
        params = {k: v for k, v in vars(ns).items() if k not in ("command", "out")}
        if ns.command in ("table1", "table2") and params.get("mu_ids") is None:
            params["mu_ids"] = ["iso", "aniso", "neardeg"]
        return run_command(ns.command, params, ns.out)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"shapestat: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
