"""Command-line pipeline: mesh, forward, generate, invert, laplace, sample, report.

One JSON file describes an experiment; ``--set dotted.key=value`` overrides
single entries. Exit codes: 0 success, 1 configuration error, 2 mesh error,
3 optimizer stall, 4 sampler abort.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import ensemble as ens
from .bayes import PosteriorSpec, default_prior
from .estimate import (
    LmfConfig, eta_sweep, laplace, laplace_sample, lmf_optimize, write_trace_csv,
)
from .geometry import PARAM_NAMES, GeometryError, InclusionParams, LayeredModel, Rect, scene_signed_distances
from .mesh import (
    MeshConfigError, MeshError, MeshSpec, build_mesh, conformity_check, topology_audit, triangle_quality, write_mesh,
)
from .observation import Acquisition, DataMatrix, NoiseInfo, ObservationOperator, add_noise
from .wavesolver import SolverConfig, cfl_bound, check_cfl

log = logging.getLogger("inclusion_fwi")

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_STALL, EXIT_SAMPLER = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


class StallError(RuntimeError):
    pass


DEFAULT_CONFIG = {
    "scene": {
        "rect": [-1.5, 1.5, -3.0, 0.0],
        "interfaces": [-0.5, -1.1, -1.9, -2.5],
        "rho": [2.0, 2.5, 2.49, 2.49, 2.6],
        "v_p": [1.5, 2.5, 2.8, 3.3, 3.1],
        "inclusion": [0.0, -1.45, 0.5, 0.1, 0.314159, 2.1, 4.4],
    },
    "acquisition": {
        "frequencies": [2.0],
        "record_dt": 0.1,
        "T_final": 2.5,
        "kappa": 0.04,
        "f0": 0.1,
        "emitters": None,
        "receivers": None,
    },
    "mesh": {"regime": "adapted", "h": 0.04},
    "solver": {"dt": 1e-3, "variant": "second_order"},
    "noise": {"r": 5.0, "seed": 1},
    "prior": {"geometry": [0.5, -1.4, 0.3, 0.2, 0.0], "material": "auto", "cov": "auto"},
    "lmf": {"mesh_regime": "adapted", "h": 0.04, "dt": 1e-3},
    "laplace": {"n_samples": 1000, "seed": 0},
    "mcmc": {"W": 32, "S": 400, "B": 80, "a": 2.0, "rng_seed": 0, "mesh_regime": "uniform",
             "h": 0.075, "dt": 2e-3, "grid": [60, 60]},
    "output": "run",
}


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, pairs: list[str]) -> dict:
    cfg = copy.deepcopy(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not a block")
        node[parts[-1]] = _parse_value(value)
    return cfg


def load_config(path: str | None, overrides: list[str] = (), seed: int | None = None) -> dict:
    """Built-in defaults, updated by the file and then by ``--set`` pairs.

    A config file must contain its own ``scene`` block.
    """
    cfg = DEFAULT_CONFIG
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if "scene" not in user:
            raise ConfigError(f"{path}: missing 'scene' block")
        cfg = _merge(cfg, user)
    cfg = apply_overrides(cfg, list(overrides))
    if seed is not None:
        cfg["noise"]["seed"] = seed
        cfg["mcmc"]["rng_seed"] = seed
        cfg["laplace"]["seed"] = seed
    return cfg


def scene_model(cfg: dict) -> LayeredModel:
    s = cfg["scene"]
    try:
        return LayeredModel(Rect(*s["rect"]), tuple(s["interfaces"]), tuple(s["rho"]), tuple(s["v_p"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"scene block incomplete: {exc}") from exc


def true_inclusion(cfg: dict) -> InclusionParams | None:
    inc = cfg["scene"].get("inclusion")
    return None if inc is None else InclusionParams.from_array(inc)


def acquisitions(cfg: dict) -> list[Acquisition]:
    a = cfg["acquisition"]
    extra = {k: a[k] for k in ("emitters", "receivers") if a.get(k) is not None}
    freqs = a.get("frequencies") or [2.0]
    return [Acquisition(record_dt=a["record_dt"], T_final=a["T_final"], frequency=float(f),
                        kappa=a["kappa"], f0=a["f0"], **extra) for f in freqs]


def solver_config(cfg: dict, dt: float | None = None) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(dt=float(dt if dt is not None else s["dt"]), variant=s.get("variant", "second_order"))


def validate(cfg: dict, h: float, dt: float, inc: InclusionParams | None = None) -> None:
    """Cross-field checks done before any solve: recording stride and CFL."""
    model = scene_model(cfg)
    for acq in acquisitions(cfg):
        acq.stride(dt)
    vmax_inc = inc if inc is not None else true_inclusion(cfg)
    check_cfl(dt, cfl_bound(model, vmax_inc, h), 0.9)


def prior_spec(cfg: dict, datasets: list[np.ndarray], sigmas) -> PosteriorSpec:
    model = scene_model(cfg)
    pr = cfg["prior"]
    if pr.get("material", "auto") == "auto" or pr.get("cov", "auto") == "auto":
        mat_mean, cov_auto = default_prior(model)
    mat = mat_mean if pr.get("material", "auto") == "auto" else np.asarray(pr["material"], float)
    cov = cov_auto if pr.get("cov", "auto") == "auto" else np.asarray(pr["cov"], float)
    if cov.ndim == 1:
        cov = np.diag(cov)
    mean = np.r_[np.asarray(pr["geometry"], float), mat]
    return PosteriorSpec(mean, cov, sigmas, datasets, rect=model.rect)


def out_dir(cfg: dict, sub: str | None = None) -> Path:
    root = Path(cfg["output"])
    d = root / sub if sub else root
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def update_manifest(cfg: dict, command: str, entry: dict) -> None:
    path = out_dir(cfg) / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc["config"] = cfg
    doc.setdefault("commands", {})[command] = entry
    _write_json(path, doc)


# ---------------------------------------------------------------------------
# worker pool: each process holds its own observation operator


_OPERATOR: ObservationOperator | None = None


def _init_operator(cfg: dict, regime: str, h: float, dt: float) -> None:
    global _OPERATOR
    _OPERATOR = ObservationOperator(scene_model(cfg), regime, h, acquisitions(cfg), solver_config(cfg, dt))


def _forward(nu) -> list[np.ndarray]:
    return _OPERATOR.forward(nu)


class _PooledPosterior:
    """Log posterior whose forward solves run in the worker that calls it."""

    def __init__(self, spec: PosteriorSpec):
        self.spec = spec

    def evaluate(self, nu):
        return ens.LogPosterior(self.spec, _forward).evaluate(nu)

    def __call__(self, nu):
        return self.evaluate(nu)[0]


class Workers:
    """``map`` over a process pool (or in-process when ``n <= 1``)."""

    def __init__(self, n: int, cfg: dict, regime: str, h: float, dt: float):
        _init_operator(cfg, regime, h, dt)
        self.pool = Pool(n, initializer=_init_operator, initargs=(cfg, regime, h, dt)) if n > 1 else None

    def map(self, fn, items):
        items = list(items)
        return self.pool.map(fn, items) if self.pool else list(map(fn, items))

    def close(self):
        if self.pool:
            self.pool.close()
            self.pool.join()


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(cfg: dict, args) -> int:
    model = scene_model(cfg)
    m = cfg["mesh"]
    inc = true_inclusion(cfg)
    try:
        mesh = build_mesh(MeshSpec(m["regime"], float(m["h"]), model, inc))
    except (MeshConfigError, GeometryError, MeshError) as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    d = out_dir(cfg, "mesh")
    write_mesh(mesh, d / f"{m['regime']}.txt")
    report = {"regime": m["regime"], "h": m["h"], "points": mesh.n_points, "triangles": mesh.n_triangles,
              "min_quality": float(triangle_quality(mesh.points, mesh.triangles).min()),
              "topology": topology_audit(mesh)}
    ok = True
    if m["regime"] != "uniform":
        rep = conformity_check(mesh, scene_signed_distances(model, inc if m["regime"] == "adapted" else None))
        report["conformity"] = "ok" if rep.ok else f"{len(rep.violating_triangles)} violating triangles"
        ok = rep.ok
    ok = ok and not report["topology"]
    _write_json(d / f"{m['regime']}_report.json", report)
    update_manifest(cfg, "mesh", report)
    print(f"{m['regime']} mesh: {mesh.n_points} points, {mesh.n_triangles} triangles, "
          f"conformity {report.get('conformity', 'n/a')}")
    return EXIT_OK if ok else EXIT_MESH


def _truth(cfg: dict) -> list[DataMatrix]:
    m = cfg["mesh"]
    dt = cfg["solver"]["dt"]
    validate(cfg, float(m["h"]), dt)
    op = ObservationOperator(scene_model(cfg), m["regime"], float(m["h"]), acquisitions(cfg), solver_config(cfg))
    return op(true_inclusion(cfg))


def _tag(acq: Acquisition) -> str:
    return f"f{acq.frequency:g}"


def cmd_forward(cfg: dict, args) -> int:
    d = out_dir(cfg, "data")
    files = []
    for dm in _truth(cfg):
        path = d / f"forward_{_tag(dm.acquisition)}.csv"
        dm.write_csv(path)
        files.append(path.name)
    update_manifest(cfg, "forward", {"regime": cfg["mesh"]["regime"], "files": files})
    print("wrote " + ", ".join(files))
    return EXIT_OK


def cmd_generate(cfg: dict, args) -> int:
    d = out_dir(cfg, "data")
    noise = cfg["noise"]
    files = []
    for k, dm in enumerate(_truth(cfg)):
        seed = None if noise.get("seed") is None else int(noise["seed"]) + k
        noisy, info = add_noise(dm, float(noise["r"]), seed)
        tag = _tag(dm.acquisition)
        dm.write_csv(d / f"true_{tag}.csv")
        noisy.write_csv(d / f"data_{tag}.csv")
        info.write_json(d / f"noise_{tag}.json")
        files.append(f"data_{tag}.csv")
    _write_json(d / "truth.json", {"regime": cfg["mesh"]["regime"], "h": cfg["mesh"]["h"],
                                   "inclusion": dict(zip(PARAM_NAMES, cfg["scene"]["inclusion"]))})
    update_manifest(cfg, "generate", {"regime": cfg["mesh"]["regime"], "files": files})
    print("wrote " + ", ".join(files))
    return EXIT_OK


def load_datasets(cfg: dict) -> tuple[list[np.ndarray], list[float]]:
    d = Path(cfg["output"]) / "data"
    datasets, sigmas = [], []
    for acq in acquisitions(cfg):
        tag = _tag(acq)
        path = d / f"data_{tag}.csv"
        if not path.exists():
            raise ConfigError(f"{path} missing: run 'generate' first")
        datasets.append(DataMatrix.read_csv(path, acq).values)
        info = NoiseInfo.read_json(d / f"noise_{tag}.json")
        if info.sigma_noise <= 0:
            raise ConfigError(f"{tag}: noise-free data give no likelihood scale (noise.r must be > 0)")
        sigmas.append(info.sigma_noise)
    return datasets, sigmas


def lmf_config(cfg: dict) -> LmfConfig:
    fields = {k: v for k, v in cfg["lmf"].items() if k in LmfConfig.__dataclass_fields__}
    return LmfConfig(**fields)


def _surrogate_problem(seed: int = 0):
    """Linear map ``o = A nu`` with Gaussian prior: closed-form MAP."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((40, 7))
    mean = np.zeros(7)
    cov = np.diag(rng.uniform(0.5, 2.0, 7))
    nu_star = rng.standard_normal(7)
    data = A @ nu_star + 0.1 * rng.standard_normal(40)
    spec = PosteriorSpec(mean, cov, 0.1, [data], constrained=False)
    H = A.T @ A / 0.01 + np.linalg.inv(cov)
    exact = np.linalg.solve(H, A.T @ data / 0.01 + np.linalg.inv(cov) @ mean)
    return spec, (lambda nu: [A @ nu]), exact


def cmd_invert(cfg: dict, args) -> int:
    d = out_dir(cfg, "opt")
    if args.surrogate:
        spec, fn, exact = _surrogate_problem()
        res = lmf_optimize(spec, LmfConfig(tol_step=1e-10, max_iters=40), fn)
        err = float(np.max(np.abs(res.nu_map - exact)))
        _write_json(d / "surrogate.json", {"map": res.nu_map.tolist(), "exact": exact.tolist(), "max_error": err,
                                          "iterations": res.iterations})
        print(f"surrogate self-test: max error {err:.2e} after {res.iterations} iterations")
        return EXIT_OK if err < 1e-8 else EXIT_STALL
    datasets, sigmas = load_datasets(cfg)
    spec = prior_spec(cfg, datasets, sigmas)
    lc = lmf_config(cfg)
    regime, h, dt = cfg["lmf"]["mesh_regime"], float(cfg["lmf"]["h"]), float(cfg["lmf"]["dt"])
    validate(cfg, h, dt, InclusionParams.from_array(spec.prior_mean))
    pool = Workers(args.workers, cfg, regime, h, dt)
    try:
        if lc.eta_grid:
            points = eta_sweep(spec, lc, _forward, mapper=pool.map)
            _write_json(d / "sweep.json", [{"eta_scale": p.eta_scale, "nu": p.nu.tolist(), "J": p.J,
                                            "is_map": p.is_map} for p in points])
            best = next(p for p in points if p.is_map)
            res = lmf_optimize(spec, LmfConfig(**{**lc.__dict__, "eta_grid": (), "eta_scale": best.eta_scale}),
                               _forward, mapper=pool.map, log=log.info)
        else:
            res = lmf_optimize(spec, lc, _forward, mapper=pool.map, log=log.info)
    finally:
        pool.close()
    write_trace_csv(res, d / "trace.csv")
    doc = {"map": dict(zip(PARAM_NAMES, res.nu_map.tolist())), "J": res.J, "status": res.status,
           "iterations": res.iterations, "forward_solves": res.n_forward, "regime": regime, "h": h}
    _write_json(d / "map.json", doc)
    update_manifest(cfg, "invert", {k: doc[k] for k in ("status", "J", "iterations")})
    print(f"MAP ({res.status}, {res.iterations} iterations, J={res.J:.6g}): "
          + " ".join(f"{n}={v:.5g}" for n, v in zip(PARAM_NAMES, res.nu_map)))
    if res.stalled:
        raise StallError("optimizer stalled; best iterate written to opt/map.json")
    return EXIT_OK


def _read_map(cfg: dict) -> np.ndarray:
    path = Path(cfg["output"]) / "opt" / "map.json"
    if not path.exists():
        raise ConfigError(f"{path} missing: run 'invert' first")
    doc = json.loads(path.read_text())
    return np.array([doc["map"][n] for n in PARAM_NAMES])


def cmd_laplace(cfg: dict, args) -> int:
    datasets, sigmas = load_datasets(cfg)
    spec = prior_spec(cfg, datasets, sigmas)
    nu_map = _read_map(cfg)
    regime, h, dt = cfg["lmf"]["mesh_regime"], float(cfg["lmf"]["h"]), float(cfg["lmf"]["dt"])
    pool = Workers(args.workers, cfg, regime, h, dt)
    try:
        res = laplace(spec, nu_map, lmf_config(cfg), _forward, mapper=pool.map)
    finally:
        pool.close()
    d = out_dir(cfg, "opt")
    res.write_json(d / "laplace.json")
    lp = cfg["laplace"]
    samples = laplace_sample(res, int(lp["n_samples"]), lp.get("seed"))
    np.savetxt(d / "laplace_samples.csv", samples, delimiter=",", header=",".join(PARAM_NAMES), comments="",
               fmt="%.17g")
    update_manifest(cfg, "laplace", {"std": dict(zip(PARAM_NAMES, res.std.tolist()))})
    print("Laplace std: " + " ".join(f"{n}={v:.3g}" for n, v in zip(PARAM_NAMES, res.std)))
    return EXIT_OK


def _ensemble_config(cfg: dict) -> ens.EnsembleConfig:
    mc = cfg["mcmc"]
    fields = {k: v for k, v in mc.items() if k in ens.EnsembleConfig.__dataclass_fields__}
    return ens.EnsembleConfig(**fields)


def _gaussian_selftest(seed: int) -> tuple[bool, dict]:
    rng = np.random.default_rng(seed)
    mean = rng.standard_normal(7)
    std = rng.uniform(0.5, 2.0, 7)
    spec = PosteriorSpec(mean, np.diag(std**2), np.inf, [], constrained=False)
    cfg = ens.EnsembleConfig(W=32, S=4000, B=1000, rng_seed=seed)
    logpost = lambda nu: -0.5 * float(np.sum(((nu - mean) / std) ** 2))
    init = mean + std * rng.standard_normal((cfg.W, 7))
    store, _ = ens.run(spec, cfg, logpost=logpost, init=init)
    x = store.post_burn(cfg.B)
    tau = max(ens.integrated_autocorr(store.samples[cfg.B:, :, i].mean(axis=1)) for i in range(7))
    n_eff = x.shape[0] / max(tau, 1.0)
    se = std / np.sqrt(n_eff)
    mean_ok = bool(np.all(np.abs(x.mean(axis=0) - mean) < 5 * se))
    var_ok = bool(np.all(np.abs(x.var(axis=0) / std**2 - 1) < 0.15))
    return mean_ok and var_ok, {"mean_error": (x.mean(axis=0) - mean).tolist(),
                                "variance_ratio": (x.var(axis=0) / std**2).tolist(),
                                "acceptance_rate": store.acceptance_rate, "n_eff": float(n_eff)}


def cmd_sample(cfg: dict, args) -> int:
    d = out_dir(cfg, "mcmc")
    if args.gaussian:
        ok, doc = _gaussian_selftest(int(cfg["mcmc"].get("rng_seed", 0)))
        _write_json(d / "gaussian_selftest.json", {"ok": ok, **doc})
        print(f"Gaussian self-test {'passed' if ok else 'failed'}: acceptance {doc['acceptance_rate']:.3f}")
        return EXIT_OK if ok else EXIT_SAMPLER
    ecfg = _ensemble_config(cfg)
    datasets, sigmas = load_datasets(cfg)
    spec = prior_spec(cfg, datasets, sigmas)
    mc = cfg["mcmc"]
    h, dt = float(mc["h"]), float(mc["dt"])
    validate(cfg, h, dt, InclusionParams.from_array(spec.prior_mean))
    pool = Workers(args.workers, cfg, ecfg.mesh_regime, h, dt)
    try:
        store, nu_map = ens.run(spec, ecfg, logpost=_PooledPosterior(spec), mapper=pool.map, log=log.info)
    except ens.SamplerAbort as exc:
        if exc.store is not None:
            ens.write_chains_csv(exc.store, d / "chains.csv")
        raise
    finally:
        pool.close()
    _write_sample_outputs(cfg, ecfg, store, nu_map, d)
    print(f"acceptance {store.acceptance_rate:.3f}; MAP "
          + " ".join(f"{n}={v:.5g}" for n, v in zip(PARAM_NAMES, nu_map)))
    return EXIT_OK


def _write_sample_outputs(cfg, ecfg, store, nu_map, d: Path) -> None:
    ens.write_chains_csv(store, d / "chains.csv")
    post = store.post_burn(ecfg.B)
    nx, ny = cfg["mcmc"].get("grid", [60, 60])
    grid = ens.GridSpec(scene_model(cfg).rect, int(nx), int(ny))
    ens.write_contour_csv(ens.membership_contour(post, grid), grid, d / "contour.csv")
    ens.write_histograms_csv(ens.histograms(post), d / "histograms.csv")
    ens.write_manifest(ecfg, store, nu_map, d / "manifest.json")
    update_manifest(cfg, "sample", {"acceptance_rate": store.acceptance_rate,
                                    "map": dict(zip(PARAM_NAMES, nu_map.tolist()))})


def cmd_report(cfg: dict, args) -> int:
    root = Path(cfg["output"])
    report = {}
    for name, path in (("map", root / "opt" / "map.json"), ("laplace", root / "opt" / "laplace.json"),
                       ("mcmc", root / "mcmc" / "manifest.json"), ("truth", root / "data" / "truth.json")):
        if path.exists():
            report[name] = json.loads(path.read_text())
    if not report:
        raise ConfigError(f"nothing to report under {root}")
    lines = []
    truth = report.get("truth", {}).get("inclusion")
    for key in ("map", "mcmc"):
        if key in report:
            vals = report[key]["map"]
            row = " ".join(f"{n}={vals[n]:.4g}" for n in PARAM_NAMES)
            lines.append(f"{key:6s} {row}")
    if truth:
        lines.append("truth  " + " ".join(f"{n}={truth[n]:.4g}" for n in PARAM_NAMES))
    if "laplace" in report:
        lines.append("std    " + " ".join(f"{n}={report['laplace']['std'][n]:.3g}" for n in PARAM_NAMES))
    (root / "report.txt").write_text("\n".join(lines) + "\n")
    update_manifest(cfg, "report", {"sections": sorted(report)})
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "forward": cmd_forward, "generate": cmd_generate, "invert": cmd_invert,
            "laplace": cmd_laplace, "sample": cmd_sample, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inclusion-fwi", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment JSON file (defaults to the built-in scene)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, default=None, help="overrides noise, Laplace and sampler seeds")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
    p.add_argument("--surrogate", action="store_true", help="invert: run the analytic linear self-test")
    p.add_argument("--gaussian", action="store_true", help="sample: run the Gaussian-target self-test")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (MeshError, MeshConfigError) as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except StallError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STALL
    except ens.SamplerAbort as exc:
        print(f"sampler aborted: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except (ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
