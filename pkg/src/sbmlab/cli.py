"""Command-line entry point: ``sbmlab <experiment> [flags]``.

Parameters come from built-in defaults, then an optional ``--config`` file
(``key = value`` lines, or a previous run's manifest.json), then explicit
flags.  Every run writes ``manifest.json`` with the resolved configuration
into ``--output_dir``.  Exit status: 0 when every pass flag is true, 1 when
an experiment fails (its report is still written), 2 on a bad configuration.
"""
from __future__ import annotations

import argparse
from dataclasses import dataclass
import csv
import io
import json
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .errors import ConfigError, SbmlabError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _grid(text):
    parts = [float(p) for p in str(text).split(":")]
    if len(parts) != 3 or not parts[2] > 0 or parts[1] < parts[0]:
        raise ValueError(f"grid must be lo:hi:step, got {text!r}")
    return tuple(parts)


def _interval(text):
    parts = [float(p) for p in str(text).split(":")]
    if len(parts) != 2 or not parts[0] < parts[1]:
        raise ValueError(f"interval must be lo:hi, got {text!r}")
    return tuple(parts)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# experiment -> {key: (parser, default, help)}
PARAMS = {
    "selfcheck": {
        "fourier": (_bool, True, "include the Fourier-inversion route check"),
    },
    "density": {
        "grid": (_grid, (-8.0, 8.0, 0.1), "lo:hi:step"),
        "t": (float, 1.0, "time for the g column"),
    },
    "sde": {
        "mode": (str, "main", "main | z | reconstruct"),
        "t0": (float, 1.0, "initial local time (main)"),
        "ydot0": (float, 0.0, "initial derivative (main)"),
        "z0": (float, 0.0, "initial Z (z, reconstruct)"),
        "lambda0": (float, 1.0, "initial companion value (z, reconstruct)"),
        "dx": (float, 1e-4, "space step (main)"),
        "dt": (float, 1e-3, "time step (z, reconstruct)"),
        "xmax": (float, 40.0, "space horizon (main)"),
        "tmax": (float, 1000.0, "time horizon (z, reconstruct)"),
        "paths": (int, 10, "number of paths"),
        "stride": (int, 10, "write every stride-th grid point"),
        "out": (str, "paths.csv", "CSV file name"),
    },
    "particles": {
        "alpha": (float, 1.0, "initial mass"),
        "N": (int, 64, "initial particle count"),
        "dt": (float, 5e-4, "Brownian sub-step"),
        "window": (_interval, (-1.0, 1.0), "lo:hi banded window"),
        "bandwidth": (float, 0.05, "estimator bandwidth"),
        "replicates": (int, 200, "replicates"),
        "out": (str, "local_time.csv", "CSV file name"),
    },
    "compare": {
        "experiment": (str, "transition",
                       "transition | route | invariant | qv | extinction | calibration | sampler"),
        "alpha": (float, 1.0, "initial mass (transition, calibration)"),
        "a0": (float, 0.3, "start level (transition)"),
        "delta": (float, 0.3, "level increment (transition)"),
        "replicates": (int, 2000, "replicates / paths / samples"),
        "N": (int, 64, "initial particle count"),
        "dt": (float, 5e-4, "particle sub-step"),
        "bandwidth": (float, 0.05, "estimator bandwidth"),
    },
    "bridge": {
        "t": (float, 1.0, "bridge length"),
        "y": (float, 0.0, "bridge end point"),
        "h_bin": (float, 0.05, "conditioning half-width"),
        "functional": (str, "trunc_sum", "trunc_sum | gamma_sum"),
        "param": (float, 1.0, "eps for trunc_sum, h for gamma_sum"),
        "n": (int, 100_000, "unconditioned paths"),
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    parameters: dict
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "."

    def validate(self):
        if self.experiment not in PARAMS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        unknown = set(self.parameters) - set(PARAMS[self.experiment])
        if unknown:
            raise ConfigError(f"unknown keys for {self.experiment}: {sorted(unknown)}")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_dict(self):
        return {"experiment": self.experiment, "parameters": _jsonable(self.parameters),
                "master_seed": self.master_seed, "workers": self.workers,
                "output_dir": self.output_dir}


def _jsonable(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _parse_value(experiment, key, raw):
    parser = PARAMS[experiment][key][0]
    if isinstance(raw, (list, tuple)):
        raw = ":".join(repr(float(v)) for v in raw)
    try:
        return parser(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def read_config_file(path):
    """key = value lines (``#`` comments), or a manifest.json from an earlier run."""
    with open(path, encoding="utf8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        m = json.loads(text)
        out = dict(m.get("parameters", {}))
        for k in ("master_seed", "workers", "output_dir"):
            if k in m:
                out["seed" if k == "master_seed" else k] = m[k]
        if "experiment" in m:
            out["__experiment__"] = m["experiment"]
        return out
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="sbmlab", description="Super-Brownian local time numerics")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="experiment", required=True)
    for name, params in PARAMS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="key = value file or manifest.json")
        sp.add_argument("--seed", default=None, help="master seed (64-bit)")
        sp.add_argument("--workers", default=None, help="worker processes (default $SBMLAB_WORKERS or 1)")
        sp.add_argument("--output_dir", "--output-dir", dest="output_dir", default=None)
        for key, (_, default, help_) in params.items():
            shown = ":".join(f"{v:g}" for v in default) if isinstance(default, tuple) else default
            sp.add_argument(f"--{key}", dest=f"p_{key}", default=None,
                            help=f"{help_} (default {shown})")
    return p


def resolve(argv):
    args = build_parser().parse_args(argv)
    exp = args.experiment
    values = {k: v[1] for k, v in PARAMS[exp].items()}
    seed = 0
    workers = int(os.environ.get("SBMLAB_WORKERS", "1") or 1)
    out_dir = "."
    if args.config:
        filed = read_config_file(args.config)
        fexp = filed.pop("__experiment__", exp)
        if fexp != exp:
            raise ConfigError(f"config is for {fexp!r}, not {exp!r}")
        for k, v in filed.items():
            if k == "seed":
                seed = int(v)
            elif k == "workers":
                workers = int(v)
            elif k == "output_dir":
                out_dir = str(v)
            elif k in values:
                values[k] = _parse_value(exp, k, v)
            else:
                raise ConfigError(f"unknown key {k!r} in {args.config}")
    for k in PARAMS[exp]:
        raw = getattr(args, f"p_{k}")
        if raw is not None:
            values[k] = _parse_value(exp, k, raw)
    try:
        if args.seed is not None:
            seed = int(args.seed)
        if args.workers is not None:
            workers = int(args.workers)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if args.output_dir is not None:
        out_dir = args.output_dir
    return ExperimentConfig(exp, values, seed, workers, out_dir).validate()


# ---------------------------------------------------------------------------
# atomic output


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_atomic(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


class Outputs:
    def __init__(self, root):
        self.root = root
        self.written = []

    def csv(self, name, header, rows):
        self._put(name, csv_text(header, rows))

    def json(self, name, obj):
        self._put(name, json_text(obj))

    def _put(self, name, text):
        write_atomic(os.path.join(self.root, name), text)
        self.written.append(name)


# ---------------------------------------------------------------------------
# experiments


def run_selfcheck(cfg, out):
    from .experiments import identity_suite
    rows = identity_suite(include_fourier=cfg.parameters["fourier"])
    out.csv("identities.csv", ["identity", "computed", "expected", "abs_err"],
            [(r.identity, r.computed, r.expected, r.abs_err) for r in rows])
    out.json("selfcheck.json", {"rows": [r.as_dict() for r in rows],
                                "pass": all(r.hit for r in rows)})
    for r in rows:
        print(f"{r.identity},{_fmt(r.computed)},{_fmt(r.expected)},{_fmt(r.abs_err)}")
    return all(r.hit for r in rows)


def run_density(cfg, out):
    from . import drift, stabledist
    lo, hi, step = cfg.parameters["grid"]
    n = int(round((hi - lo) / step)) + 1
    y = np.round(lo + step * np.arange(n), 12)
    t = cfg.parameters["t"]
    cols = [y, stabledist.p1(y), stabledist.p1_prime(y), stabledist.ratio_r(y), drift.g(t, y),
            drift.b(y), drift.invariant_density(y)]
    out.csv("density.csv", ["y", "p1", "p1_prime", "ratio", "g_t1", "b", "nu"], zip(*cols))
    s = np.empty(n)
    for i, z in enumerate(y):
        try:
            s[i] = drift.scale_function(z)
        except SbmlabError:
            s[i] = math.nan
    out.csv("scale.csv", ["z", "b", "nu", "s"], zip(y, cols[5], cols[6], s))
    return True


def run_sde(cfg, out):
    from . import sdeengine
    from .rng import stream
    P = cfg.parameters
    mode = P["mode"]
    if mode not in ("main", "z", "reconstruct"):
        raise ConfigError(f"unknown sde mode {mode!r}")
    stride = max(1, P["stride"])
    rows = []
    R = []
    qv = []
    slopes = []
    for i in range(P["paths"]):
        rng = stream(cfg.master_seed, f"sde-{mode}", i)
        if mode == "main":
            p = sdeengine.simulate_main_sde(P["t0"], P["ydot0"], P["xmax"], P["dx"], rng)
            R.append(p.R_hat)
            below = np.flatnonzero(p.L < 0.2)
            if not (below.size and below[0] == 0):
                xb = float(p.x_grid[below[0] - 1]) if below.size else float(p.x_grid[-1])
                target = 16.0 * sdeengine.occupation_integral(p, xb)
                if target > 0:
                    qv.append(abs(sdeengine.realized_qv(p, xb) - target) / target)
            idx = np.arange(0, p.x_grid.size, stride)
            rows.extend((i, p.x_grid[k], p.L[k], p.Ldot[k]) for k in idx)
        else:
            zp = sdeengine.simulate_z(P["z0"], P["lambda0"], P["tmax"], P["dt"], rng)
            if mode == "z":
                idx = np.arange(0, zp.t_grid.size, stride)
                rows.extend((i, zp.t_grid[k], zp.Z[k], math.exp(zp.log_lambda[k])) for k in idx)
                continue
            p = sdeengine.reconstruct_local_time(zp)
            R.append(p.R_hat)
            try:
                slopes.append(sdeengine.extinction_exponent(p))
            except SbmlabError:
                pass
            idx = np.arange(0, p.x_grid.size, stride)
            rows.extend((i, p.x_grid[k], p.L[k], p.Ldot[k]) for k in idx)
    header = ["replicate", "t", "Z", "Lambda"] if mode == "z" else ["replicate", "x", "L", "Ldot"]
    out.csv(P["out"], header, rows)
    levels = [0.05, 0.25, 0.5, 0.75, 0.95]
    summary = {
        "R_hat_quantiles": ({f"{p:g}": float(q) for p, q in zip(levels, np.quantile(R, levels))}
                            if R else None),
        "qv_check": {"mean_rel_error": float(np.mean(qv)), "n": len(qv)} if qv else None,
        "extinction_exponent_median": float(np.median(slopes)) if slopes else None,
    }
    out.json("summary.json", summary)
    return True


def run_particles(cfg, out):
    from . import particles
    P = cfg.parameters
    w = P["bandwidth"]
    batch = particles.run_replicates(P["alpha"], P["N"], P["dt"], P["window"], w, P["replicates"],
                                     cfg.master_seed, snap_times=(1.0,), workers=cfg.workers)
    lo, hi = P["window"]
    levels = np.round(np.arange(math.ceil((lo + 2.5 * w) / w) * w, hi - 2.5 * w + 1e-9, w), 12)
    rows = []
    for i, rec in enumerate(batch.records):
        for a in levels:
            L, Ld = particles.local_time_samples(rec, a)
            rows.append((i, a, L, Ld))
    out.csv(P["out"], ["replicate", "a", "L_hat", "Ldot_hat"], rows)
    out.csv("extinction.csv", ["replicate", "extinction_time"], enumerate(batch.extinction_times))
    checks = []
    n = batch.extinction_times.size
    for t in (0.5, 1.0, 2.0):
        p = float(np.mean(batch.extinction_times > t))
        q = particles.extinction_survival(P["alpha"], t)
        s = math.sqrt(q * (1 - q) / n)
        checks.append(particles.CalibrationCheck(f"survival_t{t:g}", p, p - 3 * s, p + 3 * s, q))
    if lo + 3 * w <= 0 <= hi - 3 * w:
        checks.append(particles.jump_check(batch, P["alpha"], seed=cfg.master_seed))
    res = [dict(name=c.name, estimate=c.estimate, lo=c.lo, hi=c.hi, target=c.target, hit=c.hit)
           for c in checks]
    ok = all(c.hit for c in checks)
    out.json("particles.json", {"checks": res, "retries": batch.retries, "pass": ok})
    return ok


def run_compare(cfg, out):
    from . import experiments as ex
    from . import particles
    P = cfg.parameters
    kind = P["experiment"]
    n = P["replicates"]
    seed = cfg.master_seed
    if kind == "transition":
        hi = P["a0"] + max(P["delta"], 0.05) + 3 * P["bandwidth"]
        batch = particles.run_replicates(P["alpha"], P["N"], P["dt"], (-hi, hi), P["bandwidth"], n,
                                         seed, tag="transition", workers=cfg.workers)
        rep = particles.transition_comparison(P["a0"], P["delta"], n, master_seed=seed,
                                              alpha=P["alpha"], N=P["N"], dt=P["dt"],
                                              w=P["bandwidth"], batch=batch)
        out.json("report.json", rep.to_dict())
        return rep.pass_
    if kind == "route":
        rep = ex.route_equivalence(n, seed)
        out.json("report.json", rep.to_dict())
        return rep.pass_
    if kind == "invariant":
        rep = ex.invariant_check(n, master_seed=seed)
        out.json("report.json", rep.to_dict())
        return rep.pass_
    if kind == "qv":
        res = ex.qv_check(n, seed)
        res["pass"] = bool(res["mean_rel_error"] <= 0.05 and res["monotone"])
    elif kind == "extinction":
        res = ex.extinction_check(n, seed)
        res["pass"] = bool(abs(res["median_slope"] - 3.0) <= 0.3)
    elif kind == "calibration":
        checks, batch = ex.particle_calibration(n, seed, P["alpha"], P["N"], P["dt"])
        res = {"checks": [dict(name=c.name, estimate=c.estimate, lo=c.lo, hi=c.hi,
                               target=c.target, hit=c.hit) for c in checks],
               "retries": batch.retries, "pass": all(c.hit for c in checks)}
    elif kind == "sampler":
        res = ex.sampler_check(n, seed)
        res["pass"] = bool(res["ks_cdf"] <= 0.006 and res["ks_scaling"] <= 0.01)
    else:
        raise ConfigError(f"unknown comparison {kind!r}")
    res["master_seed"] = seed
    out.json("report.json", res)
    return res["pass"]


def run_bridge(cfg, out):
    from . import drift, stabledist
    from .rng import stream
    P = cfg.parameters
    f = P["functional"]
    if f not in ("trunc_sum", "gamma_sum"):
        raise ConfigError(f"unknown functional {f!r}")
    est = stabledist.bridge_check(P["t"], P["y"], P["h_bin"], (f, P["param"]), P["n"],
                                  stream(cfg.master_seed, "bridge"))
    if f == "trunc_sum":
        target = stabledist.truncated_jump_sum_conditional(P["t"], P["y"], P["param"])
    else:
        target = 2.0 * P["y"] + drift.g_h(P["t"], P["y"], P["param"])
    hit = est.covers(target)
    out.json("bridge.json", {"mean": est.mean, "ci_lo": est.ci_lo, "ci_hi": est.ci_hi,
                             "n_eff": est.n_eff, "n_paths": est.n_paths, "target": target,
                             "hit": hit, "meta": est.meta, "pass": hit,
                             "master_seed": cfg.master_seed})
    return hit


RUNNERS = {"selfcheck": run_selfcheck, "density": run_density, "sde": run_sde,
           "particles": run_particles, "compare": run_compare, "bridge": run_bridge}


def run(cfg):
    """Run one experiment; returns the exit status."""
    out = Outputs(cfg.output_dir)
    t0 = time.time()
    status = EXIT_OK
    error = None
    try:
        ok = RUNNERS[cfg.experiment](cfg, out)
        status = EXIT_OK if ok else EXIT_FAIL
    except ConfigError:
        raise
    except SbmlabError as e:
        status = EXIT_FAIL
        error = f"{type(e).__name__}: {e}"
        print(error, file=sys.stderr)
    manifest = cfg.to_dict()
    manifest.update({"version": __version__, "artifacts": sorted(out.written),
                     "status": status, "error": error,
                     "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(t0)),
                     "elapsed_s": round(time.time() - t0, 3)})
    write_atomic(os.path.join(cfg.output_dir, "manifest.json"), json_text(manifest))
    return status


def main(argv=None):
    try:
        cfg = resolve(sys.argv[1:] if argv is None else argv)
        return run(cfg)
    except ConfigError as e:
        print(f"sbmlab: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # argparse usage errors
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
