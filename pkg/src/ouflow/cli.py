"""Batch front door: config parsing, experiment dispatch, stable outputs.

Configuration files are flat ``key = value`` documents with dotted section
prefixes (diff-friendly in experiment logs), for example::

    command = spectrum
    model.family = gaussian_solenoidal
    model.length_scale = 1.0
    model.dim = 2
    model.drift = 0.5
    numerics.dt = 0.001
    numerics.horizon = 200
    numerics.replicas = 20
    seed = 1
    output.dir = out

Unknown keys are a hard error (no silent defaults on typos).  Every run
writes a summary JSON plus data CSVs into the output directory and finishes
with ``manifest.json`` listing each artifact with its SHA-256.  The
effective configuration is echoed into every output file header (``#``
lines before the CSV header row; a ``config`` object in JSON files), and
identical (config, seed) pairs produce byte-identical file bodies.

Exit codes: 0 success, 2 configuration or model validation failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from ouflow import correlation
from ouflow.attractor import (
    brownian_max_ks_check,
    brownian_max_tail_check,
    contraction_factor,
    diameter_tail,
    ou_tail_check,
    pairwise_growth_check,
    spatial_regularity_ratio,
    squeezing_frequency,
    sup_norm_estimate,
)
from ouflow.dimension import equilibrium_report
from ouflow.flow import stability_limit
from ouflow.radial import RadialLaw, classify_model, invariant_density
from ouflow.radial import NOT_NORMALIZABLE, scale_function, speed_density
from ouflow.spectrum import (
    closed_form_spectrum,
    estimate_spectrum_qr,
    lyapunov_dimension,
)

COMMANDS = ("validate-model", "spectrum", "radial", "pullback-dim",
            "attractor", "squeeze")

# every key, its default (None = required / computed) and parser
CONFIG_SCHEMA = {
    "command": (None, str),
    "seed": (0, int),
    "model.family": ("gaussian_mixture", str),
    "model.length_scale": (1.0, float),
    "model.alpha": (0.5, float),
    "model.dim": (2, int),
    "model.drift": (0.5, float),
    "numerics.dt": ("auto", str),
    "numerics.horizon": (None, float),
    "numerics.replicas": (None, int),
    "numerics.n_points": (None, int),
    "numerics.reortho_stride": (10, int),
    "radial.grid_min": (0.05, float),
    "radial.grid_max": (5.0, float),
    "radial.grid_n": (64, int),
    "dim.horizons": ("auto", str),
    "attractor.R_list": ("5,10,20", str),
    "attractor.t_grid": ("1,5,20,50", str),
    "squeeze.r": (1.0, float),
    "squeeze.eps": (0.1, float),
    "squeeze.t_grid": ("5,10,20", str),
    "output.dir": ("out", str),
}

COMMAND_DEFAULTS = {
    # (horizon, replicas, n_points)
    "spectrum": (200.0, 20, 1),
    "radial": (0.0, 1, 1),
    "pullback-dim": (0.0, 1, 10_000),
    "attractor": (0.0, 64, 64),
    "squeeze": (0.0, 200, 64),
    "validate-model": (0.0, 1, 50),
}


class ConfigError(Exception):
    pass


def parse_config(path: Path) -> dict:
    cfg = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in cfg:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        cfg[key] = value
    return cfg


def resolve_config(raw: dict, overrides: dict) -> dict:
    cfg = {}
    for key, (default, cast) in CONFIG_SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = cast(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        else:
            cfg[key] = default
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    command = cfg["command"]
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {command!r}")
    horizon, replicas, n_points = COMMAND_DEFAULTS[command]
    if cfg["numerics.horizon"] is None:
        cfg["numerics.horizon"] = horizon
    if cfg["numerics.replicas"] is None:
        cfg["numerics.replicas"] = replicas
    if cfg["numerics.n_points"] is None:
        cfg["numerics.n_points"] = n_points
    return cfg


def build_model(cfg: dict) -> correlation.CorrelationModel:
    family = cfg["model.family"]
    kw = dict(dim=cfg["model.dim"], length_scale=cfg["model.length_scale"],
              drift=cfg["model.drift"])
    if family == "gaussian_potential":
        return correlation.gaussian_potential(**kw)
    if family == "gaussian_solenoidal":
        return correlation.gaussian_solenoidal(**kw)
    if family == "gaussian_mixture":
        return correlation.gaussian_mixture(cfg["model.alpha"], **kw)
    raise ConfigError(f"unknown model.family {family!r} "
                      "(user-supplied models are API-only)")


def _dt(cfg, model) -> float:
    spec = cfg["numerics.dt"]
    if spec == "auto":
        return stability_limit(model)
    return float(spec)


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


class OutputWriter:
    """Writes CSV/JSON artifacts with config echo and collects the manifest."""

    def __init__(self, out_dir: Path, cfg: dict):
        self.dir = out_dir
        self.cfg = cfg
        self.files = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def _echo_lines(self):
        return [f"# {k} = {_fmt(v)}" for k, v in sorted(self.cfg.items())]

    def write_csv(self, name: str, header: list[str], rows):
        path = self.dir / name
        lines = self._echo_lines()
        lines.append(",".join(header))
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
        self._register(path)

    def write_json(self, name: str, payload: dict):
        path = self.dir / name
        doc = {"config": {k: self.cfg[k] for k in sorted(self.cfg)},
               **payload}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True,
                                   default=_json_default) + "\n")
        self._register(path)

    def _register(self, path: Path):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.files.append({"path": path.name, "sha256": digest,
                           "bytes": path.stat().st_size})

    def finish(self):
        path = self.dir / "manifest.json"
        path.write_text(json.dumps({"files": self.files}, indent=2,
                                   sort_keys=True) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


# -- commands -------------------------------------------------------------

def cmd_validate_model(cfg, model, writer) -> int:
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(cfg["seed"], spawn_key=(0,))))
    pts = rng.normal(0.0, 2.0 * model.length_scale,
                     size=(cfg["numerics.n_points"], model.dim))
    report = correlation.validate_psd(model, pts)
    bound = correlation.sup_ratio_constants(model)
    writer.write_json("validate_model.json", {
        "model": model.fingerprint(),
        "psd_ok": report.ok,
        "min_eigenvalue": report.min_eigenvalue,
        "n_points": report.n_points,
        "beta_L": model.beta_L,
        "beta_N": model.beta_N,
        "pairwise_bound": {"a": bound.a, "b": bound.b_const,
                           "sigma": bound.sigma,
                           "lambda_bound": bound.lambda_bound},
    })
    return 0 if report.ok else 2


def cmd_spectrum(cfg, model, writer) -> int:
    closed = closed_form_spectrum(model.beta_L, model.beta_N, model.drift,
                                  model.dim)
    dt = min(_dt(cfg, model), 1e-3)
    est = estimate_spectrum_qr(
        model, T=cfg["numerics.horizon"], dt=dt,
        replicas=cfg["numerics.replicas"], seed=cfg["seed"],
        reortho_stride=cfg["numerics.reortho_stride"])
    writer.write_json("spectrum.json", {
        "closed_form": list(closed.exponents),
        "estimates": list(est.exponents),
        "stderr": list(est.stderr),
        "D_closed": lyapunov_dimension(closed),
        "D_estimated": lyapunov_dimension(est),
    })
    writer.write_csv("spectrum.csv",
                     ["index", "closed_form", "estimate", "stderr"],
                     [(i + 1, c, e, s) for i, (c, e, s) in enumerate(
                         zip(closed.exponents, est.exponents, est.stderr))])
    return 0


def cmd_radial(cfg, model, writer) -> int:
    law = RadialLaw.from_model(model)
    dens = invariant_density(law)
    grid = np.geomspace(cfg["radial.grid_min"] * model.length_scale,
                        cfg["radial.grid_max"] * model.length_scale,
                        cfg["radial.grid_n"])
    rows = []
    for r in grid:
        m_val = speed_density(law, float(r))
        mp_val = (m_val / dens.total_mass
                  if dens is not NOT_NORMALIZABLE else float("nan"))
        rows.append((r, scale_function(law, float(r)), m_val, mp_val))
    writer.write_csv("radial.csv", ["r", "s", "m", "m_p"], rows)
    writer.write_json("radial.json", classify_model(model))
    return 0


def cmd_pullback_dim(cfg, model, writer) -> int:
    horizons = (None if cfg["dim.horizons"] == "auto"
                else _float_list(cfg["dim.horizons"]))
    dt_spec = cfg["numerics.dt"]
    report = equilibrium_report(
        model, T_list=horizons, n_samples=cfg["numerics.n_points"],
        dt=None if dt_spec == "auto" else float(dt_spec), seed=cfg["seed"],
        allow_unstable_dt=True)
    payload = {
        "model": report.model,
        "D_closed_form": report.D_closed_form,
        "horizons": report.horizons,
        "dirac_expected": report.dirac_expected,
        "stabilized": report.stabilized,
        "estimates": [f.estimate for f in report.fits],
        "ci_halfwidths": [f.ci_halfwidth for f in report.fits],
        "fit_r2": [f.fit_r2 for f in report.fits],
    }
    if report.diameter_trend is not None:
        payload["diameter_trend"] = report.diameter_trend
    writer.write_json("pullback_dim.json", payload)
    for T, fit in zip(report.horizons, report.fits):
        if fit.log_r is not None:
            writer.write_csv(f"correlation_integral_T{T:g}.csv",
                             ["log_r", "log_C"],
                             list(zip(fit.log_r, fit.log_C)))
    return 0


def cmd_attractor(cfg, model, writer) -> int:
    seed = cfg["seed"]
    replicas = cfg["numerics.replicas"]
    n_pts = cfg["numerics.n_points"]
    ell = model.length_scale
    R_list = [R * ell for R in _float_list(cfg["attractor.R_list"])]
    t_grid = _float_list(cfg["attractor.t_grid"])
    curves = {}
    rows = []
    for R in R_list:
        ests = sup_norm_estimate(model, R, t_grid, grid_points=n_pts,
                                 replicas=replicas, seed=seed)
        curves[R] = ests
        for e in ests:
            rows.append((R, e.t, e.mean_sup, e.se,
                         int(bool(e.resolution_stable))))
    writer.write_csv("sup_curves.csv",
                     ["R", "t", "mean_sup", "se", "resolution_stable"], rows)
    ou = ou_tail_check(model, R_list=[3.0, 5.0], gamma_list=[2.0, 4.0],
                       t=max(10.0, 4.0 / model.drift), seed=seed)
    bound = correlation.sup_ratio_constants(model)
    z_list = [float(np.exp(bound.lambda_bound + k * bound.sigma))
              for k in (1.0, 2.0, 3.0)]
    pg = pairwise_growth_check(model, separation=ell, t=1.0, z_list=z_list,
                               replicas=max(replicas * 8, 512), seed=seed)
    dia = diameter_tail(model, t=1.0,
                        R_list=np.geomspace(2.0, 50.0, 8) * ell,
                        replicas=max(replicas * 8, 512), seed=seed)
    bm = [brownian_max_ks_check(seed=seed)] + brownian_max_tail_check(seed=seed)
    con = contraction_factor(model, t0=1.0, R_list=R_list,
                             replicas=replicas, ball_points=n_pts, seed=seed)
    reg = spatial_regularity_ratio(model, R_list=[5 * ell, 10 * ell,
                                                  20 * ell, 50 * ell],
                                   replicas=replicas, seed=seed)
    writer.write_csv("regularity.csv",
                     ["R", "ratio", "ratio_se", "norm_ratio", "norm_ratio_se"],
                     zip(reg.R, reg.ratio, reg.ratio_se, reg.norm_ratio,
                         reg.norm_ratio_se))

    def chk(c):
        return {"name": c.name, "lhs": c.lhs_empirical,
                "rhs": c.rhs_theoretical, "satisfied": c.satisfied,
                "margin": c.margin, "applicable": c.applicable}

    writer.write_json("attractor.json", {
        "model": model.fingerprint(),
        "sup_curves": {str(R): [{"t": e.t, "mean_sup": e.mean_sup,
                                 "se": e.se,
                                 "resolution_stable": e.resolution_stable}
                                for e in ests]
                       for R, ests in curves.items()},
        "ou_tail": [chk(c) for c in ou],
        "pairwise_growth": [chk(c) for c in pg],
        "diameter_tail": {"c1": dia["c1"], "c2": dia["c2"],
                          "fit_r2": dia["fit_r2"], "fit_ok": dia["fit_ok"],
                          "vacuous": dia["vacuous"],
                          "checks": [chk(c) for c in dia["checks"]]},
        "brownian_max": [chk(c) for c in bm],
        "contraction": {"delta": con["delta"], "R0": con["R0"],
                        "verdict": con["verdict"],
                        "drift_floor": con["drift_floor"]},
        "regularity": {"decreasing": reg.decreasing,
                       "tail_ratio": float(reg.ratio[-1]),
                       "drift_factor": reg.drift_factor},
    })
    return 0


def cmd_squeeze(cfg, model, writer) -> int:
    ell = model.length_scale
    out = squeezing_frequency(
        model, r=cfg["squeeze.r"] * ell, eps=cfg["squeeze.eps"] * ell,
        t_grid=_float_list(cfg["squeeze.t_grid"]),
        replicas=cfg["numerics.replicas"],
        boundary_points=cfg["numerics.n_points"], seed=cfg["seed"])
    writer.write_csv("squeeze.csv", ["t", "frequency", "se"],
                     [(t, out["frequency"][t], out["se"][t])
                      for t in out["t_grid"]])
    writer.write_json("squeeze.json", {
        "r": out["r"], "eps": out["eps"],
        "frequency": {str(t): out["frequency"][t] for t in out["t_grid"]},
        "positive_at": out["positive_at"],
        "resolution_stable": out.get("resolution_stable"),
    })
    return 0


DISPATCH = {
    "validate-model": cmd_validate_model,
    "spectrum": cmd_spectrum,
    "radial": cmd_radial,
    "pullback-dim": cmd_pullback_dim,
    "attractor": cmd_attractor,
    "squeeze": cmd_squeeze,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ouflow",
        description="Batch experiments on isotropic Ornstein-Uhlenbeck flows")
    parser.add_argument("--config", required=True, type=Path,
                        help="flat key = value configuration file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", type=Path, default=None,
                        help="override the output directory")
    parser.add_argument("--replicas", type=int, default=None,
                        help="override numerics.replicas")
    args = parser.parse_args(argv)
    try:
        raw = parse_config(args.config)
        overrides = {"seed": args.seed, "numerics.replicas": args.replicas}
        if args.out is not None:
            overrides["output.dir"] = str(args.out)
        cfg = resolve_config(raw, overrides)
        model = build_model(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"ouflow: configuration/model error: {exc}", file=sys.stderr)
        return 2
    writer = OutputWriter(Path(cfg["output.dir"]), cfg)
    try:
        status = DISPATCH[cfg["command"]](cfg, model, writer)
    except (RuntimeError, FloatingPointError) as exc:
        print(f"ouflow: numerical failure: {exc}", file=sys.stderr)
        return 3
    writer.finish()
    return status


if __name__ == "__main__":
    sys.exit(main())
