"""Command-line experiment runner.

Every subcommand writes its artifacts into ``--out`` atomically and records
them, with content hashes, in ``manifest.json``.  A JSON config file given by
``--config`` supplies defaults; explicit flags override it.

Exit status: 0 success, 1 runtime or statistical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, chaos2, density, ou, stein
from .chaos2 import CertificateUnavailableError, DivergentMomentError, Spectrum, SpectrumError
from .engine import chaos_decompose
from .hermite import hermite_table
from .svg import Series, line_plot


class UsageError(ValueError):
    """Bad configuration; maps to exit status 2."""


class StatisticalFailure(RuntimeError):
    """A run completed but its own validity check failed; exit status 1."""


# --- configuration ---------------------------------------------------------------

DEFAULTS = {
    "hermite-table": {"kmax": 8, "lam": 1.0, "grid": "-3:3:61"},
    "chaos2-density": {"spectrum": None, "n": 100_000, "grid": None, "deriv": 0, "estimator": "fmla1", "svg": None},
    "negmoment": {"spectrum": None, "alpha": 1.0},
    "certificate": {"spectrum": None, "cq": 1.0, "deriv": None, "beta": None},
    "stein-check": {"spectrum": None, "h": "ind:0:0,1", "n": 100_000},
    "fourth-moment": {"spectra": None},
    "ou-eigs": {"theta": 1.0, "gamma": 1.0, "T": 10.0, "count": 20, "nystrom_nodes": None},
    "ou-rate": {"theta": 1.0, "gamma": 1.0, "T_list": "5,10,20,40,80", "n": 100_000, "svg": None},
    "ou-lse": {"theta": 1.0, "gamma": 1.0, "T": 200.0, "dt": 0.01, "seeds": 100},
}
REQUIRED = {
    "chaos2-density": ["spectrum"],
    "negmoment": ["spectrum"],
    "certificate": ["spectrum"],
    "stein-check": ["spectrum"],
    "fourth-moment": ["spectra"],
}
FORMATS = ("csv", "json", "svg")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``to_json``/``from_json`` round-trip exactly; ``digest`` hashes the
    canonical JSON form.
    """

    command: str
    params: dict
    seed: int = 0
    threads: int = 1
    out: str = "out"
    format: str = "csv"

    def to_json(self) -> str:
        return json.dumps(
            {"command": self.command, "params": self.params, "seed": self.seed,
             "threads": self.threads, "out": self.out, "format": self.format},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(d) - {"command", "params", "seed", "threads", "out", "format"}
        if unknown:
            raise UsageError(f"unknown config field(s): {sorted(unknown)}")
        cfg = cls(
            command=d.get("command", ""),
            params=dict(d.get("params", {})),
            seed=d.get("seed", 0),
            threads=d.get("threads", 1),
            out=d.get("out", "out"),
            format=d.get("format", "csv"),
        )
        cfg.validate()
        return cfg

    @property
    def digest(self) -> str:
        # threads and out do not change artifact contents
        core = {"command": self.command, "params": self.params, "seed": self.seed, "format": self.format}
        return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()

    def validate(self):
        if self.command not in DEFAULTS:
            raise UsageError(f"field 'command': unknown subcommand '{self.command}'")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise UsageError("field 'seed' must be an integer in [0, 2^64)")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise UsageError("field 'threads' must be a positive integer")
        if self.format not in FORMATS:
            raise UsageError(f"field 'format' must be one of {FORMATS}")
        unknown = set(self.params) - set(DEFAULTS[self.command])
        if unknown:
            raise UsageError(f"unknown parameter(s) for {self.command}: {sorted(unknown)}")
        for name in REQUIRED.get(self.command, []):
            if self.params.get(name) is None:
                raise UsageError(f"field '{name}' is required for {self.command}")
        for name in ("n", "count", "seeds", "kmax"):
            v = self.params.get(name)
            if v is not None and (not isinstance(v, int) or v < 1):
                raise UsageError(f"field '{name}' must be a positive integer")
        for name in ("theta", "gamma", "T", "dt", "alpha", "cq"):
            v = self.params.get(name)
            if v is not None and not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise UsageError(f"field '{name}' must be a positive number")


# --- artifact writing ---------------------------------------------------------------


class ArtifactWriter:
    def __init__(self, out: str):
        self.root = Path(out)
        self.root.mkdir(parents=True, exist_ok=True)
        self.records = []

    def write(self, name: str, content: str):
        data = content.encode()
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, self.root / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.records.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})

    def write_path(self, path: str, content: str):
        """Write an artifact requested at an explicit path (e.g. ``--svg``)."""
        p = Path(path)
        if not p.is_absolute():
            p = self.root / p
        p.parent.mkdir(parents=True, exist_ok=True)
        sub = ArtifactWriter.__new__(ArtifactWriter)
        sub.root, sub.records = p.parent, self.records
        sub.write(p.name, content)
        self.records[-1]["path"] = os.path.relpath(p, self.root)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _emit_table(cfg, art, stem, header, rows, summary):
    if cfg.format == "json":
        summary = dict(summary, table={"columns": header, "rows": [list(r) for r in rows]})
    else:
        art.write(f"{stem}.csv", _csv(header, rows))
    art.write(f"{stem}.json", _json(summary))


def _load_spectrum(path) -> Spectrum:
    try:
        return Spectrum.load(path)
    except FileNotFoundError as exc:
        raise UsageError(f"spectrum file not found: {path}") from exc
    except SpectrumError as exc:
        raise UsageError(f"malformed spectrum file {path}: {exc}") from exc


def _grid(spec, sigma):
    if spec is None:
        return density.default_grid(sigma)
    try:
        return density.parse_grid(spec)
    except ValueError as exc:
        raise UsageError(f"field 'grid': {exc}") from exc


# --- subcommands -----------------------------------------------------------------------


def cmd_hermite_table(cfg, art):
    p = cfg.params
    if p["lam"] < 0:
        raise UsageError("field 'lam' must be nonnegative")
    rows = hermite_table(p["kmax"], p["lam"], _grid(p["grid"], 1.0))
    _emit_table(cfg, art, "hermite_table", ["k", "lam", "x", "H"], rows, {"rows": len(rows)})


def cmd_chaos2_density(cfg, art):
    p = cfg.params
    s = _load_spectrum(p["spectrum"])
    k = int(p["deriv"] or 0)
    est_kind = p["estimator"]
    if est_kind not in ("fmla1", "fmla3", "kde"):
        raise UsageError("field 'estimator' must be fmla1, fmla3 or kde")
    if k and est_kind != "fmla1":
        raise UsageError("derivative estimates need --estimator fmla1")
    sigma = math.sqrt(chaos2.exact_moments(s)["sigma2"])
    grid = _grid(p["grid"], sigma)
    n = p["n"]
    if est_kind == "fmla1":
        stream = chaos2.sample(s, n, cfg.seed, max_gk_order=k + 1, threads=cfg.threads)
        est = density.derivative_density(stream, k, grid) if k else density.malliavin_density(stream, grid)
    elif est_kind == "fmla3":
        F = chaos_decompose(s.functional(), s.n)
        try:
            est = density.malliavin_density_general(F, grid, n, cfg.seed, threads=cfg.threads)
        except density.RejectionError as exc:
            raise StatisticalFailure(str(exc)) from exc
    else:
        F = chaos2.collect(chaos2.sample(s, n, cfg.seed, threads=cfg.threads)).F
        est = density.kde_density(F, grid)
    target = density.normal_target(sigma, k)
    dist = density.uniform_distance(est, target)
    summary = {
        "estimator": est.tag,
        "n": est.n,
        "sigma2": sigma**2,
        "rejected": est.rejected,
        "integral": est.integral() if k == 0 else None,
        "max_se": float(est.se.max()),
        **dist,
    }
    rows = zip(est.grid, est.values, est.se)
    _emit_table(cfg, art, "density", ["x", "estimate", "se"], rows, summary)
    if p["svg"] or cfg.format == "svg":
        svg = line_plot(
            [Series(est.grid, est.values, est.tag, yerr=3 * est.se), Series(est.grid, target(est.grid), "normal")],
            title="density estimate vs normal target", xlabel="x", ylabel="f" if k == 0 else f"f^({k})",
        )
        art.write_path(p["svg"] or "density.svg", svg)


def cmd_negmoment(cfg, art):
    p = cfg.params
    s = _load_spectrum(p["spectrum"])
    try:
        value, info = chaos2.negative_moment(s, p["alpha"], return_info=True)
    except DivergentMomentError as exc:
        art.write("negmoment.json", _json({"alpha": p["alpha"], "divergent": True, "message": str(exc)}))
        raise StatisticalFailure(str(exc)) from exc
    out = {"alpha": p["alpha"], "value": value, "divergent": False, **info}
    _emit_table(cfg, art, "negmoment", ["alpha", "value", "abs_error"], [(p["alpha"], value, info["abs_error"])], out)


def cmd_certificate(cfg, art):
    p = cfg.params
    s = _load_spectrum(p["spectrum"])
    try:
        if p["deriv"] is None:
            rep = chaos2.certificate_qrate(s, p["cq"])
        else:
            if p["beta"] is None:
                raise UsageError("field 'beta' is required with --deriv")
            rep = chaos2.certificate_qderiv(s, int(p["deriv"]), float(p["beta"]), p["cq"])
    except CertificateUnavailableError as exc:
        art.write("certificate.json", _json({"available": False, "message": str(exc)}))
        raise StatisticalFailure(str(exc)) from exc
    d = rep.to_dict()
    rows = [(k, v) for k, v in rep.components.items()] + [("value", rep.value)]
    _emit_table(cfg, art, "certificate", ["name", "value"], rows, d)


def cmd_stein_check(cfg, art):
    p = cfg.params
    s = _load_spectrum(p["spectrum"])
    try:
        h = stein.parse_test_function(p["h"])
    except ValueError as exc:
        raise UsageError(f"field 'h': {exc}") from exc
    F = chaos_decompose(s.functional(), s.n)
    rep = stein.ms_identity_check(F, h, p["n"], cfg.seed, threads=cfg.threads)
    d = rep.to_dict()
    d["h"] = p["h"]
    d["passed"] = bool(abs(rep.z) <= 3.0)
    art.write("stein_check.json", _json(d))
    if not d["passed"]:
        raise StatisticalFailure(f"Malliavin-Stein identity z-score {rep.z:.2f} exceeds 3")


def cmd_fourth_moment(cfg, art):
    p = cfg.params
    root = Path(p["spectra"])
    if not root.is_dir():
        raise UsageError(f"field 'spectra': {root} is not a directory")
    files = sorted(root.glob("*.json"))
    if len(files) < 2:
        raise UsageError(f"field 'spectra': need at least two spectrum files in {root}")
    spectra = [_load_spectrum(f) for f in files]
    rep = density.fourth_moment_report(spectra, labels=[f.name for f in files])
    q = rep.quantities
    rows = zip(q["label"], q["sigma2"], q["fourth_cumulant"], q["contraction_norm"], q["var_dfnorm"])
    _emit_table(cfg, art, "fourth_moment", ["file", "sigma2", "fourth_cumulant", "contraction_norm", "var_dfnorm"], rows, rep.to_dict())


def cmd_ou_eigs(cfg, art):
    p = cfg.params
    res = ou.kernel_spectrum_sl(p["theta"], p["gamma"], p["T"], p["count"])
    header = ["i", "lo", "lambda", "hi", "residual"]
    cols = [np.arange(1, res.count + 1), res.lo, res.eigenvalues, res.hi, res.residual]
    summary = {
        "theta": p["theta"], "gamma": p["gamma"], "T": p["T"], "count": res.count,
        "extra_roots": res.extra, "tail_bound": res.tail_bound,
        "all_inside_brackets": bool(res.inside_brackets().all()),
        "max_residual": float(res.residual.max()),
        "exact_second_moment": ou.exact_f_t_moment(p["theta"], p["gamma"], p["T"]),
    }
    if p["nystrom_nodes"]:
        ny = ou.kernel_spectrum_nystrom(p["theta"], p["gamma"], p["T"], int(p["nystrom_nodes"])).eigenvalues[: res.count]
        header.append("nystrom")
        cols.append(ny)
        summary["nystrom_max_rel_gap"] = float(np.max(np.abs(ny - res.eigenvalues[: ny.size]) / res.eigenvalues[: ny.size]))
    _emit_table(cfg, art, "ou_eigs", header, zip(*cols), summary)


def _float_list(text, name):
    try:
        return [float(v) for v in str(text).split(",")]
    except ValueError as exc:
        raise UsageError(f"field '{name}' must be a comma-separated list of numbers") from exc


def cmd_ou_rate(cfg, art):
    p = cfg.params
    Ts = _float_list(p["T_list"], "T_list")
    try:
        rep = ou.rate_experiment(p["theta"], p["gamma"], Ts, p["n"], cfg.seed, threads=cfg.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = zip(rep.T, rep.sup_distance, rep.max_se, rep.cumulant_root, rep.spectrum_size)
    _emit_table(cfg, art, "ou_rate", ["T", "sup_distance", "max_se", "cumulant_root", "eigenvalues"], rows, rep.to_dict())
    if p["svg"] or cfg.format == "svg":
        svg = line_plot(
            [Series(np.array(rep.T), np.array(rep.sup_distance), "sup |f - phi|", yerr=3 * np.array(rep.max_se), markers=True),
             Series(np.array(rep.T), np.array(rep.cumulant_root), "sqrt(48 sum lam^4)", markers=True)],
            title=f"rate: slope {rep.slope:.3f}", xlabel="T", ylabel="distance", logx=True, logy=True,
        )
        art.write_path(p["svg"] or "ou_rate.svg", svg)
    if not rep.conclusive:
        raise StatisticalFailure("; ".join(rep.notes))


def cmd_ou_lse(cfg, art):
    p = cfg.params
    try:
        oc = ou.OUConfig(p["theta"], p["gamma"], p["T"], p["dt"], cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    paths = ou.simulate_ou(oc, p["seeds"])
    est = ou.least_squares_estimate(paths, oc.dt)
    scaled = math.sqrt(oc.T) * (est - oc.theta)
    summary = {
        "mean": float(est.mean()),
        "se": float(est.std(ddof=1) / math.sqrt(est.size)) if est.size > 1 else None,
        "scaled_variance": float(scaled.var(ddof=1)) if est.size > 1 else None,
        "limit_variance": 2 * oc.theta,
    }
    _emit_table(cfg, art, "ou_lse", ["path", "theta_hat"], zip(range(est.size), est), summary)


COMMANDS = {
    "hermite-table": cmd_hermite_table,
    "chaos2-density": cmd_chaos2_density,
    "negmoment": cmd_negmoment,
    "certificate": cmd_certificate,
    "stein-check": cmd_stein_check,
    "fourth-moment": cmd_fourth_moment,
    "ou-eigs": cmd_ou_eigs,
    "ou-rate": cmd_ou_rate,
    "ou-lse": cmd_ou_lse,
}


# --- argument parsing --------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = _Parser(add_help=False, argument_default=S)
    common.add_argument("--seed", type=int, help="64-bit seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--format", choices=FORMATS, help="table format / plot selector")
    common.add_argument("--config", help="JSON config file; flags override its values")

    parser = _Parser(prog="chaoslab", description="Malliavin-Stein density experiments.")
    parser.add_argument("--version", action="version", version=f"chaoslab {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, argument_default=S)

    a = add("hermite-table", "tabulate generalized Hermite polynomials")
    a.add_argument("--kmax", type=int)
    a.add_argument("--lam", type=float)
    a.add_argument("--grid", help="a:b:k")

    a = add("chaos2-density", "Malliavin density estimate for a second-chaos spectrum")
    a.add_argument("--spectrum")
    a.add_argument("--n", type=int)
    a.add_argument("--grid", help="a:b:k (default 241 points on +-6 sigma)")
    a.add_argument("--deriv", type=int)
    a.add_argument("--estimator", choices=["fmla1", "fmla3", "kde"])
    a.add_argument("--svg")

    a = add("negmoment", "E[(sum lam^2 X^2)^-alpha] by quadrature")
    a.add_argument("--spectrum")
    a.add_argument("--alpha", type=float)

    a = add("certificate", "uniform density-distance bound components")
    a.add_argument("--spectrum")
    a.add_argument("--cq", type=float)
    a.add_argument("--deriv", type=int)
    a.add_argument("--beta", type=float)

    a = add("stein-check", "Monte Carlo check of the Malliavin-Stein identity")
    a.add_argument("--spectrum")
    a.add_argument("--h", help="poly:c0,c1,.. | ind:z:c0,c1,.. | hermite-ind:z:k, joined by +")
    a.add_argument("--n", type=int)

    a = add("fourth-moment", "fourth-moment conditions along a sequence of spectra")
    a.add_argument("--spectra", help="directory of spectrum JSON files, ordered by name")

    a = add("ou-eigs", "eigenvalues of the OU covariance kernel")
    a.add_argument("--theta", type=float)
    a.add_argument("--gamma", type=float)
    a.add_argument("--T", type=float, dest="T")
    a.add_argument("--count", type=int)
    a.add_argument("--nystrom-nodes", type=int, dest="nystrom_nodes")

    a = add("ou-rate", "density-distance rate experiment for the OU estimator")
    a.add_argument("--theta", type=float)
    a.add_argument("--gamma", type=float)
    a.add_argument("--T-list", dest="T_list")
    a.add_argument("--n", type=int)
    a.add_argument("--svg")

    a = add("ou-lse", "least-squares drift estimates over independent paths")
    a.add_argument("--theta", type=float)
    a.add_argument("--gamma", type=float)
    a.add_argument("--T", type=float, dest="T")
    a.add_argument("--dt", type=float)
    a.add_argument("--seeds", type=int)
    return parser


GLOBAL = ("seed", "threads", "out", "format")


def config_from_args(argv) -> ExperimentConfig:
    ns = vars(build_parser().parse_args(argv))
    cmd = ns.pop("command", None)
    if cmd is None:
        raise UsageError("a subcommand is required (see --help)")
    base = {"params": {}}
    if "config" in ns:
        path = ns.pop("config")
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        base = json.loads(ExperimentConfig.from_json(text).to_json()) if text.strip() else base
        if base.get("command") and base["command"] != cmd:
            raise UsageError(f"config is for '{base['command']}', not '{cmd}'")
    params = dict(DEFAULTS[cmd])
    params.update(base.get("params", {}))
    params.update({k: v for k, v in ns.items() if k not in GLOBAL})
    cfg = ExperimentConfig(
        command=cmd,
        params=params,
        seed=ns.get("seed", base.get("seed", 0)),
        threads=ns.get("threads", base.get("threads", 1)),
        out=ns.get("out", base.get("out", "out")),
        format=ns.get("format", base.get("format", "csv")),
    )
    cfg.validate()
    return cfg


def run(cfg: ExperimentConfig) -> int:
    """Execute a validated config; returns the exit status."""
    cfg.validate()
    art = ArtifactWriter(cfg.out)
    t0 = time.perf_counter()
    status, message = 0, None
    try:
        COMMANDS[cfg.command](cfg, art)
    except StatisticalFailure as exc:
        status, message = 1, str(exc)
    manifest = {
        "command": cfg.command,
        "config": json.loads(cfg.to_json()),
        "config_sha256": cfg.digest,
        "seed": cfg.seed,
        "status": status,
        "message": message,
        "versions": {
            "chaoslab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "artifacts": art.records,
    }
    ArtifactWriter(cfg.out).write("manifest.json", _json(manifest))
    if message:
        print(f"chaoslab {cfg.command}: {message}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = config_from_args(argv)
        return run(cfg)
    except UsageError as exc:
        print(f"chaoslab: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"chaoslab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
