"""Command-line driver: config ingestion, the three index pipelines, the
three-way verification, and machine-readable reports.

Heavy numerical imports are deferred until after --threads is applied, so the
BLAS thread caps actually take effect.

Exit codes: 0 success (verify: indices agree and all ladders stabilized),
1 config/I-O error, 2 not converged, 3 converged but unequal.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_UNEQUAL = 3


@dataclass
class RunConfig:
    """Validated run parameters resolved from the flat config file."""

    spec: object
    mu: float | None
    gap: int | None
    g_eta: int = 24
    g_t: int = 96
    g_z: int = 64
    edge_l: int = 64
    theta: float = 0.9
    gp_k: int | None = None
    gp_l: int | None = None
    sigma_tol: float | None = None
    tau_surj: float | None = None
    seed: int = 0
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data):
        from .errors import ConfigError
        from .model import model_spec_from_dict

        spec = model_spec_from_dict(data)
        mu = data.get("mu")
        gap = data.get("gap")
        if (mu is None) == (gap is None):
            raise ConfigError("exactly one of 'mu' or 'gap' must be set")
        cfg = cls(
            spec=spec,
            mu=float(mu) if mu is not None else None,
            gap=int(gap) if gap is not None else None,
            g_eta=int(data.get("g_eta", 24)),
            g_t=int(data.get("g_t", 96)),
            g_z=int(data.get("g_z", 64)),
            edge_l=int(data.get("edge_l", 64)),
            theta=float(data.get("theta", 0.9)),
            gp_k=int(data["gp_k"]) if "gp_k" in data else None,
            gp_l=int(data["gp_l"]) if "gp_l" in data else None,
            sigma_tol=float(data["sigma_tol"]) if "sigma_tol" in data else None,
            tau_surj=float(data["tau_surj"]) if "tau_surj" in data else None,
            seed=int(data.get("seed", 0)),
            raw=dict(data),
        )
        if min(cfg.g_eta, cfg.g_t, cfg.g_z) < 8:
            raise ConfigError("all grid sizes must be at least 8")
        if not 0.5 < cfg.theta < 1.0:
            raise ConfigError(f"theta must lie in (0.5, 1), got {cfg.theta}")
        if cfg.edge_l < 4 * spec.family.r:
            raise ConfigError(f"edge_l={cfg.edge_l} below 4*r={4 * spec.family.r}")
        return cfg

    def resolve_mu(self, symbol):
        from .errors import ConfigError
        from .spectral import gap_midpoints

        if self.mu is not None:
            return self.mu
        mids = gap_midpoints(symbol)
        if self.gap not in mids:
            raise ConfigError(f"model has no open gap {self.gap}; open gaps: {sorted(mids)}")
        return mids[self.gap]

    def echo(self, mu):
        d = {k: v for k, v in sorted(self.raw.items())}
        d["resolved_mu"] = mu
        return d


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_report(report, out_dir, name):
    path = os.path.join(out_dir, name)
    _atomic_write(path, json.dumps(report, indent=2) + "\n")
    return path


def _base_report(cfg, mu):
    from . import __version__

    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "bulkedge", "version": __version__},
        "config": cfg.echo(mu),
    }


def _gap_cert_dict(cert):
    return {
        "mu": cert.mu,
        "grid": [cert.g_eta, cert.g_t],
        "delta_grid": cert.delta_grid,
        "lipschitz": [cert.lipschitz_eta, cert.lipschitz_t],
        "margin": cert.margin,
        "certified": cert.certified,
        "gap_width": cert.gap_width,
    }


def _run_bulk(cfg, report, shared=None):
    from .bulk import bulk_index

    symbol = cfg.spec.symbol()
    mu = cfg.resolve_mu(symbol)
    trail = []
    t0 = time.perf_counter()
    if shared is None:
        value, res, cert, gamma = bulk_index(
            symbol, mu, grid=(cfg.g_eta, cfg.g_eta), return_result=True, trail=trail)
    else:
        cert, gamma = shared
        value, res, cert, gamma = bulk_index(
            symbol, mu, grid=(cfg.g_eta, cfg.g_eta), return_result=True,
            cert=cert, gamma=gamma, trail=trail)
    report.setdefault("timing", {})["bulk_seconds"] = time.perf_counter() - t0
    report.setdefault("indices", {})["bulk"] = value
    report.setdefault("convergence", {})["bulk"] = trail
    report.setdefault("certificates", {})["gap"] = _gap_cert_dict(cert)
    report["certificates"]["contour"] = {
        "kind": gamma.kind, "center": [gamma.center.real, gamma.center.imag],
        "radius": gamma.radius, "nodes": int(gamma.nodes.size),
        "clearance": gamma.clearance,
    }
    return value, res, cert, gamma


def _run_edge(cfg, report, symbol, mu, cert=None):
    from .edge import edge_index, plan_for

    trail = []
    t0 = time.perf_counter()
    value, account, sweep, cert = edge_index(
        symbol, mu, plan=plan_for(symbol, cfg.edge_l), g_t=cfg.g_t,
        theta=cfg.theta, cert=cert, return_account=True, trail=trail,
        seed=cfg.seed)
    report.setdefault("timing", {})["edge_seconds"] = time.perf_counter() - t0
    report.setdefault("indices", {})["edge"] = value
    report.setdefault("convergence", {})["edge"] = trail
    report.setdefault("certificates", {})["gap"] = _gap_cert_dict(cert)
    report["edge"] = {
        "window": list(sweep.window),
        "branches": len(sweep.branches),
        "crossings": [
            {"t_star": cr.t_star, "direction": cr.direction,
             "left_mass": cr.left_mass, "mult": cr.mult, "branch": cr.branch}
            for cr in account.crossings
        ],
        "theta": cfg.theta,
    }
    return value, account, sweep, cert


def _run_gp(cfg, report, symbol, mu, cert=None, gamma=None):
    from .grafporta import TAU_SURJ, gp_index

    trail = []
    t0 = time.perf_counter()
    value, res, fld, cert = gp_index(
        symbol, mu, g_t=cfg.g_eta, gamma_nodes=cfg.g_z, k=cfg.gp_k, l=cfg.gp_l,
        cert=cert, gamma=gamma, tau_surj=cfg.tau_surj or TAU_SURJ,
        sigma_tol=cfg.sigma_tol, return_result=True, trail=trail)
    report.setdefault("timing", {})["gp_seconds"] = time.perf_counter() - t0
    report.setdefault("indices", {})["gp"] = value
    report.setdefault("convergence", {})["gp"] = trail
    report.setdefault("certificates", {})["gap"] = _gap_cert_dict(cert)
    report["certificates"]["surjectivity"] = {
        "k": fld.plan.k, "l": fld.plan.l, "margin": fld.plan.surj_margin,
        "min_sv_ratio": fld.min_sv_ratio, "max_residual": fld.max_residual,
    }
    return value, res, fld, cert


def cmd_bulk(cfg, out_dir):
    symbol = cfg.spec.symbol()
    mu = cfg.resolve_mu(symbol)
    report = _base_report(cfg, mu)
    value, res, cert, gamma = _run_bulk(cfg, report)
    from .model import grid_angles

    th1 = grid_angles(res.g1)
    th2 = grid_angles(res.g2)
    lines = ["theta_eta,theta_t,f12"]
    for i in range(res.g1):
        for j in range(res.g2):
            lines.append(f"{float(th1[i])!r},{float(th2[j])!r},{float(res.plaquettes[i, j])!r}")
    _atomic_write(os.path.join(out_dir, "bulk_plaquettes.csv"), "\n".join(lines) + "\n")
    _write_report(report, out_dir, "bulk_report.json")
    print(f"I_bulk = {value}")
    return EXIT_OK


def cmd_edge(cfg, out_dir):
    symbol = cfg.spec.symbol()
    mu = cfg.resolve_mu(symbol)
    report = _base_report(cfg, mu)
    value, account, sweep, cert = _run_edge(cfg, report, symbol, mu)
    lines = ["t,eigenvalue,left_mass,branch_id"]
    for t, lam, w, bid in sweep.rows():
        lines.append(f"{t!r},{lam!r},{w!r},{bid}")
    _atomic_write(os.path.join(out_dir, "edge_spectrum.csv"), "\n".join(lines) + "\n")
    _write_report(report, out_dir, "edge_report.json")
    print(f"I_edge = {value}")
    return EXIT_OK


def cmd_gp(cfg, out_dir):
    symbol = cfg.spec.symbol()
    mu = cfg.resolve_mu(symbol)
    report = _base_report(cfg, mu)
    value, res, fld, cert = _run_gp(cfg, report, symbol, mu)
    _write_report(report, out_dir, "gp_report.json")
    print(f"I_gp = {value} (k={fld.plan.k}, l={fld.plan.l}, "
          f"surjectivity margin {fld.plan.surj_margin:.3e})")
    return EXIT_OK


def cmd_verify(cfg, out_dir):
    from .errors import RefineGridError
    from .spectral import certify_gap, default_gamma

    symbol = cfg.spec.symbol()
    mu = cfg.resolve_mu(symbol)
    report = _base_report(cfg, mu)
    cert = certify_gap(symbol, mu)
    gamma = default_gamma(symbol, cert, q=cfg.g_z)
    try:
        vb, *_ = _run_bulk(cfg, report, shared=(cert, gamma))
        ve, *_ = _run_edge(cfg, report, symbol, mu, cert=cert)
        vg, *_ = _run_gp(cfg, report, symbol, mu, cert=cert, gamma=gamma)
    except RefineGridError as exc:
        report["error"] = str(exc)
        report.setdefault("indices", {})["agree"] = False
        _write_report(report, out_dir, "verify_report.json")
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    agree = vb == ve == vg
    report["indices"]["agree"] = agree
    _write_report(report, out_dir, "verify_report.json")
    print(f"I_bulk = {vb}, I_edge = {ve}, I_gp = {vg} -> "
          + ("AGREE" if agree else "DISAGREE"))
    if not agree:
        print("converged but unequal: the bulk-edge correspondence hypotheses "
              "are violated or this is a bug; please report", file=sys.stderr)
        return EXIT_UNEQUAL
    return EXIT_OK


def cmd_spectrum(cfg, out_dir):
    from .spectral import band_envelope

    symbol = cfg.spec.symbol()
    t_angles, mins, maxs = band_envelope(symbol, cfg.g_eta, cfg.g_t)
    n = symbol.n
    header = ["t"]
    for b in range(n):
        header += [f"band{b}_min", f"band{b}_max"]
    lines = [",".join(header)]
    for j, t in enumerate(t_angles):
        row = [repr(float(t))]
        for b in range(n):
            row += [repr(float(mins[j, b])), repr(float(maxs[j, b]))]
        lines.append(",".join(row))
    _atomic_write(os.path.join(out_dir, "spectrum.csv"), "\n".join(lines) + "\n")
    print(f"wrote spectrum of {cfg.spec.name} ({n} bands, {t_angles.size} t-points)")
    return EXIT_OK


_COMMANDS = {
    "bulk": cmd_bulk,
    "edge": cmd_edge,
    "gp": cmd_gp,
    "verify": cmd_verify,
    "spectrum": cmd_spectrum,
}


def _parse_override(text):
    from .errors import ConfigError

    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if sys.version_info >= (3, 11):
        import tomllib as toml
    else:
        import tomli as toml
    for candidate in (value, f'"{value}"'):
        try:
            return key, toml.loads(f"v = {candidate}")["v"]
        except toml.TOMLDecodeError:
            continue
    raise ConfigError(f"cannot parse override value {value!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bulkedge",
        description="Bulk, edge and kernel-bundle topological indices for "
                    "2D tight-binding models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the flat TOML config")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS/OpenMP thread pools")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .errors import BulkEdgeError, RefineGridError

    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .model import parse_config_text

    try:
        data = parse_config_text(text)
        for item in args.override:
            key, value = _parse_override(item)
            data[key] = value
        cfg = RunConfig.from_dict(data)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.out)
    except RefineGridError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except BulkEdgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
