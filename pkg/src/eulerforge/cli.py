"""Command line front end.

    eulerforge oval   --q 0.5 --n 128
    eulerforge forge  --domain oval --q 0.5 --lambda 0.1 --eps 1e-2
    eulerforge torus  --eps 1e-2 --n 128
    eulerforge verify RUN_DIR
    eulerforge sweep  --domain oval --eps-list 1e-2,5e-3,2.5e-3
    eulerforge report RUN_DIR [RUN_DIR ...]

Every run writes into its own directory under the output root (``--out``,
else ``$EULERFORGE_OUT``, else ``./eulerforge_out``) with a manifest of
SHA-256 checksums.  Exit codes: 0 success, 10-19 base/oval stage, 20-29
forge stage, 30-39 verification stage.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EulerForgeError, IntegrityError, ValidationError
from .field_core import Grid2D, ScalarField2D, dump_field, load_values

log = logging.getLogger("eulerforge")


@dataclass
class RunConfig:
    command: str = "forge"
    domain: str = "oval"
    q: float = 0.5
    lam: float = 0.1
    eps: float = 1e-2
    eps0: Optional[float] = None
    delta: Optional[float] = None
    n: int = 256
    tol: float = 1e-10
    max_iter: int = 30
    solvability_tol: float = 1e-3
    n_levels: int = 64
    n_angle: int = 1024
    level: float = 0.5  # torus forcing band centre
    half_width: float = 0.25  # torus forcing band half-width
    seed: int = 0
    t_end: float = 1.0
    eps_list: list = field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])
    workers: int = 2
    out: Optional[str] = None
    plots: bool = True

    def validate(self) -> "RunConfig":
        if self.domain not in ("oval", "torus"):
            raise ValidationError(f"unknown domain {self.domain!r}")
        if self.domain == "oval" and not 0 < self.q < 1:
            raise ValidationError(f"q must lie in (0, 1), got {self.q}")
        for name in ("tol", "solvability_tol", "t_end"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.eps < 0 or any(e < 0 for e in self.eps_list):
            raise ValidationError("eps must be non-negative")
        if self.n < 16:
            raise ValidationError("grid size must be at least 16")
        if self.domain == "torus" and self.n % 4:
            raise ValidationError("torus grids need n divisible by 4")
        if self.eps0 is not None and self.eps0 <= 0:
            raise ValidationError("eps0 must be positive")
        if self.delta is not None and self.delta <= 0:
            raise ValidationError("delta must be positive")
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def digest(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# bundle helpers

def output_root(cfg: RunConfig) -> Path:
    return Path(cfg.out or os.environ.get("EULERFORGE_OUT") or "eulerforge_out")


def run_dir(cfg: RunConfig, tag: str) -> Path:
    d = output_root(cfg) / f"{tag}-{cfg.digest()}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(d: Path) -> Path:
    files = sorted(p for p in d.rglob("*") if p.is_file() and p.name != "manifest.json")
    man = {str(p.relative_to(d)): {"sha256": _sha256(p), "bytes": p.stat().st_size} for p in files}
    path = d / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True))
    return path


def check_manifest(d: Path) -> dict:
    path = Path(d) / "manifest.json"
    if not path.exists():
        raise IntegrityError(f"{d}: no manifest.json")
    man = json.loads(path.read_text())
    for rel, info in man.items():
        p = Path(d) / rel
        if not p.exists():
            raise IntegrityError(f"{rel}: listed in manifest but missing")
        if p.stat().st_size != info["bytes"] or _sha256(p) != info["sha256"]:
            raise IntegrityError(f"{rel}: checksum mismatch")
    return man


def grid_from_header(head: dict) -> Grid2D:
    kind = head["kind"]
    if kind == "torus":
        return Grid2D.torus(head["nx"], head["ny"])
    params = head.get("params", {})
    if kind == "oval-mapped":
        from .neumann_oval import oval_grid
        return oval_grid(params["q"], params["n"])
    if params.get("shape") == "disk":
        return Grid2D.disk(params["n"])
    raise IntegrityError(f"cannot rebuild grid of kind {kind!r}")


def load_field(json_path) -> ScalarField2D:
    head, vals = load_values(json_path)
    g = grid_from_header(head)
    if g.shape != vals.shape:
        raise IntegrityError(f"{json_path}: grid shape {g.shape} does not match data {vals.shape}")
    return ScalarField2D(g, vals, head.get("boundary_value"))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_json_default))
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(type(o))


SCATTER_PLOT = '''import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("scatter.csv")))
plt.scatter([float(r["psi"]) for r in rows], [float(r["omega"]) for r in rows], s=2)
plt.xlabel("psi")
plt.ylabel("omega")
plt.savefig("scatter.png", dpi=150)
'''

TRACE_PLOT = '''import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("casimir.csv")))
t = [float(r["t"]) for r in rows]
J = [float(r["J"]) for r in rows]
plt.plot(t, [j / J[0] - 1 for j in J])
plt.xlabel("t")
plt.ylabel("J(t)/J(0) - 1")
plt.savefig("casimir.png", dpi=150)
'''


# ---------------------------------------------------------------------------
# commands

def cmd_oval(cfg: RunConfig) -> Path:
    from .neumann_oval import (check_univalence_convexity, morse_classify, oval_forward,
                               oval_grid, psi_q_closed_form)

    d = run_dir(cfg, "oval")
    uni = check_univalence_convexity(cfg.q)
    t = 2 * np.pi * np.arange(1024) / 1024
    w = oval_forward(cfg.q, np.exp(1j * t))
    _write_csv(d / "domain.csv", ["x", "y"], zip(w.real, w.imag))
    g = oval_grid(cfg.q, cfg.n)
    psi = psi_q_closed_form(cfg.q, g)
    dump_field(psi, d / "fields" / "psi_q")
    morse = morse_classify(psi)
    _write_json(d / "morse.json", morse.as_dict())
    _write_json(d / "univalence.json", dataclasses.asdict(uni) | {"ok": uni.ok})
    (d / "config.json").write_text(cfg.to_json())
    write_manifest(d)
    print(json.dumps({"run": str(d), "critical_points": len(morse.critical_points),
                      "kinds": [c.kind for c in morse.critical_points]}))
    return d


def _forge_stage(cfg: RunConfig):
    """Run the forge pipeline; errors from earlier stages are relabelled into the 20s."""
    from . import forge as fg

    try:
        if cfg.domain == "oval":
            res, forcing, morse = fg.forge_oval(cfg.q, cfg.lam, cfg.eps, cfg.n, cfg.eps0, cfg.tol,
                                                cfg.max_iter, cfg.solvability_tol, cfg.n_levels,
                                                cfg.n_angle)
            return res, {"G_at_x0": float(forcing.G(forcing.level))}
        res = fg.forge_cellular(cfg.eps, cfg.n, cfg.level, cfg.half_width, cfg.max_iter, cfg.tol,
                                cfg.solvability_tol, n_levels=cfg.n_levels, n_angle=cfg.n_angle)
        return res, {}
    except EulerForgeError as exc:
        if not 20 <= exc.exit_code < 30 and not isinstance(exc, ValidationError):
            exc.exit_code = 20
        exc.stage = "forge"
        raise


def _quadrant_diagnostics(res) -> dict:
    from .elliptic import kernel_mode_count
    from .forge import helmholtz_residual
    from .verify import symmetry_defects, symmetry_split

    g = res.psi0.grid
    X, Y = g.mesh()
    R = helmholtz_residual(res.psi_eps).values
    q3 = (X < 0) & (Y < 0)
    c1 = (X > 0) & (X < np.pi) & (Y > 0) & (Y < np.pi)
    split = symmetry_split(res.psi_eps)
    return {"kernel_modes": kernel_mode_count(g),
            "third_quadrant_max": float(np.max(np.abs(R[q3]))),
            "first_cell_max": float(np.max(np.abs(R[c1]))),
            "eta_max": res.eta.max_abs(),
            "split": split.norms, "defects": symmetry_defects(res.psi_eps)}


def cmd_forge(cfg: RunConfig) -> Path:
    from .forge import steady_residual

    d = run_dir(cfg, f"forge-{cfg.domain}")
    res, extra = _forge_stage(cfg)
    for name in ("psi0", "psi1", "psi2", "psi_eps", "eta"):
        dump_field(getattr(res, name), d / "fields" / name)
    _write_csv(d / "trace.csv", ["iteration", "max_diff"], enumerate(res.trace, 1))
    diag = dict(res.diagnostics)
    diag.update(extra)
    diag["eps"] = res.eps
    diag["eps_requested"] = cfg.eps
    diag["converged"] = True
    if res.psi0.grid.periodic:
        diag["quadrants"] = _quadrant_diagnostics(res)
    else:
        r = steady_residual(res.psi_eps)
        diag["residual"] = {"l2": r.l2, "linf": r.linf}
    _write_json(d / "diagnostics.json", diag)
    (d / "config.json").write_text(cfg.to_json())
    write_manifest(d)
    print(json.dumps({"run": str(d), "eps": res.eps, "iterations": len(res.trace),
                      "final_diff": res.trace[-1]}))
    return d


def cmd_torus(cfg: RunConfig) -> Path:
    cfg = dataclasses.replace(cfg, domain="torus")
    return cmd_forge(cfg)


def _verify_level(psi, diag):
    """Level through x0 (oval) or the level of largest |G| (torus)."""
    from .transport import _Flow

    g = psi.grid
    if g.periodic:
        lv, hw = diag.get("level", 0.5), diag.get("half_width", 0.25)
        from .forge import Profile
        G = Profile.tilted_bump(lv, hw, diag.get("forcing_shift", lv))
        hs = np.linspace(lv - hw, lv + hw, 401)
        return [float(hs[np.argmax(np.abs(G(hs)))])]
    x0 = diag["x0"]
    return [float(_Flow(psi).value(*g.to_computational(*x0)))]


def cmd_verify(bundle: Path, cfg: RunConfig) -> dict:
    from .forge import steady_residual
    from .verify import (arnold_ratio, casimir_bounds, cfl_limit, evolve_linearized, fill_ratio,
                         semilinear_violation)

    bundle = Path(bundle)
    try:
        check_manifest(bundle)
        diag = json.loads((bundle / "diagnostics.json").read_text())
        psi = load_field(bundle / "fields" / "psi_eps.json")
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable bundle: {exc}") from exc
    g = psi.grid
    out = {"bundle": str(bundle)}
    matrix = {}
    viol = semilinear_violation(psi, _verify_level(psi, diag))
    out["violation"] = viol.as_dict()
    matrix["multivalued"] = viol.verdict == "multivalued"
    _write_csv(bundle / "scatter.csv", ["psi", "omega"], viol.scatter)
    crit = [c["location"] for c in diag.get("morse", {}).get("critical_points", [])]
    if g.periodic:
        crit = [(a, b) for a in (-np.pi / 2, np.pi / 2) for b in (-np.pi / 2, np.pi / 2)]
        crit += [(a, b) for a in (-np.pi, 0.0) for b in (-np.pi, 0.0)]
    arn = arnold_ratio(psi, crit, collinearity_tol=None)
    out["arnold"] = arn.as_dict()
    matrix["arnold"] = arn.verdict
    if not g.periodic:
        r = steady_residual(psi)
        out["residual"] = {"l2": r.l2, "linf": r.linf}
        if arn.verdict:
            ratio = fill_ratio(arn)
            rng = np.random.default_rng(cfg.seed)
            c = rng.uniform(-0.2, 0.2, 2)
            w0 = ScalarField2D.from_function(
                g, lambda x, y: np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2) / 0.02), 0.0)
            dt = cfl_limit(psi)
            steps = int(np.ceil(cfg.t_end / dt))
            tr = evolve_linearized(psi, w0, cfg.t_end, cfg.t_end / steps, ratio=ratio,
                                   sample_every=max(1, steps // 200))
            lo, hi = casimir_bounds(psi, ratio)
            _write_csv(bundle / "casimir.csv", ["t", "J", "norm"], tr.to_rows())
            out["casimir"] = {"drift": tr.drift, "bounds": [lo, hi], "t_end": cfg.t_end}
            matrix["casimir_conserved"] = tr.drift <= 1e-3
    if cfg.plots:
        (bundle / "plot_scatter.py").write_text(SCATTER_PLOT)
        if (bundle / "casimir.csv").exists():
            (bundle / "plot_casimir.py").write_text(TRACE_PLOT)
    out["matrix"] = {k: "PASS" if v else "FAIL" for k, v in matrix.items()}
    _write_json(bundle / "verification.json", out)
    write_manifest(bundle)
    print(json.dumps(out["matrix"]))
    return out


def cmd_sweep(cfg: RunConfig) -> Path:
    """Forge over an eps list in worker threads; fit the vorticity gap against eps."""
    from .verify import semilinear_violation

    def one(eps):
        sub = dataclasses.replace(cfg, eps=eps, command="forge")
        d = cmd_forge(sub)
        diag = json.loads((d / "diagnostics.json").read_text())
        psi = load_field(d / "fields" / "psi_eps.json")
        v = semilinear_violation(psi, _verify_level(psi, diag))
        return eps, diag["eps"], v.max_gap, v.verdict, str(d)

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        rows = list(pool.map(one, cfg.eps_list))
    d = run_dir(cfg, f"sweep-{cfg.domain}")
    _write_csv(d / "sweep.csv", ["eps_requested", "eps", "gap", "verdict", "run"], rows)
    e = np.array([r[1] for r in rows])
    gap = np.array([r[2] for r in rows])
    slope = float(e @ gap / (e @ e)) if np.any(e) else 0.0
    _write_json(d / "fit.json", {"slope": slope})
    (d / "config.json").write_text(cfg.to_json())
    write_manifest(d)
    print(json.dumps({"run": str(d), "slope": slope}))
    return d


def cmd_report(paths) -> str:
    lines = ["| run | item | value |", "|---|---|---|"]
    for p in paths:
        p = Path(p)
        check_manifest(p)
        for name in ("diagnostics.json", "verification.json", "fit.json", "morse.json"):
            f = p / name
            if not f.exists():
                continue
            data = json.loads(f.read_text())
            for k, v in _flatten(data):
                lines.append(f"| {p.name} | {name[:-5]}.{k} | {v} |")
    text = "\n".join(lines) + "\n"
    print(text)
    return text


def _flatten(d, prefix=""):
    if isinstance(d, dict):
        for k, v in d.items():
            yield from _flatten(v, f"{prefix}{k}.")
    elif isinstance(d, list) and len(d) > 6:
        yield prefix[:-1], f"[{len(d)} items]"
    else:
        yield prefix[:-1], d


# ---------------------------------------------------------------------------

def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eulerforge", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config; flags override its values")
        sp.add_argument("--out")
        sp.add_argument("--n", type=int)
        sp.add_argument("--q", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--no-plots", dest="plots", action="store_false", default=None)

    def forge_flags(sp):
        sp.add_argument("--domain", choices=("oval", "torus"))
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--eps0", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", dest="max_iter", type=int)
        sp.add_argument("--solvability-tol", dest="solvability_tol", type=float)
        sp.add_argument("--n-levels", dest="n_levels", type=int)
        sp.add_argument("--n-angle", dest="n_angle", type=int)
        sp.add_argument("--level", type=float)
        sp.add_argument("--half-width", dest="half_width", type=float)

    common(sub.add_parser("oval", help="domain, closed form and critical points"))
    for name in ("forge", "torus"):
        sp = sub.add_parser(name, help="perturbative steady state")
        common(sp)
        forge_flags(sp)
    sp = sub.add_parser("verify", help="diagnostics on a forge bundle")
    sp.add_argument("bundle")
    common(sp)
    sp.add_argument("--t-end", dest="t_end", type=float)
    sp = sub.add_parser("sweep", help="forge over a list of eps values")
    common(sp)
    forge_flags(sp)
    sp.add_argument("--eps-list", dest="eps_list", type=_floats)
    sp.add_argument("--workers", type=int)
    sp = sub.add_parser("report", help="tabulate diagnostics of finished runs")
    sp.add_argument("runs", nargs="+")
    return p


def config_from_args(args) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if getattr(args, "config", None):
        try:
            cfg = RunConfig.from_json(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ValidationError(f"bad config file: {exc}") from exc
        cfg.command = args.command
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for k, v in vars(args).items():
        if k in names and k != "command" and v is not None:
            setattr(cfg, k, v)
    if args.command == "torus":
        cfg.domain = "torus"
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            cmd_report(args.runs)
            return 0
        cfg = config_from_args(args)
        if args.command == "oval":
            cmd_oval(cfg)
        elif args.command in ("forge", "torus"):
            (cmd_torus if args.command == "torus" else cmd_forge)(cfg)
        elif args.command == "verify":
            try:
                cmd_verify(Path(args.bundle), cfg)
            except EulerForgeError as exc:
                if not 30 <= exc.exit_code < 40:
                    exc.exit_code = 30
                exc.stage = "verify"
                raise
        elif args.command == "sweep":
            cmd_sweep(cfg)
        return 0
    except EulerForgeError as exc:
        stage = getattr(exc, "stage", args.command)
        print(json.dumps({"error": type(exc).__name__, "stage": stage, "message": str(exc),
                          "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
