"""``isskit`` command line.

Exit codes: 0 when a check passes or a run completes, 1 on a failed
verdict (at least one witness file is written), 2 on usage or
configuration errors. Every run is driven by one seeded generator and
writes UTF-8 JSON with 17 significant digits under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import examples, gains, lyapunov as ly, pde
from .certificate import Certificate, write_certificate, write_json
from .envelope import ISSEnvelope, trajectories_to_rows
from .exceptions import IsskitError, NoFeasibleEnvelope, NoPositiveRadius, NotHurwitz, SmallGainViolated
from .kfun import PowerLaw, kfun_from_json

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    """Bad input file or flag combination."""


# --- input parsing ------------------------------------------------------------

def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def parse_kfun(text: str):
    """``"k,p"`` shorthand for ``k r^p`` or a KFun JSON object."""
    text = text.strip()
    try:
        if text.startswith("{"):
            return kfun_from_json(json.loads(text))
        parts = [float(v) for v in text.split(",")]
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise argparse.ArgumentTypeError(f"bad comparison function {text!r}: {exc}") from None
    if len(parts) == 1:
        parts.append(1.0)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'coeff,expo', got {text!r}")
    try:
        return PowerLaw(*parts)
    except (ValueError, IsskitError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _parse_matrix(text: str) -> np.ndarray:
    try:
        return np.atleast_2d(np.asarray(json.loads(text), dtype=float))
    except (ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(f"bad matrix {text!r}: {exc}") from None


def _load_spec(args):
    obj = _load_json(args.spec)
    try:
        spec = pde.SystemSpec.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid system spec {args.spec}: {exc}") from None
    g = obj.get("grid", {})
    d = args.d if args.d is not None else float(g.get("d", math.pi))
    n = args.n_interior if args.n_interior is not None else int(g.get("n_interior", 100))
    try:
        grid = pde.Grid1D(d, n)
    except (ValueError, IsskitError) as exc:
        raise ConfigError(str(exc)) from None
    return spec, grid, obj


def _initial_state(spec, grid, obj, rng) -> pde.Field:
    exprs = obj.get("initial")
    if exprs is None:
        return ly.FourierSampler(spec, grid, rng=rng).state()
    if len(exprs) != spec.n_species:
        raise ConfigError("need one initial expression per species")
    fns = [pde.compile_expression(e) for e in exprs]
    return pde.Field.from_functions(grid, [(lambda f: lambda x: f(x, 0.0, grid.d))(f) for f in fns])


def _input_signal(spec, grid, obj):
    exprs = obj.get("input")
    if exprs is None:
        return None
    if len(exprs) != spec.n_channels:
        raise ConfigError("need one input expression per channel")
    return pde.InputSignal.from_expressions(exprs, grid.d)


def _load_gains(path) -> gains.GainMatrix:
    try:
        return gains.GainMatrix.from_json(_load_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid gain matrix {path}: {exc}") from None


def _parse_lf(text: str, species: int, bc: str) -> ly.NormPowerLF:
    """``which:q[:scale]``, e.g. ``L2:2`` or ``L4:4:0.5``."""
    parts = text.split(":")
    try:
        which = parts[0]
        q = float(parts[1]) if len(parts) > 1 else 2.0
        scale = float(parts[2]) if len(parts) > 2 else 1.0
    except ValueError:
        raise ConfigError(f"bad Lyapunov function {text!r}") from None
    if which not in ("L2", "L4", "H10"):
        raise ConfigError(f"unsupported norm {which!r}; use L2, L4 or H10")
    return ly.NormPowerLF(which, q, species, scale=scale, bc=bc)


# --- output helpers -----------------------------------------------------------

def _root(args) -> Path:
    root = Path(args.out) / args.command
    root.mkdir(parents=True, exist_ok=True)
    return root


def _config(args) -> dict:
    return {k: (v.to_json() if hasattr(v, "to_json") else v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in sorted(vars(args).items()) if k != "func"}


def _finish(root: Path, args, certs, extra=None) -> int:
    names = [write_certificate(root, c).relative_to(root).as_posix() for c in certs]
    ok = all(c.verdict for c in certs)
    report = {"command": args.command, "seed": args.seed, "config": _config(args), "verdict": ok,
              "certificates": names,
              "witness_files": [f for c in certs for f in c.witness_files]}
    if extra:
        report.update(extra)
    write_json(root / "report.json", report)
    status = "PASS" if ok else "FAIL"
    print(f"{args.command}: {status} -> {root / 'report.json'}")
    return EXIT_OK if ok else EXIT_FAIL


def _failure(check: str, message: str, **details) -> Certificate:
    return Certificate(check=check, verdict=False, samples=1, worst_margin=-math.inf,
                       details={"reason": message, **details})


# --- subcommands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec, grid, obj = _load_spec(args)
    rng = np.random.default_rng(args.seed)
    x0 = _initial_state(spec, grid, obj, rng)
    traj = pde.simulate(spec, x0, _input_signal(spec, grid, obj), args.t_end, args.dt,
                        M_max=args.m_max, record_every=args.record_every)
    root = _root(args)
    traj.write_csv(root / "trajectory.csv")
    traj.write_norms_csv(root / "norms.csv")
    cert = Certificate(check="no_blowup", verdict=traj.blowup is None, samples=len(traj.times),
                       details={"blowup_time": traj.blowup})
    cert.worst_margin = args.m_max - float(np.max(np.abs(traj.final.values)))
    if traj.blowup is not None:
        cert.add_witness({"t": traj.blowup}, traj.final)
    return _finish(root, args, [cert], {"spec": spec, "grid": {"d": grid.d, "n_interior": grid.n_interior},
                                        "data": ["trajectory.csv", "norms.csv"]})


def cmd_spectrum(args) -> int:
    spec, grid, _ = _load_spec(args)
    ev = pde.spectrum(spec, grid)
    root = _root(args)
    lam = float(np.max(ev.real))
    cert = Certificate(check="spectrum", verdict=True, samples=int(ev.size), worst_margin=-lam,
                       details={"max_real_eigenvalue": lam, "stable": bool(lam < 0)})
    if args.expect_stable and lam >= 0:
        cert.verdict = False
        cert.add_witness({"eigenvalue": [lam, float(ev[np.argmax(ev.real)].imag)]})
    n_keep = ev.size if args.all else min(ev.size, 20)
    return _finish(root, args, [cert],
                   {"eigenvalues": [[float(z.real), float(z.imag)] for z in ev[:n_keep]]})


def cmd_small_gain(args) -> int:
    G = _load_gains(args.gains)
    cert = gains.small_gain_check(G, n_starts=args.starts, seed=args.seed)
    return _finish(_root(args), args, [cert], {"gains": G})


def cmd_omega_path(args) -> int:
    G = _load_gains(args.gains)
    root = _root(args)
    if args.path is not None:
        obj = _load_json(args.path)
        sigmas = tuple(kfun_from_json(s) for s in obj["sigmas"])
        path = gains.OmegaPath(sigmas)
        cert = gains.omega_path_verify(G, path, r_samples=args.samples)
        extra = {"path": gains.OmegaPath(sigmas, verified=cert.verdict)}
        return _finish(root, args, [cert], extra)
    try:
        path = gains.omega_path_build(G, a=args.anchor, r_samples=args.samples)
    except SmallGainViolated:
        cert = gains.small_gain_check(G, cross_check=False)
        return _finish(root, args, [cert], {"path": None})
    cert = gains.omega_path_verify(G, path, r_samples=args.samples)
    write_json(root / "omega_path.json", path)
    return _finish(root, args, [cert], {"path": path})


def _energy_lf(spec, species, chi, alpha):
    terms = spec.self_reaction(species)
    if len(terms) != 1:
        raise ConfigError("energy function needs exactly one self reaction on the species")
    t = terms[0]
    return ly.EnergyLF(species, t.map, -t.coeff, t.param, bc=spec.bc[species], chi=chi, alpha=alpha)


def cmd_certify(args) -> int:
    spec, grid, _ = _load_spec(args)
    rng = np.random.default_rng(args.seed)
    sp = args.species - 1
    if not 0 <= sp < spec.n_species:
        raise ConfigError("species index out of range")
    if args.lf == "energy":
        V = _energy_lf(spec, sp, args.gain, args.decay)
    else:
        V = ly.NormPowerLF(args.lf, args.q, sp, bc=spec.bc[sp], chi=args.gain, alpha=args.decay)
    sampler = ly.FourierSampler(spec, grid, amp_range=(args.amp_min, args.amp_max), rng=rng)
    cert = ly.check_implication(V, spec, sampler, args.samples, tolerance=args.tolerance,
                                mode=args.mode, fd_check=args.fd_check)
    if args.fd_check:
        fd_ok = cert.details["max_relative_fd_disagreement"] <= args.fd_rtol
        cert.details["fd_agreement_ok"] = bool(fd_ok)
        cert.verdict = bool(cert.verdict and fd_ok)
    return _finish(_root(args), args, [cert])


def cmd_linearize(args) -> int:
    spec, grid, _ = _load_spec(args)
    root = _root(args)
    try:
        V, cert = ly.build_linearization_lf(spec, grid, gain=args.gain, decay=args.decay,
                                            amp_ceiling=args.ceiling, n_samples=args.samples,
                                            rng=args.seed)
    except NotHurwitz as exc:
        lam = pde.max_real_eigenvalue(spec.linear_part(), grid)
        cert = _failure("linearization_radius", str(exc), max_real_eigenvalue=lam)
        cert.add_witness({"max_real_eigenvalue": lam})
        return _finish(root, args, [cert])
    except NoPositiveRadius as exc:
        return _finish(root, args, [_failure("linearization_radius", str(exc))])
    return _finish(root, args, [cert], {"radius": cert.details["radius"]})


def cmd_composite(args) -> int:
    spec, grid, _ = _load_spec(args)
    G = _load_gains(args.gains)
    if G.n != spec.n_species or len(args.lf) != G.n:
        raise ConfigError("need one --lf per species and a gain matrix of matching size")
    root = _root(args)
    sg = gains.small_gain_check(G, seed=args.seed)
    if not sg.verdict:
        return _finish(root, args, [sg])
    lfs = [_parse_lf(t, i, spec.bc[i]) for i, t in enumerate(args.lf)]
    path = gains.omega_path_build(G)
    V = ly.build_composite_lf(lfs, G, path)
    sampler = ly.FourierSampler(spec, grid, amp_range=(args.amp_min, args.amp_max),
                                rng=np.random.default_rng(args.seed))
    cert, trajs = examples.composite_trajectory_check(V, spec, sampler, args.trajectories, args.t_end,
                                                      args.dt, tol=args.tol)
    trajs[0].write_norms_csv(root / "norms.csv")
    return _finish(root, args, [sg, cert], {"path": path, "data": ["norms.csv"]})


_EXAMPLE_FLAGS = {
    "counterexample": {"a": "a", "t_grid": "t_grid", "s_truncation": "s_truncation"},
    "neumann-hurwitz": {"R": "R", "c": "c", "d": "d", "n_interior": "n_interior", "t_end": "t_end",
                        "stable_expected": "stable_expected", "seed": "seed"},
    "semilinear-energy": {"m": "m", "a": "a", "f_id": "f", "n_interior": "n_interior",
                          "n_samples": "samples", "seed": "seed"},
    "coupled-linear": {"c1": "c1", "c2": "c2", "d": "d", "a12": "a12", "a21": "a21", "eps": "eps",
                       "n_interior": "n_interior", "n_samples": "samples", "n_traj": "trajectories",
                       "t_end": "t_end", "seed": "seed"},
    "coupled-nonlinear": {"c1": "c1", "c2": "c2", "d": "d", "b": "b", "eps1": "eps1", "eps2": "eps2",
                          "n_interior": "n_interior", "n_samples": "samples", "n_traj": "trajectories",
                          "t_end": "t_end", "seed": "seed"},
}


def cmd_example(args) -> int:
    fn = examples.EXAMPLES[args.id]
    kwargs = {k: getattr(args, a) for k, a in _EXAMPLE_FLAGS[args.id].items() if getattr(args, a) is not None}
    if args.id == "neumann-hurwitz" and "R" not in kwargs:
        raise ConfigError("neumann-hurwitz needs --R")
    report = fn(**kwargs, out_dir=args.out)
    root = Path(args.out) / report.example_id
    print(f"{report.example_id}: {report.headline} -> {root / 'report.json'}")
    return EXIT_OK if report.verdict else EXIT_FAIL


def _read_rows(path):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read rows from {path}: {exc}") from None
    if data.shape[1] != 4:
        raise ConfigError("rows CSV needs columns initial_norm,t,input_norm,state_norm")
    return data[:, :3], data[:, 3]


def cmd_envelope(args) -> int:
    root = _root(args)
    if args.rows is not None:
        X, y = _read_rows(args.rows)
    elif args.spec is not None:
        spec, grid, _ = _load_spec(args)
        rng = np.random.default_rng(args.seed)
        sampler = ly.FourierSampler(spec, grid, amp_range=(args.amp_min, args.amp_max), rng=rng)
        trajs = []
        for _ in range(args.trajectories):
            u = pde.InputSignal.constant(rng.uniform(-1, 1, spec.n_channels) * args.input_level) \
                if spec.n_channels else None
            trajs.append(pde.simulate(spec, sampler.state(), u, args.t_end, args.dt, record_every=10))
        X, y = trajectories_to_rows(trajs)
    else:
        raise ConfigError("envelope needs --rows or --spec")
    est = ISSEnvelope(gain=args.gain, rate_slack=args.rate_slack)
    try:
        est.fit(X, y)
    except NoFeasibleEnvelope as exc:
        cert = exc.certificate or _failure("iss_envelope", str(exc))
        cert.details["reason"] = str(exc)
        return _finish(root, args, [cert])
    return _finish(root, args, [est.certificate_], {"envelope": est.envelope_})


# --- parser -------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=0, help="seed of the single random generator")


def _add_grid(p, spec_required=True):
    p.add_argument("--spec", required=spec_required, help="system spec JSON")
    p.add_argument("--n-interior", type=int, default=None)
    p.add_argument("--d", type=float, default=None, help="domain length (default from spec or pi)")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", type=float, default=1.0)


def _add_sampling(p, samples=1000):
    p.add_argument("--samples", type=int, default=samples)
    p.add_argument("--amp-min", type=float, default=1e-2)
    p.add_argument("--amp-max", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isskit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a system spec and write trajectory CSVs")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--m-max", type=float, default=pde.DEFAULT_M_MAX, help="blow-up threshold")
    p.add_argument("--record-every", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("spectrum", help="eigenvalues of the discretized linear part")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--expect-stable", action="store_true", help="fail if an eigenvalue has Re >= 0")
    p.add_argument("--all", action="store_true", help="write every eigenvalue, not just the top 20")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("small-gain", help="decide the small-gain condition by cycle enumeration")
    _add_common(p)
    p.add_argument("--gains", required=True, help="gain matrix JSON")
    p.add_argument("--starts", type=int, default=50, help="starting vectors for the iteration oracle")
    p.set_defaults(func=cmd_small_gain)

    p = sub.add_parser("omega-path", help="build or verify an Omega-path")
    _add_common(p)
    p.add_argument("--gains", required=True)
    p.add_argument("--path", default=None, help="user path JSON to verify instead of building one")
    p.add_argument("--anchor", type=float, nargs="+", default=None, help="positive direction a")
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_omega_path)

    p = sub.add_parser("certify", help="sample the ISS-Lyapunov implication")
    _add_common(p)
    _add_grid(p)
    _add_sampling(p)
    p.add_argument("--lf", choices=("energy", "L2", "L4", "H10"), default="energy")
    p.add_argument("--q", type=float, default=2.0, help="power of the norm for L2/L4/H10")
    p.add_argument("--species", type=int, default=1)
    p.add_argument("--gain", type=parse_kfun, default=None, help="chi as 'coeff,expo' or KFun JSON")
    p.add_argument("--decay", type=parse_kfun, default=None, help="alpha as 'coeff,expo' or KFun JSON")
    p.add_argument("--mode", choices=("satisfy", "violate", "zero"), default="satisfy")
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--fd-check", action="store_true")
    p.add_argument("--fd-rtol", type=float, default=1e-3)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("linearize", help="quadratic Lyapunov function from the linear part")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--gain", type=parse_kfun, default=PowerLaw(1.0, 0.5))
    p.add_argument("--decay", type=parse_kfun, default=PowerLaw(0.25, 2.0))
    p.add_argument("--ceiling", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=200)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("composite", help="composite Lyapunov function along trajectories")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--gains", required=True)
    p.add_argument("--lf", action="append", required=True, help="per species 'which:q[:scale]'")
    p.add_argument("--trajectories", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-6, help="allowed increase per step")
    p.add_argument("--amp-min", type=float, default=0.05)
    p.add_argument("--amp-max", type=float, default=2.0)
    p.set_defaults(func=cmd_composite, t_end=10.0)

    p = sub.add_parser("example", help="run one worked example")
    _add_common(p)
    p.add_argument("--id", required=True, choices=sorted(examples.EXAMPLES))
    for name in ("a", "m", "b", "c", "c1", "c2", "d", "a12", "a21", "eps", "eps1", "eps2",
                 "s-truncation", "t-end"):
        p.add_argument(f"--{name}", type=float, default=None)
    p.add_argument("--t-grid", type=float, nargs="+", default=None)
    p.add_argument("--R", type=_parse_matrix, default=None, help="JSON matrix, e.g. '[[-1,0.5],[0,-2]]'")
    p.add_argument("--stable-expected", choices=("true", "false"), default=None)
    p.add_argument("--f", default=None, help="registered odd monotone reaction")
    p.add_argument("--n-interior", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--trajectories", type=int, default=None)
    p.set_defaults(func=cmd_example)

    p = sub.add_parser("envelope", help="fit an exponential ISS envelope")
    _add_common(p)
    _add_grid(p, spec_required=False)
    p.add_argument("--rows", default=None, help="CSV initial_norm,t,input_norm,state_norm")
    p.add_argument("--gain", type=parse_kfun, default=None)
    p.add_argument("--rate-slack", type=float, default=0.05)
    p.add_argument("--trajectories", type=int, default=10)
    p.add_argument("--input-level", type=float, default=0.5)
    p.add_argument("--amp-min", type=float, default=0.1)
    p.add_argument("--amp-max", type=float, default=1.0)
    p.set_defaults(func=cmd_envelope, t_end=5.0)
    return parser


def _thread_cap():
    raw = os.environ.get("ISSKIT_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ISSKIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"ISSKIT_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if getattr(args, "stable_expected", None) is not None:
        args.stable_expected = args.stable_expected == "true"
    try:
        cap = _thread_cap()
        if cap is None:
            return args.func(args)
        with threadpool_limits(limits=cap):
            return args.func(args)
    except (ConfigError, IsskitError, ValueError) as exc:
        print(f"isskit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
