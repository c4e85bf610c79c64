"""Command-line front end.

Subcommands:
  coeffs generate   fill one coefficient box into a cache file
  coeffs verify     cross-check cached/computed coefficients by quadrature
  simulate          nonlinear model: path/ensemble simulation to CSV
  convergence       strong-error study over a list of step sizes
  linear            linear stationary model: exact-distribution ensemble

Model files are JSON; trajectories land in ``t,component_*`` CSVs and
moments in ``t,mean_i,var_i`` CSVs.  Exit codes: 0 ok, 1 usage error,
2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import accuracy, coeffs, linear, operators, schemes

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_int_tuple(text):
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer tuple, got {text!r}") from exc


def _parse_float_list(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def load_model_file(path):
    """Parse and validate a JSON model file; returns ('nonlinear', SdeModel)
    or ('linear', LinearModel)."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    kind = doc.get("kind")
    try:
        if kind == "nonlinear":
            model = operators.SdeModel.from_strings(
                drift=doc["drift"], diffusion=doc["diffusion"], x0=doc["x0"]
            )
            if model.n != doc.get("n", model.n) or model.m != doc.get("m", model.m):
                raise UsageError(f"{path}: declared n/m do not match drift/diffusion shapes")
            return "nonlinear", model
        if kind == "linear":
            model = linear.LinearModel.from_data(
                A=doc["A"], B=doc["B"], F=doc["F"], H=doc["H"],
                u=doc.get("u", ["0"] * len(doc["B"][0])), x0=doc["x0"],
            )
            for name, want in (("n", model.n), ("m", model.m), ("k", model.k)):
                if name in doc and doc[name] != want:
                    raise UsageError(f"{path}: declared {name}={doc[name]} but matrices give {want}")
            return "linear", model
        raise UsageError(f"{path}: kind must be 'nonlinear' or 'linear', got {kind!r}")
    except KeyError as exc:
        raise UsageError(f"{path}: missing field {exc}") from exc
    except Exception as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"{path}: {exc}") from exc


def _open_store(args):
    store = coeffs.CoeffStore(getattr(args, "store", None))
    if getattr(args, "no_generate", False):
        store.readonly = True
    else:
        store.on_generate = lambda weights, jmax, count: print(
            f"[coeffs] generated box {weights} up to q={jmax} ({count} entries)"
        )
    return store


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return str(path)


def _report(out_dir, lines):
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if out_dir is not None:
        path = Path(out_dir) / "report.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        return str(path)
    return None


# -- quadrature cross-check used by `coeffs verify` ----------------------------

def _quad_reference(weights, indices):
    from numpy.polynomial import Polynomial
    from numpy.polynomial.legendre import Legendre

    if len(weights) <= 3:
        from scipy.integrate import quad
        from scipy.special import eval_legendre

        def level(s, upper):
            if s < 0:
                return 1.0
            fn = lambda x: (1 + x) ** weights[s] * eval_legendre(indices[s], x) * level(s - 1, x)
            val, _ = quad(fn, -1.0, upper, epsabs=1e-13, epsrel=1e-13, limit=200)
            return val

        return (-1.0) ** sum(weights) * level(len(weights) - 1, 1.0)

    acc = Polynomial([1.0])
    onepx = Polynomial([1.0, 1.0])
    result = 0.0
    for s, (l, j) in enumerate(zip(weights, indices)):
        p = Legendre.basis(j).convert(kind=Polynomial)
        anti = (acc * onepx**l * p).integ(lbnd=-1.0)
        if s < len(weights) - 1:
            acc = anti
        else:
            result = anti(1.0)
    return (-1.0) ** sum(weights) * result


def cmd_coeffs_generate(args):
    store = _open_store(args)
    weights = _parse_int_tuple(args.weights)
    if weights not in coeffs.SUPPORTED_WEIGHTS:
        raise UsageError(f"unsupported weight tuple {weights}")
    t0 = time.perf_counter()
    count = coeffs.generate_range(store, weights, args.jmax)
    dt = time.perf_counter() - t0
    print(f"generated {count} coefficients for weights {weights} (jmax={args.jmax}) in {dt:.2f} s")
    if args.store:
        print(f"store: {args.store} ({len(store)} total entries)")
    return 0


def cmd_coeffs_verify(args):
    import random

    store = _open_store(args)
    rng = random.Random(args.seed)
    tuples = sorted(coeffs.SUPPORTED_WEIGHTS)
    failures = 0
    for _ in range(args.samples):
        w = rng.choice(tuples)
        idx = tuple(rng.randint(0, 6) for _ in w)
        key = coeffs.CoeffKey(w, idx)
        exact = float(store.get(key))
        ref = _quad_reference(w, idx)
        if abs(exact - ref) > args.tolerance:
            failures += 1
            print(f"FAIL {w} {idx}: exact={exact!r} quadrature={ref!r}")
    status = "ok" if failures == 0 else "FAILED"
    print(f"verify: {args.samples} samples, {failures} failures ({status})")
    return 0 if failures == 0 else 2


def cmd_simulate(args):
    kind, model = load_model_file(args.model)
    if kind != "nonlinear":
        raise UsageError("simulate expects a nonlinear model file (use `linear` otherwise)")
    store = _open_store(args)
    config = schemes.SchemeConfig(
        order=args.order,
        calculus=args.calculus,
        dt=args.dt,
        T=args.T,
        accuracy_constant=args.C,
        seed=args.seed,
        paths=args.paths,
    )
    t0 = time.perf_counter()
    result = schemes.simulate_ensemble(model, config, store, keep_trajectories=args.keep)
    wall = time.perf_counter() - t0
    outputs = []
    moments = np.column_stack(
        [result.times]
        + [col for i in range(model.n) for col in (result.mean[:, i], result.variance[:, i])]
    )
    header = "t," + ",".join(f"mean_{i+1},var_{i+1}" for i in range(model.n))
    outputs.append(_write_csv(Path(args.out) / "moments.csv", header, moments))
    traj_header = "t," + ",".join(f"component_{i+1}" for i in range(model.n))
    for idx, traj in enumerate(result.trajectories):
        rows = np.column_stack([traj.times, traj.states])
        outputs.append(_write_csv(Path(args.out) / f"trajectory_{idx}.csv", traj_header, rows))
    lines = [
        f"simulate: order={args.order} calculus={args.calculus} dt={args.dt} T={args.T}",
        f"paths={args.paths} seed={args.seed} accuracy constant C={args.C}",
        "selected truncation levels:",
        *("  " + line for line in result.qset.report_lines()),
        f"diverged paths: {result.diverged}",
        f"wall time: {wall:.3f} s",
        *(f"wrote {p}" for p in outputs),
    ]
    _report(args.out, lines)
    return 2 if result.diverged == args.paths else 0


def cmd_convergence(args):
    kind, model = load_model_file(args.model)
    if kind != "nonlinear":
        raise UsageError("convergence expects a nonlinear model file")
    store = _open_store(args)
    dt_list = _parse_float_list(args.dt_list)
    config = schemes.SchemeConfig(
        order=args.order,
        calculus=args.calculus,
        dt=dt_list[0],
        T=args.T,
        accuracy_constant=args.C,
        seed=args.seed,
        paths=args.paths,
    )
    t0 = time.perf_counter()
    report = schemes.strong_error_study(
        model, config, dt_list, args.ref_dt, store,
        ref_order=args.ref_order, ref_accuracy_constant=args.ref_C,
    )
    wall = time.perf_counter() - t0
    rows = np.column_stack([report.dts, report.errors])
    path = _write_csv(Path(args.out) / "convergence.csv", "dt,strong_error", rows)
    lines = [
        f"convergence: order={args.order} calculus={args.calculus} T={args.T}",
        f"paths={args.paths} seed={args.seed} C={args.C} ref_dt={args.ref_dt} ref_order={args.ref_order}",
        *(f"dt={d:.8g}: strong error {e:.8g}" for d, e in zip(report.dts, report.errors)),
        f"fitted log-log slope: {report.slope:.4f}",
        f"wall time: {wall:.3f} s",
        f"wrote {path}",
    ]
    _report(args.out, lines)
    return 0


def cmd_linear(args):
    kind, model = load_model_file(args.model)
    if kind != "linear":
        raise UsageError("linear expects a linear model file")
    n_steps = args.T / args.dt
    if abs(n_steps - round(n_steps)) > 1e-9 or round(n_steps) < 1:
        raise UsageError("T must be a positive integer multiple of dt")
    t0 = time.perf_counter()
    result = linear.simulate_linear(
        model, args.dt, int(round(n_steps)), args.paths, args.seed,
        keep_trajectories=args.keep,
    )
    wall = time.perf_counter() - t0
    n = model.n
    outputs = []
    moments = np.column_stack(
        [result.times]
        + [col for i in range(n) for col in (result.mean[:, i], result.variance[:, i])]
        + [result.output_mean, result.output_variance]
    )
    header = (
        "t,"
        + ",".join(f"mean_{i+1},var_{i+1}" for i in range(n))
        + ",output_mean,output_var"
    )
    outputs.append(_write_csv(Path(args.out) / "moments.csv", header, moments))
    traj_header = "t," + ",".join(f"component_{i+1}" for i in range(n))
    for idx, (times, states) in enumerate(result.trajectories):
        rows = np.column_stack([times, states])
        outputs.append(_write_csv(Path(args.out) / f"trajectory_{idx}.csv", traj_header, rows))
    lines = [
        f"linear: dt={args.dt} T={args.T} paths={args.paths} seed={args.seed}",
        f"wall time: {wall:.3f} s",
        *(f"wrote {p}" for p in outputs),
    ]
    _report(args.out, lines)
    return 0


def build_parser():
    parser = _Parser(prog="sdetaylor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("coeffs", help="coefficient cache maintenance")
    csub = pc.add_subparsers(dest="coeffs_command", required=True)
    pg = csub.add_parser("generate", help="fill one dense coefficient box")
    pg.add_argument("--weights", required=True, help="comma-separated weight tuple, e.g. 0,0,0")
    pg.add_argument("--jmax", type=int, required=True)
    pg.add_argument("--store", default=None)
    pg.set_defaults(fn=cmd_coeffs_generate)
    pv = csub.add_parser("verify", help="cross-check coefficients by quadrature")
    pv.add_argument("--samples", type=int, default=50)
    pv.add_argument("--tolerance", type=float, default=1e-10)
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--store", default=None)
    pv.set_defaults(fn=cmd_coeffs_verify)

    def common(p):
        p.add_argument("model")
        p.add_argument("--dt", type=float, required=True)
        p.add_argument("--T", type=float, required=True)
        p.add_argument("--paths", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--keep", type=int, default=1, help="trajectories to write")

    ps = sub.add_parser("simulate", help="simulate a nonlinear model")
    common(ps)
    ps.add_argument("--order", type=float, required=True, choices=operators.SUPPORTED_ORDERS)
    ps.add_argument("--calculus", choices=["ito", "stratonovich"], default="ito")
    ps.add_argument("--C", type=float, default=1.0, help="accuracy constant")
    ps.add_argument("--store", default=None)
    ps.add_argument("--no-generate", action="store_true")
    ps.set_defaults(fn=cmd_simulate)

    pcv = sub.add_parser("convergence", help="strong-error study")
    pcv.add_argument("model")
    pcv.add_argument("--order", type=float, required=True, choices=operators.SUPPORTED_ORDERS)
    pcv.add_argument("--calculus", choices=["ito", "stratonovich"], default="ito")
    pcv.add_argument("--dt-list", required=True, help="comma-separated step sizes")
    pcv.add_argument("--ref-dt", type=float, required=True)
    pcv.add_argument("--ref-order", type=float, default=1.0)
    pcv.add_argument("--ref-C", type=float, default=None)
    pcv.add_argument("--T", type=float, required=True)
    pcv.add_argument("--paths", type=int, default=100)
    pcv.add_argument("--seed", type=int, default=0)
    pcv.add_argument("--C", type=float, default=1.0)
    pcv.add_argument("--out", required=True)
    pcv.add_argument("--store", default=None)
    pcv.add_argument("--no-generate", action="store_true")
    pcv.set_defaults(fn=cmd_convergence)

    pl = sub.add_parser("linear", help="simulate a linear stationary model")
    common(pl)
    pl.set_defaults(fn=cmd_linear)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (
        coeffs.CoeffError,
        accuracy.AccuracyError,
        schemes.SchemeError,
        linear.LinearError,
    ) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
