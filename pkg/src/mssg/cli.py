"""Command line front end: ``mssg <command> [flags]``.

Structured results go to JSON, trajectories and traces to CSV.  Every float
is written with 17 significant digits so results round-trip exactly.
Exit codes: 0 success, 2 invalid input, 3 numeric failure.
"""

from __future__ import annotations

import json
import math
import os
import sys

import click
import numpy as np

from .errors import MssgError, NumericFailure, ValidationError

DEFAULT_SEED = 17


# ---------------------------------------------------------------------------
# output helpers


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (np.floating, float)):
        return _fmt_float(float(obj))
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (np.integer, int)):
        return str(int(obj))
    if obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _write_json(path, payload):
    text = dumps(payload) + "\n"
    if path is None or path == "-":
        click.echo(text, nl=False)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _write_csv(path, header, rows):
    np.savetxt(path, np.asarray(rows, dtype=float), fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def _check_writable(*paths):
    for p in paths:
        if p is None or p == "-":
            continue
        parent = os.path.dirname(os.path.abspath(p)) or "."
        if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
            raise ValidationError(f"cannot write to {p}")


def _vector(text, name) -> np.ndarray:
    try:
        vals = [float(t) for t in str(text).split(",") if t.strip() != ""]
    except ValueError:
        raise ValidationError(f"--{name} must be a comma separated list of numbers") from None
    if not vals:
        raise ValidationError(f"--{name} is empty")
    return np.array(vals)


def _load_model(path):
    from .mixture import MixtureModel

    if path is None:
        raise ValidationError("--model is required")
    if not os.path.isfile(path):
        raise ValidationError(f"model file {path} not found")
    return MixtureModel.load(path)


# ---------------------------------------------------------------------------
# commands


@click.group()
@click.option("--threads", type=int, default=1, show_default=True, help="Worker threads for per-seed runs.")
@click.pass_context
def cli(ctx, threads):
    """Algorithmic thresholds of multi-species spherical spin glasses."""
    if threads < 1:
        raise ValidationError("--threads must be positive")
    ctx.obj = {"threads": threads}


@cli.command()
@click.option("--model", "model_path")
@click.option("--out")
@click.option("--scan-points", type=int, default=64, show_default=True)
@click.option("--endpoint", help="Phi(q1) for r >= 3 with field, comma separated.")
@click.option("--velocity", help="Start velocity for r >= 3 without field.")
@click.option("--trajectories", "traj_dir", help="Directory receiving one CSV per candidate trajectory.")
@click.option("--dq", type=float, default=1e-3, show_default=True)
def alg(model_path, out, scan_points, endpoint, velocity, traj_dir, dq):
    """Compute ALG and every targeted candidate trajectory."""
    from .variational import alg_value

    _check_writable(out)
    if traj_dir is not None and not os.path.isdir(traj_dir):
        raise ValidationError(f"--trajectories directory {traj_dir} does not exist")
    if scan_points < 2 or dq <= 0:
        raise ValidationError("--scan-points must be at least 2 and --dq positive")
    model = _load_model(model_path)
    res = alg_value(
        model,
        scan_points=scan_points,
        endpoint=None if endpoint is None else _vector(endpoint, "endpoint"),
        velocity=None if velocity is None else _vector(velocity, "velocity"),
        dq=dq,
    )
    payload = {"model": model.to_dict(), **res.to_dict()}
    _write_json(out, payload)
    if traj_dir:
        for i, cand in enumerate(res.candidates):
            segs = cand.segments
            rows = np.vstack([seg.to_rows() for seg in segs])
            _write_csv(os.path.join(traj_dir, f"candidate_{i}.csv"), segs[0].header(), rows)


@cli.command()
@click.option("--model", "model_path")
@click.option("--point", required=True)
@click.option("--out")
def classify(model_path, point, out):
    """Solvability class of a point in [0,1]^r."""
    from .solvability import classify as classify_point

    _check_writable(out)
    model = _load_model(model_path)
    rep = classify_point(model, _vector(point, "point"))
    if out:
        _write_json(out, rep.to_dict())
    click.echo(rep.classification.value)


@cli.command()
@click.option("--model", "model_path")
@click.option("--endpoint", help="Root-finding trajectory ending at this point.")
@click.option("--velocity", help="Tree-descending trajectory with this start velocity.")
@click.option("--start", help="Start point of the tree-descending trajectory; the origin if omitted.")
@click.option("--dq", type=float, default=1e-3, show_default=True)
@click.option("--out", required=True)
def trajectory(model_path, endpoint, velocity, start, dq, out):
    """Integrate one root-finding or tree-descending trajectory to CSV."""
    from .trajectory import type1_solve, type2_solve

    _check_writable(out)
    if (endpoint is None) == (velocity is None):
        raise ValidationError("give exactly one of --endpoint and --velocity")
    if dq <= 0:
        raise ValidationError("--dq must be positive")
    model = _load_model(model_path)
    if endpoint is not None:
        seg = type1_solve(model, _vector(endpoint, "endpoint"), dq=dq)
    else:
        v = _vector(velocity, "velocity")
        if v.shape != (model.r,) or np.any(v < 0) or not np.any(v > 0):
            raise ValidationError("--velocity must be a nonnegative nonzero r-vector")
        x = np.zeros(model.r) if start is None else _vector(start, "start")
        seg = type2_solve(model, x, v / float(model.lam @ v), dq=dq)
    _write_csv(out, seg.header(), seg.to_rows())


@cli.command()
@click.option("--a", "a_text", required=True, help="Exponents a_1,...,a_r.")
@click.option("--lambda", "lam_text", required=True)
@click.option("--out")
def pure(a_text, lam_text, out):
    """Closed-form ALG of a pure model prod x_s^{a_s}."""
    from .variational import pure_alg

    _check_writable(out)
    sol = pure_alg(_vector(a_text, "a"), _vector(lam_text, "lambda"))
    _write_json(out, {"a": sol.a, "lambda": sol.lam, "L": sol.L, "b": sol.b, "alg": sol.alg})


@cli.command()
@click.option("--a", "a_text", required=True)
@click.option("--lambda", "lam_text", required=True)
@click.option("--method", type=click.Choice(["closed", "scan"]), default="closed", show_default=True)
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--out")
def einfty(a_text, lam_text, method, tol, out):
    """E_infinity of a pure model, compared with its ALG."""
    from .einfty import einfty_pure_closed, einfty_scan
    from .variational import pure_alg

    _check_writable(out)
    if tol <= 0:
        raise ValidationError("--tol must be positive")
    a = _vector(a_text, "a")
    lam = _vector(lam_text, "lambda")
    value = einfty_pure_closed(a, lam).einfty if method == "closed" else einfty_scan(a, lam, tol)
    alg_v = pure_alg(a, lam).alg
    _write_json(out, {"method": method, "einfty": value, "alg": alg_v, "gap": value - alg_v})


@cli.command()
@click.option("--model", "model_path")
@click.option("--n", "N", type=int, default=2000, show_default=True)
@click.option("--delta", type=float, default=0.05, show_default=True)
@click.option("--ell-low", type=int, default=30, show_default=True)
@click.option("--seeds", type=int, default=1, show_default=True, help="Number of consecutive seeds.")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True, help="First seed.")
@click.option("--out")
@click.option("--csv", "csv_path", help="Per-seed energy traces.")
@click.pass_context
def amp(ctx, model_path, N, delta, ell_low, seeds, seed, out, csv_path):
    """Run the two-stage message passing algorithm on sampled Hamiltonians."""
    from .amp import run_full

    _check_writable(out, csv_path)
    if N < 1 or seeds < 1 or ell_low < 1 or not (0 < delta < 1):
        raise ValidationError("--n, --seeds, --ell-low must be positive and --delta in (0,1)")
    model = _load_model(model_path)
    rep = run_full(model, N, delta, ell_low, seeds=range(seed, seed + seeds), threads=ctx.obj["threads"])
    _write_json(out, {"model": model.to_dict(), **rep.to_dict()})
    if csv_path:
        rows = []
        for r in rep.reports:
            trace = [] if r.stage1_energy is None else list(r.stage1_energy)
            trace += [] if r.stage2_energy is None else list(r.stage2_energy)
            rows += [[r.seed, i, e] for i, e in enumerate(trace)]
        _write_csv(csv_path, ["seed", "iteration", "energy"], rows)


@cli.command()
@click.option("--w", "w_path", required=True, help="JSON file holding the r x r matrix W.")
@click.option("--v", "v_text", required=True)
@click.option("--lambda", "lam_text", required=True)
@click.option("--trace", "T", type=int, default=0, show_default=True)
@click.option("--finite-n", type=int, default=0)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--out")
def gs(w_path, v_text, lam_text, T, finite_n, seed, out):
    """Ground state energy of multi-species spherical SK with field."""
    from .gs_quadratic import QuadraticSkModel, finite_n_estimate, gs_closed_form, recursion_trace

    _check_writable(out)
    if T < 0 or finite_n < 0:
        raise ValidationError("--trace and --finite-n must be nonnegative")
    try:
        with open(w_path) as fh:
            W = np.array(json.load(fh), dtype=float)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read W from {w_path}: {exc}") from None
    m = QuadraticSkModel(W, _vector(v_text, "v"), _vector(lam_text, "lambda"))
    payload = {"gs": gs_closed_form(m), "seed": seed}
    if T > 0:
        tr = recursion_trace(m, T)
        payload.update({"E": tr.E, "F": tr.F, "alpha": tr.alpha, "eta": tr.eta})
    if finite_n:
        if m.r != 1 or np.any(m.v != 0):
            raise ValidationError("--finite-n needs r = 1 and v = 0")
        payload["finite_n"] = {"N": finite_n, "estimate": finite_n_estimate(float(m.W[0, 0]), finite_n, seed)}
    _write_json(out, payload)


@cli.command()
@click.option("--c", "c", type=float, required=True)
@click.option("--q-max", type=float, default=None, help="Upper integration limit; 1/c if omitted.")
@click.option("--amplitude", type=float, default=1.0, show_default=True)
@click.option("--out")
def asb(c, q_max, amplitude, out):
    """Second variation of the diagonal path in the symmetric quartic example."""
    from .variational import asb_second_variation

    _check_writable(out)
    val = asb_second_variation(c, q_max, amplitude)
    _write_json(out, {"c": c, "q_max": 1.0 / c if q_max is None else q_max, "amplitude": amplitude, "second_variation": val})


# ---------------------------------------------------------------------------
# entry points


def parse_and_run(argv) -> int:
    try:
        cli.main(args=list(argv), prog_name="mssg", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code or 0)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 2
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 2
    except ValidationError as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        return 2
    except NumericFailure as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        return 3
    except MssgError as exc:  # pragma: no cover
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        return 3
    except OSError as exc:
        click.echo(f"OSError: {exc}", err=True)
        return 2
    except Exception as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        return 3
    return 0


def main():
    sys.exit(parse_and_run(sys.argv[1:]))
