"""Unified command-line front end.

Exit codes: 0 success, 1 verification failed, 2 parameter error,
3 resource limit.  Global --seed/--threads/--out apply to every
subcommand; HPL_THREADS is the environment fallback for --threads.
All file outputs get a sibling manifest; identical command and seed
reproduce byte-identical outputs regardless of the thread count.
"""

from __future__ import annotations

import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import __version__, bms, reports, rngs
from .bp import evolve, verdict as bp_verdict
from .broadcast import BohtParams, OffspringDist
from .errors import HplError, ParameterError
from .gaussian import GaussHermite, certify_contraction, g_rw, w_star
from .hsbm import (Hypergraph, Partition, hamming_overlap, recover_exhaustive,
                   recover_local_search, sample_hsbm, windows_for)
from .thresholds import (HsbmParams, asymptotic_bounds, derived_params,
                         lambda0, recovery_condition, sanov_rate, table1)


class RunContext:
    def __init__(self, seed: int, threads: int, out: Path | None):
        self.seed = seed
        self.threads = threads
        self.out = out
        self.started = datetime.now(timezone.utc)
        self.outputs: list[Path] = []

    def emit(self, name: str, obj, csv_rows: list[dict] | None = None,
             want_csv: bool = False) -> None:
        if self.out is None:
            click.echo(reports.dumps17(obj))
            return
        self.outputs.append(reports.write_json(self.out / f"{name}.json", obj))
        if want_csv and csv_rows is not None:
            self.outputs.append(
                reports.write_csv(self.out / f"{name}.csv", csv_rows))
        click.echo(f"wrote {self.out / (name + '.json')}")

    def finish(self, command: str, params: dict) -> None:
        if self.out is not None and self.outputs:
            reports.write_manifest(self.out, command, params, self.seed,
                                   self.outputs, self.started,
                                   name=self.outputs[0].stem)


def _run_context(ctx) -> RunContext:
    return ctx.obj


@click.group()
@click.version_option(__version__)
@click.option("--seed", type=int, default=rngs.MASTER_SEED_DEFAULT,
              show_default=True, help="Master seed; module streams derive from it.")
@click.option("--threads", type=int, default=1, envvar="HPL_THREADS",
              show_default=True, help="Worker threads for grid scans.")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Output directory; omit to print JSON to stdout.")
@click.pass_context
def main(ctx, seed, threads, out):
    ctx.obj = RunContext(seed, max(1, threads), out)


def _offspring(kind: str, d: float) -> OffspringDist:
    return OffspringDist(kind, d)


# ---------------------------------------------------------------------------
# de

@main.group()
def de():
    """Density evolution on hypertrees."""


@de.command("run")
@click.option("--r", "r", type=int, required=True)
@click.option("--lambda", "lam", type=float, required=True)
@click.option("--d", type=float, required=True)
@click.option("--offspring", type=click.Choice(["point", "poisson"]),
              default="point", show_default=True)
@click.option("--mode", type=click.Choice(["exact", "mc"]), default="exact",
              show_default=True)
@click.option("--pop", type=int, default=1_000_000, show_default=True)
@click.option("--iters", type=int, default=200, show_default=True)
@click.option("--start", default="id", show_default=True,
              help="id or bsc:<delta>")
@click.option("--merge-tol", type=float, default=1e-12, show_default=True)
@click.option("--atom-cap", type=int, default=1_000_000, show_default=True)
@click.option("--zero-tol", type=float, default=1e-8, show_default=True)
@click.option("--window", type=int, default=10, show_default=True,
              help="Stability window for the verdict.")
@click.pass_context
def de_run(ctx, r, lam, d, offspring, mode, pop, iters, start, merge_tol,
           atom_cap, zero_tol, window):
    rc = _run_context(ctx)
    params = BohtParams(r, lam, _offspring(offspring, d))
    if start == "id":
        start_cloud = bms.make_bsc(0.0)
    elif start.startswith("bsc:"):
        start_cloud = bms.make_bsc(float(start.split(":", 1)[1]))
    else:
        raise ParameterError(f"unknown start {start!r}")
    seed = rngs.substream_seed(rc.seed, "de")
    rng = rngs.stream(rc.seed, "de")
    trace = evolve(start_cloud, params, iters, mode=mode, merge_tol=merge_tol,
                   atom_cap=atom_cap, pop_size=pop, rng=rng, seed=seed)
    v = bp_verdict(trace, zero_tol=zero_tol, stability_window=window)
    doc = trace.to_json_dict()
    doc["verdict"] = {"kind": v.kind, "final_x": v.final_x,
                      "iterations": v.iterations, "stat_error": v.stat_error}
    rc.emit("de_run", doc, csv_rows=trace.to_rows(), want_csv=True)
    rc.finish("de run", {"r": r, "lambda": lam, "d": d, "offspring": offspring,
                         "mode": mode, "pop": pop, "iters": iters,
                         "start": start, "merge_tol": merge_tol,
                         "atom_cap": atom_cap})
    click.echo(f"verdict: {v.kind} (final x = {v.final_x:.6g})")


# ---------------------------------------------------------------------------
# gauss

@main.group()
def gauss():
    """Gaussian large-degree fixed-point analysis."""


@gauss.command("certify")
@click.option("--r", "r", type=int, required=True)
@click.option("--w", "w", type=float, required=True)
@click.option("--delta", type=float, default=0.1, show_default=True)
@click.option("--step", type=float, default=0.001, show_default=True)
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--margin", type=float, default=0.006, show_default=True)
@click.option("--z-cut", type=float, default=5.0, show_default=True)
@click.pass_context
def gauss_certify(ctx, r, w, delta, step, n, margin, z_cut):
    rc = _run_context(ctx)
    rep = certify_contraction(r, w, delta=delta, grid_step=step, n=n,
                              target_margin=margin, z_cut=z_cut,
                              threads=rc.threads)
    rc.emit("gauss_certify", rep.to_json_dict(include_grid=True),
            csv_rows=[{"x": float(x), "margin": float(m)}
                      for x, m in zip(rep.grid_x, rep.margins)],
            want_csv=True)
    rc.finish("gauss certify", {"r": r, "w": w, "delta": delta, "step": step,
                                "n": n, "margin": margin, "z_cut": z_cut})
    click.echo("verdict: " + ("Certified" if rep.certified
                              else f"Failed at x={rep.failed_x}"))
    if not rep.certified:
        sys.exit(1)


@gauss.command("wstar")
@click.option("--r", "r", type=int, required=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--mode", type=click.Choice(["heuristic", "certified"]),
              default="heuristic", show_default=True)
@click.pass_context
def gauss_wstar(ctx, r, tol, mode):
    rc = _run_context(ctx)
    lo, hi = w_star(r, tol=tol, mode=mode)
    doc = {"r": r, "tol": tol, "mode": mode, "lower": lo, "upper": hi}
    rc.emit("gauss_wstar", doc)
    rc.finish("gauss wstar", doc)
    click.echo(f"w*({r}) in [{lo:.6g}, {hi:.6g}]")


# ---------------------------------------------------------------------------
# thr

@main.group()
def thr():
    """Closed-form threshold arithmetic."""


@thr.command("lambda0")
@click.option("--r", "r", type=int, required=True)
@click.pass_context
def thr_lambda0(ctx, r):
    rc = _run_context(ctx)
    res = lambda0(r)
    if res is None:
        doc = {"r": r, "lambda0": None,
               "note": "no root of interest for this r"}
    else:
        root, rounded, all_roots = res
        doc = {"r": r, "lambda0": root, "lambda0_rounded": rounded,
               "sign_changes": list(all_roots)}
    rc.emit("thr_lambda0", doc)
    rc.finish("thr lambda0", {"r": r})


@thr.command("check")
@click.option("--r", "r", type=int, required=True)
@click.option("--a", type=float, default=None)
@click.option("--b", type=float, default=None)
@click.option("--d", type=float, default=None)
@click.option("--lambda", "lam", type=float, default=None)
@click.pass_context
def thr_check(ctx, r, a, b, d, lam):
    rc = _run_context(ctx)
    if a is not None and b is not None:
        d, lam = derived_params(r, a, b)
    elif d is None or lam is None:
        raise ParameterError("give either --a/--b or --d/--lambda")
    ok, margin = recovery_condition(r, d, lam)
    doc = {"r": r, "a": a, "b": b, "d": d, "lambda": lam,
           "condition_holds": ok, "margin": margin}
    rc.emit("thr_check", doc)
    rc.finish("thr check", doc)


@thr.command("sanov")
@click.option("--r", "r", type=int, required=True)
@click.option("--d", type=float, required=True)
@click.option("--lambda", "lam", type=float, required=True)
@click.option("--delta-grid", default="0:0.5:51",
              show_default=True, help="start:stop:count")
@click.option("--csv", "want_csv", is_flag=True)
@click.pass_context
def thr_sanov(ctx, r, d, lam, delta_grid, want_csv):
    rc = _run_context(ctx)
    start, stop, count = delta_grid.split(":")
    grid = np.linspace(float(start), float(stop), int(count))
    rows = [{"delta": float(x), "rate": sanov_rate(r, d, lam, float(x))}
            for x in grid]
    doc = {"r": r, "d": d, "lambda": lam, "rows": rows}
    rc.emit("thr_sanov", doc, csv_rows=rows, want_csv=want_csv)
    rc.finish("thr sanov", {"r": r, "d": d, "lambda": lam,
                            "delta_grid": delta_grid})


@thr.command("bounds")
@click.option("--r", "r", type=int, required=True)
@click.pass_context
def thr_bounds(ctx, r):
    rc = _run_context(ctx)
    upper, lower = asymptotic_bounds(r)
    doc = {"r": r, "upper_coeff": upper, "lower_coeff": lower}
    rc.emit("thr_bounds", doc)
    rc.finish("thr bounds", {"r": r})


# ---------------------------------------------------------------------------
# verify

@main.group()
def verify():
    """Numerical verification sweeps for the expansion machinery."""


@verify.command("moments")
@click.option("--clouds", type=int, default=100, show_default=True)
@click.option("--ell-max", type=int, default=4, show_default=True)
@click.option("--tol", type=float, default=1e-10, show_default=True)
@click.pass_context
def verify_moments(ctx, clouds, ell_max, tol):
    from .expansion import MomentSumKind, moment_sum_bruteforce, moment_sum_closed
    rc = _run_context(ctx)
    rng = rngs.stream(rc.seed, "verify-moments")
    worst = 0.0
    for _ in range(clouds):
        cloud = _random_exact_cloud(rng)
        x, z = cloud.moment(1), cloud.moment(3)
        for ell in range(1, ell_max + 1):
            for kind in MomentSumKind:
                got = moment_sum_bruteforce(kind, ell, cloud)
                want = moment_sum_closed(kind, ell, x, z)
                worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    doc = {"clouds": clouds, "ell_max": ell_max, "worst_rel_err": worst,
           "ok": worst <= tol}
    rc.emit("verify_moments", doc)
    rc.finish("verify moments", {"clouds": clouds, "ell_max": ell_max})
    click.echo(f"moment identities: worst rel err {worst:.3e}")
    if not doc["ok"]:
        sys.exit(1)


@verify.command("expansion")
@click.option("--r", "r", type=int, required=True)
@click.option("--d", type=float, required=True)
@click.option("--lambda", "lam", type=float, required=True)
@click.option("--offspring", type=click.Choice(["point", "poisson"]),
              default="point", show_default=True)
@click.pass_context
def verify_expansion(ctx, r, d, lam, offspring):
    from .expansion import fit_local_map
    rc = _run_context(ctx)
    res = fit_local_map(r, _offspring(offspring, d), lam)
    ok = res.get("degenerate") or (res["A_rel_err"] <= 0.01
                                   and res["B_rel_err"] <= 0.10)
    doc = dict(res)
    doc["ok"] = bool(ok)
    rc.emit("verify_expansion", doc)
    rc.finish("verify expansion", {"r": r, "d": d, "lambda": lam,
                                   "offspring": offspring})
    if not ok:
        sys.exit(1)


@verify.command("truncation")
@click.option("--offspring", type=click.Choice(["point", "poisson", "both"]),
              default="both", show_default=True)
@click.pass_context
def verify_truncation(ctx, offspring):
    from .expansion import truncation_check
    rc = _run_context(ctx)
    kinds = ["point", "poisson"] if offspring == "both" else [offspring]
    out = {}
    for kind in kinds:
        ds = [2, 5, 10, 20, 50] if kind == "point" else [2.5, 7.5, 12.0, 33.0, 50.0]
        res = truncation_check(kind, ds)
        out[kind] = {"C_fitted": res["C_fitted"]}
    doc = {"results": out, "ok": all(v["C_fitted"] < 10 for v in out.values())}
    rc.emit("verify_truncation", doc)
    rc.finish("verify truncation", {"offspring": offspring})
    if not doc["ok"]:
        sys.exit(1)


def _random_exact_cloud(rng: np.random.Generator, max_pairs: int = 4):
    k = int(rng.integers(1, max_pairs + 1))
    deltas = rng.uniform(0.0, 0.5, size=k)
    w = rng.dirichlet(np.ones(k))
    return bms.from_delta_distribution(list(zip(deltas.tolist(), w.tolist())))


# ---------------------------------------------------------------------------
# hsbm

@main.group()
def hsbm():
    """Hypergraph block-model sampling and recovery."""


@hsbm.command("sample")
@click.option("--n", type=int, required=True)
@click.option("--r", "r", type=int, required=True)
@click.option("--a", type=float, required=True)
@click.option("--b", type=float, required=True)
@click.option("--stem", default="instance", show_default=True,
              help="File stem for <stem>.graph.json / <stem>.truth.json.")
@click.pass_context
def hsbm_sample(ctx, n, r, a, b, stem):
    rc = _run_context(ctx)
    params = HsbmParams(n, r, a, b)
    rng = rngs.stream(rc.seed, "hsbm-sample")
    truth, graph = sample_hsbm(params, rng)
    if rc.out is None:
        click.echo(graph.to_json())
        click.echo(truth.to_json())
        return
    gpath = rc.out / f"{stem}.graph.json"
    tpath = rc.out / f"{stem}.truth.json"
    rc.out.mkdir(parents=True, exist_ok=True)
    gpath.write_text(graph.to_json() + "\n")
    tpath.write_text(truth.to_json() + "\n")
    rc.outputs.extend([gpath, tpath])
    rc.finish("hsbm sample", {"n": n, "r": r, "a": a, "b": b})
    click.echo(f"wrote {gpath} ({graph.edge_count} edges)")


@hsbm.command("recover")
@click.option("--in", "graph_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--mode", type=click.Choice(["exhaustive", "local"]),
              default="exhaustive", show_default=True)
@click.option("--budget", type=int, default=1_000_000, show_default=True)
@click.option("--a", type=float, required=True,
              help="Monochromatic rate used for the count window.")
@click.option("--b", type=float, default=0.0,
              help="Polychromatic rate (recorded only).")
@click.option("--window-scale", type=float, default=1.0, show_default=True)
@click.pass_context
def hsbm_recover(ctx, graph_path, mode, budget, a, b, window_scale):
    rc = _run_context(ctx)
    graph = Hypergraph.from_json(graph_path.read_text())
    windows = windows_for(HsbmParams(graph.n, graph.r, a, b),
                          scale=window_scale)
    if mode == "exhaustive":
        result = recover_exhaustive(graph, windows, threads=rc.threads)
    else:
        rng = rngs.stream(rc.seed, "hsbm-recover")
        result = recover_local_search(graph, windows, budget, rng)
    signs = (None if result.failed else
             "".join("+" if v > 0 else "-" for v in result.partition.signs))
    doc = {
        "mode": mode,
        "failed": result.failed,
        "signs": signs,
        "in_community": result.in_community,
        "n_plus": result.n_plus,
        "diagnostics": result.diagnostics,
    }
    rc.emit("hsbm_recover", doc)
    rc.finish("hsbm recover", {"in": str(graph_path), "mode": mode,
                               "budget": budget, "a": a, "b": b,
                               "window_scale": window_scale})
    click.echo("failure" if result.failed else
               f"found partition, {result.in_community} in-community edges")


@hsbm.command("eval")
@click.option("--truth", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--guess", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.pass_context
def hsbm_eval(ctx, truth, guess):
    rc = _run_context(ctx)
    X = Partition.from_json(Path(truth).read_text())
    Y = Partition.from_json(Path(guess).read_text())
    d_h, ov = hamming_overlap(X, Y)
    doc = {"hamming": d_h, "overlap": ov}
    rc.emit("hsbm_eval", doc)
    rc.finish("hsbm eval", {"truth": str(truth), "guess": str(guess)})


# ---------------------------------------------------------------------------
# table1 and selftest

@main.command("table1")
@click.pass_context
def table1_cmd(ctx):
    """Solved lambda0 for r = 5..10 next to the reference values."""
    rc = _run_context(ctx)
    rows = table1()
    rc.emit("table1", {"rows": rows}, csv_rows=rows, want_csv=True)
    rc.finish("table1", {})
    for row in rows:
        click.echo(f"r={row['r']}: lambda0={row['lambda0_rounded']:+.5f} "
                   f"reference={row['reference']:+.5f} "
                   f"{'match' if row['match'] else 'MISMATCH'}")
    if not all(row["match"] for row in rows):
        sys.exit(1)


@main.command("selftest")
@click.pass_context
def selftest(ctx):
    """Fast invariant suite; exits 0 when every check passes."""
    rc = _run_context(ctx)
    rng = rngs.stream(rc.seed, "selftest")
    checks: list[tuple[str, bool]] = []

    deltas = rng.uniform(0, 0.5, size=1000)
    caps = np.array([bms.chi2_capacity(bms.make_bsc(float(d))) for d in deltas])
    checks.append(("bsc capacity identity",
                   bool(np.allclose(caps, (1 - 2 * deltas) ** 2, atol=1e-14))))

    cloud = _random_exact_cloud(rng)
    checks.append(("pairing validation", bms.validate(cloud)["ok"]))

    xy = rng.uniform(-20, 20, size=(2000, 2))
    xy = xy[xy.sum(axis=1) >= 0]
    lhs = np.tanh(xy[:, 0]) + np.tanh(xy[:, 1])
    rhs = 2 * np.tanh(xy.sum(axis=1) / 2)
    checks.append(("tanh doubling bound", bool(np.all(lhs <= rhs + 1e-12))))

    xs = rng.uniform(0, 0.5, size=(2000, 2))
    x, y = np.minimum(xs[:, 0], xs[:, 1]), np.maximum(xs[:, 0], xs[:, 1])
    from .thresholds import binary_kl
    kl = np.array([binary_kl(float(a_), float(b_)) for a_, b_ in zip(x, y)])
    quad = (x - y) ** 2 / (2 * y * (1 - y))
    checks.append(("kl quadratic bound", bool(np.all(kl >= quad - 1e-12))))

    s = rng.uniform(0, 1, size=500)
    gv, _ = g_rw(2, 1.0, s, GaussHermite(101))
    checks.append(("g below identity", bool(np.all(gv <= s + 1e-12))))

    rows = table1()
    checks.append(("table1 reproduction", all(r["match"] for r in rows)))

    doc = {"checks": [{"name": n, "ok": ok} for n, ok in checks],
           "ok": all(ok for _, ok in checks)}
    rc.emit("selftest", doc)
    rc.finish("selftest", {})
    for nm, ok in checks:
        click.echo(f"{'PASS' if ok else 'FAIL'}  {nm}")
    if not doc["ok"]:
        sys.exit(1)


def entry() -> int:
    try:
        main(standalone_mode=False)
        return 0
    except HplError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.exceptions.Abort:
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(entry())
