"""Batch runner: ``steinthermo --config run.toml [COMMAND]``.

The command comes from the positional argument or the config's ``command``
key; its parameters live in the config table of the same name.  Tables are
written as CSV and reports as JSON (sorted keys), so identical
``(config, seed)`` pairs give byte-identical files.  Exit codes: 0 pass,
1 invariant failure, 2 usage or configuration error.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import ergodic as eg
from . import stein as st
from . import suites
from . import thermo as th
from .divergences import d_hyp
from .errors import CapError, CertificationError, PreconditionError, SteinThermoError
from .linalg import matrix_from_json, tensor_power

COMMANDS = ("divergence-audit", "stein-scan", "ergodic-scan", "thermo-convert",
            "counterexample", "property-suite")

ANCHORS = {
    "divergence.ordering": "-ln tr sigma <= D_0 <= D_1/2 <= D_1 <= D_max",
    "divergence.dh-certificate": "Neyman-Pearson D_H agrees with independent SDP primal and dual values",
    "thermo.gpm": "measure-and-prepare map sends rho to rho' and sigma to sigma' with stochastic M",
    "thermo.monotonicity": "D_0, D_1/2, D_1, D_max do not increase under Gibbs-preserving maps",
    "thermo.thermomajorization": "thermomajorization curve test equals Gibbs-stochastic LP feasibility",
    "stein.w-conditions": "W = Pi_rho Pi_rel satisfies the four sufficient conditions",
    "stein.w-bounds": "exact (1/n) D_H lies between the primal and dual candidate bounds",
    "stein.quantum-trend": "(1/n) D_H of i.i.d. qubit states approaches the single-letter KL",
    "stein.toy-collapse": "toy sequence: KL rate near beta while smoothed rates vanish",
    "ergodic.classical-collapse": "(1/n) D_H of a Markov source approaches the KL rate",
    "ergodic.interval": "every emitted divergence lies inside its certification interval",
}


class InvariantFailure(Exception):
    def __init__(self, anchor: str, message: str):
        super().__init__(f"[{anchor}] {message}")
        self.anchor = anchor


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# config helpers


def _req(params: dict, key: str):
    if key not in params:
        raise ConfigError(f"missing parameter '{key}'")
    return params[key]


def _matrix(obj, name: str = "matrix") -> np.ndarray:
    """Matrix from JSON form, a nested list, a flat list (diagonal) or a rotated qubit spectrum."""
    if isinstance(obj, dict):
        if {"dim", "re", "im"} <= obj.keys():
            return matrix_from_json(obj)
        if "eigenvalues" in obj:
            w = np.asarray(obj["eigenvalues"], float)
            if len(w) != 2:
                raise ConfigError(f"{name}: rotated spectra are qubit-only")
            a = float(obj.get("angle", 0.0))
            u = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
            return u @ np.diag(w) @ u.T
        raise ConfigError(f"{name}: unrecognized matrix table")
    arr = np.asarray(obj, float)
    if arr.ndim == 1:
        return np.diag(arr)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        return arr
    raise ConfigError(f"{name}: expected a square matrix")


def _process(obj, name: str) -> eg.FiniteProcess:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{name}: process table needs a 'kind'")
    kind = obj["kind"].lower()
    try:
        if kind == "iid":
            return eg.iid(_req(obj, "p"))
        if kind == "markov":
            return eg.markov(_req(obj, "transition"))
        if kind == "ising":
            return eg.ising(float(_req(obj, "beta")), float(obj.get("j", 1.0)), float(obj.get("field", 0.0)))
        if kind == "gibbs":
            return eg.induced_gibbs_chain(_req(obj, "coupling"), float(_req(obj, "beta")))
        if kind == "mixture":
            comps = [_process(c, f"{name}.components") for c in _req(obj, "components")]
            return eg.mixture(comps, _req(obj, "weights"))
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    raise ConfigError(f"{name}: unknown kind '{obj['kind']}'")


def _f(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x + 0.0)


def _csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_f(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue())


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) + 0.0 if np.isfinite(x) else _f(x)
    return x


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _map(fn, items, jobs: int):
    """Order-preserving map, in worker processes when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_star, [(fn, it) for it in items]))


def _star(arg):
    fn, it = arg
    return fn(*it)


# --------------------------------------------------------------------------
# commands


def _audit_one(seed: int, index: int, dims, eta: float):
    r, s = suites.random_pair(seed, index, tuple(dims))
    rows = suites.ordering_rows(r, s, index)
    try:
        res = d_hyp(r, s, eta)
        dh = (res.value, res.lower, res.upper, "")
    except CertificationError as exc:
        dh = (float("nan"), float("nan"), float("nan"), str(exc))
    return r.shape[0], rows, dh


def run_divergence_audit(p: dict, seed: int, out: Path, jobs: int) -> list[str]:
    count = int(p.get("count", 20))
    dims = p.get("dims", [2, 8])
    eta = float(p.get("eta", 0.5))
    res = _map(_audit_one, [(seed, i, dims, eta) for i in range(count)], jobs)
    table, fails = [], []
    for i, (d, rows, dh) in enumerate(res):
        for row in rows:
            table.append((i, d, row.link, row.slack, int(row.passed)))
            if not row.passed:
                fails.append(f"[divergence.ordering] instance {i}: {row.link} violated by {-row.slack:.3g}")
        table.append((i, d, f"D_H^{eta}", dh[0], int(not dh[3])))
        if dh[3]:
            fails.append(f"[divergence.dh-certificate] instance {i}: {dh[3]}")
    _csv(out / "divergence_audit.csv", ["instance", "dim", "check", "value", "passed"], table)
    return fails


def _site_state(p: dict):
    rho = _matrix(_req(p, "rho"), "rho")
    h = _matrix(_req(p, "hamiltonian"), "hamiltonian")
    return rho, h, float(_req(p, "beta"))


def run_stein_scan(p: dict, seed: int, out: Path, jobs: int) -> list[str]:
    rho, h, beta = _site_state(p)
    etas = [float(x) for x in p.get("etas", [0.3, 0.5, 0.7])]
    ns = [int(x) for x in p.get("ns", list(range(2, 13)))]
    rows = st.quantum_rate_scan(rho, h, beta, etas, ns)
    _csv(out / "stein_scan.csv", ["n", "eta", "rate", "lower", "upper", "kl"],
         [(r.n, r.eta, r.rate, r.lower, r.upper, r.kl) for r in sorted(rows, key=lambda r: (r.n, r.eta))])
    fails = []
    for r in rows:
        if not r.lower - 1e-9 <= r.rate <= r.upper + 1e-9:
            fails.append(f"[ergodic.interval] n={r.n} eta={r.eta}: rate outside its interval")
    tol = p.get("tolerance")
    if tol is not None:
        nmax = max(ns)
        for r in rows:
            if r.n == nmax and abs(r.rate - r.kl) > float(tol):
                fails.append(f"[stein.quantum-trend] n={r.n} eta={r.eta}: |rate - KL| = "
                             f"{abs(r.rate - r.kl):.4g} > {tol}")
    w = p.get("w")
    if w is not None:
        n = int(_req(w, "n"))
        eps = float(_req(w, "eps"))
        eta_w = float(w.get("eta", 0.5))
        g = th.gibbs(h, beta).state
        rn, gn = tensor_power(rho, n), tensor_power(g, n)
        pi_rho = st.iid_typical_projector(rho, n, eps)
        basis, wts = st.product_weights(g, n)
        m = -float(np.real(np.trace(rho @ _logm_psd(g))))
        pi_rel = st.relative_typical_projector(wts, n, eps, m, basis=basis)
        c = float(w.get("c", rows[0].kl))
        rep = st.build_and_verify_W(rn, gn, pi_rho, pi_rel, c, eps, n=n,
                                    trace_floor=float(w.get("trace_floor", 0.85)), eta=eta_w)
        exact = st.quantum_rate_scan(rho, h, beta, [eta_w], [n])[0].rate
        report = rep.to_dict()
        report["exact_rate"] = exact
        _json(out / "typicality.json", report)
        for k, ok in sorted(rep.condition_flags.items()):
            if not ok:
                fails.append(f"[stein.w-conditions] condition ({k}) slack {rep.slacks[k]:.4g}")
        if rep.holds and not rep.bounds["lemma_lower"] - 1e-9 <= exact <= rep.bounds["lemma_upper"] + 1e-9:
            fails.append(f"[stein.w-bounds] exact rate {exact:.6g} outside candidate bounds")
    return fails


def _logm_psd(a):
    w, v = np.linalg.eigh(a)
    return (v * np.log(w)) @ v.conj().T


def run_ergodic_scan(p: dict, seed: int, out: Path, jobs: int) -> list[str]:
    src = _process(_req(p, "source"), "source")
    ref = _process(_req(p, "reference"), "reference")
    if not ref.is_markov:
        raise ConfigError("reference must be IID, Markov or Gibbs")
    etas = [float(x) for x in p.get("etas", [0.3, 0.5, 0.7])]
    ns = [int(x) for x in p.get("ns", list(range(4, 13)))]
    for n in ns:
        if float(src.alphabet) ** n > eg.MARGINAL_CAP:
            raise ConfigError(f"n={n} exceeds the marginal cap")
    rows = []
    for part in _map(eg.spectral_rate_scan, [(src, ref, etas, [n]) for n in ns], jobs):
        rows.extend(part)
    rows.sort(key=lambda r: (r.n, r.eta))
    _csv(out / "ergodic_scan.csv", ["n", "eta", "value", "lower", "upper"],
         [(r.n, r.eta, r.value, r.lower, r.upper) for r in rows])
    kl = eg.kl_rate(src, ref)
    summary = {"kl_rate": kl, "source": src.describe(), "reference": ref.describe()}
    grid = p.get("nagaoka_grid")
    if grid is not None:
        nag = eg.nagaoka_scan(src, ref, [float(a) for a in grid], ns)
        _csv(out / "nagaoka.csv", ["n", "a", "mass"], nag)
    _json(out / "ergodic_summary.json", summary)
    fails = []
    for r in rows:
        if not r.lower - 1e-12 <= r.value <= r.upper + 1e-12:
            fails.append(f"[ergodic.interval] n={r.n} eta={r.eta}: value outside its interval")
    tol = p.get("tolerance")
    if tol is not None:
        nmax = max(ns)
        for r in rows:
            if r.n == nmax and abs(r.value - kl) > float(tol):
                fails.append(f"[ergodic.classical-collapse] n={r.n} eta={r.eta}: "
                             f"|rate - KL| = {abs(r.value - kl):.4g} > {tol}")
    return fails


def run_thermo_convert(p: dict, seed: int, out: Path, jobs: int) -> list[str]:
    h = _matrix(_req(p, "hamiltonian"), "hamiltonian")
    beta = float(_req(p, "beta"))
    g = th.gibbs(h, beta)
    rho = _matrix(_req(p, "rho"), "rho")
    target = _matrix(_req(p, "target"), "target")
    eps = float(p.get("eps", 0.0))
    try:
        curve = th.tm_convertible(rho, target, g)
        lp = th.gibbs_stochastic_feasible(rho, target, g)
        wd = th.work_of_transition(rho, g, eps, "distill")
        wf = th.work_of_transition(target, g, eps, "form")
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from exc
    _json(out / "thermo_convert.json", {
        "convertible_curve": curve, "convertible_lp": lp,
        "distill_work": {"value": wd.value, "lower": wd.lower, "upper": wd.upper},
        "formation_work": {"value": wf.value, "lower": wf.lower, "upper": wf.upper},
        "eps": eps, "beta": beta})
    if curve != lp:
        return [f"[thermo.thermomajorization] curve test {curve} but LP {lp}"]
    return []


def run_counterexample(p: dict, seed: int, out: Path, jobs: int) -> list[str]:
    beta = float(p.get("beta", 1.0))
    ns = [int(x) for x in p.get("ns", [10, 20, 50])]
    eps = float(p.get("eps", 0.1))
    rows = st.toy_counterexample(beta, ns, eps)
    _csv(out / "counterexample.csv", ["n", "kl_rate", "d_zero_rate", "d_zero_rate_upper", "d_max_rate"],
         [(r.n, r.kl, r.d_zero, r.d_zero_upper, r.d_max) for r in rows])
    fails = []
    for r in rows:
        if r.d_zero > r.d_zero_upper + 1e-12:
            fails.append(f"[ergodic.interval] n={r.n}: D_0 subset value above its upper bound")
    return fails


def _suite_one(seed: int, index: int):
    return (suites.ordering_rows(*suites.random_pair(seed, index), index)
            + suites.gpm_rows(seed, index) + suites.tm_rows(seed, index))


SUITE_ANCHOR = {"ordering": "divergence.ordering", "gpm": "thermo.gpm",
                "monotonicity": "thermo.monotonicity", "thermomajorization": "thermo.thermomajorization"}


def run_property_suite(p: dict, seed: int, out: Path, jobs: int) -> list[str]:
    count = int(p.get("count", 20))
    rows = [r for part in _map(_suite_one, [(seed, i) for i in range(count)], jobs) for r in part]
    rows.sort(key=lambda r: (r.check, r.instance, r.link))
    _csv(out / "property_suite.csv", ["check", "instance", "link", "slack", "passed"],
         [(r.check, r.instance, r.link, r.slack, int(r.passed)) for r in rows])
    return [f"[{SUITE_ANCHOR[r.check]}] instance {r.instance}: {r.link} slack {r.slack:.3g}"
            for r in rows if not r.passed]


RUNNERS = {
    "divergence-audit": (run_divergence_audit, True),
    "stein-scan": (run_stein_scan, False),
    "ergodic-scan": (run_ergodic_scan, False),
    "thermo-convert": (run_thermo_convert, False),
    "counterexample": (run_counterexample, False),
    "property-suite": (run_property_suite, True),
}


def run(config: dict, seed: int | None = None, out: str | Path = ".", jobs: int = 1) -> int:
    """Execute one configured experiment; returns the exit code."""
    command = config.get("command")
    if command not in RUNNERS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}")
    fn, randomized = RUNNERS[command]
    if seed is None:
        seed = config.get("seed")
    if randomized and seed is None:
        raise ConfigError(f"{command} needs a seed")
    if seed is not None and not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    params = config.get(command, {})
    if not isinstance(params, dict):
        raise ConfigError(f"[{command}] must be a table")
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        fails = fn(params, seed if seed is not None else 0, outdir, max(1, int(jobs)))
    except (CapError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for f in fails:
        click.echo(f"invariant failed {f}", err=True)
    return 1 if fails else 0


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("command", required=False, type=click.Choice(COMMANDS))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML experiment file.")
@click.option("--seed", type=int, default=None, help="Unsigned 64-bit seed (overrides the config).")
@click.option("--out", default=".", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--jobs", default=1, type=click.IntRange(min=1), help="Worker processes.")
@click.option("--list-anchors", is_flag=True, help="Print the anchor map and exit.")
def main(command, config_path, seed, out, jobs, list_anchors):
    """Run a steinthermo experiment."""
    if list_anchors:
        for k in sorted(ANCHORS):
            click.echo(f"{k}\t{ANCHORS[k]}")
        sys.exit(0)
    config = {}
    if config_path is not None:
        try:
            config = tomllib.loads(Path(config_path).read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            click.echo(f"error: cannot read config: {exc}", err=True)
            sys.exit(2)
    if command is not None:
        config["command"] = command
    try:
        code = run(config, seed, out, jobs)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except SteinThermoError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    sys.exit(code)


if __name__ == "__main__":  # pragma: no cover
    main()
