"""``chainlab run <experiment>``: reproducible bound experiments.

Each run writes ``report.json`` (config, rows, assertions), ``table.csv``
and ``plot.svg`` into the output directory.  Exit code 0 when every
assertion holds, 1 when one fails (the message names the criterion), 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bodies import Euclidean, EuclideanBall, LqEllipsoid, Octahedron, PerturbedSimplex, body_from_dict
from .chaining import build_pool, contraction_check, counterexample_check
from .gaussian import SandwichConfig, sandwich_report

EXPERIMENTS = ("ellipsoid", "octahedron", "counterexample", "contraction", "sandwich")

DEFAULTS = {
    "ellipsoid": {"d": [8, 16, 32, 64], "q": 2.0, "decay": "k^-0.5*log"},
    "octahedron": {"d": [64, 256], "decay": "log^-0.5"},
    "counterexample": {"d": [16], "eps": 0.25},
    "contraction": {"d": [4], "q": 2.0, "t": [0.5, 1, 2, 4], "n_max": 2},
    "sandwich": {"d": [8]},
}
COMMON = {"p": 2.0, "seed": 0, "samples": 100_000, "n_max": 4, "pool_size": 6000,
          "workers": 1, "out": None}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


def parse_decay(spec):
    """Semiaxis profile from ``k^-X``, ``k^-X*log`` or ``log^-X``.

    ``*log`` divides by ``log(k + 2)``; ``log^-X`` is ``log(k + 1)^-X``.
    """
    s = spec.replace(" ", "")
    m = re.fullmatch(r"k\^(-?[0-9.]+)(\*log)?", s)
    if m:
        x, with_log = float(m.group(1)), bool(m.group(2))
        return lambda k: k ** x / (math.log(k + 2) if with_log else 1.0)
    m = re.fullmatch(r"log\^(-?[0-9.]+)", s)
    if m:
        x = float(m.group(1))
        return lambda k: math.log(k + 1) ** x
    raise UsageError(f"bad decay {spec!r}; expected k^-X, k^-X*log or log^-X")


def semiaxes(decay, d):
    f = parse_decay(decay)
    return tuple(float(f(k)) for k in range(1, d + 1))


def make_config(experiment, file_cfg=None, overrides=None):
    if experiment not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {experiment!r}")
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[experiment])
    for src in (file_cfg or {}, overrides or {}):
        for k, v in src.items():
            if v is not None:
                cfg[k.replace("-", "_")] = v
    cfg["experiment"] = experiment
    validate(cfg)
    return cfg


def validate(cfg):
    d = cfg.get("d")
    if not d or any(int(v) != v or v < 1 for v in d):
        raise UsageError("d must be a nonempty list of positive integers")
    cfg["d"] = [int(v) for v in d]
    if cfg["p"] <= 0:
        raise UsageError("p must be positive")
    if cfg["samples"] < 100:
        raise UsageError("samples must be >= 100")
    if not 0 <= cfg["n_max"] <= 4:
        raise UsageError("n_max must lie in 0..4")
    if cfg.get("q") is not None and cfg["q"] <= 1:
        raise UsageError("q must be > 1")
    if cfg["experiment"] == "counterexample":
        if not 0 < cfg["eps"] < 1:
            raise UsageError("eps must lie in (0, 1)")
        if min(cfg["d"]) < 2:
            raise UsageError("d must be >= 2")
    if "decay" in cfg and cfg["experiment"] in ("ellipsoid", "octahedron"):
        parse_decay(cfg["decay"])
    if cfg["experiment"] == "sandwich" and cfg.get("body") is not None:
        try:
            body_from_dict(cfg["body"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad body: {exc}") from exc


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _assertion(criterion, name, passed, detail):
    return {"criterion": criterion, "name": name, "passed": bool(passed), "detail": detail}


def _bounds_row(body, cfg, d, extra=None):
    pool = build_pool(body, Euclidean(), cfg["pool_size"], cfg["seed"])
    rep = sandwich_report(body, Euclidean(), SandwichConfig(
        p=cfg["p"], samples=cfg["samples"], seed=cfg["seed"], n_max=cfg["n_max"],
        pool_size=cfg["pool_size"]), pool=pool)
    prof = pool.profile(cfg["n_max"])
    row = {
        "d": d,
        "dudley": rep.dudley,
        "dudley_truncated": rep.truncated["dudley"],
        "interpolation": rep.interpolation,
        "interpolation_truncated": rep.truncated["interpolation"],
        "tail": rep.tail,
        "best_a": rep.best_a,
        "trivial_lower": rep.trivial_lower,
        "gamma_upper_certified": rep.gamma_upper_certified,
        "mc": rep.mc.mean,
        "mc_stderr": rep.mc.stderr,
        "upper_brackets": [float(v) for v in prof.upper],
        "lower_brackets": [float(v) for v in prof.lower],
    }
    if rep.qconvex is not None:
        row["qconvex"] = rep.qconvex
    row.update(extra or {})
    return row


def _ellipsoid_row(cfg, d):
    b = semiaxes(cfg["decay"], d)
    q = cfg["q"]
    r = q / (q - 1)
    sigma = sum(v ** r for v in b) ** (1 / r)
    return _bounds_row(LqEllipsoid(q, b), cfg, d, {"sigma": sigma})


def _octahedron_row(cfg, d):
    b = semiaxes(cfg["decay"], d)
    sigma = max(v * math.sqrt(math.log(i + 1)) for i, v in enumerate(b, start=1))
    return _bounds_row(Octahedron(b), cfg, d, {"sigma": sigma})


def _counterexample_row(cfg, d):
    eps = cfg["eps"]
    chk = counterexample_check(d, eps, cfg.get("t"), seed=cfg["seed"])
    row = _bounds_row(PerturbedSimplex(d, eps), cfg, d)
    row.update({k: chk[k] for k in ("eps", "t", "guarantee", "passed", "tested", "members",
                                    "v_norm", "residual", "simplex_ratio")})
    row["improvement"] = row["dudley"] / row["interpolation"]
    row["flag"] = "no-improvement confirmed" if row["improvement"] < 2 else "improvement found"
    return row


def _contraction_rows(cfg, d):
    b = tuple(2.0 ** -k for k in range(d))
    q = cfg["q"]
    rep = contraction_check(LqEllipsoid(q, b), Euclidean(), q, tuple(cfg["t"]), cfg["n_max"],
                            seed=cfg["seed"], pool_size=cfg["pool_size"])
    return [dict(r, d=d, q=q) for r in rep["rows"]]


def _sandwich_row(cfg, d):
    body = body_from_dict(cfg["body"]) if cfg.get("body") else EuclideanBall(1.0, d)
    rep = sandwich_report(body, Euclidean(), SandwichConfig(
        p=cfg["p"], samples=cfg["samples"], seed=cfg["seed"], n_max=cfg["n_max"],
        pool_size=cfg["pool_size"]))
    out = rep.to_dict()
    out.pop("config")
    out["d"] = body.dim
    return out


_ROW = {
    "ellipsoid": _ellipsoid_row,
    "octahedron": _octahedron_row,
    "counterexample": _counterexample_row,
    "contraction": _contraction_rows,
    "sandwich": _sandwich_row,
}


def _assertions(cfg, rows):
    exp = cfg["experiment"]
    out = []
    if exp == "ellipsoid":
        ratios = [r["interpolation"] / r["sigma"] for r in rows]
        out.append(_assertion("AC5", "interpolation/sigma within [0.2, 50]",
                              all(0.2 <= v <= 50 for v in ratios), ratios))
        dud = [r["dudley"] / r["sigma"] for r in rows]
        out.append(_assertion("AC5", "dudley/sigma strictly increasing in d",
                              all(a < b for a, b in zip(dud, dud[1:])), dud))
    elif exp == "octahedron":
        for r in rows:
            out.append(_assertion("AC6", f"d={r['d']}: interpolation <= 25 sigma",
                                  r["interpolation"] <= 25 * r["sigma"],
                                  r["interpolation"] / r["sigma"]))
            out.append(_assertion("AC6", f"d={r['d']}: interpolation < dudley",
                                  r["interpolation"] < r["dudley"],
                                  [r["interpolation"], r["dudley"]]))
            band = [r["trivial_lower"] / 4, 4 * r["gamma_upper_certified"]]
            out.append(_assertion("AC6", f"d={r['d']}: mc within sandwich band",
                                  band[0] <= r["mc"] <= band[1], [r["mc"]] + band))
    elif exp == "counterexample":
        for r in rows:
            if r["guarantee"]:
                out.append(_assertion("AC4", f"d={r['d']}: certificate on convex combinations",
                                      r["passed"], r["residual"]))
            out.append(_assertion("AC4", f"d={r['d']}: dudley/interpolation < 2",
                                  r["improvement"] < 2, r["improvement"]))
    elif exp == "contraction":
        bad = [r for r in rows if not r["ok"]]
        out.append(_assertion("AC7", "entropy contraction holds within slack", not bad,
                              len(bad)))
    elif exp == "sandwich":
        for r in rows:
            for name, ok in sorted(r["checks"].items()):
                out.append(_assertion("AC6", f"d={r['d']}: {name}", ok, r["ratios"]))
    return out


def _run_one(args):
    cfg, d = args
    res = _ROW[cfg["experiment"]](cfg, d)
    return res if isinstance(res, list) else [res]


def run(cfg):
    """Run a validated config; returns the report dict."""
    jobs = [(cfg, d) for d in cfg["d"]]
    if cfg["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as ex:
            parts = list(ex.map(_run_one, jobs))
    else:
        parts = [_run_one(j) for j in jobs]
    rows = [r for part in parts for r in part]
    assertions = _assertions(cfg, rows)
    return {
        "experiment": cfg["experiment"],
        "config": {k: v for k, v in cfg.items() if k not in ("out", "workers")},
        "rows": rows,
        "assertions": assertions,
        "passed": all(a["passed"] for a in assertions),
    }


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

_SERIES = {
    "ellipsoid": ("d", ["dudley", "interpolation", "sigma", "mc"]),
    "octahedron": ("d", ["dudley", "interpolation", "sigma", "mc", "trivial_lower"]),
    "counterexample": ("d", ["dudley", "interpolation", "mc", "trivial_lower"]),
    "contraction": ("t", ["lhs", "rhs"]),
    "sandwich": ("d", ["dudley", "interpolation", "gamma_upper_certified", "trivial_lower"]),
}
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(v):
    return f"{v:.6g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_table(report, path):
    rows = report["rows"]
    keys = []
    for r in rows:
        for k, v in r.items():
            if k not in keys and not isinstance(v, (list, dict)):
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r[k]) if isinstance(r.get(k), float) else r.get(k, "") for k in keys])


def emit_plot(report, path, width=640, height=400):
    """Deterministic SVG of bound curves with a log-scaled y axis."""
    rows = report["rows"]
    if not rows:
        raise ValueError("empty report")
    xkey, names = _SERIES[report["experiment"]]
    names = [n for n in names if any(isinstance(r.get(n), (int, float)) for r in rows)]
    groups = {}
    for r in rows:
        label = r.get("n")
        for name in names:
            v = r.get(name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0:
                key = name if label is None else f"{name} n={label}"
                groups.setdefault(key, []).append((float(r[xkey]), float(v)))
    xs = sorted({x for pts in groups.values() for x, _ in pts}) or [1.0]
    ys = [y for pts in groups.values() for _, y in pts] or [1.0]
    lx0, lx1 = math.log10(min(xs)), math.log10(max(xs))
    ly0, ly1 = math.floor(math.log10(min(ys))), math.ceil(math.log10(max(ys)))
    if lx1 == lx0:
        lx0, lx1 = lx0 - 0.5, lx1 + 0.5
    if ly1 == ly0:
        ly1 = ly0 + 1
    left, right, top, bottom = 70, width - 170, 30, height - 50

    def px(x):
        return left + (math.log10(x) - lx0) / (lx1 - lx0) * (right - left)

    def py(y):
        return bottom - (math.log10(y) - ly0) / (ly1 - ly0) * (bottom - top)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
           f'{report["experiment"]}</text>',
           f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>']
    for e in range(ly0, ly1 + 1):
        y = py(10.0 ** e)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{right}" y2="{y:.2f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{_fmt(10.0 ** e)}</text>')
    for x in xs:
        out.append(f'<text x="{px(x):.2f}" y="{bottom + 16}" text-anchor="middle">{_fmt(x)}</text>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="{height - 12}" text-anchor="middle">'
               f'{xkey}</text>')
    for i, (name, pts) in enumerate(sorted(groups.items())):
        color = _COLORS[i % len(_COLORS)]
        pts = sorted(pts)
        if len(pts) > 1:
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}">'
                       f'<title>{name} {xkey}={_fmt(x)}: {_fmt(y)}</title></circle>')
        ly = top + 14 * i
        out.append(f'<rect x="{right + 12}" y="{ly}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{right + 26}" y="{ly + 9}">{name}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def write_outputs(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = _jsonable(report)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_table(doc, out / "table.csv")
    emit_plot(doc, out / "plot.svg")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from exc


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers: {text}")
    return [int(v) for v in vals]


def build_parser():
    ap = argparse.ArgumentParser(prog="chainlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("experiment", choices=EXPERIMENTS)
    r.add_argument("--config", type=Path, help="JSON config; flags override its entries")
    r.add_argument("--d", type=_ints, help="dimension(s), comma separated")
    r.add_argument("--q", type=float)
    r.add_argument("--p", type=float)
    r.add_argument("--eps", type=float)
    r.add_argument("--t", type=_floats, help="t values for the contraction experiment")
    r.add_argument("--seed", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--n-max", type=int, dest="n_max")
    r.add_argument("--pool-size", type=int, dest="pool_size")
    r.add_argument("--decay", help="semiaxes: k^-X, k^-X*log or log^-X")
    r.add_argument("--workers", type=int, help="parallel d-sweep entries")
    r.add_argument("--out", type=Path, help="output directory (default: ./<experiment>)")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    file_cfg = {}
    try:
        if args.config is not None:
            file_cfg = json.loads(args.config.read_text())
            if not isinstance(file_cfg, dict):
                raise UsageError("config must be a JSON object")
        overrides = {k: getattr(args, k) for k in
                     ("d", "q", "p", "eps", "t", "seed", "samples", "n_max", "pool_size",
                      "decay", "workers")}
        cfg = make_config(args.experiment, file_cfg, overrides)
    except (UsageError, OSError, json.JSONDecodeError) as exc:
        print(f"chainlab: error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or Path(file_cfg.get("out") or args.experiment)
    report = run(cfg)
    write_outputs(report, out_dir)
    for a in report["assertions"]:
        status = "PASS" if a["passed"] else "FAIL"
        print(f"{status} {a['criterion']} {a['name']}")
    if not report["passed"]:
        failed = sorted({a["criterion"] for a in report["assertions"] if not a["passed"]})
        print(f"chainlab: assertion failure ({', '.join(failed)})", file=sys.stderr)
        return 1
    print(f"wrote {out_dir}/report.json, table.csv, plot.svg")
    return 0


if __name__ == "__main__":
    sys.exit(main())
