"""Command-line runner: one subcommand per experiment, CSV outputs plus a manifest.

Usage::

    strobodet toy-sweep --config toy.json --out results/ --workers 4

Without ``--config`` the experiment runs with its default parameters. The
output directory is taken from ``--out``, else ``$STROBODET_OUT``, else the
config. ``--config`` also accepts a manifest written by an earlier run, which
reproduces that run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import EXPERIMENTS, default_config, load_config
from .evolve import IntegrationError
from .jpd import (
    DetectorSimulator,
    classify,
    naive_two_photon,
    reference_threshold,
    roc_from_records,
    weight_function,
)
from .multiplier import cascade_simulator, output_modes
from .nonrwa import validity_check
from .toy import MeasurementSchedule, default_window, detection_probability, emission_bookkeeping, sample_trajectory, sweep_rate

OUT_ENV = "STROBODET_OUT"

log = logging.getLogger("strobodet")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


class Run:
    """Collects output files and summary values for the manifest."""

    def __init__(self, cfg, out: Path):
        self.cfg = cfg
        self.out = out
        self.files: list[str] = []
        self.summary: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        write_csv(self.out / name, header, rows)
        self.files.append(name)

    def manifest(self) -> Path:
        outputs = {f: hashlib.sha256((self.out / f).read_bytes()).hexdigest() for f in self.files}
        doc = {
            "manifest_version": 1,
            "package_version": __version__,
            "experiment": self.cfg.experiment,
            "config": self.cfg.model_dump(mode="json"),
            "outputs": outputs,
            "summary": self.summary,
        }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def toy_sweep(run: Run) -> None:
    c = run.cfg
    mult = c.multiplier.build() if c.multiplier else None
    curve = sweep_rate(c.pulse.build(), c.gamma_a, c.rates, c.n_offsets, mult, c.workers)
    run.csv("toy_sweep.csv", ["rate", "eta_mean", "eta_min", "eta_max"],
            zip(curve.rates, curve.eta_mean, curve.eta_min, curve.eta_max))
    rate, eta = curve.peak
    run.summary.update(peak_rate=rate, peak_eta_mean=eta)


def toy_trajectory(run: Run) -> None:
    c = run.cfg
    pulse = c.pulse.build()
    sched = MeasurementSchedule(c.rate, default_window(pulse, c.gamma_a), c.offset)
    det = detection_probability(pulse, c.gamma_a, sched)
    meas = []
    for i in range(c.n_trajectories):
        tr = sample_trajectory(pulse, c.gamma_a, sched, seed=c.base_seed + i)
        run.csv(f"toy_trajectory_{i}.csv", ["t", "n_a", "n_u"], zip(tr.times, tr.n_a, tr.n_u))
        meas += [(i, j, t, p, o) for j, (t, p, o) in enumerate(zip(tr.measurement_times, tr.probabilities, tr.outcomes))]
    run.csv("toy_measurements.csv", ["trajectory", "j", "t", "p_click", "outcome"], meas)
    run.csv("toy_conditional.csv", ["j", "t", "p_conditional", "p_joint"],
            [(j, t, pc, pj) for j, (t, pc, pj) in enumerate(zip(det.times, det.p_conditional, det.p_joint))])
    run.summary.update(eta=det.eta, residual=det.residual)


def pulse_check(run: Run) -> None:
    c = run.cfg
    rec = emission_bookkeeping(c.pulse.build(), c.gamma_a)
    run.csv("pulse_check.csv", ["t", "u_sq", "n_u", "n_a", "flux"],
            zip(rec.times, rec.u_sq, rec.n_u, rec.n_a, rec.flux))
    k = int(np.argmax(rec.n_a))
    run.summary.update(emitted=rec.emitted, n_a_max=float(rec.n_a[k]), t_n_a_max=float(rec.times[k]))


def jpd_trajectory(run: Run) -> None:
    c = run.cfg
    params, sched = c.detector.build(), c.schedule.build()
    sim = DetectorSimulator(params, sched, c.pulse.build() if c.pulse else None)
    th = reference_threshold(sim.weight, params.gamma_b)
    rec, tr = sim.trajectory(c.base_seed)
    w = sim.weight
    run.csv("jpd_weight.csv", ["t", "w", "x_empty", "x_occupied"], zip(w.times, w.values, w.x_empty, w.x_occupied))
    run.csv("jpd_trajectory.csv", ["t", "J", "signal", "n_a", "x_b"],
            zip(tr.times, tr.current, tr.signal, tr.expectations["n_a"], tr.expectations["x_b"]))
    run.csv("jpd_outcomes.csv", ["j", "t_start", "O_j", "detected"],
            [(j, t, o, o < th) for j, (t, o) in enumerate(zip(sched.starts, rec.outcomes))])
    detected, first = classify(rec, th)
    run.summary.update(threshold=th, detected=detected, first_detection=first)


def _roc(run: Run, photon_sim: DetectorSimulator, dark_sim: DetectorSimulator) -> None:
    c = run.cfg
    params, sched = photon_sim.params, photon_sim.schedule
    photon = photon_sim.ensemble(c.n_trajectories, c.base_seed, c.workers)
    n_dark = -(-c.n_measurements // sched.count)
    dark = dark_sim.ensemble(n_dark, c.base_seed + c.n_trajectories, c.workers)
    run.csv("outcomes.csv", ["trajectory", "j", "O_j", "has_photon"],
            [(i, j, o, r.has_photon) for i, r in enumerate(photon + dark) for j, o in enumerate(r.outcomes)])
    roc = roc_from_records(photon, dark, c.thresholds, sched.rate)
    run.csv("roc.csv", ["O_th", "gamma_dark", "eta", "err_dark", "err_eta"],
            zip(roc.thresholds, roc.gamma_dark, roc.eta, roc.err_dark, roc.err_eta))
    run.csv("roc_naive_two_photon.csv", ["O_th", "gamma_dark", "eta_naive"],
            zip(roc.thresholds, roc.gamma_dark, naive_two_photon(roc.eta)))
    th = reference_threshold(photon_sim.weight, params.gamma_b)
    ref = roc_from_records(photon, dark, [th], sched.rate)
    run.summary.update(threshold=th, eta=float(ref.eta[0]), gamma_dark=float(ref.gamma_dark[0]))


def jpd_roc(run: Run) -> None:
    c = run.cfg
    params, sched = c.detector.build(), c.schedule.build()
    w = weight_function(params, sched)
    _roc(run, DetectorSimulator(params, sched, c.pulse.build(), weight=w), DetectorSimulator(params, sched, None, weight=w))


def cascade_roc(run: Run) -> None:
    c = run.cfg
    params, sched = c.detector.build(), c.schedule.build()
    w = weight_function(params, sched)
    photon = cascade_simulator(c.multiplier.build(), params, c.pulse.build(), sched, weight=w)
    # without input the multiplier stays in vacuum, so dark counts are those of the bare detector
    _roc(run, photon, DetectorSimulator(params, sched, None, weight=w))


def multiplier_modes(run: Run) -> None:
    c = run.cfg
    md = output_modes(c.multiplier.build(), c.pulse.build(), n_grid=c.n_grid)
    k = min(c.n_modes, len(md.occupations))
    cols = ["t", "re_u", "im_u"] + [f"{p}_v{i}" for i in range(k) for p in ("re", "im")]
    rows = zip(md.times, md.input_mode.real, md.input_mode.imag,
               *[part for i in range(k) for part in (md.modes[i].real, md.modes[i].imag)])
    run.csv("modes.csv", cols, rows)
    run.csv("spectra.csv", ["omega", "u_sq"] + [f"v{i}_sq" for i in range(k)],
            zip(md.omega, np.abs(md.input_spectrum) ** 2, *[np.abs(md.spectra[i]) ** 2 for i in range(k)]))
    run.csv("occupations.csv", ["i", "n_i"], enumerate(md.occupations))
    run.summary.update(
        total=md.total,
        top3_fraction=md.top_fraction(3),
        input_width=md.input_width,
        mode_widths=[float(x) for x in md.spectral_widths(k)],
    )


def rwa_check(run: Run) -> None:
    c = run.cfg
    points = []
    for g in c.gamma_a:
        res = validity_check(c.build(g))
        run.csv(f"rwa_check_{g:g}.csv", ["t", "n_a", "n_b"], zip(res.times, res.n_a, res.n_b))
        points.append({"gamma_a": g, "n_a_max": res.n_a_max, "gamma_dark_rot": res.gamma_dark_rot})
    run.summary["points"] = points


HANDLERS = {
    "toy-sweep": toy_sweep,
    "toy-trajectory": toy_trajectory,
    "pulse-check": pulse_check,
    "jpd-trajectory": jpd_trajectory,
    "jpd-roc": jpd_roc,
    "multiplier-modes": multiplier_modes,
    "cascade-roc": cascade_roc,
    "rwa-check": rwa_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strobodet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config or a manifest from an earlier run")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--workers", type=int, help="override worker count")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(args: argparse.Namespace):
    cfg = load_config(args.config) if args.config else default_config(args.command)
    if cfg.experiment != args.command:
        raise ValueError(f"config describes experiment {cfg.experiment!r}, not {args.command!r}")
    updates = {}
    if args.seed is not None:
        updates["base_seed"] = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ValueError("--workers must be >= 1")
        updates["workers"] = args.workers
    out = args.out or os.environ.get(OUT_ENV) or cfg.out_dir
    updates["out_dir"] = str(out)
    return cfg.model_copy(update=updates)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        run = Run(cfg, Path(cfg.out_dir))
        HANDLERS[cfg.experiment](run)
        path = run.manifest()
    except ValidationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IntegrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(run.summary, sort_keys=True))
    log.info("manifest written to %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
