"""
Numerical workbench for scattering in planar branching waveguides.

Computes transverse and pencil spectra, flux-normalized wave tables, classical and
augmented scattering matrices, unitarity sweeps, trapped-mode scans and the
Neumann-series model problem, as described by an INI run configuration.

Every run writes its outputs into one directory together with a manifest.json
listing each file with its SHA-256 checksum, the per-stage residuals and any
stage errors. The exit code is nonzero iff a stage failed (or, with --strict,
if anything was logged at WARNING or above).

Examples:
    waveguide_workbench scatter -c duct.ini -o out/duct -v
    waveguide_workbench trapped -c cross.ini --threads 8
"""

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from importlib.metadata import PackageNotFoundError, version

import numpy as np
from scipy.sparse.linalg import ArpackError

from .. import _defaults
from ..errors import ConfigError
from ..junction.closure import smallest_evanescent_rate
from ..junction.field_io import write_field
from ..junction.solver import assemble, solve_with_incoming
from ..model_problem.blending import ArmCoefficientProfile, blend
from ..model_problem.neumann_series import (
    ModelWaveSet,
    chain_wave_set,
    default_length,
    expand_in_chain_waves,
    neumann_series_wave,
    verify_pairings,
)
from ..modes.cross_section import (
    BoundaryKind,
    CrossSectionSpec,
    longitudinal_wavenumber,
    pencil_spectrum,
    transverse_spectrum,
)
from ..modes.wave_basis import normalize_basis, waves_in_strip
from ..scattering.export import (
    write_bracket_csv,
    write_matrix_json,
    write_oracle_json,
    write_sweep_csv,
    write_table_csv,
)
from ..scattering.matrices import augmented_S, classical_S, classical_T
from ..scattering.radiation_basis import radiation_basis_transform
from ..scattering.trapped_modes import kernel_count_report, scattering_sweep, trapped_mode_scan
from ..utilities.file_utils import sha256_of_file
from .config import read_config

logger = logging.getLogger(__name__)

PACKAGE = "waveguide_scattering"
MANIFEST = "manifest.json"
# Transverse modes listed per arm by the spectrum command
SPECTRUM_MODES = 8


@dataclass
class StageRecord:
    name: str
    residuals: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float
    stages: list
    outputs: dict
    warnings: int
    exit_code: int

    def write(self, directory):
        with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True, default=_json_default)
            f.write("\n")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    return str(value)


class WarningCounter(logging.Handler):
    """
    Counts records at WARNING or above, for --strict.
    """

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.count = 0

    def emit(self, record):
        self.count += 1


class _Run:
    def __init__(self, config, directory):
        self.config = config
        self.directory = directory
        self.rng = np.random.default_rng(config.seed)
        self.stages = []
        self.outputs = []
        self.geometry = None
        self.h = None

    def path(self, name):
        if name not in self.outputs:
            self.outputs.append(name)
        return os.path.join(self.directory, name)

    def wants(self, fmt):
        return fmt in self.config.output.formats

    @contextmanager
    def stage(self, name):
        record = StageRecord(name)
        self.stages.append(record)
        logger.info(f"Stage {name}")
        try:
            yield record
        except (ValueError, ArithmeticError, ArpackError) as e:
            record.error = f"{type(e).__name__}: {e}"
            logger.error(f"Stage {name} failed: {record.error}")

    def assemble(self, k, beta=None):
        p, n = self.config.physics, self.config.numerics
        return assemble(
            self.geometry,
            k,
            gamma=p.gamma,
            beta=beta or None,
            h=self.h,
            mode_cutoff=n.mode_cutoff,
            threshold_mode=p.threshold_mode,
            threshold_tol=n.threshold_tol,
        )


def _pencil_rate(run, k):
    return run.config.physics.beta or 2 * smallest_evanescent_rate(run.geometry.arms, k, run.h)


def _run_spectrum(run):
    with run.stage("transverse spectrum") as record:
        rows = []
        for arm in run.geometry.arms:
            count = min(arm.section.grid_points(run.h), SPECTRUM_MODES)
            exact = transverse_spectrum(arm.section, count, run.h, check_resolution=False)
            discrete = transverse_spectrum(arm.section, count, run.h, discrete=True, check_resolution=False)
            for n, (mu, mu_h) in enumerate(zip(exact.mu, discrete.mu)):
                rows.append([arm.arm_id, n, float(mu), float(mu_h), float(np.sqrt(max(mu, 0))),
                             float(np.sqrt(max(mu_h, 0)))])
        write_table_csv(["arm", "n", "mu", "mu_h", "threshold", "threshold_h"], rows, run.path("spectrum.csv"))
        record.residuals["modes"] = len(rows)

    if run.config.physics.k is None and run.config.physics.k_min is None:
        return
    with run.stage("pencil spectrum") as record:
        rows = []
        odd = 0
        for k in run.config.k_values():
            beta = _pencil_rate(run, k)
            for arm in run.geometry.arms:
                n_y = arm.section.grid_points(run.h)
                spectrum = transverse_spectrum(arm.section, n_y, run.h, discrete=True, check_resolution=False)
                pencil = pencil_spectrum(spectrum, k, beta, run.config.numerics.threshold_tol, run.h)
                odd += pencil.algebraic_multiplicity() % 2
                for p in pencil.points:
                    rows.append([float(k), arm.arm_id, p.transverse_index, float(p.lam.real), float(p.lam.imag),
                                 p.multiplicity, p.chain_length, p.is_threshold])
        header = ["k", "arm", "n", "lam_re", "lam_im", "multiplicity", "chain_length", "threshold"]
        write_table_csv(header, rows, run.path("pencil.csv"))
        record.residuals["odd_multiplicities"] = odd


def _normalization(wave):
    terms = getattr(wave, "terms", None)
    if terms:
        return abs(terms[0][0])
    return abs(getattr(wave, "normalization", 1.0))


def _run_modes(run):
    with run.stage("wave table") as record:
        rows = []
        deviation = 0.0
        for k in run.config.k_values():
            problem = run.assemble(k, run.config.physics.beta)
            basis = problem.basis
            G = basis.pairing_matrix()
            deviation = max(deviation, basis.canonical_deviation())
            n = basis.M_prime
            for i, wave in enumerate(basis.waves):
                ci, li = basis.slots[i % n]
                closure = problem.closures[ci]
                mode = closure.captured[li]
                lam = longitudinal_wavenumber(closure.spectrum.mu[mode.index], k, problem.h)
                q = G[i, i]
                rows.append([float(k), closure.arm_id, mode.index, mode.augmented, wave.direction.value,
                             float(lam.real), float(lam.imag), float(_normalization(wave)), float(q.real),
                             float(q.imag)])
        header = ["k", "arm", "n", "augmented", "direction", "lam_re", "lam_im", "normalization", "q_self_re",
                  "q_self_im"]
        write_table_csv(header, rows, run.path("modes.csv"))
        record.residuals["canonical_deviation"] = deviation


def _random_pair(rng, M, unitary):
    Z = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    if unitary:
        Q, R = np.linalg.qr(Z)
        return Q * (np.diag(R) / np.abs(np.diag(R))), np.zeros((M, M), dtype=complex)
    S_op = Z + M * np.eye(M)
    return S_op, rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))


def _run_scatter(run):
    beta = run.config.physics.beta
    transforms = run.config.numerics.transforms
    for i, k in enumerate(run.config.k_values()):
        with run.stage(f"scatter k={k:.12g}") as record:
            problem = run.assemble(k)
            T = classical_T(problem)
            S = classical_S(T, problem)
            record.residuals.update(
                M=S.M, unitarity_defect=S.unitarity_defect, inverse_defect=S.inverse_defect,
                cross_check_defect=S.cross_check_defect,
            )
            if run.wants("json"):
                write_matrix_json(T, run.path(f"T_classical_{i:03d}.json"))
                write_matrix_json(S, run.path(f"S_classical_{i:03d}.json"))
            if run.wants("txt") and problem.M:
                field_, _ = solve_with_incoming(problem, np.eye(problem.M)[0])
                write_field(field_, run.path(f"field_{i:03d}.txt"))
            if beta:
                Sa = augmented_S(run.assemble(k, beta), beta)
                record.residuals.update(
                    M_prime=Sa.M_prime, augmented_unitarity_defect=Sa.unitarity_defect,
                    augmented_inverse_defect=Sa.inverse_defect, min_eig_distance=Sa.distance_to_one(),
                )
                if run.wants("json"):
                    write_matrix_json(Sa, run.path(f"S_augmented_{i:03d}.json"))
            if transforms and S.M:
                rows = []
                for r in range(transforms):
                    unitary = r % 2 == 0
                    S_op, R_op = _random_pair(run.rng, S.M, unitary)
                    result = radiation_basis_transform(S_op, R_op, S, problem)
                    rows.append([float(k), r, unitary, result.residual])
                write_table_csv(["k", "draw", "unitary", "residual"], rows,
                                run.path(f"transforms_{i:03d}.csv"))
                record.residuals["transform_residual"] = max(row[3] for row in rows)


def _segments(plan):
    return [[float(s[0]), float(s[-1]), len(s)] for s in plan]


def _run_sweep(run):
    with run.stage("unitarity sweep") as record:
        beta = run.config.physics.beta or None
        plan, points = scattering_sweep(run.geometry, run.config.k_values(), beta, h=run.h,
                                        threads=run.config.threads)
        write_sweep_csv(points, run.path("sweep.csv"))
        defects = [p.unitarity_defect for p in points if np.isfinite(p.unitarity_defect)]
        record.residuals.update(
            segments=_segments(plan),
            max_unitarity_defect=max(defects, default=float("nan")),
            skipped=sum(1 for p in points if not np.isfinite(p.unitarity_defect)),
        )


def _run_trapped(run):
    p, n = run.config.physics, run.config.numerics
    report = None
    with run.stage("trapped-mode scan") as record:
        report = trapped_mode_scan(run.geometry, run.config.k_values(), p.beta, h=run.h, threads=run.config.threads,
                                   eigen_tol=n.eigen_tol)
        write_sweep_csv(report.points, run.path("sweep.csv"))
        write_bracket_csv(report.brackets, run.path("brackets.csv"))
        write_oracle_json(report, run.path("oracle.json"))
        record.residuals.update(
            segments=_segments(report.split_plan),
            brackets=[b.k for b in report.brackets],
            oracle_modes=list(report.oracle_modes),
            consistent=report.consistent,
        )
        if not report.consistent:
            logger.warning("Trapped-mode brackets and oracle modes disagree")

    if report is None:
        return
    confirmed = [b.oracle_k for b in report.brackets if b.confirmed]
    if not confirmed:
        return
    with run.stage("kernel counts") as record:
        rows = []
        for k_star in confirmed:
            counts = kernel_count_report(run.geometry, k_star, p.gamma, p.beta, h=run.h, eigen_tol=n.eigen_tol)
            rows.append([k_star, counts.M, counts.strip_multiplicity, counts.eigen_count, counts.oracle_count,
                         counts.consistent])
        header = ["k", "M", "strip_multiplicity", "eigen_count", "oracle_count", "consistent"]
        write_table_csv(header, rows, run.path("kernel_counts.csv"))
        record.residuals["consistent"] = all(row[-1] for row in rows)


def _model_rate(spectrum, k):
    rates = [np.sqrt(mu - k * k) for mu in spectrum.mu if mu > k * k]
    return 0.5 * min(rates) if rates else 1.0


def _run_model_problem(run):
    m, n = run.config.model, run.config.numerics
    basis = None
    with run.stage("model basis") as record:
        profile = ArmCoefficientProfile.relative(m.k_infinity, m.amplitude, m.decay_exponent)
        section = CrossSectionSpec(0, m.width, BoundaryKind.parse(m.boundary_kind))
        spectrum = transverse_spectrum(section, SPECTRUM_MODES, m.width / n.divisions)
        gamma = run.config.physics.gamma or _model_rate(spectrum, m.k_infinity)
        pencil = pencil_spectrum(spectrum, m.k_infinity, gamma, n.threshold_tol, mesh_step=_defaults.SERIES_STEP)
        basis = normalize_basis(waves_in_strip(pencil, gamma))
        record.residuals.update(gamma=gamma, M=basis.M, canonical_deviation=basis.canonical_deviation())
    if basis is None:
        return
    rows = []
    for T in n.T_values or (n.T,):
        with run.stage(f"model problem T={T:g}") as record:
            blended = blend(profile, T)
            L = n.L or default_length(T, gamma)
            z = [neumann_series_wave(blended, u, -gamma, L, n.tol, max_iterations=n.max_iterations)
                 for u in basis.waves]
            z_basis = ModelWaveSet(tuple(z[: basis.M]), tuple(z[basis.M :]), -gamma)
            expected = np.diag([-1j] * basis.M + [1j] * basis.M)
            pairings = verify_pairings(z, expected=expected)
            chains = chain_wave_set(blended, pencil, -gamma, gamma, L, n.tol)
            expansion = expand_in_chain_waves(z_basis, chains)
            for w in z:
                rows.append([float(T), w.label, w.iterations, w.contraction_ratio, w.residual, w.tail_ratio])
            record.residuals.update(
                contraction_ratio=max((w.contraction_ratio for w in z), default=0.0),
                pairing_deviation=pairings.max_deviation,
                reconstruction_residual=expansion.residual,
            )
    header = ["T", "wave", "iterations", "contraction_ratio", "residual", "tail_ratio"]
    write_table_csv(header, rows, run.path("model_problem.csv"))


RUNNERS = {
    "spectrum": _run_spectrum,
    "modes": _run_modes,
    "scatter": _run_scatter,
    "sweep": _run_sweep,
    "trapped": _run_trapped,
    "model-problem": _run_model_problem,
}


def _tool_version():
    try:
        return version(PACKAGE)
    except PackageNotFoundError:
        return "unknown"


def run(config, out=None, threads=None, seed=None, strict=None):
    """
    Execute the pipeline of config.command and write the manifest. Command-line
    values, when given, take the place of the config's own.
    """
    overrides = {k: v for k, v in (("threads", threads), ("seed", seed), ("strict", strict)) if v is not None}
    config = replace(config, **overrides)
    directory = out or config.output.directory
    os.makedirs(directory, exist_ok=True)

    counter = WarningCounter()
    package_logger = logging.getLogger(PACKAGE)
    package_logger.addHandler(counter)
    start = time.perf_counter()
    try:
        current = _Run(config, directory)
        with current.stage("setup"):
            if config.command != "model-problem":
                current.geometry = config.build_geometry()
                current.h = config.h
                current.geometry.validate_mesh(current.h)
        if not any(s.error for s in current.stages):
            RUNNERS[config.command](current)
    finally:
        package_logger.removeHandler(counter)

    failed = any(s.error for s in current.stages)
    exit_code = 1 if failed or (config.strict and counter.count) else 0
    if config.strict and counter.count:
        logger.error(f"{counter.count} warning(s) logged in strict mode")
    manifest = RunManifest(
        config=config.echo(),
        version=_tool_version(),
        wall_time=time.perf_counter() - start,
        stages=[asdict(s) for s in current.stages],
        outputs={name: sha256_of_file(os.path.join(directory, name)) for name in sorted(current.outputs)},
        warnings=counter.count,
        exit_code=exit_code,
    )
    manifest.write(directory)
    logger.info(f"Wrote {len(manifest.outputs)} output(s) and {MANIFEST} to {directory}")
    return manifest


def setup_logging(args):
    log_level = "WARN"
    if args.quiet > 0:
        log_level = "ERROR"
        if args.quiet > 1:
            log_level = "CRITICAL"
            if args.quiet > 2:
                log_level = logging.CRITICAL + 1
    else:
        if args.verbosity > 0:
            log_level = "INFO"
        if args.verbosity > 1:
            log_level = "DEBUG"
    logging.basicConfig(level=log_level)
    return log_level


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])

    subparsers = parser.add_subparsers(help="help for subcommand", dest="subcommand")

    def add_common_args(parser):
        parser.add_argument(
            "-v",
            "--verbosity",
            action="count",
            default=0,
            help="How much information to print: use multiple times for more info",
        )
        parser.add_argument(
            "-q",
            "--quiet",
            action="count",
            default=0,
            help="Do not log warnings (-q) or errors (-qq)",
        )
        parser.add_argument(
            "-c",
            "--config",
            required=True,
            help="The INI run configuration (see waveguide_scattering/cli/config.py for the sections)",
        )
        parser.add_argument(
            "-o",
            "--out",
            default=None,
            help="Directory for the output files and manifest.json. Defaults to [output] directory",
        )
        parser.add_argument("--threads", type=int, default=None, help="Worker threads for k sweeps")
        parser.add_argument(
            "--seed", type=int, default=None, help="Seed for the random basis transforms of the scatter command"
        )
        parser.add_argument(
            "--strict",
            action="store_true",
            default=None,
            help="Exit nonzero if anything is logged at WARNING or above",
        )

    descriptions = {
        "spectrum": "Transverse and pencil spectra of every arm",
        "modes": "Flux-normalized wave table with self-pairings",
        "scatter": "Classical (and augmented) T and S matrices",
        "sweep": "Unitarity sweep of S over a k range",
        "trapped": "Trapped-mode scan with oracle confirmation",
        "model-problem": "Neumann-series waves of the blended model problem",
    }
    for name, help_text in descriptions.items():
        add_common_args(subparsers.add_parser(name, help=help_text))

    args = parser.parse_args(argv)
    if not args.subcommand:
        parser.print_help()
        sys.exit()

    setup_logging(args)
    try:
        config = read_config(args.config, command=args.subcommand)
    except ConfigError as e:
        logger.error(str(e))
        sys.exit(2)
    manifest = run(config, out=args.out, threads=args.threads, seed=args.seed, strict=args.strict)
    sys.exit(manifest.exit_code)


if __name__ == "__main__":
    main()
