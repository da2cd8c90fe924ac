"""Degradation pipelines, experiment configs, single runs and parameter grids."""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import fileio
from .denoisers import DCTDenoiser
from .landweber import StepRule
from .operators import (
    build_conv2d_circular,
    build_downsample_blur,
    build_masked_fourier,
    gaussian_kernel,
    make_mask,
    uniform_kernel,
)
from .projections import L2Ball, Singleton, radius_from_noise, epsilon_from_offset
from .rng import Xoshiro256
from .solvers import SCFPProblem, SolveConfig, pnp_fbs, pnp_plo, red_pro, red_sd
from .tensor import NoiseSpec, Signal, add_noise, psnr

TASKS = ("deblur_uniform9", "deblur_gaussian", "sr_x3", "sr_x2", "csmri")
SOLVERS = ("pnp_plo", "red_sd", "red_pro", "pnp_fbs")
SR_KERNEL = (7, 1.6)
DEBLUR_GAUSSIAN_KERNEL = (9, 1.6)


@dataclass
class ExperimentConfig:
    """One experiment, read from ``key = value`` lines.

    ``epsilon`` left empty selects ``(sqrt(n0 sigma^2) - eps_offset) /
    sqrt(n0 sigma^2)`` with ``n0`` the sample count of the measurement grid
    (``n0 = reconstruction`` uses the image grid instead).
    ``fidelity_scale = auto`` weights the baselines' gradient by ``1 / sigma^2``.
    ``w`` relaxes the denoiser in PnP-PLO and ``pro_w`` in RED-PRO, whose
    admissible range is half as wide.
    """

    task: str = "deblur_gaussian"
    image: str = ""
    size: int = 64
    image_seed: int = 0
    sigma: float = math.sqrt(2.0)
    seed: int = 0
    solver: str = "pnp_plo"
    step_rule: str = "tau"
    w: float = 1.0
    pro_w: float = 0.5
    lam: float = 1.0
    lambda_floor: float = 1e-3
    epsilon: str = ""
    eps_offset: float = 0.2
    n0: str = "measurement"
    K: int = 1000
    stop_tol: float = 0.0
    trace_every: int = 1
    override: bool = False
    denoiser: str = "dct_soft"
    keep: int = 32
    sigma_f: float = 1.9
    mu: float = 4.0
    lambda_reg: float = 0.01
    mu0: float = 4.2
    mu_exponent: float = 0.1
    s: float = 4.0
    fidelity_scale: str = "auto"
    mask_kind: str = "random"
    mask_fraction: float = 0.3
    mask_seed: int = 0
    peak: float = 255.0
    record_timing: bool = False
    out_dir: str = ""
    name: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if not 0.0 < self.mask_fraction <= 1.0:
            raise ValueError("mask_fraction must lie in (0, 1]")
        if self.n0 not in ("measurement", "reconstruction"):
            raise ValueError("n0 must be 'measurement' or 'reconstruction'")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        StepRule.parse(self.step_rule)

    @classmethod
    def from_text(cls, text, **overrides):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, key)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path) as fh:
            return cls.from_text(fh.read(), **overrides)

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @property
    def scale(self):
        return {"sr_x3": 3, "sr_x2": 2}.get(self.task, 1)


def _coerce(kind, value, key):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError as exc:
        raise ValueError(f"bad value {value!r} for {key}") from exc
    return value


def synthetic_image(size=64, seed=0, peak=255.0):
    """Seeded piecewise-smooth test image in ``[0, peak]``.

    A linear ramp plus a few discs and rectangles with random intensity.
    """
    gen = Xoshiro256(seed)
    r, c = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    gx, gy = gen.random(2) - 0.5
    img = 0.35 + 0.3 * (gx * r + gy * c)
    for _ in range(4):
        cy, cx, rad, val = gen.random(4)
        img = np.where((r - cy) ** 2 + (c - cx) ** 2 < (0.08 + 0.2 * rad) ** 2, 0.15 + 0.7 * val, img)
    for _ in range(2):
        y0, x0, h, w, val = gen.random(5)
        box = (r >= y0) & (r < y0 + 0.1 + 0.3 * h) & (c >= x0) & (c < x0 + 0.1 + 0.3 * w)
        img = np.where(box, 0.15 + 0.7 * val, img)
    return Signal(np.clip(img, 0.0, 1.0)[:, :, None] * peak)


@dataclass
class Degradation:
    """Output of :func:`degrade`: measurements, the forward operator and ground truth."""

    y: Signal
    A: object
    ground_truth: Signal
    scale: int = 1


def degrade(image, task, noise, mask_kind="random", mask_fraction=0.3, mask_seed=0, kernel=None):
    """Build the forward operator of ``task`` and return ``y = A x + n``.

    ``kernel`` replaces the task's default blur kernel for deblurring and
    super-resolution tasks.

    For ``csmri`` the image becomes a complex signal with zero imaginary
    part and the noise is added to both parts of every sampled coefficient.
    """
    rows, cols, ch = image.shape
    if task == "deblur_uniform9":
        A = build_conv2d_circular(uniform_kernel(9) if kernel is None else kernel, (rows, cols, ch))
        scale = 1
    elif task == "deblur_gaussian":
        A = build_conv2d_circular(gaussian_kernel(*DEBLUR_GAUSSIAN_KERNEL) if kernel is None else kernel, (rows, cols, ch))
        scale = 1
    elif task in ("sr_x3", "sr_x2"):
        scale = 3 if task == "sr_x3" else 2
        if rows % scale or cols % scale:
            raise ValueError(f"{task} needs image dimensions divisible by {scale}, got {rows}x{cols}")
        A = build_downsample_blur(gaussian_kernel(*SR_KERNEL) if kernel is None else kernel, (rows, cols, ch), scale)
    elif task == "csmri":
        if ch != 1:
            raise ValueError("csmri takes a single-channel image")
        mask = make_mask(mask_kind, mask_fraction, (rows, cols), seed=mask_seed)
        A = build_masked_fourier(mask, (rows, cols))
        x = Signal.from_complex(image.data[:, :, 0].astype(np.complex128))
        return Degradation(add_noise(A.apply(x), noise), A, x, 1)
    else:
        raise ValueError(f"unknown task {task!r}")
    y = add_noise(A.apply(image), noise)
    return Degradation(y, A, image, scale)


def _axis_weights(n_in, scale):
    # half-pixel centres, clamped at the borders
    src = np.clip((np.arange(n_in * scale) + 0.5) / scale - 0.5, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def upsample_init(y, scale):
    """Bilinear upsampling by an integer factor; ``scale = 1`` returns ``y``."""
    if scale < 1 or int(scale) != scale:
        raise ValueError("scale must be a positive integer")
    if scale == 1:
        return y
    d = y.data
    r0, r1, tr = _axis_weights(d.shape[0], scale)
    c0, c1, tc = _axis_weights(d.shape[1], scale)
    rows = d[r0] * (1 - tr)[:, None, None] + d[r1] * tr[:, None, None]
    out = rows[:, c0] * (1 - tc)[None, :, None] + rows[:, c1] * tc[None, :, None]
    return Signal._wrap(out, y.domain)


def magnitude(x):
    """Modulus image of a complex-tagged signal; real signals pass through."""
    if not x.is_complex:
        return x
    return Signal(np.abs(x.to_complex()))


def load_ground_truth(config):
    if config.image:
        return fileio.load_image(config.image)
    return synthetic_image(config.size, config.image_seed, config.peak)


def resolve_epsilon(config, degradation):
    if config.epsilon not in ("", "auto", None):
        return float(config.epsilon)
    n0 = degradation.y.size if config.n0 == "measurement" else degradation.ground_truth.size
    return epsilon_from_offset(n0, config.sigma, config.eps_offset)


def build_denoiser(config, shape):
    rows, cols = shape[:2]
    if config.denoiser == "dct_soft":
        return DCTDenoiser((rows, cols, 1), config.keep, "soft", config.sigma_f)
    if config.denoiser == "dct_project":
        return DCTDenoiser((rows, cols, 1), config.keep, "project")
    raise ValueError(f"unknown denoiser {config.denoiser!r}")


@dataclass
class Prepared:
    problem: SCFPProblem
    degradation: Degradation
    epsilon: float
    radius: float


def prepare(config, ground_truth=None):
    """Degrade the ground truth and assemble the problem the chosen solver sees.

    PnP-PLO gets the ball ``B(y, epsilon sqrt(n0 sigma^2))``; the baselines
    get ``Q = {y}`` so that their fidelity is ``0.5 ||Ax - y||^2``.
    """
    gt = load_ground_truth(config) if ground_truth is None else ground_truth
    deg = degrade(gt, config.task, NoiseSpec(config.sigma, config.seed), config.mask_kind, config.mask_fraction, config.mask_seed)
    eps = resolve_epsilon(config, deg) if config.sigma > 0 else 1.0
    if config.solver == "pnp_plo" and config.sigma > 0:
        radius = radius_from_noise(deg.y.size if config.n0 == "measurement" else deg.ground_truth.size, config.sigma, eps)
        Q = L2Ball(deg.y, radius)
    else:
        radius = 0.0
        Q = Singleton(deg.y)
    T = build_denoiser(config, deg.ground_truth.shape)
    if config.task == "csmri":
        x0 = deg.A.adjoint(deg.y)
        truth_mag = magnitude(deg.ground_truth)

        def metric(x):
            return psnr(truth_mag, magnitude(x), config.peak)

    else:
        x0 = upsample_init(deg.y, deg.scale)
        metric = None
    problem = SCFPProblem(deg.A, Q, T, ground_truth=deg.ground_truth, x0=x0, metric=metric)
    return Prepared(problem, deg, eps, radius)


def fidelity_scale(config):
    if config.fidelity_scale == "auto":
        return 1.0 / config.sigma**2 if config.sigma > 0 else 1.0
    return float(config.fidelity_scale)


def solve(config, problem):
    """Dispatch to the configured solver; returns ``(x, trace)``."""
    common = dict(trace_every=config.trace_every, peak=config.peak, record_timing=config.record_timing)
    if config.solver == "pnp_plo":
        sc = SolveConfig(
            max_iters=config.K,
            lambda_schedule=config.lam,
            eps_relax=config.lambda_floor,
            w=config.w,
            step_rule=StepRule.parse(config.step_rule),
            stop_tol=config.stop_tol,
            override=config.override,
            **common,
        )
        return pnp_plo(problem, sc)
    scale = fidelity_scale(config)
    if config.solver == "red_sd":
        return red_sd(problem, config.mu, config.lambda_reg, config.K, scale, stop_tol=config.stop_tol, **common)
    if config.solver == "red_pro":
        rule = StepRule("diminishing", mu0=config.mu0, exponent=config.mu_exponent)
        return red_pro(problem, rule, config.pro_w, config.K, scale, override=config.override, stop_tol=config.stop_tol, **common)
    return pnp_fbs(problem, config.s, config.K, scale, stop_tol=config.stop_tol, **common)


def _narrowed(x):
    return Signal._wrap(x.data.astype(np.float32).astype(np.float64), x.domain)


def run_experiment(config, out_dir=None):
    """Degrade, solve and score one configuration.

    Writes ``trace.csv``, ``restored.rawf32``, ``ground_truth.rawf32``,
    ``degraded.rawf32`` and ``summary.csv`` to ``out_dir`` (or
    ``config.out_dir``) when one is given. PSNR is computed on the float32
    values that are written, so it can be recomputed from the files.
    Returns the summary row as a dict.
    """
    out_dir = out_dir or config.out_dir
    prep = prepare(config)
    x, trace = solve(config, prep.problem)
    restored = _narrowed(x)
    truth = _narrowed(prep.degradation.ground_truth)
    final_psnr = psnr(magnitude(truth), magnitude(restored), config.peak)
    last = trace.records[-1] if trace.records else None
    row = {
        "task": config.task,
        "solver": config.solver,
        "step_rule": config.step_rule if config.solver == "pnp_plo" else "",
        "w": {"pnp_plo": config.w, "red_pro": config.pro_w}.get(config.solver),
        "epsilon": prep.epsilon if config.solver == "pnp_plo" else None,
        "K": config.K,
        "iters_run": trace.iterations,
        "final_f": None if last is None else last.f,
        "final_psnr": final_psnr,
        "wall_ms": last.wall_ms if (last is not None and config.record_timing) else None,
        "status": trace.status,
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            trace.to_csv(fh, timing=config.record_timing)
        fileio.save_rawf32(os.path.join(out_dir, "restored.rawf32"), restored)
        fileio.save_rawf32(os.path.join(out_dir, "ground_truth.rawf32"), truth)
        fileio.save_rawf32(os.path.join(out_dir, "degraded.rawf32"), prep.degradation.y)
        fileio.write_summary(os.path.join(out_dir, "summary.csv"), [row])
    return row


def _run_entry(args):
    config, out_dir = args
    try:
        return run_experiment(config, out_dir), None
    except Exception as exc:  # a failed entry must not stop the grid
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class GridResult:
    rows: list
    failures: list
    table: list


def grid_search(configs, out_root=None, workers=1):
    """Run every config and summarise PSNR per solver.

    Entries run in a process pool when ``workers > 1``. Each entry writes to
    its own ``out_root/<index or name>`` directory. Failures are collected,
    not raised. ``table`` holds one dict per solver with ``runs``,
    ``avg_psnr`` and ``max_psnr``.
    """
    if not configs:
        raise ValueError("grid needs at least one config")
    jobs = []
    for i, cfg in enumerate(configs):
        sub = None
        if out_root:
            sub = os.path.join(out_root, cfg.name or f"{i:03d}")
        jobs.append((replace(cfg, out_dir=""), sub))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_entry, jobs))
    else:
        results = [_run_entry(j) for j in jobs]
    rows, failures = [], []
    for i, (row, err) in enumerate(results):
        if err is None:
            rows.append(row)
        else:
            failures.append((i, err))
    table = []
    for solver in sorted({r["solver"] for r in rows}):
        vals = [r["final_psnr"] for r in rows if r["solver"] == solver]
        table.append({"solver": solver, "runs": len(vals), "avg_psnr": float(np.mean(vals)), "max_psnr": float(np.max(vals))})
    return GridResult(rows, failures, table)


def expand_grid(base, sweep):
    """Configs for the Cartesian product of ``sweep`` (key -> list of values) over ``base``."""
    configs = [base]
    for key, values in sweep.items():
        configs = [replace(c, **{key: v}) for c in configs for v in values]
    return configs
