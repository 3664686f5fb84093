"""Batch pipeline: dataset generation, scoring, evaluation, comparison.

Subcommands
-----------
``phantom gen``   emit a seeded synthetic dataset (volumes, masks, manifest)
``score``         score every manifest case, emitting map volumes and PGMs
``eval``          per-case and pooled metrics as CSV
``compare``       paired permutation test between two variants' AUPRC columns
``noise preview`` emit simplex / Gaussian noise fields

Configuration comes from defaults, an optional ``key=value`` file (``#``
comments), the ``SMHD_THREADS`` environment variable, and command-line flags,
in increasing order of precedence. Unknown config keys are errors. Exit codes:
0 success, 2 configuration error, 3 data error. Outputs already written by a
failing command are removed.
"""

from __future__ import annotations

import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import diffusion, formats, metrics, phantom, scoring
from .ssim import SsimParams

VARIANTS = ("s_mean", "s_mhd", "s_smhd", "cm")

EXIT_CONFIG = 2
EXIT_DATA = 3


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _parse_noise_kind(s: str) -> str:
    if s not in ("gaussian", "simplex"):
        raise ValueError(f"noise_kind must be gaussian or simplex, got {s!r}")
    return s


def _parse_eval_mask(s: str) -> str:
    if s not in ("none", "brain"):
        raise ValueError(f"eval_mask must be none or brain, got {s!r}")
    return s


#: key -> (parser, default). The single source of truth for config files and
#: the corresponding CLI flags.
CONFIG_KEYS = {
    # dataset
    "cases": (int, 50),
    "size": (int, 64),
    "seed": (int, 42),
    "population": (int, 20),
    "texture_frequency": (float, 1.0 / 16.0),
    "texture_amplitude": (float, 0.15),
    "lesion_radius_min": (float, 3.0),
    "lesion_radius_max": (float, 9.0),
    "lesion_contrast_min": (float, 0.25),
    "lesion_contrast_max": (float, 0.5),
    "ellipse_axis_fraction_y": (float, 0.8),
    "ellipse_axis_fraction_x": (float, 0.65),
    # reconstruction imperfections
    "bias_field_frequency": (float, 1.0 / 32.0),
    "bias_amplitude": (float, 0.05),
    "pixel_noise_sigma": (float, 0.01),
    "symmetry_coupling": (float, 0.5),
    # scoring
    "n_reconstructions": (int, 10),
    "t_test": (int, 500),
    "t_max": (int, 1000),
    "beta_start": (float, 1e-4),
    "beta_end": (float, 0.02),
    "lambda": (float, 1e-5),
    "mhd_smooth_sigma": (float, 1.0),
    "noise_kind": (_parse_noise_kind, "simplex"),
    "score_seed": (int, 0),
    "ssim_kernel_sigma": (float, 1.0),
    "ssim_data_range": (float, 1.0),
    "noise_octaves": (int, 6),
    "noise_persistence": (float, 0.8),
    "noise_lacunarity": (float, 2.0),
    "noise_base_frequency": (float, 1.0 / 64.0),
    # evaluation
    "eval_mask": (_parse_eval_mask, "none"),
    "rounds": (int, 10000),
    "compare_seed": (int, 7),
    # execution
    "threads": (int, 0),  # 0 = available parallelism
}


def load_config_file(path) -> dict:
    """Parse a UTF-8 key=value file; '#' starts a comment, blank lines ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, _, raw = text.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            parser = CONFIG_KEYS[key][0]
            try:
                values[key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def resolve_config(config_path, overrides: dict) -> dict:
    """Merge defaults, config file, SMHD_THREADS, and explicit CLI flags."""
    merged = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    if config_path is not None:
        merged.update(load_config_file(config_path))
    env_threads = os.environ.get("SMHD_THREADS")
    if env_threads is not None:
        try:
            merged["threads"] = int(env_threads)
        except ValueError as exc:
            raise ConfigError(f"SMHD_THREADS must be an integer, got {env_threads!r}") from exc
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _phantom_config(cfg: dict) -> phantom.PhantomConfig:
    return phantom.PhantomConfig(
        size=cfg["size"],
        texture_frequency=cfg["texture_frequency"],
        texture_amplitude=cfg["texture_amplitude"],
        lesion_radius_range=(cfg["lesion_radius_min"], cfg["lesion_radius_max"]),
        lesion_contrast_range=(cfg["lesion_contrast_min"], cfg["lesion_contrast_max"]),
        ellipse_axes_fraction=(cfg["ellipse_axis_fraction_y"],
                               cfg["ellipse_axis_fraction_x"]),
    )


def _perturbation_config(cfg: dict) -> phantom.PerturbationConfig:
    return phantom.PerturbationConfig(
        bias_field_frequency=cfg["bias_field_frequency"],
        bias_amplitude=cfg["bias_amplitude"],
        pixel_noise_sigma=cfg["pixel_noise_sigma"],
        symmetry_coupling=cfg["symmetry_coupling"],
    )


def _scoring_config(cfg: dict) -> scoring.ScoringConfig:
    return scoring.ScoringConfig(
        n_reconstructions=cfg["n_reconstructions"],
        t_test=cfg["t_test"],
        lam=cfg["lambda"],
        mhd_smooth_sigma=cfg["mhd_smooth_sigma"],
        ssim=SsimParams(kernel_sigma=cfg["ssim_kernel_sigma"],
                        data_range=cfg["ssim_data_range"]),
        noise_kind=cfg["noise_kind"],
        seed=cfg["score_seed"],
    )


def _simplex_params(cfg: dict, seed: int = 0) -> diffusion.SimplexParams:
    return diffusion.SimplexParams(
        octaves=cfg["noise_octaves"], persistence=cfg["noise_persistence"],
        lacunarity=cfg["noise_lacunarity"],
        base_frequency=cfg["noise_base_frequency"], seed=seed)


def _thread_count(cfg: dict) -> int:
    threads = cfg["threads"]
    if threads <= 0:
        return os.cpu_count() or 1
    return threads


def _run_indexed(work, count: int, threads: int) -> list:
    """Run work(i) for i in range(count), in parallel, results in index order."""
    if threads <= 1:
        return [work(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, range(count)))


class OutputTracker:
    """Records written paths so a failing command can remove partial outputs."""

    def __init__(self):
        self.paths = []

    def track(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def discard_all(self):
        for path in self.paths:
            try:
                path.unlink()
            except OSError:
                pass


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"
MANIFEST_HEADER = "smhd-manifest v1"

#: config keys echoed into the manifest (everything `score` needs to rebuild
#: reconstructors plus the generation parameters, for the record)
MANIFEST_KEYS = (
    "cases", "size", "seed", "population",
    "texture_frequency", "texture_amplitude",
    "lesion_radius_min", "lesion_radius_max",
    "lesion_contrast_min", "lesion_contrast_max",
    "ellipse_axis_fraction_y", "ellipse_axis_fraction_x",
    "bias_field_frequency", "bias_amplitude", "pixel_noise_sigma",
    "symmetry_coupling",
)


def _format_value(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_manifest(path, cfg: dict, case_rows: list, pop_rows: list):
    lines = [MANIFEST_HEADER]
    for key in MANIFEST_KEYS:
        lines.append(f"{key} = {_format_value(cfg[key])}")
    for index, seed, files in case_rows:
        parts = " ".join(f"{k}={v}" for k, v in files)
        lines.append(f"case {index:03d} seed={seed} {parts}")
    for index, seed, files in pop_rows:
        parts = " ".join(f"{k}={v}" for k, v in files)
        lines.append(f"pop {index:03d} seed={seed} {parts}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"no {MANIFEST_NAME} in {data_dir}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise DataError(f"{path}: not a recognized manifest")
    config = {}
    cases = []
    pops = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith(("case ", "pop ")):
            kind, index, *fields = line.split()
            entry = {"index": int(index)}
            for field in fields:
                key, _, value = field.partition("=")
                entry[key] = value
            (cases if kind == "case" else pops).append(entry)
        else:
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise DataError(f"{path}:{lineno}: unknown manifest key {key!r}")
            config[key] = CONFIG_KEYS[key][0](raw.strip())
    return {"config": config, "cases": cases, "pops": pops, "dir": Path(data_dir)}


def _manifest_volume(manifest: dict, entry: dict, key: str) -> np.ndarray:
    if key not in entry:
        raise DataError(f"manifest entry {entry.get('index')} lacks a {key!r} file")
    path = manifest["dir"] / entry[key]
    if not path.is_file():
        raise DataError(f"missing data file {path}")
    return formats.read_volume(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group()
def main():
    """Anomaly scoring from reconstruction distributions, end to end."""


def _config_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=False),
                      default=None, help="key=value config file")(fn)
    return fn


def _command_guard(fn):
    """Translate exceptions into exit codes, cleaning tracked outputs."""

    def wrapper(*args, **kwargs):
        tracker = OutputTracker()
        try:
            fn(*args, tracker=tracker, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            tracker.discard_all()
            sys.exit(EXIT_CONFIG)
        except (DataError, formats.VolumeFormatError, OSError,
                ValueError, diffusion.ReconstructionError) as exc:
            click.echo(f"error: {exc}", err=True)
            tracker.discard_all()
            sys.exit(EXIT_DATA)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@main.group(name="phantom")
def phantom_group():
    """Synthetic dataset commands."""


@phantom_group.command(name="gen")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--cases", type=int, default=None)
@click.option("--size", type=int, default=None)
@click.option("--population", type=int, default=None)
@_config_options
@_command_guard
def phantom_gen(out_dir, seed, cases, size, population, config_path, tracker):
    """Generate a seeded phantom dataset with ground truth and a manifest."""
    cfg = resolve_config(config_path, {"seed": seed, "cases": cases,
                                       "size": size, "population": population})
    try:
        pcfg = _phantom_config(cfg)
        pert = _perturbation_config(cfg)
        dataset = phantom.gen_dataset(pcfg, pert, cfg["cases"], cfg["seed"])
        pop = (phantom.gen_population(pcfg, cfg["population"], cfg["seed"])
               if cfg["population"] > 0 else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    case_rows = []
    for i, case in enumerate(dataset):
        files = []
        for name, data in (("input", case.image), ("mask", case.lesion_mask),
                           ("healthy", case.healthy), ("brain", case.brain_mask)):
            rel = f"case_{i:03d}_{name}.volb"
            formats.write_volume(data, tracker.track(out / rel))
            files.append((name, rel))
        case_rows.append((i, case.seed, files))
    pop_rows = []
    if pop is not None:
        for i in range(pop.shape[0]):
            rel = f"pop_{i:03d}_healthy.volb"
            formats.write_volume(pop[i], tracker.track(out / rel))
            pop_rows.append((i, cfg["seed"], [("healthy", rel)]))
    write_manifest(tracker.track(out / MANIFEST_NAME), cfg, case_rows, pop_rows)
    click.echo(f"wrote {len(case_rows)} cases and {len(pop_rows)} population "
               f"images to {out}")


@main.command(name="score")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--threads", type=int, default=None)
@click.option("--n-reconstructions", "n_reconstructions", type=int, default=None)
@click.option("--t-test", "t_test", type=int, default=None)
@click.option("--noise-kind", "noise_kind", type=_parse_noise_kind, default=None)
@click.option("--score-seed", "score_seed", type=int, default=None)
@_config_options
@_command_guard
def score(data_dir, out_dir, threads, n_reconstructions, t_test, noise_kind,
          score_seed, config_path, tracker):
    """Score every case in a dataset; emit map volumes and PGM previews."""
    cfg = resolve_config(config_path, {
        "threads": threads, "n_reconstructions": n_reconstructions,
        "t_test": t_test, "noise_kind": noise_kind, "score_seed": score_seed})
    manifest = read_manifest(data_dir)
    pert = _perturbation_config({**cfg, **manifest["config"]})
    scfg = _scoring_config(cfg)
    try:
        sched = diffusion.make_linear_schedule(cfg["t_max"], cfg["beta_start"],
                                               cfg["beta_end"])
        if not 1 <= scfg.t_test <= sched.t_max:
            raise ValueError(f"t_test {scfg.t_test} outside schedule range")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    pop_stack = None
    if manifest["pops"]:
        pop_stack = np.stack([_manifest_volume(manifest, entry, "healthy")
                              for entry in manifest["pops"]])

    entries = manifest["cases"]
    if not entries:
        raise DataError("manifest lists no cases")
    simplex_params = _simplex_params(cfg)

    def score_one(i: int):
        entry = entries[i]
        image = _manifest_volume(manifest, entry, "input")
        healthy = _manifest_volume(manifest, entry, "healthy")
        rec = phantom.make_oracle_reconstructor(healthy, pert)
        stack_seed = int(np.random.SeedSequence(
            entropy=scfg.seed & (2**64 - 1),
            spawn_key=(entry["index"],)).generate_state(1, dtype=np.uint64)[0])
        stack = diffusion.sample_stack(
            rec, image, scfg.t_test, scfg.n_reconstructions, sched,
            noise_kind=scfg.noise_kind, seed=stack_seed,
            simplex_params=simplex_params)
        case = scoring.score_case(image, stack, scfg)
        maps = {"s_mean": case.s_mean, "s_mhd": case.s_mhd, "s_smhd": case.s_smhd}
        if pop_stack is not None:
            maps["cm"] = scoring.population_cm_score(image, pop_stack, scfg)
        return entry["index"], maps

    results = _run_indexed(score_one, len(entries), _thread_count(cfg))
    for index, maps in results:
        for variant, score_map in maps.items():
            stem = f"case_{index:03d}_{variant}"
            formats.write_volume(score_map, tracker.track(out / f"{stem}.volb"))
            formats.export_pgm(score_map, tracker.track(out / f"{stem}.pgm"))
    click.echo(f"scored {len(results)} cases into {out}")


@main.command(name="eval")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--scores", "scores_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--mask", "eval_mask", type=_parse_eval_mask, default=None)
@click.option("--threads", type=int, default=None)
@_config_options
@_command_guard
def eval_command(data_dir, scores_dir, out_csv, eval_mask, threads, config_path,
                 tracker):
    """Per-case and pooled AUPRC / best Dice for every score variant."""
    cfg = resolve_config(config_path, {"eval_mask": eval_mask, "threads": threads})
    manifest = read_manifest(data_dir)
    scores_dir = Path(scores_dir)
    entries = manifest["cases"]
    if not entries:
        raise DataError("manifest lists no cases")
    variants = [v for v in VARIANTS
                if (scores_dir / f"case_{entries[0]['index']:03d}_{v}.volb").is_file()]
    if not variants:
        raise DataError(f"no score volumes found in {scores_dir}")

    def eval_one(i: int):
        entry = entries[i]
        gt = _manifest_volume(manifest, entry, "mask")
        keep = None
        if cfg["eval_mask"] == "brain":
            keep = _manifest_volume(manifest, entry, "brain")
        rows = []
        pooled = {}
        for variant in variants:
            path = scores_dir / f"case_{entry['index']:03d}_{variant}.volb"
            if not path.is_file():
                raise DataError(f"missing score volume {path}")
            score_map = formats.read_volume(path)
            if score_map.shape != gt.shape:
                raise DataError(f"{path}: shape {score_map.shape} != mask {gt.shape}")
            result = metrics.evaluate(score_map, gt, mask=keep)
            rows.append((f"case_{entry['index']:03d}", variant, result))
            flat_scores = score_map.reshape(-1)
            flat_gt = gt.reshape(-1)
            if keep is not None:
                flat_scores = flat_scores[keep.reshape(-1)]
                flat_gt = flat_gt[keep.reshape(-1)]
            pooled[variant] = (flat_scores, flat_gt)
        return rows, pooled

    results = _run_indexed(eval_one, len(entries), _thread_count(cfg))

    all_rows = []
    for rows, _ in results:
        all_rows.extend(rows)
    for variant in variants:
        scores_cat = np.concatenate([pooled[variant][0] for _, pooled in results])
        gt_cat = np.concatenate([pooled[variant][1] for _, pooled in results])
        all_rows.append(("pooled", variant, metrics.evaluate(scores_cat, gt_cat)))

    out_path = tracker.track(out_csv)
    if out_path.parent != Path("."):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "variant", "auprc", "dice_best", "threshold"])
        for case_id, variant, result in all_rows:
            writer.writerow([case_id, variant,
                             format(result.auprc, ".10g"),
                             format(result.dice_best, ".10g"),
                             format(result.dice_threshold, ".10g")])
    click.echo(f"wrote {len(all_rows)} rows to {out_path}")


@main.command(name="compare")
@click.option("--eval", "eval_csv", required=True, type=click.Path(exists=True))
@click.option("--variant-a", default="s_smhd", show_default=True)
@click.option("--variant-b", default="s_mean", show_default=True)
@click.option("--rounds", type=int, default=None)
@click.option("--seed", "compare_seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@_config_options
@_command_guard
def compare(eval_csv, variant_a, variant_b, rounds, compare_seed, out_path,
            config_path, tracker):
    """Paired permutation test between two variants' per-case AUPRC vectors."""
    cfg = resolve_config(config_path, {"rounds": rounds,
                                       "compare_seed": compare_seed})
    if variant_a not in VARIANTS or variant_b not in VARIANTS:
        raise ConfigError(f"variants must be among {VARIANTS}")
    per_case = {variant_a: {}, variant_b: {}}
    with open(eval_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"case_id", "variant", "auprc"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"{eval_csv}: missing columns {required}")
        for row in reader:
            if row["case_id"] == "pooled":
                continue
            if row["variant"] in per_case:
                per_case[row["variant"]][row["case_id"]] = float(row["auprc"])
    ids = sorted(per_case[variant_a])
    if not ids or sorted(per_case[variant_b]) != ids:
        raise DataError(f"{eval_csv}: variants {variant_a} and {variant_b} do not "
                        "cover the same cases")
    a = np.array([per_case[variant_a][i] for i in ids])
    b = np.array([per_case[variant_b][i] for i in ids])
    p = metrics.paired_permutation_test(a, b, rounds=cfg["rounds"],
                                        seed=cfg["compare_seed"])
    line = (f"variant_a={variant_a} mean_auprc={a.mean():.10g} "
            f"variant_b={variant_b} mean_auprc={b.mean():.10g} "
            f"p_value={p:.10g}")
    click.echo(line)
    if out_path is not None:
        tracker.track(out_path)
        Path(out_path).write_text(line + "\n", encoding="utf-8")


@main.group(name="noise")
def noise_group():
    """Noise field utilities."""


@noise_group.command(name="preview")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--kind", type=_parse_noise_kind, default="simplex", show_default=True)
@click.option("--size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@_config_options
@_command_guard
def noise_preview(out_dir, kind, size, seed, config_path, tracker):
    """Emit one noise field as a VOLB volume plus a PGM preview."""
    cfg = resolve_config(config_path, {"size": size, "seed": seed})
    n = cfg["size"]
    try:
        if kind == "simplex":
            field = diffusion.simplex_noise(n, n, _simplex_params(cfg, cfg["seed"]))
        else:
            field = np.random.default_rng(cfg["seed"] & (2**64 - 1)).standard_normal((n, n))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"noise_{kind}_seed{cfg['seed']}"
    formats.write_volume(field, tracker.track(out / f"{stem}.volb"))
    formats.export_pgm(field, tracker.track(out / f"{stem}.pgm"))
    click.echo(f"wrote {stem} to {out}")


if __name__ == "__main__":
    main()
