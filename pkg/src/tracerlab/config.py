"""Run configuration: plain sectioned key=value files, validation against the
theorem hypotheses, and defaults.

Unknown sections or keys are rejected.  Hypothesis violations (shallow
spectral exponent, tail exponent, source bandwidth, dyad placement) abort
unless the run is marked exploratory, in which case they are recorded as
warnings in the manifest.  Arrays are comma lists; source modes are comma
lists of ``kx ky kz re im`` groups.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .synthesis import CircularLaw, CorrelationModel, SourceSpec, VelocityParams


class ConfigError(ValueError):
    """Unreadable, malformed, or hypothesis-violating configuration."""


_KNOWN = {
    "lattice": {"N"},
    "velocity": {"beta", "Ue", "Uf", "law", "varsigma", "sigma", "cap"},
    "source": {
        "modes",
        "band_radius",
        "band_amplitude",
        "cg",
        "alpha",
        "kappa_g",
        "randomized",
        "varrho",
    },
    "correlation": {"kind", "chi_coeff", "chi_power"},
    "run": {
        "mode",
        "M",
        "seed",
        "tol",
        "max_iter",
        "T",
        "dt",
        "kappas",
        "sweep",
        "u_values",
        "time_modes",
        "series_order",
    },
    "output": {"dir", "formats"},
}

RUN_MODES = ("synth", "static", "time", "verify", "sweep")


@dataclass
class RunConfig:
    n: int
    velocity: VelocityParams
    source: SourceSpec
    correlation: CorrelationModel
    mode: str = "verify"
    m_samples: int = 100
    seed: int = 1
    tol: float = 0.0  # 0 -> solver default
    max_iter: int = 200
    t_final: float = 1.0
    dt: float = 1e-3
    kappas: tuple = ()
    sweep: str = "U"
    u_values: tuple = ()
    time_modes: tuple = ()
    series_order: int = 3
    out_dir: str = "out"
    formats: tuple = ("csv", "json")
    exploratory: bool = False
    warnings: list = field(default_factory=list)
    resolved: dict = field(default_factory=dict)


def _parse_bool(raw: str, where: str) -> bool:
    val = raw.strip().lower()
    if val in ("true", "yes", "1", "on"):
        return True
    if val in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {raw!r}")


def _parse_modes(raw: str):
    modes = []
    for group in raw.split(","):
        group = group.strip()
        if not group:
            continue
        parts = group.split()
        if len(parts) != 5:
            raise ConfigError(
                f"source.modes: each entry is 'kx ky kz re im', got {group!r}"
            )
        kx, ky, kz = (int(p) for p in parts[:3])
        modes.append(((kx, ky, kz), complex(float(parts[3]), float(parts[4]))))
    return tuple(modes)


def _parse_kvec_list(raw: str):
    out = []
    for group in raw.split(","):
        group = group.strip()
        if not group:
            continue
        parts = group.split()
        if len(parts) != 3:
            raise ConfigError(f"expected 'kx ky kz' groups, got {group!r}")
        out.append(tuple(int(p) for p in parts))
    return tuple(out)


def default_kappas(n: int) -> tuple:
    out = []
    kappa = 1
    while 2 * kappa <= n:
        out.append(kappa)
        kappa *= 2
    return tuple(out)


def load_config(path, exploratory: bool = False, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a run configuration file."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc

    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in {k.lower() for k in _KNOWN[section]}:
                raise ConfigError(f"unknown key {section}.{key}")

    def get(section, key, fallback=None):
        return parser.get(section, key, fallback=fallback)

    warnings: list[str] = []

    def hypothesis(condition: bool, message: str):
        if condition:
            return
        if exploratory:
            warnings.append(message)
        else:
            raise ConfigError(
                f"{message} (theorem hypothesis; pass --exploratory to override)"
            )

    try:
        n = int(get("lattice", "N", "16"))
        if n < 1:
            raise ConfigError("lattice.N must be a positive integer")

        beta = float(get("velocity", "beta", "-2.5"))
        ue = float(get("velocity", "Ue", "1.0"))
        uf = float(get("velocity", "Uf", "1.0"))
        law_name = get("velocity", "law", "unit").strip()
        if law_name == "unit":
            law = CircularLaw.unit()
        elif law_name == "two_point":
            law = CircularLaw.two_point_from_fourth_moment(
                float(get("velocity", "varsigma", "1.0"))
            )
        elif law_name == "truncated_rayleigh":
            law = CircularLaw.truncated_rayleigh(
                float(get("velocity", "sigma", "1.0")),
                float(get("velocity", "cap", "3.0")),
            )
        else:
            raise ConfigError(f"velocity.law: unknown law {law_name!r}")

        modes = _parse_modes(get("source", "modes", ""))
        band_radius = get("source", "band_radius", None)
        band_amp = float(get("source", "band_amplitude", "1.0"))
        cg = float(get("source", "cg", "0.0"))
        alpha = float(get("source", "alpha", "-8.0"))
        kappa_g = float(get("source", "kappa_g", "16.0"))
        randomized = _parse_bool(get("source", "randomized", "false"), "source.randomized")
        varrho = float(get("source", "varrho", "1.0"))
        src_law = CircularLaw.two_point_from_fourth_moment(varrho) if varrho > 1.0 else CircularLaw.unit()
        if band_radius is not None:
            if modes:
                raise ConfigError("source: give either modes or band_radius, not both")
            source = SourceSpec.band(
                int(band_radius),
                band_amp,
                cg=cg,
                alpha=alpha,
                kappa_g=max(kappa_g, float(int(band_radius)) + 1.0),
                randomized=randomized,
                law=src_law,
            )
        else:
            source = SourceSpec(
                explicit=modes,
                cg=cg,
                alpha=alpha,
                kappa_g=kappa_g,
                randomized=randomized,
                law=src_law,
            )

        corr = CorrelationModel(
            kind=get("correlation", "kind", "frozen").strip(),
            chi_coeff=float(get("correlation", "chi_coeff", "0.0")),
            chi_power=float(get("correlation", "chi_power", "0.0")),
        )

        mode = get("run", "mode", "verify").strip()
        if mode not in RUN_MODES:
            raise ConfigError(f"run.mode must be one of {RUN_MODES}, got {mode!r}")
        m_samples = int(get("run", "M", "100"))
        seed = int(get("run", "seed", "1"))
        tol = float(get("run", "tol", "0"))
        max_iter = int(get("run", "max_iter", "200"))
        t_final = float(get("run", "T", "1.0"))
        dt = float(get("run", "dt", "0.001"))
        kap_raw = get("run", "kappas", "")
        kappas = (
            tuple(float(x) for x in kap_raw.split(",") if x.strip())
            if kap_raw.strip()
            else default_kappas(n)
        )
        sweep = get("run", "sweep", "U").strip()
        u_raw = get("run", "u_values", "")
        u_values = tuple(float(x) for x in u_raw.split(",") if x.strip())
        time_modes = _parse_kvec_list(get("run", "time_modes", ""))
        series_order = int(get("run", "series_order", "3"))

        out_dir = get("output", "dir", "out")
        formats = tuple(
            f.strip() for f in get("output", "formats", "csv,json").split(",") if f.strip()
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config value error: {exc}") from exc

    # structural checks
    for kappa in kappas:
        if 2 * kappa > n:
            raise ConfigError(f"dyad [{kappa}, {2*kappa}) exceeds lattice.N = {n}")
    if m_samples < 2 and mode == "verify":
        raise ConfigError("run.M must be >= 2 for verify")

    # theorem hypotheses (overridable with --exploratory)
    hypothesis(beta < -2.0, f"beta < -2 violated: beta = {beta}")
    alpha_bound = 2.0 * min(beta, -3.0) - 1.0
    hypothesis(
        alpha < alpha_bound,
        f"alpha < 2*min(beta,-3) - 1 violated: alpha = {alpha}, bound = {alpha_bound}",
    )
    hypothesis(kappa_g >= 16.0, f"kappa_g >= 16 violated: kappa_g = {kappa_g}")
    if kappas:
        hypothesis(
            min(kappas) >= 4.0 * kappa_g**2,
            f"kappa >= 4*kappa_g^2 violated: kappa = {min(kappas)}, "
            f"4*kappa_g^2 = {4.0 * kappa_g**2}",
        )

    params = VelocityParams(beta=beta, ue=ue, uf=uf, law=law)
    cfg = RunConfig(
        n=n,
        velocity=params,
        source=source,
        correlation=corr,
        mode=mode,
        m_samples=m_samples,
        seed=seed,
        tol=tol,
        max_iter=max_iter,
        t_final=t_final,
        dt=dt,
        kappas=kappas,
        sweep=sweep,
        u_values=u_values,
        time_modes=time_modes,
        series_order=series_order,
        out_dir=out_dir,
        formats=formats,
        exploratory=exploratory,
        warnings=warnings,
    )
    if overrides:
        for key, val in overrides.items():
            setattr(cfg, key, val)
    cfg.resolved = _echo(cfg)
    return cfg


def _echo(cfg: RunConfig) -> dict:
    """Fully-resolved configuration (defaults included) for the manifest."""
    src = cfg.source
    return {
        "lattice": {"N": cfg.n},
        "velocity": {
            "beta": cfg.velocity.beta,
            "Ue": cfg.velocity.ue,
            "Uf": cfg.velocity.uf,
            "law": cfg.velocity.law.kind,
            "varsigma": cfg.velocity.varsigma,
            "xi": cfg.velocity.xi,
        },
        "source": {
            "n_explicit_modes": len(src.explicit),
            "cg": src.cg,
            "alpha": src.alpha,
            "kappa_g": src.kappa_g,
            "randomized": src.randomized,
            "varrho": src.law.rho,
        },
        "correlation": {
            "kind": cfg.correlation.kind,
            "chi_coeff": cfg.correlation.chi_coeff,
            "chi_power": cfg.correlation.chi_power,
        },
        "run": {
            "mode": cfg.mode,
            "M": cfg.m_samples,
            "seed": cfg.seed,
            "tol": cfg.tol,
            "max_iter": cfg.max_iter,
            "T": cfg.t_final,
            "dt": cfg.dt,
            "kappas": list(cfg.kappas),
            "sweep": cfg.sweep,
            "u_values": list(cfg.u_values),
            "time_modes": [list(m) for m in cfg.time_modes],
            "series_order": cfg.series_order,
        },
        "output": {"dir": cfg.out_dir, "formats": list(cfg.formats)},
        "exploratory": cfg.exploratory,
        "warnings": list(cfg.warnings),
    }
