"""Tests for configuration parsing/validation, serialization, and the CLI."""

import json

import numpy as np
import pytest

from tracerlab import rng as trng
from tracerlab.cli import main
from tracerlab.config import ConfigError, default_kappas, load_config
from tracerlab.serialize import (
    field_from_csv,
    field_from_npz,
    field_to_csv,
    field_to_npz,
    vector_from_csv,
    vector_to_csv,
)
from tracerlab.spectral import get_lattice
from tracerlab.synthesis import (
    SourceSpec,
    VelocityParams,
    synth_source,
    synth_velocity_static,
)

MINIMAL = """
[lattice]
N = 8

[velocity]
beta = -2.5

[source]
modes = 1 0 0 1.0 0.0

[run]
seed = 3
kappas = 2
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestConfig:
    def test_minimal_defaults_filled(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, MINIMAL), exploratory=True)
        assert cfg.n == 8
        assert cfg.velocity.ue == 1.0
        assert cfg.mode == "verify"
        assert cfg.resolved["velocity"]["law"] == "unit"
        assert cfg.kappas == (2.0,)

    def test_default_kappas(self):
        assert default_kappas(32) == (1, 2, 4, 8, 16)

    def test_shallow_beta_rejected(self, tmp_path):
        text = MINIMAL.replace("beta = -2.5", "beta = -1.8333")
        with pytest.raises(ConfigError, match="beta < -2"):
            load_config(write_cfg(tmp_path, text))

    def test_shallow_beta_warns_in_exploratory(self, tmp_path):
        text = MINIMAL.replace("beta = -2.5", "beta = -1.8333")
        cfg = load_config(write_cfg(tmp_path, text), exploratory=True)
        assert any("beta < -2" in w for w in cfg.warnings)

    def test_alpha_hypothesis_rejected(self, tmp_path):
        text = MINIMAL + "\n"
        text = text.replace("modes = 1 0 0 1.0 0.0", "modes = 1 0 0 1.0 0.0\nalpha = -5.0")
        with pytest.raises(ConfigError, match=r"alpha < 2\*min\(beta,-3\) - 1"):
            load_config(write_cfg(tmp_path, text))

    def test_bandwidth_hypothesis_rejected(self, tmp_path):
        text = MINIMAL.replace("modes = 1 0 0 1.0 0.0", "modes = 1 0 0 1.0 0.0\nkappa_g = 4")
        with pytest.raises(ConfigError, match="kappa_g >= 16"):
            load_config(write_cfg(tmp_path, text))

    def test_unknown_key_rejected(self, tmp_path):
        text = MINIMAL.replace("seed = 3", "seed = 3\nturbo = yes")
        with pytest.raises(ConfigError, match="unknown key run.turbo"):
            load_config(write_cfg(tmp_path, text))

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config section"):
            load_config(write_cfg(tmp_path, MINIMAL + "\n[extra]\nx = 1\n"))

    def test_dyad_exceeding_lattice_rejected(self, tmp_path):
        text = MINIMAL.replace("kappas = 2", "kappas = 8")
        with pytest.raises(ConfigError, match="exceeds lattice.N"):
            load_config(write_cfg(tmp_path, text), exploratory=True)

    def test_malformed_mode_entry(self, tmp_path):
        text = MINIMAL.replace("modes = 1 0 0 1.0 0.0", "modes = 1 0 0")
        with pytest.raises(ConfigError, match="kx ky kz re im"):
            load_config(write_cfg(tmp_path, text), exploratory=True)


class TestSerialization:
    def test_field_csv_roundtrip(self, tmp_path):
        lat = get_lattice(6)
        src = SourceSpec.band(2, randomized=True)
        field = synth_source(src, lat, trng.stream(3))
        path = tmp_path / "field.csv"
        field_to_csv(field, path)
        back = field_from_csv(path)
        assert back.lattice.radius == 6
        assert np.allclose(back.coeffs, field.coeffs, rtol=0, atol=1e-16)

    def test_field_npz_bit_exact(self, tmp_path):
        lat = get_lattice(5)
        field = synth_source(SourceSpec.band(2, randomized=True), lat, trng.stream(4))
        path = tmp_path / "field.npz"
        field_to_npz(field, path)
        back = field_from_npz(path)
        assert np.array_equal(back.coeffs, field.coeffs)

    def test_vector_csv_roundtrip(self, tmp_path):
        lat = get_lattice(5)
        modes = synth_velocity_static(VelocityParams(beta=-2.5), lat, trng.stream(5))
        field = modes.field()
        path = tmp_path / "vel.csv"
        vector_to_csv(field, path)
        back = vector_from_csv(path)
        assert np.allclose(back.coeffs, field.coeffs, rtol=0, atol=1e-16)

    def test_csv_deterministic_bytes(self, tmp_path):
        lat = get_lattice(4)
        field = synth_source(SourceSpec.band(2), lat)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        field_to_csv(field, p1)
        field_to_csv(field, p2)
        assert p1.read_bytes() == p2.read_bytes()


SMALL_VERIFY = """
[lattice]
N = 8

[velocity]
beta = -2.5

[source]
band_radius = 2

[run]
M = 30
seed = 5
kappas = 2
mode = verify

[output]
dir = {out}
"""


class TestCli:
    def test_config_error_exit_code(self, tmp_path):
        bad = write_cfg(tmp_path, MINIMAL.replace("beta = -2.5", "beta = -1.0"))
        assert main(["verify", "--config", str(bad)]) == 2

    def test_synth_deterministic(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_VERIFY.format(out=tmp_path / "o"))
        for sub in ("a", "b"):
            code = main(
                ["synth", "--config", str(cfg), "--exploratory", "--out", str(tmp_path / sub)]
            )
            assert code == 0
        assert (tmp_path / "a/source.csv").read_bytes() == (tmp_path / "b/source.csv").read_bytes()
        assert (tmp_path / "a/velocity.csv").read_bytes() == (tmp_path / "b/velocity.csv").read_bytes()

    def test_verify_run_and_manifest(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_VERIFY.format(out=tmp_path / "out"))
        code = main(["verify", "--config", str(cfg), "--exploratory"])
        assert code == 0
        manifest = json.loads((tmp_path / "out" / "run.json").read_text())
        names = {o["path"] for o in manifest["outputs"]}
        assert names == {"report.csv", "report.json"}
        import hashlib

        for entry in manifest["outputs"]:
            data = (tmp_path / "out" / entry["path"]).read_bytes()
            assert hashlib.sha256(data).hexdigest() == entry["sha256"]
        assert manifest["exploratory"] is True
        assert manifest["config"]["run"]["M"] == 30

    def test_static_non_convergence_exit_3(self, tmp_path):
        text = SMALL_VERIFY.format(out=tmp_path / "big") .replace(
            "[velocity]\nbeta = -2.5", "[velocity]\nbeta = -2.5\nUe = 50.0\nUf = 50.0"
        )
        cfg = write_cfg(tmp_path, text)
        code = main(["static", "--config", str(cfg), "--exploratory"])
        assert code == 3
        diag = json.loads((tmp_path / "big" / "diagnostics.json").read_text())
        assert diag["converged"] is False

    def test_seed_override(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL_VERIFY.format(out=tmp_path / "s1"))
        main(["synth", "--config", str(cfg), "--exploratory", "--seed", "99"])
        manifest = json.loads((tmp_path / "s1" / "run.json").read_text())
        assert manifest["seed"] == 99
