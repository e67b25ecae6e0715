"""Tests for lab_config.py - TOML parsing, validation and the schema listing."""

import pytest

MINIMAL = """
[[experiment]]
name = "rate"
kind = "smooth-rate"
solver = { h = 0.015625 }
"""


def _config(body: str, top: str = ""):
    from lab_config import parse_config
    return parse_config(top + "\n" + body)


class TestParse:
    """Test parse_config on valid input."""

    def test_defaults(self):
        cfg = _config(MINIMAL)
        assert (cfg.seed, cfg.out, cfg.jobs) == (0, "runs/latest", 1)
        exp = cfg.experiment("rate")
        assert exp.binding
        assert exp.domain == {"kind": "disk"}
        assert exp.solver.mode == "matched"
        assert exp.solver.k == tuple(float(k) for k in range(2, 25, 2))
        assert exp.solver.k_tol == 1e-6
        assert exp.levels_per_octave == 4
        assert exp.window is None

    def test_top_level_and_fields(self):
        cfg = _config("""
[[experiment]]
name = "corner"
kind = "corner-rate"
domain = { kind = "sector", mu = 0.75 }
solver = { h = 0.0078125, mode = "constant_k", k = [2.0, 5.0], k_tol = 0.1 }
window = [0.1, 0.2]
slope_tol = 0.3
theta = 0.5
""", top='seed = 9\nout = "runs/x"\njobs = 3')
        assert (cfg.seed, cfg.out, cfg.jobs) == (9, "runs/x", 3)
        exp = cfg.experiments[0]
        assert exp.window == (0.1, 0.2)
        assert exp.solver.k == (2.0, 5.0)
        assert exp.theta == 0.5
        assert exp.build_domain().corners[0].mu == pytest.approx(0.75)

    def test_disk_validate_needs_no_solver(self):
        cfg = _config("""
[[experiment]]
name = "disk"
kind = "disk-validate"
hs = [0.03125, 0.015625]
""")
        exp = cfg.experiments[0]
        assert exp.solver is None
        assert exp.hs == (0.03125, 0.015625)
        assert exp.error_tol == 5e-4

    def test_default_hs(self):
        cfg = _config('[[experiment]]\nname = "c"\nkind = "convergence-study"\n')
        assert cfg.experiments[0].hs == (1 / 32, 1 / 64, 1 / 128)

    def test_c1alpha_with_corner_is_advisory(self):
        cfg = _config("""
[[experiment]]
name = "bent"
kind = "c1alpha-rate"
domain = { kind = "c1alpha_corner", mu = 0.5, alpha = 0.5, M = 0.5 }
solver = { h = 0.0078125 }
""")
        assert cfg.experiments[0].binding is False

    def test_hash_covers_source(self):
        a = _config(MINIMAL)
        b = _config(MINIMAL + "\n# comment\n")
        assert a.sha256 != b.sha256
        assert len(a.sha256) == 64

    def test_load_config(self, config_file):
        from lab_config import load_config
        path = config_file(MINIMAL)
        assert load_config(path).experiments[0].name == "rate"


class TestRejects:
    """Every invalid input raises ConfigError."""

    @pytest.mark.parametrize("text", [
        "not = [valid",
        "seed = 1",
        MINIMAL + "\nbogus = 1",
        MINIMAL.replace('kind = "smooth-rate"', 'kind = "magic"'),
        MINIMAL.replace("solver = { h = 0.015625 }", ""),
        MINIMAL.replace("h = 0.015625", "h = -1.0"),
        MINIMAL.replace("h = 0.015625", 'h = 0.015625, mode = "fast"'),
        MINIMAL.replace("h = 0.015625", "h = 0.015625, k = [4.0, 2.0]"),
        MINIMAL.replace("h = 0.015625", "h = 0.015625, extra = 1"),
        MINIMAL + 'window = [0.2, 0.1]\n',
        MINIMAL + 'binding = "yes"\n',
        MINIMAL + 'domain = { kind = "blob" }\n',
        MINIMAL + 'domain = { kind = "disk", r = -1.0 }\n',
        MINIMAL + 'domain = { kind = "localized_pair" }\n',
        MINIMAL + MINIMAL,
        MINIMAL.replace('name = "rate"', 'name = "a/b"'),
        '[[experiment]]\nname = "s"\nkind = "supersub-audit"\nsolver = { h = 0.1 }\n',
        '[[experiment]]\nname = "s"\nkind = "supersub-audit"\nmus = [0.5, 2.5]\n',
        '[[experiment]]\nname = "d"\nkind = "disk-validate"\nhs = [0.015625, 0.03125]\n',
        '[[experiment]]\nname = "k"\nkind = "kahler-product"\ndomain = { kind = "ellipse" }\n',
        '[[experiment]]\nname = "k"\nkind = "kahler-product"\ndomain = { kind = "sector", mu = 0.5 }\n',
        'jobs = 0\n' + MINIMAL,
    ])
    def test_invalid(self, text):
        from lab_config import parse_config
        from lab_utils import ConfigError
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_unreadable_file(self, temp_dir):
        from pathlib import Path

        from lab_config import load_config
        from lab_utils import ConfigError
        with pytest.raises(ConfigError):
            load_config(Path(temp_dir) / "missing.toml")


class TestSchema:
    """Test the schema listing."""

    def test_lists_every_key_and_kind(self):
        from lab_config import EXPERIMENT_KEYS, EXPERIMENT_KINDS, SOLVER_KEYS, schema_text
        text = schema_text()
        for key, *_ in EXPERIMENT_KEYS + SOLVER_KEYS:
            assert key in text
        for kind in EXPERIMENT_KINDS:
            assert kind in text
        assert text.endswith("\n")
