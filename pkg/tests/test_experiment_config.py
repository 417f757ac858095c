"""Tests for presets, config parsing and the run manifest."""

import math

import pytest

from src.ensembles import Sampler
from src.experiment_config import (
    PARAMETERS,
    PRESET_DEFAULTS,
    PRESET_DESCRIPTIONS,
    SCHEMA_VERSION,
    ExperimentConfigError,
    ExperimentSpec,
    Preset,
    load_manifest,
    parse_config_text,
    parse_set_pairs,
    resolve_spec,
    validate_config,
    write_manifest,
)
from src.lattice_model import Boundary


class TestPresets:
    """Preset tables are complete and consistent."""

    def test_every_preset_has_defaults_and_description(self):
        assert set(PRESET_DEFAULTS) == set(Preset)
        assert set(PRESET_DESCRIPTIONS) == set(Preset)

    def test_every_default_key_is_a_known_parameter(self):
        for preset, defaults in PRESET_DEFAULTS.items():
            unknown = set(defaults) - set(PARAMETERS)
            assert not unknown, f"{preset}: {unknown}"

    @pytest.mark.parametrize("preset", list(Preset))
    def test_every_preset_resolves(self, preset):
        spec = resolve_spec(preset=preset.value)
        assert spec.name is preset
        assert spec.root_seed == 0

    def test_depletion_defaults(self):
        spec = resolve_spec(preset="fig3_depletion")
        assert spec["L"] == 20
        assert spec["gamma"] == 0.1
        assert spec["n_traj"] == 1000
        assert spec["sampler"] == "zone_edge_bec"


class TestParsing:
    """Flat key = value text."""

    def test_comments_and_blank_lines(self):
        entries, problems = parse_config_text("# header\n\nL = 8   # inline\n g=2.5\n")
        assert entries == {"L": "8", "g": "2.5"}
        assert problems == []

    def test_syntax_problems(self):
        entries, problems = parse_config_text("L = 8\nnot a pair\nL = 10\n= 3\n")
        assert entries == {"L": "8"}
        assert len(problems) == 3
        assert "line 2" in problems[0]
        assert "duplicate key 'L'" in problems[1]
        assert "missing key" in problems[2]

    def test_set_pairs(self):
        entries, problems = parse_set_pairs(["k=3", " t_final = 5 ", "broken"])
        assert entries == {"k": "3", "t_final": "5"}
        assert problems == ["--set 'broken': expected key=value"]


class TestResolveSpec:
    """Merging preset, file and --set values."""

    def test_set_overrides_preset(self):
        spec = resolve_spec(preset="bloch_verify", set_pairs=["k=2", "t_final=5"])
        assert spec["k"] == 2
        assert spec["t_final"] == 5.0
        assert spec.overrides == {"k": 2, "t_final": 5.0}

    def test_set_overrides_file(self):
        text = f"schema_version = {SCHEMA_VERSION}\npreset = bloch_verify\nk = 1\n"
        spec = resolve_spec(config_text=text, set_pairs=["k=2"])
        assert spec["k"] == 2

    def test_seed_and_output_dir(self):
        spec = resolve_spec(preset="bloch_verify", seed=42, output_dir="out/x")
        assert spec.root_seed == 42
        assert spec.output_dir == "out/x"

    def test_env_defaults_fill_absent_seed_and_output_dir(self):
        spec = resolve_spec(preset="bloch_verify", env_defaults={"seed": "11", "output_dir": "env/out"})
        assert spec.root_seed == 11
        assert spec.output_dir == "env/out"

    def test_config_file_beats_env_defaults(self):
        text = f"schema_version = {SCHEMA_VERSION}\npreset = bloch_verify\nseed = 3\noutput_dir = runs/a\n"
        spec = resolve_spec(config_text=text, env_defaults={"seed": "5", "output_dir": "env/out"})
        assert spec.root_seed == 3
        assert spec.output_dir == "runs/a"

    def test_flags_beat_config_file_and_env_defaults(self):
        text = f"schema_version = {SCHEMA_VERSION}\npreset = bloch_verify\nseed = 3\n"
        spec = resolve_spec(config_text=text, seed=9, output_dir="flag/out", env_defaults={"seed": "5"})
        assert spec.root_seed == 9
        assert spec.output_dir == "flag/out"

    def test_tuple_parameters(self):
        spec = resolve_spec(preset="fig3d_weaklinks", set_pairs=["weak_link_distances=2,3"])
        assert spec["weak_link_distances"] == (2, 3)

    def test_all_problems_reported_at_once(self):
        with pytest.raises(ExperimentConfigError) as exc_info:
            resolve_spec(preset="bloch_verify", set_pairs=["k=abc", "zzz=1", "t_final=-1"])
        problems = exc_info.value.problems
        assert len(problems) == 3
        assert any("k: expected int" in p for p in problems)
        assert any("zzz: unknown key" in p for p in problems)
        assert any("t_final" in p and "out of range" in p for p in problems)

    def test_unknown_preset(self):
        with pytest.raises(ExperimentConfigError, match="unknown preset"):
            resolve_spec(preset="fig9")

    def test_missing_preset(self):
        with pytest.raises(ExperimentConfigError, match="preset: missing"):
            resolve_spec()

    def test_conflicting_presets(self):
        text = f"schema_version = {SCHEMA_VERSION}\npreset = fig1_shell\n"
        with pytest.raises(ExperimentConfigError, match="conflicts"):
            resolve_spec(preset="bloch_verify", config_text=text)

    def test_config_file_needs_schema_version(self):
        with pytest.raises(ExperimentConfigError, match="schema_version"):
            resolve_spec(config_text="preset = bloch_verify\n")

    def test_unsupported_schema_version(self):
        with pytest.raises(ExperimentConfigError, match="unsupported version"):
            resolve_spec(config_text="schema_version = 2\npreset = bloch_verify\n")

    @pytest.mark.parametrize("seed", [-1, 2**64])
    def test_seed_out_of_range(self, seed):
        with pytest.raises(ExperimentConfigError, match="seed"):
            resolve_spec(preset="bloch_verify", seed=seed)

    def test_choices(self):
        with pytest.raises(ExperimentConfigError, match="not one of"):
            resolve_spec(preset="fig3_depletion", set_pairs=["sampler=thermal"])

    def test_non_finite_value(self):
        with pytest.raises(ExperimentConfigError, match="not finite"):
            resolve_spec(preset="bloch_verify", set_pairs=["perturbation=inf"])


class TestCrossChecks:
    """Problems only visible once domain configs are built."""

    def test_odd_L(self):
        with pytest.raises(ExperimentConfigError, match="odd"):
            resolve_spec(preset="fig3_depletion", set_pairs=["L=21"])

    def test_weak_link_distance_beyond_half_chain(self):
        with pytest.raises(ExperimentConfigError) as exc_info:
            resolve_spec(preset="fig3d_weaklinks", set_pairs=["L=8"])
        assert len(exc_info.value.problems) == 2

    def test_mode_index_below_L(self):
        with pytest.raises(ExperimentConfigError, match="k: 6 must be < L"):
            resolve_spec(preset="bloch_verify", set_pairs=["k=6"])

    def test_integration_grid(self):
        with pytest.raises(ExperimentConfigError, match="integration"):
            resolve_spec(preset="fig3_depletion", set_pairs=["step=0.3"])

    def test_transient_shorter_than_T(self):
        with pytest.raises(ExperimentConfigError, match="transient"):
            resolve_spec(preset="fig1_lyapunov", set_pairs=["transient=200"])

    def test_xi_window(self):
        with pytest.raises(ExperimentConfigError, match="xi_t_start"):
            resolve_spec(preset="fig3_depletion", set_pairs=["xi_t_start=10"])


class TestExperimentSpec:
    """Domain configs and scaling."""

    def test_lattice_with_weak_links(self):
        spec = resolve_spec(preset="fig3_depletion", set_pairs=["weak_link_distance=2", "weak_link_epsilon=0.5"])
        cfg = spec.lattice()
        assert cfg.L == 20
        assert cfg.boundary is Boundary.PERIODIC
        assert sorted(i for i, b in enumerate(cfg.bond_factors) if b == 0.5) == [8, 11]

    def test_lattice_changes(self):
        cfg = resolve_spec(preset="correlation_time").lattice(g=8.0)
        assert cfg.g == 8.0
        assert cfg.gamma == 0.0

    def test_integrator_and_ensemble(self):
        spec = resolve_spec(preset="fig3_depletion", seed=9)
        icfg = spec.integrator()
        assert (icfg.step, icfg.sample_every, icfg.t_final) == (1.0e-3, 0.5, 400.0)
        ecfg = spec.ensemble(workers=3, n_traj=10)
        assert (ecfg.n_traj, ecfg.root_seed, ecfg.workers, ecfg.n_groups) == (10, 9, 3, 20)
        assert ecfg.sampler is Sampler.ZONE_EDGE_BEC

    def test_scaled(self):
        spec = resolve_spec(preset="fig3_depletion").scaled(0.1)
        assert spec["n_traj"] == 100
        assert spec["xi_n_traj"] == 20
        assert spec["L"] == 20

    def test_scaled_keeps_at_least_one(self):
        assert resolve_spec(preset="fig3_depletion").scaled(1e-9)["n_traj"] == 1

    def test_scale_one_is_identity(self):
        spec = resolve_spec(preset="fig1_shell")
        assert spec.scaled(1.0) is spec


class TestManifest:
    """Resolved parameters written and read back."""

    def test_text_form(self):
        spec = resolve_spec(preset="fig3d_weaklinks", seed=5)
        text = spec.to_text(header=("generated",))
        assert text.startswith("# generated\n")
        assert f"schema_version = {SCHEMA_VERSION}\n" in text
        assert "seed = 5\n" in text
        assert "weak_link_distances = 4,6,10\n" in text
        assert f"weak_link_epsilon = {1.0 / math.sqrt(10.0)!r}\n" in text

    def test_write_and_load(self, tmp_path):
        spec = resolve_spec(preset="fig3_depletion", set_pairs=["n_traj=12", "gamma=0.2"], seed=3, output_dir="runs/a")
        path = tmp_path / "sub" / "manifest.txt"
        write_manifest(spec, path, header=("test",))
        loaded = load_manifest(path)
        assert loaded.name is spec.name
        assert loaded.root_seed == 3
        assert loaded.output_dir == "runs/a"
        assert loaded.params == spec.params
        assert [p.name for p in path.parent.iterdir()] == ["manifest.txt"]

    def test_manifest_feeds_back_through_config(self, tmp_path):
        spec = resolve_spec(preset="single_site_stationary", set_pairs=["epsilons=0.3,0.1"])
        path = tmp_path / "manifest.txt"
        write_manifest(spec, path)
        again = resolve_spec(config_text=path.read_text())
        assert again.params == spec.params

    def test_validate_config_rejects_unknown_keys(self):
        with pytest.raises(ExperimentConfigError, match="unknown key"):
            validate_config(f"schema_version = {SCHEMA_VERSION}\npreset = ou_validation\nL = 8\n")

    def test_spec_defaults(self):
        spec = ExperimentSpec(name=Preset.OU_VALIDATION)
        assert spec.output_dir == "results"
        assert spec["tau"] == 0.5
