import numpy as np
import pytest

from aspun.cassi import CodedMask, DispersionSpec, Measurement, shift_back
from aspun.cli import main, parse_config_text
from aspun.errors import ConfigError
from aspun.fista import gradient_step
from aspun.io import read_cube_file, write_checkpoint, write_cube_file
from aspun.network import INITIAL_STEP, NetworkConfig, UnfoldingNetwork


TINY_CONFIG = """
# desk-scale test configuration
sim.d = 1
sim.channels = 4
net.stages = 1
net.base_channels = 8
net.window_size = 4
net.pool_factor = 2
net.heads = 2
scene.height = 16
scene.width = 16
scene.train_count = 2
scene.eval_count = 1
train.total_steps = 2
train.eval_interval = 1
solver.reg_weight = 0.0
solver.max_iters = 13
solver.tolerance = 0.0
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    return path


def write_instance(tmp_path, height=16, width=16, channels=4, seed=0):
    rng = np.random.default_rng(seed)
    cube = rng.uniform(0, 1, (height, width, channels))
    mask = (rng.uniform(0, 1, (height, width)) > 0.5).astype(float)
    write_cube_file(tmp_path / "cube.hsc", cube)
    write_cube_file(tmp_path / "mask.hsc", mask)
    return cube, mask


class TestConfigParsing:
    def test_defaults_and_overrides(self):
        cfg = parse_config_text("net.stages = 6\n")
        assert cfg["net.stages"] == 6
        assert cfg["net.base_channels"] == 16  # default

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text("# comment\n\nsim.d = 2  # trailing\n")
        assert cfg["sim.d"] == 2

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config_text("sim.d = 1\nnot.a.key = 3\n")
        assert info.value.line == 2

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config_text("\nsim.d = banana\n")
        assert info.value.line == 2

    def test_bad_bool(self):
        with pytest.raises(ConfigError):
            parse_config_text("net.use_gla = maybe\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError) as info:
            parse_config_text("just words\n")
        assert info.value.line == 1

    def test_builders(self):
        cfg = parse_config_text("net.attention = wmsa\nsolver.step_size = 0.5\n")
        assert cfg.network_config().attention_kind == "wmsa"
        assert cfg.solver_config().step_size == 0.5
        assert parse_config_text("").solver_config().step_size is None


class TestSimulateCommand:
    def test_round_trip_width(self, tmp_path):
        write_instance(tmp_path)
        out = tmp_path / "meas.hsc"
        code = main(["simulate", "--cube", str(tmp_path / "cube.hsc"),
                     "--mask", str(tmp_path / "mask.hsc"), "--d", "1",
                     "--out", str(out)])
        assert code == 0
        meas = read_cube_file(out)
        assert meas.shape == (16, 16 + 3, 1)

    def test_noiseless_runs_identical(self, tmp_path):
        write_instance(tmp_path)
        outs = []
        for name in ("a.hsc", "b.hsc"):
            main(["simulate", "--cube", str(tmp_path / "cube.hsc"),
                  "--mask", str(tmp_path / "mask.hsc"), "--noise", "0",
                  "--out", str(tmp_path / name)])
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_seeded_noise_deterministic(self, tmp_path):
        write_instance(tmp_path)
        outs = []
        for name in ("a.hsc", "b.hsc"):
            main(["simulate", "--cube", str(tmp_path / "cube.hsc"),
                  "--mask", str(tmp_path / "mask.hsc"), "--noise", "0.1",
                  "--seed", "7", "--out", str(tmp_path / name)])
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_identity_chain_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        band = rng.uniform(0, 1, (8, 8, 1))
        write_cube_file(tmp_path / "band.hsc", band)
        write_cube_file(tmp_path / "ones.hsc", np.ones((8, 8)))
        out = tmp_path / "meas.hsc"
        main(["simulate", "--cube", str(tmp_path / "band.hsc"),
              "--mask", str(tmp_path / "ones.hsc"), "--d", "0", "--out", str(out)])
        assert out.read_bytes() == (tmp_path / "band.hsc").read_bytes()

    def test_bad_magic_exits_3(self, tmp_path, capsys):
        (tmp_path / "junk.hsc").write_bytes(b"garbage bytes here")
        code = main(["simulate", "--cube", str(tmp_path / "junk.hsc"),
                     "--mask", str(tmp_path / "junk.hsc"), "--out",
                     str(tmp_path / "o.hsc")])
        assert code == 3
        assert "byte offset" in capsys.readouterr().err


class TestReconstructCommand:
    def test_fista_identity_system(self, tmp_path, tiny_config):
        rng = np.random.default_rng(2)
        band = rng.uniform(0, 1, (8, 8, 1))
        write_cube_file(tmp_path / "gt.hsc", band)
        write_cube_file(tmp_path / "ones.hsc", np.ones((8, 8)))
        cfg = tmp_path / "identity.cfg"
        cfg.write_text("sim.d = 0\nsim.channels = 1\nsolver.reg_weight = 0\n"
                       "solver.max_iters = 100\n")
        main(["simulate", "--cube", str(tmp_path / "gt.hsc"),
              "--mask", str(tmp_path / "ones.hsc"), "--d", "0",
              "--out", str(tmp_path / "meas.hsc")])
        code = main(["reconstruct", "--algo", "fista",
                     "--meas", str(tmp_path / "meas.hsc"),
                     "--mask", str(tmp_path / "ones.hsc"),
                     "--config", str(cfg), "--out", str(tmp_path / "rec.hsc")])
        assert code == 0
        recovered = read_cube_file(tmp_path / "rec.hsc")
        gt = read_cube_file(tmp_path / "gt.hsc")
        assert np.abs(recovered - gt).max() < 1e-6

    def test_trace_rows_equal_iterations(self, tmp_path, tiny_config):
        cube, mask = write_instance(tmp_path)
        main(["simulate", "--cube", str(tmp_path / "cube.hsc"),
              "--mask", str(tmp_path / "mask.hsc"), "--d", "1",
              "--out", str(tmp_path / "meas.hsc")])
        trace = tmp_path / "trace.csv"
        code = main(["reconstruct", "--algo", "fista",
                     "--meas", str(tmp_path / "meas.hsc"),
                     "--mask", str(tmp_path / "mask.hsc"),
                     "--config", str(tiny_config), "--out", str(tmp_path / "rec.hsc"),
                     "--trace", str(trace)])
        assert code == 0
        rows = trace.read_text().strip().splitlines()
        assert rows[0] == "iteration,objective"
        assert len(rows) - 1 == 13  # solver.max_iters with tolerance 0

    def test_aspun_requires_checkpoint(self, tmp_path, tiny_config, capsys):
        cube, mask = write_instance(tmp_path)
        main(["simulate", "--cube", str(tmp_path / "cube.hsc"),
              "--mask", str(tmp_path / "mask.hsc"), "--d", "1",
              "--out", str(tmp_path / "meas.hsc")])
        code = main(["reconstruct", "--algo", "aspun",
                     "--meas", str(tmp_path / "meas.hsc"),
                     "--mask", str(tmp_path / "mask.hsc"),
                     "--config", str(tiny_config), "--out", str(tmp_path / "rec.hsc")])
        assert code == 2
        assert "checkpoint" in capsys.readouterr().err

    def test_aspun_zero_init_checkpoint_reproduces_closed_form(self, tmp_path, tiny_config):
        cube, mask_values = write_instance(tmp_path)
        main(["simulate", "--cube", str(tmp_path / "cube.hsc"),
              "--mask", str(tmp_path / "mask.hsc"), "--d", "1",
              "--out", str(tmp_path / "meas.hsc")])
        cfg = NetworkConfig(stages=1, base_channels=8, window_size=4, pool_factor=2,
                            num_heads=2)
        net = UnfoldingNetwork(cfg, 4, rng=0)  # fresh: zero residual init
        write_checkpoint(tmp_path / "init.aspw", net.state_dict())
        code = main(["reconstruct", "--algo", "aspun",
                     "--meas", str(tmp_path / "meas.hsc"),
                     "--mask", str(tmp_path / "mask.hsc"),
                     "--config", str(tiny_config),
                     "--checkpoint", str(tmp_path / "init.aspw"),
                     "--out", str(tmp_path / "rec.hsc"),
                     "--pgm", str(tmp_path / "band.pgm")])
        assert code == 0
        meas = Measurement(read_cube_file(tmp_path / "meas.hsc")[:, :, 0])
        mask = CodedMask(read_cube_file(tmp_path / "mask.hsc")[:, :, 0])
        spec = DispersionSpec(1)
        expected = gradient_step(shift_back(meas, spec, 4), meas, mask, spec,
                                 INITIAL_STEP)
        recovered = read_cube_file(tmp_path / "rec.hsc")
        # f32 container quantization bounds the achievable agreement
        assert np.abs(recovered - expected.data).max() < 1e-5
        assert (tmp_path / "band.pgm").read_bytes()[:2] == b"P5"


class TestEvalCommand:
    def test_identical_cubes(self, tmp_path, capsys):
        rng = np.random.default_rng(3)
        cube = rng.uniform(0, 1, (16, 16, 3))
        write_cube_file(tmp_path / "x.hsc", cube)
        code = main(["eval", "--pred", str(tmp_path / "x.hsc"),
                     "--gt", str(tmp_path / "x.hsc")])
        assert code == 0
        out = capsys.readouterr().out
        assert "PSNR inf" in out
        assert "SSIM 1.0000" in out

    def test_fixed_point_formatting(self, tmp_path, capsys):
        rng = np.random.default_rng(4)
        a = rng.uniform(0, 1, (16, 16, 2))
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        write_cube_file(tmp_path / "a.hsc", a)
        write_cube_file(tmp_path / "b.hsc", b)
        main(["eval", "--pred", str(tmp_path / "a.hsc"), "--gt", str(tmp_path / "b.hsc")])
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("PSNR ") and len(out[0].split()[1].split(".")[1]) == 4
        assert out[1].startswith("SSIM ") and len(out[1].split()[1].split(".")[1]) == 4


class TestGradcheckCommand:
    def test_single_op(self, capsys):
        assert main(["gradcheck", "--op", "sigmoid"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_unknown_op(self, capsys):
        assert main(["gradcheck", "--op", "warp_drive"]) == 2

    def test_all_ops_exit_zero(self, capsys):
        assert main(["gradcheck", "--op", "all"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "conv2d" in out


class TestAblateCommand:
    def test_gla_off_smaller_and_reports_delta(self, tmp_path, tiny_config, capsys):
        code = main(["ablate", "--config", str(tiny_config), "--switch", "use_gla=off"])
        assert code == 0
        out = capsys.readouterr().out
        values = dict(line.split() for line in out.strip().splitlines())
        assert int(values["params.ablated"]) < int(values["params.full"])
        assert "psnr.delta" in values

    def test_bad_switch(self, tiny_config, capsys):
        assert main(["ablate", "--config", str(tiny_config),
                     "--switch", "use_flux=off"]) == 2


class TestUsageAndTraining:
    def test_usage_error_exit_code(self, capsys):
        assert main(["reconstruct"]) == 2

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nope = 1\n")
        cube, mask = write_instance(tmp_path)
        main(["simulate", "--cube", str(tmp_path / "cube.hsc"),
              "--mask", str(tmp_path / "mask.hsc"), "--out", str(tmp_path / "m.hsc")])
        code = main(["reconstruct", "--algo", "fista", "--meas", str(tmp_path / "m.hsc"),
                     "--mask", str(tmp_path / "mask.hsc"), "--config", str(bad),
                     "--out", str(tmp_path / "r.hsc")])
        assert code == 2
        assert "line 1" in capsys.readouterr().err

    def test_train_writes_artifacts(self, tmp_path, tiny_config, capsys):
        out_dir = tmp_path / "run"
        code = main(["train", "--config", str(tiny_config), "--out-dir", str(out_dir)])
        assert code == 0
        assert (out_dir / "checkpoint.aspw").exists()
        assert (out_dir / "loss_trace.csv").exists()
        assert (out_dir / "metrics.csv").exists()
        out = capsys.readouterr().out
        assert "loss.final" in out
