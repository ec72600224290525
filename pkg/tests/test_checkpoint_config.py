import json

import pytest

from trigcopy.checkpoint import MAGIC, checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, sha256_hex
from trigcopy.config import ConfigError, ExperimentConfig, SweepConfig, build_dist
from trigcopy.datagen import LengthDistribution, SamplerConfig
from trigcopy.model import ModelParams


@pytest.fixture
def params(rng):
    cfg = SamplerConfig(6, 2, 12)
    return ModelParams(rng.standard_normal((cfg.D, cfg.D)), rng.standard_normal((cfg.N, cfg.D)), 2, 12)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, params):
        sha = save_checkpoint(tmp_path / "a.ckpt", params, {"note": "x"})
        back, meta = load_checkpoint(tmp_path / "a.ckpt")
        assert back.W_KQ.tobytes() == params.W_KQ.tobytes()
        assert back.W_V.tobytes() == params.W_V.tobytes()
        assert (back.N_trg, back.L, meta) == (2, 12, {"note": "x"})
        assert sha == sha256_hex((tmp_path / "a.ckpt").read_bytes())

    def test_deterministic_bytes(self, params):
        assert checkpoint_bytes(params, {"b": 1, "a": 2}) == checkpoint_bytes(params, {"a": 2, "b": 1})

    def test_bad_magic(self, params):
        with pytest.raises(ValueError, match="magic"):
            parse_checkpoint(b"X" + checkpoint_bytes(params))

    def test_truncated(self, params):
        with pytest.raises(ValueError, match="bytes"):
            parse_checkpoint(checkpoint_bytes(params)[:-8])

    def test_header_shape(self, params):
        data = checkpoint_bytes(params)
        head = json.loads(data[len(MAGIC):].split(b"\n", 1)[0])
        assert head["D"] == 12 + 2 * 6


class TestBuildDist:
    def test_families(self):
        assert build_dist({"family": "point", "ell": 4}) == LengthDistribution.point(4)
        assert build_dist({"family": "uniform", "lo": 3, "hi": 8}) == LengthDistribution.uniform(3, 8)
        q = build_dist({"family": "optimal", "N_trg": 3})
        assert q.support == (1, 2, 3)
        d = build_dist({"support": [2, 5], "masses": ["1/4", "3/4"]})
        assert d.is_exact and d.masses[1] == pytest.approx(0.75)

    def test_errors(self):
        with pytest.raises(ConfigError):
            build_dist({"family": "gauss"})
        with pytest.raises(ConfigError):
            build_dist({"family": "uniform", "lo": 3})


class TestExperimentConfig:
    def test_defaults(self):
        exp = ExperimentConfig().validate()
        assert (exp.N, exp.L, exp.train.M_V, exp.train.M_KQ, exp.eval.n_test) == (32, 40, 4096, 4096, 1024)

    def test_json_round_trip(self, tmp_path):
        exp = ExperimentConfig(N=16, dist={"family": "point", "ell": 3})
        path = tmp_path / "c.json"
        path.write_text(exp.dumps())
        back = ExperimentConfig.load(path)
        assert back == exp and back.digest() == exp.digest()

    def test_partial_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"N": 64, "train": {"seed": 3}}))
        exp = ExperimentConfig.load(path)
        assert exp.N == 64 and exp.train.seed == 3 and exp.train.M_V == 4096

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown"):
            ExperimentConfig.from_dict({"NN": 3})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"train": {"lr": 3}})

    def test_validation(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(L=20).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"eval": {"ell_min": 5, "ell_max": 5}}).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"sweep": {"N_trg": [40]}}).validate()

    def test_overrides(self):
        exp = ExperimentConfig().with_overrides(N=64, seed=5, eta_V=2.0)
        assert exp.N == 64 and exp.train.seed == 5 and exp.train.eta_V == 2.0
        assert ExperimentConfig().train.seed == 0

    def test_cells_order(self):
        sw = SweepConfig(ell_min=[3, 5], ell_max=[8, 4], N_trg=[8, 4], seeds=[1, 0])
        cells = sw.cells()
        assert cells == sorted(cells)
        assert all(lo < hi for _, lo, hi, _ in cells)
        assert len(cells) == 2 * 3 * 2
