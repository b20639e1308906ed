import numpy as np
import pytest
import yaml
from PIL import Image

from lanepoly import config as config_mod
from lanepoly import data
from lanepoly.cli import main
from lanepoly.errors import ConfigError


@pytest.fixture()
def gt_file(tmp_path):
    _, annos = data.generate_synthetic(3, 5, data.SyntheticSpec(), render=False)
    path = tmp_path / "gt.json"
    path.write_text(data.serialize_annotations(annos))
    return path


class TestUpperbound:
    def test_single_degree(self, gt_file, capsys):
        code = main(["upperbound", "--gt", str(gt_file), "--degree", "3",
                     "--image-size", "640x360"])
        assert code == 0
        out = capsys.readouterr().out
        assert "Acc" in out and "LPD" in out

    def test_sweep_writes_table(self, gt_file, tmp_path, capsys):
        out_path = tmp_path / "table.txt"
        code = main(["upperbound", "--gt", str(gt_file), "--sweep",
                     "--image-size", "640x360", "--out", str(out_path)])
        assert code == 0
        table = out_path.read_text().splitlines()
        assert len(table) == 6  # header + degrees 1..5

    def test_requires_exactly_one_mode(self, gt_file):
        assert main(["upperbound", "--gt", str(gt_file)]) == 1
        assert main(["upperbound", "--gt", str(gt_file), "--degree", "2",
                     "--sweep"]) == 1

    def test_degree_out_of_range(self, gt_file):
        assert main(["upperbound", "--gt", str(gt_file), "--degree", "7"]) == 1

    def test_missing_file_is_data_error(self, tmp_path):
        assert main(["upperbound", "--gt", str(tmp_path / "nope.json"),
                     "--degree", "2"]) == 2

    def test_malformed_file_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json\n")
        assert main(["upperbound", "--gt", str(bad), "--degree", "2"]) == 2

    def test_empty_file_warns_but_succeeds(self, tmp_path, capsys):
        empty = tmp_path / "empty.json"
        empty.write_text("")
        code = main(["upperbound", "--gt", str(empty), "--degree", "2"])
        assert code == 0
        assert "warning" in capsys.readouterr().err


class TestTrain:
    def test_dry_run(self, capsys):
        code = main(["train", "--preset", "overfit", "--dry-run"])
        assert code == 0
        assert "dry run ok" in capsys.readouterr().out

    def test_unknown_preset(self):
        assert main(["train", "--preset", "nonsense", "--dry-run"]) == 1

    def test_short_run_writes_artifacts(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["train", "--preset", "overfit", "--epochs", "2",
                     "--out", str(out)])
        assert code == 0
        assert (out / "checkpoint.ckpt").exists()
        assert (out / "config.yaml").exists()
        log_lines = (out / "train_log.ndjson").read_text().splitlines()
        assert len(log_lines) == 2
        cfg = config_mod.load(out / "config.yaml")
        assert cfg.train.epochs == 2

    def test_invalid_config_file(self, tmp_path):
        bad = tmp_path / "cfg.yaml"
        bad.write_text("nonsense_section: {a: 1}\n")
        assert main(["train", "--config", str(bad), "--dry-run"]) == 1


class TestEvaluate:
    def test_self_evaluation(self, gt_file, capsys):
        code = main(["evaluate", "--gt", str(gt_file), "--pred", str(gt_file),
                     "--image-size", "640x360"])
        assert code == 0
        assert "Acc 1.0000" in capsys.readouterr().out

    def test_requires_exactly_one_source(self, gt_file):
        assert main(["evaluate", "--gt", str(gt_file)]) == 1

    def test_key_mismatch(self, gt_file, tmp_path):
        _, annos = data.generate_synthetic(3, 5, data.SyntheticSpec(),
                                           render=False)
        renamed = [data.ImageAnnotation("other/" + a.raw_file, a.h_samples,
                                        a.lanes, a.image_size) for a in annos]
        pred = tmp_path / "pred.json"
        pred.write_text(data.serialize_annotations(renamed))
        assert main(["evaluate", "--gt", str(gt_file), "--pred", str(pred),
                     "--image-size", "640x360"]) == 2

    def test_checkpoint_inference(self, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["train", "--preset", "overfit", "--epochs", "2",
                     "--out", str(run)]) == 0
        # materialize the synthetic dataset the preset trains on
        cfg = config_mod.overfit_preset()
        images, annos = data.generate_synthetic(
            cfg.synthetic.seed, cfg.synthetic.n_images, cfg.synthetic.spec())
        gt = tmp_path / "gt.json"
        gt.write_text(data.serialize_annotations(annos))
        img_root = tmp_path / "imgs"
        for img, a in zip(images, annos):
            target = img_root / a.raw_file
            target.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(img).save(target)
        out = tmp_path / "report.txt"
        code = main(["evaluate", "--gt", str(gt), "--checkpoint",
                     str(run / "checkpoint.ckpt"), "--images", str(img_root),
                     "--image-size", "640x360", "--out", str(out)])
        assert code == 0
        assert out.exists() and out.with_suffix(".pred.json").exists()


class TestOverlay:
    def test_overlay_writes_pngs(self, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--preset", "overfit", "--epochs", "2",
                     "--out", str(run)]) == 0
        img_path = tmp_path / "scene.png"
        rng = np.random.default_rng(0)
        Image.fromarray(rng.integers(0, 255, (360, 640), dtype=np.uint8)
                        ).save(img_path)
        out_dir = tmp_path / "overlays"
        code = main(["overlay", "--checkpoint", str(run / "checkpoint.ckpt"),
                     "--images", str(img_path), "--out", str(out_dir)])
        assert code == 0
        assert (out_dir / "scene.png").exists()

    def test_all_inputs_failing_is_data_error(self, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--preset", "overfit", "--epochs", "2",
                     "--out", str(run)]) == 0
        code = main(["overlay", "--checkpoint", str(run / "checkpoint.ckpt"),
                     "--images", str(tmp_path / "missing.png"),
                     "--out", str(tmp_path / "o")])
        assert code == 2


class TestConfig:
    def test_dump_load_round_trip(self):
        cfg = config_mod.overfit_preset()
        text = config_mod.dump(cfg)
        again = config_mod.from_dict(yaml.safe_load(text))
        assert again == cfg
        assert config_mod.dump(again) == text

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            config_mod.from_dict({"model": {"bogus": 1}})

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            config_mod.from_dict({"bogus": {}})

    def test_validation(self):
        with pytest.raises(ConfigError):
            config_mod.from_dict({"train": {"lr": -1.0}})
        with pytest.raises(ConfigError):
            config_mod.from_dict({"train": {"conf_threshold": 1.5}})
        with pytest.raises(ConfigError):
            config_mod.from_dict({"loss": {"w_p": -3.0}})

    def test_defaults_match_reference_hyperparameters(self):
        cfg = config_mod.RunConfig()
        assert cfg.loss.w_p == 300.0
        assert cfg.loss.tau_loss_px == 20.0
        assert cfg.train.lr == 3e-4
        assert cfg.train.period == 770
        assert cfg.model.degree == 3 and cfg.model.m_max == 5
        assert cfg.model.input_size == (640, 360)
        assert cfg.augment.crop_size == (1152, 648)
        assert cfg.augment.max_rotation_deg == 10.0
