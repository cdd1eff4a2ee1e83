import json
import logging
import threading

import pytest

from app.file_lock import run_lock
from app.logging_config import RUN_LOG_FILE_NAME, run_log
from app.models import PRESETS, HistoryMode, TrainConfig, get_preset
from app.paths import (
    FAILED_SENTINEL,
    atomic_write_json,
    clear_failed,
    get_run_dir,
    mark_failed,
    read_json,
)
from app.run_config import (
    config_differences,
    config_fingerprint,
    load_config_echo,
    load_run_config,
    save_config_echo,
)


class TestPresets:
    @pytest.mark.parametrize("name", PRESETS)
    def test_all_presets_validate(self, name):
        config = get_preset(name)
        assert config.preset == name
        assert config.discriminator.layers[-1].filters == 2

    def test_desk_defaults(self):
        config = get_preset("desk")
        assert (config.world.height, config.world.width) == (32, 32)
        assert config.train.capacity == 16 * config.train.batch_size
        assert config.train.history_mode == HistoryMode.AUGMENT

    def test_gaze_full_shape(self):
        config = get_preset("gaze-full")
        assert (config.world.height, config.world.width) == (35, 55)
        assert config.train.k_g == 50

    def test_unknown(self):
        with pytest.raises(ValueError):
            get_preset("bogus")


class TestTrainConfig:
    def test_lambda_alias(self):
        assert TrainConfig(**{"lambda": 0.25}).lambda_reg == 0.25

    def test_odd_batch_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=7)

    def test_split_needs_multiple_of_four(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=6, history_mode="split")

    def test_capacity_below_half_batch(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=32, buffer_capacity=8)


class TestLoadRunConfig:
    def test_precedence(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"name": "from-file", "train": {"lambda": 0.1, "steps": 50}}))
        config = load_run_config("desk", path, {"train.steps": 7, "train.seed": None})
        assert config.name == "from-file"
        assert config.train.lambda_reg == 0.1
        assert config.train.steps == 7
        assert config.train.seed == get_preset("desk").train.seed

    def test_file_keeps_preset_fields(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"train": {"k_g": 3}}))
        config = load_run_config("gaze-full", path)
        assert config.train.k_g == 3
        assert config.world.width == 55

    @pytest.mark.parametrize("content", ["{not json", "[1, 2]"])
    def test_bad_file(self, tmp_path, content):
        path = tmp_path / "cfg.json"
        path.write_text(content)
        with pytest.raises(ValueError):
            load_run_config("desk", path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValueError):
            load_run_config("desk", tmp_path / "nope.json")

    def test_flat_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "lambda": 0.1, "T": 7, "K_g": 3, "K_d": 2, "b": 8, "lr_R": 0.002,
            "B": 64, "seed": 5, "history_mode": "split", "psi": "channel_mean",
        }))
        train = load_run_config("desk", path).train
        assert train.lambda_reg == 0.1
        assert train.steps == 7
        assert (train.k_g, train.k_d, train.batch_size) == (3, 2, 8)
        assert train.lr_r == 0.002
        assert train.capacity == 64
        assert train.seed == 5
        assert train.history_mode == HistoryMode.SPLIT
        assert train.psi.value == "channel_mean"

    def test_flat_file_accepts_field_names(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"lambda_reg": 0.2, "steps": 9}))
        train = load_run_config("desk", path).train
        assert (train.lambda_reg, train.steps) == (0.2, 9)

    def test_short_names_inside_train_section(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"train": {"T": 11, "K_g": 4}}))
        train = load_run_config("desk", path).train
        assert (train.steps, train.k_g) == (11, 4)

    def test_same_field_flat_and_nested(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"lambda": 0.1, "train": {"lambda_reg": 0.3}}))
        with pytest.raises(ValueError, match="due volte"):
            load_run_config("desk", path)

    @pytest.mark.parametrize("content", [
        {"train": {"lamda": 0.1}},
        {"lamda": 0.1},
        {"world": {"widht": 40}},
        {"discriminator": {"layers": [{"kind": "conv", "kernel": 1, "filters": 2, "strid": 1}]}},
    ])
    def test_unknown_key_rejected(self, tmp_path, content):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(content))
        with pytest.raises(ValueError, match="Configurazione non valida"):
            load_run_config("desk", path)

    def test_invalid_override(self):
        with pytest.raises(ValueError, match="Configurazione non valida"):
            load_run_config("desk", overrides={"train.lambda_reg": -1.0})

    def test_echo_round_trip(self, tmp_path, tiny_config):
        save_config_echo(tiny_config, tmp_path)
        assert load_config_echo(tmp_path) == tiny_config


class TestFingerprint:
    def test_ignores_steps_and_name(self, tiny_config):
        other = tiny_config.model_copy(update={
            "name": "other",
            "train": tiny_config.train.model_copy(update={"steps": 999, "log_every": 5}),
        })
        assert config_fingerprint(other) == config_fingerprint(tiny_config)
        assert config_differences(tiny_config, other) == {}

    def test_detects_lambda(self, tiny_config):
        other = tiny_config.model_copy(update={"train": tiny_config.train.model_copy(update={"lambda_reg": 3.0})})
        assert config_fingerprint(other) != config_fingerprint(tiny_config)
        diffs = config_differences(tiny_config, other)
        assert diffs == {"train.lambda_reg": {"saved": 0.5, "requested": 3.0}}


class TestRunDirectory:
    def test_run_dir_under_base(self, base_dir):
        assert get_run_dir("x") == base_dir / "runs" / "x"
        assert get_run_dir("x").is_dir()

    def test_failed_sentinel(self, base_dir):
        run_dir = get_run_dir("x")
        mark_failed(run_dir, "ValueError: boom")
        assert "boom" in (run_dir / FAILED_SENTINEL).read_text()
        clear_failed(run_dir)
        assert not (run_dir / FAILED_SENTINEL).exists()
        clear_failed(run_dir)

    def test_atomic_json_leaves_no_temp(self, tmp_path):
        atomic_write_json(tmp_path / "a.json", {"k": [1, 2]})
        atomic_write_json(tmp_path / "a.json", {"k": [3]})
        assert read_json(tmp_path / "a.json") == {"k": [3]}
        assert [p.name for p in tmp_path.iterdir()] == ["a.json"]

    def test_lock_is_exclusive(self, tmp_path):
        errors = []

        def contender():
            try:
                with run_lock(tmp_path, timeout=0.1):
                    pass
            except TimeoutError as e:
                errors.append(e)

        with run_lock(tmp_path):
            thread = threading.Thread(target=contender)
            thread.start()
            thread.join()
        assert len(errors) == 1
        with run_lock(tmp_path, timeout=0.1):
            pass


class TestRunLog:
    def test_mirrors_records_while_active(self, tmp_path):
        logger = logging.getLogger("app.test_run_log")
        with run_log(tmp_path) as path:
            logger.warning("[TRAIN] dentro")
        logger.warning("[TRAIN] fuori")
        text = path.read_text(encoding="utf-8")
        assert "[TRAIN] dentro" in text
        assert "fuori" not in text

    def test_appends_across_runs(self, tmp_path):
        logger = logging.getLogger("app.test_run_log")
        for message in ("prima", "seconda"):
            with run_log(tmp_path):
                logger.warning(message)
        text = (tmp_path / RUN_LOG_FILE_NAME).read_text(encoding="utf-8")
        assert "prima" in text and "seconda" in text
