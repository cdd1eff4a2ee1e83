import numpy as np
import pytest

import app.trainer.loop as loop
from app.errors import CheckpointError, ConfigMismatchError, GradientError, NumericalAbortError
from app.models import RefinerArch
from app.nets import frozen, load_checkpoint_with_manifest, refine_array
from app.paths import get_run_dir
from app.toyworld import realize, simulate
from app.trainer import (
    TrainLog,
    init_state,
    latest_checkpoint,
    prepare,
    resume,
    save_state,
    train,
    train_step,
)
from app.trainer.loop import pretrain_discriminator, pretrain_refiner, refiner_update
from app.trainer.train_log import HEADER, LOG_FILE_NAME, PRETRAIN_LOG_FILE_NAME, TrainRecord


@pytest.fixture
def pools(tiny_config):
    world, data = tiny_config.world, tiny_config.data
    return simulate(world, data.n_synthetic, 1).pixels, realize(world, data.n_real, 2).pixels


def with_train(config, **update):
    return config.model_copy(update={"train": config.train.model_copy(update=update)})


def run(config, pools, run_dir=None):
    return train(prepare(init_state(config, *pools), run_dir), run_dir)


class TestContract:
    def test_update_counts(self, tiny_config, pools):
        state = run(tiny_config, pools)
        cfg = tiny_config.train
        assert state.step == cfg.steps
        assert state.refiner_updates == cfg.k_g * cfg.steps
        assert state.disc_updates == cfg.k_d * cfg.steps
        assert len(state.log) == cfg.steps
        assert all(r.is_finite() for r in state.log)

    def test_buffer_filled_by_prepare(self, tiny_config, pools):
        state = prepare(init_state(tiny_config, *pools))
        assert state.buffer.filled
        assert len(state.buffer) == tiny_config.train.capacity

    def test_train_without_prepare_rejected(self, tiny_config, pools):
        with pytest.raises(ValueError):
            train(init_state(tiny_config, *pools))

    def test_no_history_mode(self, tiny_config, pools):
        config = with_train(tiny_config, use_history=False)
        state = run(config, pools)
        assert not state.buffer.filled
        assert state.disc_updates == config.train.steps

    def test_split_history_mode(self, tiny_config, pools):
        state = run(with_train(tiny_config, history_mode="split"), pools)
        assert state.step == tiny_config.train.steps

    def test_discriminator_unchanged_during_refiner_updates(self, tiny_config, pools):
        state = prepare(init_state(tiny_config, *pools))
        phi_before, theta_before = state.phi.fingerprint(), state.theta.fingerprint()
        with frozen(state.phi):
            refiner_update(state, 1)
        assert state.phi.fingerprint() == phi_before
        assert state.theta.fingerprint() != theta_before

    def test_frozen_violation_detected(self, tiny_config, pools, monkeypatch):
        state = prepare(init_state(tiny_config, *pools))
        original = loop.refiner_update

        def tampering_update(st, step):
            result = original(st, step)
            st.phi.tensors()[0].data = st.phi.tensors()[0].data + 1.0
            return result

        monkeypatch.setattr(loop, "refiner_update", tampering_update)
        with pytest.raises(GradientError):
            train_step(state)

    def test_zero_learning_rates_keep_params(self, tiny_config, pools):
        state = prepare(init_state(with_train(tiny_config, lr_r=0.0, lr_d=0.0), *pools))
        theta, phi = state.theta.fingerprint(), state.phi.fingerprint()
        train(state)
        assert state.theta.fingerprint() == theta
        assert state.phi.fingerprint() == phi


def _chunk_means(values, size):
    return [float(np.mean(values[i:i + size])) for i in range(0, len(values), size)]


class TestPretraining:
    @pytest.fixture
    def pixel_refiner_config(self, tiny_config):
        config = with_train(tiny_config, pretrain_r_steps=1000, lr_r=0.1, log_every=1000)
        return config.model_copy(update={"refiner": RefinerArch(stem_filters=8, resblocks=0, kernel=1)})

    def test_refiner_learns_identity(self, pixel_refiner_config, pools):
        state = init_state(pixel_refiner_config, *pools)
        synthetic = state.synthetic.pool
        before = np.abs(refine_array(state.theta, synthetic) - synthetic).mean()
        losses = []
        pretrain_refiner(state.theta, state.synthetic, pixel_refiner_config.train, losses)
        after = np.abs(refine_array(state.theta, synthetic) - synthetic).mean()
        assert len(losses) == 1000
        assert after < 0.05
        assert after < before

    def test_refiner_loss_decreases(self, pixel_refiner_config, pools):
        state = init_state(pixel_refiner_config, *pools)
        losses = []
        pretrain_refiner(state.theta, state.synthetic, pixel_refiner_config.train, losses)
        means = _chunk_means(losses, 200)
        assert all(later <= earlier * 1.1 for earlier, later in zip(means, means[1:])), means
        assert means[-1] < 0.5 * means[0]

    def test_discriminator_learns_and_refiner_stays_frozen(self, tiny_config, pools):
        config = with_train(tiny_config, pretrain_d_steps=200, lr_d=0.05, log_every=1000)
        state = init_state(config, *pools)
        theta_before = state.theta.fingerprint()
        losses = []
        pretrain_discriminator(state.phi, state.theta, state.synthetic, state.real, config.train, losses)
        assert len(losses) == 200
        assert np.mean(losses[-20:]) < np.mean(losses[:20])
        assert state.theta.fingerprint() == theta_before

    def test_prepare_records_both_phases(self, tiny_config, pools):
        state = prepare(init_state(tiny_config, *pools))
        phases = [row[0] for row in state.pretrain_rows]
        assert phases.count("refiner") == tiny_config.train.pretrain_r_steps
        assert phases.count("discriminator") == tiny_config.train.pretrain_d_steps


class TestDeterminism:
    def test_identical_seeds_identical_logs(self, tiny_config, pools):
        a = run(tiny_config, pools)
        b = run(tiny_config, pools)
        assert a.log.to_csv() == b.log.to_csv()
        assert a.theta.equals(b.theta)

    def test_different_seeds_differ(self, tiny_config, pools):
        a = run(tiny_config, pools)
        b = run(with_train(tiny_config, seed=1), pools)
        assert a.log.to_csv() != b.log.to_csv()


class TestRunDirectory:
    def test_outputs(self, tiny_config, pools, base_dir):
        run_dir = get_run_dir(tiny_config.name)
        run(tiny_config, pools, run_dir)
        assert (run_dir / LOG_FILE_NAME).read_text().splitlines()[0] == ",".join(HEADER)
        assert (run_dir / PRETRAIN_LOG_FILE_NAME).exists()
        assert sorted(p.name for p in (run_dir / "refined").iterdir()) == ["step_000002.tns", "step_000004.tns"]
        assert latest_checkpoint(run_dir / "ckpt").name == "step_000004"
        assert TrainLog.read_csv(run_dir / LOG_FILE_NAME) == TrainLog.read_csv(
            run_dir / "ckpt" / "step_000004" / LOG_FILE_NAME)

    def test_numerical_abort_keeps_log(self, tiny_config, pools, base_dir, monkeypatch):
        original = loop.refiner_update

        def exploding(st, step):
            if step == 3:
                raise NumericalAbortError("loss non finita", step=step)
            return original(st, step)

        monkeypatch.setattr(loop, "refiner_update", exploding)
        run_dir = get_run_dir("abort")
        with pytest.raises(NumericalAbortError) as exc:
            run(tiny_config, pools, run_dir)
        assert exc.value.step == 3
        assert len(TrainLog.read_csv(run_dir / LOG_FILE_NAME)) == 2


class TestResume:
    def test_resume_matches_uninterrupted(self, tiny_config, pools, tmp_path):
        full = run(tiny_config, pools)

        half_cfg = with_train(tiny_config, steps=2)
        partial = run(half_cfg, pools)
        save_state(partial, tmp_path / "ckpt")
        resumed = resume(tmp_path / "ckpt", tiny_config, *pools)
        assert resumed.step == 2
        train(resumed)

        assert resumed.log.to_csv() == full.log.to_csv()
        assert resumed.theta.equals(full.theta)
        assert resumed.phi.equals(full.phi)
        np.testing.assert_array_equal(resumed.buffer.images(), full.buffer.images())

    def test_checkpoints_carry_stream_rng_state(self, tiny_config, pools, tmp_path):
        state = run(with_train(tiny_config, steps=2), pools)
        path = save_state(state, tmp_path / "ckpt")
        _, refiner_manifest = load_checkpoint_with_manifest(path / "refiner")
        _, disc_manifest = load_checkpoint_with_manifest(path / "discriminator")
        assert refiner_manifest["rng_state"] == state.synthetic.rng.bit_generator.state
        assert disc_manifest["rng_state"] == state.real.rng.bit_generator.state

    def test_changed_config_rejected(self, tiny_config, pools, tmp_path):
        state = run(with_train(tiny_config, steps=2), pools)
        save_state(state, tmp_path / "ckpt")
        changed = with_train(tiny_config, lambda_reg=2.0)
        with pytest.raises(ConfigMismatchError) as exc:
            resume(tmp_path / "ckpt", changed, *pools)
        assert "train.lambda_reg" in str(exc.value)
        assert resume(tmp_path / "ckpt", changed, *pools, allow_config_change=True).step == 2

    def test_corrupt_buffer(self, tiny_config, pools, tmp_path):
        state = run(with_train(tiny_config, steps=2), pools)
        path = save_state(state, tmp_path / "ckpt")
        (path / "buffer" / "buffer.tns").write_bytes(b"TNS1")
        with pytest.raises(CheckpointError):
            resume(tmp_path / "ckpt", tiny_config, *pools)

    def test_no_checkpoint(self, tiny_config, pools, tmp_path):
        with pytest.raises(CheckpointError):
            resume(tmp_path, tiny_config, *pools)


class TestTrainLog:
    def test_csv_round_trip(self, tmp_path):
        log = TrainLog([TrainRecord(1, 1.5, 1.0, 0.5, 2.0, 0.4, 0.6), TrainRecord(2, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)])
        assert TrainLog.read_csv(log.write_csv(tmp_path / "log.csv")) == log

    def test_steps_must_increase(self):
        log = TrainLog([TrainRecord(2, 0, 0, 0, 0, 0, 0)])
        with pytest.raises(ValueError):
            log.append(TrainRecord(2, 0, 0, 0, 0, 0, 0))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            TrainLog.read_csv(path)


@pytest.mark.slow
def test_two_hundred_step_contract(tiny_config, pools):
    config = with_train(tiny_config, steps=200, checkpoint_every=100, snapshot_every=100, log_every=50)
    a, b = run(config, pools), run(config, pools)
    assert a.refiner_updates == config.train.k_g * 200
    assert a.disc_updates == config.train.k_d * 200
    assert a.log.to_csv() == b.log.to_csv()
