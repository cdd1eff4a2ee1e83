import json
import math

import numpy as np
import pytest

from app.autograd import Tape, Tensor, backward, ops
from app.errors import CheckpointError, ShapeMismatchError
from app.models import DiscArch, RefinerArch, desk_disc_arch, gaze_full_disc_arch, hand_full_disc_arch
from app.nets import (
    build_discriminator,
    build_refiner,
    discriminate,
    discriminate_array,
    frozen,
    load_checkpoint,
    load_checkpoint_with_manifest,
    patch_grid,
    receptive_field,
    refine,
    refine_array,
    refiner_param_count,
    save_checkpoint,
)
from app.objectives import PatchMap, loss_discriminator


class TestRefiner:
    def test_shape_and_range(self, tiny_refiner_arch, rng):
        theta = build_refiner(tiny_refiner_arch, seed=0)
        x = rng.uniform(size=(3, 1, 16, 16))
        out = refine(theta, x).data
        assert out.shape == x.shape
        assert out.min() > 0.0 and out.max() < 1.0

    def test_odd_sizes_preserved(self, tiny_refiner_arch, rng):
        theta = build_refiner(tiny_refiner_arch, seed=0)
        assert refine(theta, rng.uniform(size=(1, 1, 35, 55))).shape == (1, 1, 35, 55)

    @pytest.mark.parametrize("arch", [
        RefinerArch(stem_filters=4, resblocks=1, kernel=3),
        RefinerArch(stem_filters=8, resblocks=3, kernel=5),
        RefinerArch(stem_filters=64, resblocks=4, kernel=3),
    ])
    def test_param_count_closed_form(self, arch):
        assert build_refiner(arch, seed=0).count() == refiner_param_count(arch)

    def test_deterministic_from_seed(self, tiny_refiner_arch):
        a = build_refiner(tiny_refiner_arch, seed=5)
        b = build_refiner(tiny_refiner_arch, seed=5)
        c = build_refiner(tiny_refiner_arch, seed=6)
        assert a.equals(b)
        assert not a.equals(c)

    def test_wrong_channels(self, tiny_refiner_arch, rng):
        theta = build_refiner(tiny_refiner_arch, seed=0)
        with pytest.raises(ShapeMismatchError):
            refine(theta, rng.uniform(size=(1, 3, 16, 16)))

    def test_zeroed_resblocks_are_identity(self, rng):
        theta = build_refiner(RefinerArch(stem_filters=4, resblocks=2, kernel=3), seed=3)
        plain = build_refiner(RefinerArch(stem_filters=4, resblocks=0, kernel=3), seed=3)
        for name, tensor in theta.items():
            if name.startswith("block"):
                tensor.data = np.zeros_like(tensor.data)
            else:
                plain[name].data = tensor.data.copy()
        x = rng.uniform(size=(2, 1, 12, 12))
        np.testing.assert_array_equal(refine(theta, x).data, refine(plain, x).data)

    def test_zero_head_outputs_one_half(self, tiny_refiner_arch, rng):
        theta = build_refiner(tiny_refiner_arch, seed=0)
        theta["head.w"].data = np.zeros_like(theta["head.w"].data)
        theta["head.b"].data = np.zeros_like(theta["head.b"].data)
        out = refine(theta, rng.uniform(size=(2, 1, 16, 16))).data
        assert np.all(out == 0.5)

    def test_refine_array_matches_refine(self, tiny_refiner_arch, rng):
        theta = build_refiner(tiny_refiner_arch, seed=0)
        x = rng.uniform(size=(5, 1, 16, 16)).astype(np.float32)
        np.testing.assert_array_equal(refine_array(theta, x, batch_size=2), refine(theta, x).data)


class TestDiscriminator:
    def test_patch_map_shape_and_softmax(self, tiny_disc_arch, rng):
        phi = build_discriminator(tiny_disc_arch, seed=0)
        out = discriminate(phi, rng.uniform(size=(2, 1, 16, 16))).data
        assert out.shape == (2, 2, *patch_grid(tiny_disc_arch, 16, 16))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=1e-5)

    def test_global_pool_gives_single_patch(self, tiny_disc_arch, rng):
        arch = tiny_disc_arch.model_copy(update={"global_pool": True})
        phi = build_discriminator(arch, seed=0)
        assert discriminate(phi, rng.uniform(size=(3, 1, 16, 16))).shape == (3, 2, 1, 1)

    def test_receptive_fields(self):
        assert receptive_field(desk_disc_arch()) == 15
        assert receptive_field(gaze_full_disc_arch()) == 23
        assert receptive_field(hand_full_disc_arch()) == 71

    def test_gaze_full_grid(self):
        assert patch_grid(gaze_full_disc_arch(), 35, 55) == (7, 12)
        assert patch_grid(desk_disc_arch(), 32, 32) == (8, 8)

    def test_input_smaller_than_receptive_field(self, rng):
        phi = build_discriminator(desk_disc_arch(), seed=0)
        with pytest.raises(ShapeMismatchError):
            discriminate(phi, rng.uniform(size=(1, 1, 8, 8)))

    def test_head_must_be_two_channel_1x1(self):
        with pytest.raises(ValueError):
            DiscArch(layers=[{"kind": "conv", "kernel": 3, "stride": 1, "filters": 2}])

    def test_zero_head_is_undecided(self, tiny_disc_arch, rng):
        phi = build_discriminator(tiny_disc_arch, seed=0)
        head = f"layer{len(tiny_disc_arch.layers) - 1}"
        phi[f"{head}.w"].data = np.zeros_like(phi[f"{head}.w"].data)
        phi[f"{head}.b"].data = np.zeros_like(phi[f"{head}.b"].data)
        refined = discriminate(phi, rng.uniform(size=(3, 1, 16, 16)))
        real = discriminate(phi, rng.uniform(size=(3, 1, 16, 16)))
        assert np.all(refined.data == 0.5) and np.all(real.data == 0.5)
        m = PatchMap(refined).patch_count
        assert loss_discriminator(refined, real).item() == pytest.approx(2 * m * math.log(2), rel=1e-6)

    def test_discriminate_array_matches(self, tiny_disc_arch, rng):
        phi = build_discriminator(tiny_disc_arch, seed=0)
        x = rng.uniform(size=(5, 1, 16, 16)).astype(np.float32)
        np.testing.assert_array_equal(discriminate_array(phi, x, batch_size=3), discriminate(phi, x).data)


class TestFrozen:
    def test_frozen_net_gets_no_grad(self, tiny_refiner_arch, tiny_disc_arch, rng):
        theta = build_refiner(tiny_refiner_arch, seed=0)
        phi = build_discriminator(tiny_disc_arch, seed=1)
        with frozen(phi):
            with Tape():
                loss = ops.sum(ops.log(discriminate(phi, refine(theta, Tensor(rng.uniform(size=(2, 1, 16, 16)))))))
                backward(loss, theta.tensors())
        assert all(t.grad is None for t in phi.tensors())
        assert all(t.grad is not None for t in theta.tensors())
        assert all(t.requires_grad for t in phi.tensors())


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, tiny_refiner_arch):
        theta = build_refiner(tiny_refiner_arch, seed=3)
        loaded = load_checkpoint(save_checkpoint(theta, tmp_path / "theta"))
        assert loaded.equals(theta)
        assert loaded.fingerprint() == theta.fingerprint()
        assert loaded.arch == theta.arch

    def test_rng_state_in_manifest(self, tmp_path, tiny_disc_arch):
        phi = build_discriminator(tiny_disc_arch, seed=0)
        state = np.random.default_rng(9).bit_generator.state
        _, manifest = load_checkpoint_with_manifest(save_checkpoint(phi, tmp_path / "phi", rng_state=state))
        assert manifest["rng_state"] == json.loads(json.dumps(state))

    def test_overwrite_is_atomic_replace(self, tmp_path, tiny_refiner_arch):
        path = tmp_path / "theta"
        save_checkpoint(build_refiner(tiny_refiner_arch, seed=1), path)
        second = build_refiner(tiny_refiner_arch, seed=2)
        save_checkpoint(second, path)
        assert load_checkpoint(path).equals(second)
        assert [p.name for p in tmp_path.iterdir()] == ["theta"]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path)

    def test_truncated_tensor(self, tmp_path, tiny_refiner_arch):
        path = save_checkpoint(build_refiner(tiny_refiner_arch, seed=0), tmp_path / "theta")
        victim = sorted(path.glob("*.tns"))[0]
        victim.write_bytes(victim.read_bytes()[:-4])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path, tiny_refiner_arch):
        path = save_checkpoint(build_refiner(tiny_refiner_arch, seed=0), tmp_path / "theta")
        manifest = json.loads((path / "manifest.json").read_text())
        manifest["format_version"] = 99
        (path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
