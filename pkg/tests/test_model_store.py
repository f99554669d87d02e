import os

import numpy as np
import pytest

from services.errors import ValidationError
from services.fusion import train_fusion
from services.model_store import checkpoint_exists, load_model, model_size, save_model
from services.training import TrainConfig, predict_trace


@pytest.fixture(scope="module")
def model(noise_free_trace):
    config = TrainConfig(epochs=1, no_anchor_selection=True,
                         model={"channels": [4, 8], "hidden": 12, "fc_hidden": 8})
    return train_fusion([noise_free_trace], config).model


class TestCheckpoint:

    def test_round_trip_predictions(self, model, noise_free_trace, tmp_path):
        stem = tmp_path / "model"
        written = save_model(model, stem)
        assert all(os.path.exists(p) for p in written)
        assert checkpoint_exists(stem)
        loaded = load_model(stem)
        assert loaded.kind == "fusion" and loaded.no_anchor_selection
        np.testing.assert_array_equal(predict_trace(loaded, noise_free_trace).xy(),
                                      predict_trace(model, noise_free_trace).xy())

    def test_identical_bytes(self, model, tmp_path):
        save_model(model, tmp_path / "a")
        save_model(model, tmp_path / "b")
        for suffix in (".tensors", ".json"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()

    def test_reported_size_matches_file(self, model, tmp_path):
        tensors_path, _ = save_model(model, tmp_path / "model")
        size = model_size(model)
        assert size["bytes"] == os.path.getsize(tensors_path)
        assert size["parameters"] == model.parameter_count()

    def test_float32_inference(self, model, noise_free_trace, tmp_path):
        save_model(model, tmp_path / "model")
        loaded = load_model(tmp_path / "model", float_mode="float32")
        assert all(t.data.dtype == np.float32 for t in loaded.params.values())
        windows = loaded.windows_for(noise_free_trace)
        assert loaded.predict_windows(windows).dtype == np.float32
        np.testing.assert_allclose(predict_trace(loaded, noise_free_trace).xy(),
                                   predict_trace(model, noise_free_trace).xy(), atol=1e-3)

    def test_float64_by_default(self, model, noise_free_trace, tmp_path):
        save_model(model, tmp_path / "model")
        loaded = load_model(tmp_path / "model")
        assert loaded.predict_windows(loaded.windows_for(noise_free_trace)).dtype == np.float64

    def test_unknown_float_mode(self, model, tmp_path):
        save_model(model, tmp_path / "model")
        with pytest.raises(ValidationError):
            load_model(tmp_path / "model", float_mode="float16")

    def test_missing_checkpoint(self, tmp_path):
        assert not checkpoint_exists(tmp_path / "absent")
        with pytest.raises(OSError):
            load_model(tmp_path / "absent")

    def test_unknown_kind(self, model, tmp_path):
        _, sidecar = save_model(model, tmp_path / "model")
        with open(sidecar) as f:
            text = f.read().replace('"fusion"', '"transformer"')
        with open(sidecar, "w") as f:
            f.write(text)
        with pytest.raises(ValidationError):
            load_model(tmp_path / "model")
