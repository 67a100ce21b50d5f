import numpy as np
import pytest

from irisauth.checkpoint import load_checkpoint, save_checkpoint
from irisauth.detect import AnchorGridConfig, DetectorConfig, build_detector
from irisauth.errors import CheckpointError
from irisauth.nn.tensor import ParamSet
from irisauth.optim import OptimHyper, OptState, amsgrad_step


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "a.w": rng.normal(size=(3, 4)).astype(np.float32),
            "a.b": np.array([0.0, -0.0, 1e-40, 3.4e38], np.float32),
            "z": np.float32(2.5).reshape(()),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tensors, meta={"kind": "test", "steps": 7})
        meta, loaded = load_checkpoint(path)
        assert meta == {"kind": "test", "steps": 7}
        assert list(loaded) == list(tensors)
        for name in tensors:
            assert loaded[name].shape == tensors[name].shape
            assert loaded[name].tobytes() == tensors[name].tobytes()

    def test_declaration_order_preserved(self, tmp_path):
        tensors = {f"p{i}": np.full(2, i, np.float32) for i in range(10)}
        path = tmp_path / "ordered.ckpt"
        save_checkpoint(path, tensors)
        _, loaded = load_checkpoint(path)
        assert list(loaded) == [f"p{i}" for i in range(10)]

    def test_detector_params_roundtrip(self, tmp_path):
        cfg = DetectorConfig(backbone_widths=(8, 12),
                             anchor=AnchorGridConfig(stride=4))
        params = build_detector(cfg, seed=1)
        path = tmp_path / "det.ckpt"
        save_checkpoint(path, params.arrays())
        _, arrays = load_checkpoint(path)
        restored = build_detector(cfg, seed=99)
        restored.load_arrays(arrays)
        for name in params.names():
            assert np.array_equal(restored[name].data, params[name].data)

    def test_opt_state_roundtrip(self, tmp_path):
        params = ParamSet()
        params.add("w", np.zeros(4))
        state = OptState.for_params(params)
        for i in range(3):
            amsgrad_step(params, {"w": np.full(4, i + 0.5, np.float32)},
                         state, OptimHyper())
        path = tmp_path / "opt.ckpt"
        save_checkpoint(path, state.arrays(), meta={"t": state.t})
        meta, arrays = load_checkpoint(path)
        restored = OptState.from_arrays(arrays, t=meta["t"])
        assert restored.t == 3
        assert np.array_equal(restored.v_hat["w"], state.v_hat["w"])


class TestValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT\n{}\n")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        save_checkpoint(path, {"w": np.ones(8, np.float32)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "extra.ckpt"
        save_checkpoint(path, {"w": np.ones(2, np.float32)})
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "ghost.ckpt")
