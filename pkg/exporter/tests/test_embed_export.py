import importlib.util
import json

import numpy as np
import pytest

from kgdexport.cli import main
from kgdexport.encoders import EncoderError, HashEncoder, load_encoder
from kgdexport.crops import CropError, square_crop
from kgdexport.kgde import read_kgde

HAS_TORCH = importlib.util.find_spec("torch") is not None and (
    importlib.util.find_spec("transformers") is not None
)
needs_torch = pytest.mark.skipif(not HAS_TORCH, reason="torch/transformers not installed")


class TestHashBackend:
    def test_rows_in_input_order_and_unit_norm(self, tmp_path):
        prompts = tmp_path / "prompts.txt"
        prompts.write_text("car\ndog\na small low car\n", encoding="utf-8")
        out = tmp_path / "emb.kgde"
        code = main(["export-embeddings", "--mode", "text", "--in", str(prompts),
                     "--out", str(out), "--model", "hash:24:7"])
        assert code == 0
        emb = read_kgde(out)
        assert emb.shape == (3, 24)
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), np.ones(3), atol=1e-6)
        single = HashEncoder(24, 7).encode_texts(["dog"])[0]
        np.testing.assert_allclose(emb[1], single, atol=1e-6)

    def test_identical_reruns_identical_bytes(self, tmp_path):
        prompts = tmp_path / "p.txt"
        prompts.write_text("alpha\nbeta\n", encoding="utf-8")
        outs = []
        for name in ("a.kgde", "b.kgde"):
            out = tmp_path / name
            assert main(["export-embeddings", "--mode", "text", "--in", str(prompts),
                         "--out", str(out), "--model", "hash:16"]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_hash_cannot_encode_images(self):
        with pytest.raises(EncoderError):
            HashEncoder(16).encode_images([])

    def test_bad_specs(self):
        for spec in ("hash:", "nope:1", "hf:"):
            with pytest.raises(EncoderError):
                load_encoder(spec)


class TestModelFailure:
    def test_missing_checkpoint_exit_1(self, tmp_path, capsys):
        prompts = tmp_path / "p.txt"
        prompts.write_text("car\n", encoding="utf-8")
        code = main(["export-embeddings", "--mode", "text", "--in", str(prompts),
                     "--out", str(tmp_path / "e.kgde"),
                     "--model", f"hf:{tmp_path / 'no_such_model'}"])
        assert code == 1
        assert "model error" in capsys.readouterr().err


@needs_torch
class TestTinyClipBackend:
    def test_text_export_runs_real_architecture(self, tmp_path):
        prompts = tmp_path / "p.txt"
        prompts.write_text("a motor vehicle with four wheels\na young dog\n", encoding="utf-8")
        out = tmp_path / "emb.kgde"
        code = main(["export-embeddings", "--mode", "text", "--in", str(prompts),
                     "--out", str(out), "--model", "tiny:0"])
        assert code == 0
        emb = read_kgde(out)
        assert emb.shape == (2, 16)
        np.testing.assert_allclose(np.linalg.norm(emb, axis=1), np.ones(2), atol=1e-6)

    def test_seeded_weights_reproduce(self, tmp_path):
        enc_a = load_encoder("tiny:3")
        enc_b = load_encoder("tiny:3")
        a = enc_a.encode_texts(["car", "boat"])
        b = enc_b.encode_texts(["car", "boat"])
        np.testing.assert_array_equal(a, b)

    def test_crop_export(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(0)
        for name, size in (("one.png", (80, 60)), ("two.png", (64, 64))):
            Image.fromarray(
                (rng.random((size[1], size[0], 3)) * 255).astype("uint8")
            ).save(tmp_path / name)
        boxes = {
            "images": [
                {"path": "one.png", "boxes": [[5, 5, 40, 30], [10, 10, 20, 50]]},
                {"path": "two.png", "boxes": [[0, 0, 64, 64]]},
            ]
        }
        boxes_path = tmp_path / "boxes.json"
        boxes_path.write_text(json.dumps(boxes), encoding="utf-8")
        out = tmp_path / "crops.kgde"
        code = main(["export-embeddings", "--mode", "crops", "--in", str(boxes_path),
                     "--out", str(out), "--model", "tiny:1"])
        assert code == 0
        assert read_kgde(out).shape == (3, 16)
        manifest = json.loads((tmp_path / "crops.kgde.manifest.json").read_text())
        assert manifest["model"] == "tiny:1"
        assert manifest["proposal_source"].endswith("boxes.json")


class TestCropGeometry:
    def test_matches_engine_rule(self):
        assert square_crop((10, 10, 30, 20), (100, 100)) == (10.0, 5.0, 30.0, 25.0)
        assert square_crop((0, 0, 10, 10), (100, 100)) == (0.0, 0.0, 10.0, 10.0)
        assert square_crop((0, 0, 80, 200), (100, 200)) == (0.0, 0.0, 100.0, 200.0)

    def test_degenerate_box(self):
        with pytest.raises(CropError):
            square_crop((5, 5, 5, 9), (50, 50))
