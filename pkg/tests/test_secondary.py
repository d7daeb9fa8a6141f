"""Cross-component integration: the Node exporter's TXEMB output drives the
Python pipeline end to end.

Skipped when the exporter build or Node itself is unavailable; the primary
suite never depends on it.
"""

import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from txir.data import SynthSpec, generate_synthetic
from txir.network import ModelConfig
from txir.prompts import FileEmbeddingProvider
from txir.train import GENERIC_PROMPT, PromptResolver, TrainConfig, evaluate_records, train

EXPORTER_CLI = Path(__file__).resolve().parent.parent / "exporter" / "dist" / "cli.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not EXPORTER_CLI.exists(),
    reason="node or the built exporter is unavailable",
)


def run_exporter(prompts_file, out_file, model="test-vectors"):
    return subprocess.run(
        ["node", str(EXPORTER_CLI), "--prompts", str(prompts_file),
         "--out", str(out_file), "--model", model],
        capture_output=True, text=True, timeout=300,
    )


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    base = tmp_path_factory.mktemp("secondary")
    prompts = [
        "A photo of a sky target in the sky background",
        "A photo of a ground target in the ground background",
        GENERIC_PROMPT,
    ]
    prompts_file = base / "prompts.txt"
    prompts_file.write_text("\n".join(prompts) + "\n")
    out_file = base / "clip.txemb"
    proc = run_exporter(prompts_file, out_file)
    assert proc.returncode == 0, proc.stderr
    return base, out_file, prompts


class TestExporterOutput:
    def test_loads_with_dimension_512_unit_norm(self, exported):
        _, out_file, prompts = exported
        provider = FileEmbeddingProvider(out_file)
        assert provider.d_t == 512
        for p in prompts:
            vec = provider.get(p).vector
            assert len(vec) == 512
            assert abs(np.linalg.norm(vec) - 1.0) < 1e-6

    def test_deterministic_across_runs(self, exported, tmp_path):
        base, out_file, prompts = exported
        again = tmp_path / "again.txemb"
        proc = run_exporter(base / "prompts.txt", again)
        assert proc.returncode == 0, proc.stderr
        assert again.read_text() == out_file.read_text()

    def test_duplicate_prompt_rejected(self, tmp_path):
        bad = tmp_path / "dup.txt"
        bad.write_text("same\nsame\n")
        proc = run_exporter(bad, tmp_path / "o.txemb")
        assert proc.returncode == 1
        assert "duplicate" in proc.stderr

    def test_unavailable_model_fails_actionably(self, exported, tmp_path):
        base, _, _ = exported
        proc = run_exporter(base / "prompts.txt", tmp_path / "o.txemb",
                            model="no-such-org/no-such-model")
        assert proc.returncode == 1
        assert "could not load model" in proc.stderr or "not installed" in proc.stderr


class TestEndToEndWithFileEmbeddings:
    def test_trained_pipeline_consumes_exported_vectors(self, exported, tmp_path):
        _, out_file, _ = exported
        spec = SynthSpec(count=12, size=16, seed=2, split_counts=(8, 2, 2),
                         targets_max=1, sigma_min=0.7, sigma_max=0.9, decoys_max=1)
        records = generate_synthetic(spec, tmp_path / "ds")
        provider = FileEmbeddingProvider(out_file)
        model_cfg = ModelConfig(base_channels=8, text_dim=512, input_size=(16, 16))
        cfg = TrainConfig(lr=1e-3, batch=4, epochs=2, seed=0)
        result = train(model_cfg, cfg, records, provider, tmp_path / "run")
        test_records = [r for r in records if r.split == "test"]
        resolver = PromptResolver(provider, use_text=True, default_mode="generic_prompt")
        report = evaluate_records(result.params, test_records, resolver,
                                  result.switches, 16)
        summary = report.summary()
        print(f"\nACCEPTANCE secondary-end-to-end: PASS (iou={summary['iou']:.4f} "
              f"samples={summary['samples']})")
        assert summary["samples"] == len(test_records)
        assert 0.0 <= summary["iou"] <= 1.0
