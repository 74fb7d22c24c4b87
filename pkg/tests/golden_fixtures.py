"""Inputs behind the frozen files in tests/golden/."""

import hashlib
import json
import os

import numpy as np

from momentloop.decoder import DecoderConfig, init_weights
from momentloop.orchestrator import MockBackend, MockScript, VideoInput, result_to_dict, run_pipeline
from momentloop.synth import SynthSpec, make_dataset
from momentloop.training import assign_targets
from momentloop.types import Moment, VideoMeta

GOLDEN_CFG = DecoderConfig(d_input=8, d_model=32, n_layers=3, n_heads=4)


def decoder_fixture():
    clip = make_dataset(42, 1, SynthSpec(t=8, d=8, min_len=2, max_len=4), prefix="golden")[0]
    weights = init_weights(GOLDEN_CFG, 42)
    ta = assign_targets(clip.gt, clip.duration, 8, GOLDEN_CFG.pyramid_levels, rng=np.random.default_rng(42))
    return weights, GOLDEN_CFG, clip, ta


def trace_checksum(trace) -> str:
    h = hashlib.sha256()
    for name, arr in trace.arrays().items():
        h.update(name.encode())
        h.update(" ".join(f"{x:.12e}" for x in np.asarray(arr, dtype=np.float64).ravel()).encode())
    return h.hexdigest()


SCRIPT = MockScript(
    plan='[{"type":"grounder","value":"the baby is crying"},{"type":"verifier"},{"type":"answerer"}]',
    candidates=[Moment(10, 20, 0.9), Moment(40, 50, 0.8)],
    verifier_scores=[0.3, 0.8],
    answer="B",
)


def scripted_pipeline_result() -> str:
    backend = MockBackend({"vid_golden": SCRIPT}, seed=0)
    video = VideoInput(VideoMeta("vid_golden", 60.0))
    result = run_pipeline(video, "Why is the baby crying?", backend,
                          options=["hungry", "tired", "wet", "bored"])
    return json.dumps(result_to_dict(result), indent=2, sort_keys=True) + "\n"


def synth_eval_fixture(out_dir):
    """Annotations, mock predictions and the metrics report over them, via the CLI."""
    from momentloop.cli import main

    synth_dir = os.path.join(out_dir, "synth")
    assert main(["synth", "--out", synth_dir, "--n", "6", "--seed", "7"]) == 0
    ann = os.path.join(synth_dir, "annotations.jsonl")
    preds = os.path.join(out_dir, "mock_preds.jsonl")
    assert main(["pipeline", "--annotations", ann, "--backend", "mock", "--out", preds]) == 0
    report = os.path.join(out_dir, "mock_metrics.json")
    assert main(["eval", "--pred", preds, "--gt", ann, "--metrics", "riou,miou,miop,riop,gqa,map,cgacc,acc",
                 "--thresholds", "0.1,0.3,0.5,0.7", "--out", report]) == 0
    return ann, preds, report
