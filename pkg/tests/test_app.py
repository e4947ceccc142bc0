"""Tests for the PulseFocusApp application layer."""
import os
from concurrent.futures import ThreadPoolExecutor

import pytest

from pulse_focus.config import RunSpec
from pulse_focus.exceptions import ConfigurationError
from pulse_focus.main import PulseFocusApp
from pulse_focus.services.controller import TerminationReason
from pulse_focus.traces.trace_io import read_trace, write_trace
from pulse_focus.utils.synthetic import generate_traces


@pytest.fixture
def app(test_config):
    return PulseFocusApp(test_config)


class TestPulseFocusApp:
    """Test suite for PulseFocusApp."""

    def test_models_are_cached(self, app):
        """A preset and seed build one model."""
        assert app.model_for("tiny", 0) is app.model_for("tiny", 0)
        assert app.model_for("tiny", 0) is not app.model_for("tiny", 1)

    def test_run_writes_outputs(self, app, test_config, fixtures_dir):
        """run() writes <name>.trace.jsonl and <name>.transcript.txt into the configured directory."""
        spec = RunSpec(
            scripted_path=os.path.join(fixtures_dir, "six_image_dogs.txt"),
            template_path=os.path.join(fixtures_dir, "prompt_template.txt"),
            image_tokens=4, diagnostic_heads=[1], tag="matching",
        )
        result, alignment, paths = app.run(spec)
        assert result.budget_state.terminated_reason is TerminationReason.ANSWER_EMITTED
        assert paths == [
            os.path.join(test_config.output_dir, "pulsefocus-seed0.trace.jsonl"),
            os.path.join(test_config.output_dir, "pulsefocus-seed0.transcript.txt"),
        ]
        trace = read_trace(paths[0])
        assert trace.metadata.heads == (1,)
        assert trace.metadata.tag == "matching"
        assert trace.metadata.seeds == {"model": 0, "prompt": 0, "sample": 0}
        assert 0.0 < alignment <= 1.0

    def test_run_without_steps(self, app, tmp_path):
        """An empty script writes its outputs and reports no alignment."""
        script = tmp_path / "empty.txt"
        script.write_text("")
        result, alignment, paths = app.run(RunSpec(scripted_path=str(script), num_images=2, image_tokens=4))
        assert result.steps == 0
        assert result.budget_state.terminated_reason is TerminationReason.STREAM_EXHAUSTED
        assert alignment is None
        assert read_trace(paths[0]).steps == []

    def test_sweep_with_generated_scripts(self, app):
        """Without a script each episode replays a seeded random transcript at every lambda."""
        spec = RunSpec(num_images=3, image_tokens=4, max_cycles=2)
        report = app.sweep(spec, [2.0], episodes=2)
        assert report.columns == ["lambda", "mean_alignment", "lift"]
        assert len(report.rows) == 1
        lam, mean, lift = report.rows[0]
        assert lam == 2.0
        assert mean is not None and lift is not None

    def test_sweep_rejects_negative_lambda(self, app):
        """Negative gate strengths are rejected before any episode runs."""
        with pytest.raises(ConfigurationError):
            app.sweep(RunSpec(), [-1.0], episodes=1)

    def test_bias_requires_matches(self, app, tmp_path):
        """A pattern with no files is a configuration error."""
        with pytest.raises(ConfigurationError):
            app.bias([str(tmp_path / "*.trace.jsonl")])

    def test_bias_unknown_grouping(self, app, tmp_path):
        """Groupings outside the known set are rejected."""
        write_trace(generate_traces(1)[0], str(tmp_path / "one.trace.jsonl"))
        with pytest.raises(ConfigurationError):
            app.bias([str(tmp_path / "*.trace.jsonl")], grouping="colour")

    def test_bias_reads_sorted_paths(self, app, tmp_path):
        """Matched files are loaded in sorted order, duplicates removed."""
        for i, trace in enumerate(generate_traces(3, seed=4)):
            write_trace(trace, str(tmp_path / f"t{i}.trace.jsonl"))
        pattern = str(tmp_path / "*.trace.jsonl")
        report, paths = app.bias([pattern, pattern], workers=2)
        assert [os.path.basename(p) for p in paths] == ["t0.trace.jsonl", "t1.trace.jsonl", "t2.trace.jsonl"]
        assert report.rows[0][3] == 3

    def test_bias_loads_traces_in_pool(self, app, tmp_path, mocker):
        """Trace files are read through the worker pool, then averaged through it."""
        for i, trace in enumerate(generate_traces(3, seed=6)):
            write_trace(trace, str(tmp_path / f"t{i}.trace.jsonl"))
        submit = mocker.spy(ThreadPoolExecutor, "submit")
        report, paths = app.bias([str(tmp_path / "*.trace.jsonl")], workers=2)
        assert len(paths) == 3
        assert submit.call_count == 6
        assert {call.args[2] for call in submit.call_args_list[:3]} == set(paths)
