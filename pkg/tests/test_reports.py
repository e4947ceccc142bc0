"""Tests for CSV reports, the text summary and replay analysis."""
import os

import numpy as np
import pytest

from pulse_focus.agents.token_agent import ScriptedAgent
from pulse_focus.exceptions import AnalyticsError
from pulse_focus.model.transformer import ModelConfig, init_model
from pulse_focus.services.analytics import BiasRow, PositionalBiasReport, pulse_series
from pulse_focus.services.controller import BudgetConfig, Mode, run_episode
from pulse_focus.services.gating import GateConfig
from pulse_focus.traces.reports import (
    ANALYSES, AnalysisReport, _cell, analyze_trace, bias_report, plot_data_report, replay, summary_text,
    write_reports,
)
from pulse_focus.traces.trace_io import read_trace, write_trace


def golden(fixtures_dir, name):
    with open(os.path.join(fixtures_dir, f"episode.{name}.csv"), "r", encoding="utf-8", newline="") as f:
        return f.read()


@pytest.fixture
def trace_path(fixtures_dir):
    return os.path.join(fixtures_dir, "episode.trace.jsonl")


class TestGoldenReports:
    """Test suite for replaying the bundled trace against golden CSVs."""

    @pytest.mark.parametrize("name", ["pulse", "colouring", "alignment"])
    def test_matches_golden_csv(self, fixtures_dir, trace_path, name):
        """Replay output is byte-identical to the stored CSV."""
        reports = replay(trace_path, [name])
        assert reports[name].to_csv() == golden(fixtures_dir, name)

    @pytest.mark.parametrize("seed", range(3))
    def test_replay_matches_live_analysis(self, tokenizer, six_image_prompt, case_transcript, tmp_path, seed):
        """A seeded episode analyzed in memory and after a write/read cycle gives identical CSVs."""
        tokens, layout = six_image_prompt
        model = init_model(ModelConfig(
            num_layers=2, num_heads=2, head_dim=8, vocab_size=128, max_seq_len=1024, rng_seed=seed,
        ))
        result = run_episode(
            model, tokens, layout, GateConfig(2.0), BudgetConfig(), Mode.PULSEFOCUS, tokenizer,
            agent=ScriptedAgent(tokenizer, case_transcript), retain_raw=True,
        )
        path = str(tmp_path / "episode.trace.jsonl")
        write_trace(result, path)
        live = analyze_trace(result.trace, ANALYSES)
        replayed = replay(path, ANALYSES)
        for name in ANALYSES:
            assert live[name].to_csv() == replayed[name].to_csv(), name
        assert live["verify"].rows
        assert replayed["pulse"].source == "replay"
        assert live["pulse"].source == "live"

    def test_alignment_metadata(self, trace_path):
        """The alignment summary carries the mean alignment."""
        report = replay(trace_path, ["alignment"])["alignment"]
        assert report.metadata["mean_alignment"] == "0.591269841"

    def test_no_pulses_in_fixture(self, trace_path):
        """The fixture has no spike two deviations above its mean."""
        report = replay(trace_path, ["pulses"])["pulses"]
        assert report.rows == []
        assert report.metadata["scatter_score"] == ""

    def test_lower_pulse_threshold(self, trace_path):
        """A lower z finds the two focus-body steps with extra image mass."""
        report = replay(trace_path, ["pulses"], z=1.0)["pulses"]
        assert [row[0] for row in report.rows] == [4, 5]

    def test_verify_without_raw(self, trace_path):
        """The reduction check is skipped with a note when no raw rows were kept."""
        report = replay(trace_path, ["verify"])["verify"]
        assert report.rows == []
        assert report.notes

    def test_unknown_analysis(self, trace_path):
        """Unknown analysis names raise AnalyticsError."""
        with pytest.raises(AnalyticsError):
            replay(trace_path, ["heatmap"])


class TestCells:
    """Test suite for CSV cell formatting."""

    @pytest.mark.parametrize("value,expected", [
        (None, ""),
        (True, "true"),
        (False, "false"),
        (0.5, "0.5"),
        (2.0 / 3.0, "0.666666667"),
        (-0.0, "0"),
        (float("nan"), ""),
        ((3, 6), "3;6"),
        (np.float64(0.25), "0.25"),
        (np.int64(4), "4"),
        ("I", "I"),
    ])
    def test_cell(self, value, expected):
        """Floats use 9 significant digits; booleans, tuples and missing values have fixed forms."""
        assert _cell(value) == expected

    def test_csv_quotes_commas(self):
        """Tokens containing a comma are quoted."""
        report = AnalysisReport("t", ["token"], [[","]])
        assert report.to_csv() == 'token\n","\n'


class TestOutputs:
    """Test suite for summaries and written files."""

    def test_write_reports(self, tmp_path, trace_path):
        """One CSV per report plus a text summary."""
        reports = replay(trace_path, ["pulse", "alignment"])
        paths = write_reports(reports, str(tmp_path), "episode", title="episode")
        assert [os.path.basename(p) for p in paths] == [
            "episode.pulse.csv", "episode.alignment.csv", "episode.report.txt",
        ]
        summary = (tmp_path / "episode.report.txt").read_text()
        assert summary.startswith("# episode\n[pulse]\nsource = replay\nrows = 9\n")
        assert "mean_alignment = 0.591269841" in summary

    def test_summary_notes(self):
        """Notes are listed under their report."""
        report = AnalysisReport("alignment", ["block"], [], notes=["trace has no focus blocks"])
        assert "note = trace has no focus blocks" in summary_text({"alignment": report})

    def test_plot_data_is_long_format(self, trace_path):
        """One row per step and image."""
        trace = read_trace(trace_path)
        report = plot_data_report(trace, pulse_series(trace))
        assert len(report.rows) == 9 * 2
        step, image, mass, mode, focus, block = report.rows[8]
        assert (step, image, mode, focus, block) == (4, 1, "focus", (1,), 0)
        assert mass == pytest.approx(0.5)

    def test_bias_report(self):
        """Bias rows keep position order and note the position filter."""
        rows = [BiasRow(1, 0.2, 0.01, 3, 3), BiasRow(2, 0.1, 0.02, 2, 2)]
        report = bias_report(PositionalBiasReport(rows=rows, grouping="tag"))
        assert report.to_csv() == "position,mean,std,n\n1,0.2,0.01,3\n2,0.1,0.02,2\n"
        assert report.metadata["groups_per_position"] == "3;2"
        assert report.notes
