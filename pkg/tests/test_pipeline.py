import numpy as np
import pytest

from actseg import cli, reports, shuffle
from actseg.config import RunConfig, make_run_config, normalize_variant, parse_kv_file
from actseg.data import load_dataset, synth_generate, write_dataset
from actseg.pipeline import run_pipeline


@pytest.fixture(scope="module")
def tiny_run():
    videos, ground_truth, _ = synth_generate(8, 3, 8, [12, 16, 12], 4.0, 0.1, 5)
    cfg = RunConfig(n_actions=3, variant="asal", seed=5, max_epochs=6,
                    ssl_warmup_epochs=20, mlp_epochs=80, s1_epochs=15)
    return run_pipeline(cfg, videos, ground_truth), videos, ground_truth


class TestConfig:
    def test_variant_aliases(self):
        assert normalize_variant("ASAL") == "asal"
        assert normalize_variant("FTE_HMM") == "fte_hmm"
        assert normalize_variant("ActionShuffle_initHMM") == "actionshuffle_inithmm"
        assert normalize_variant("ActionShuffle_Viterbi") == "actionshuffle_viterbi"
        with pytest.raises(ValueError):
            normalize_variant("mystery")

    def test_kv_file_with_comments(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nn_actions = 4\nvariant=FTE_HMM  # inline\n\nseed=3\n")
        values = parse_kv_file(path)
        assert values == {"n_actions": "4", "variant": "FTE_HMM", "seed": "3"}

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("n_actions=4\nseed=3\n")
        cfg = make_run_config(parse_kv_file(path), {"seed": 9, "epsilon": "1e-4"})
        assert cfg.n_actions == 4
        assert cfg.seed == 9
        assert cfg.epsilon == pytest.approx(1e-4)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            make_run_config({"bogus": "1"}, {})

    def test_malformed_line_reported(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("just words\n")
        with pytest.raises(ValueError, match="run.cfg:1"):
            parse_kv_file(path)


class TestVariants:
    def test_fte_hmm_never_builds_ssl_model(self, monkeypatch):
        videos, ground_truth, _ = synth_generate(6, 3, 8, [10, 12, 10], 4.0, 0.0, 6)

        def forbidden(*args, **kwargs):
            raise AssertionError("SSL model constructed in FTE_HMM variant")

        monkeypatch.setattr(shuffle, "build_ssl_model", forbidden)
        cfg = RunConfig(n_actions=3, variant="fte_hmm", seed=6, max_epochs=3,
                        mlp_epochs=60, s1_epochs=10)
        result = run_pipeline(cfg, videos, ground_truth)
        assert result.states[0].ssl_model is None

    def test_forced_transcript_variant(self):
        videos, ground_truth, _ = synth_generate(6, 3, 8, [10, 12, 10], 4.0, 0.2, 8)
        cfg = RunConfig(n_actions=3, variant="ActionShuffle_Viterbi", seed=8,
                        max_epochs=3, ssl_warmup_epochs=10, mlp_epochs=60,
                        s1_epochs=10)
        result = run_pipeline(cfg, videos, ground_truth)
        for seg in result.segmentations.values():
            assert seg.actions.tolist() == [1, 2, 3]

    def test_inithmm_variant_produces_monotone_segmentations(self):
        videos, ground_truth, _ = synth_generate(6, 3, 8, [10, 12, 10], 4.0, 0.2, 9)
        cfg = RunConfig(n_actions=3, variant="ActionShuffle_initHMM", seed=9,
                        max_epochs=3, ssl_warmup_epochs=10, mlp_epochs=60,
                        s1_epochs=10)
        result = run_pipeline(cfg, videos, ground_truth)
        for video in videos:
            seg = result.segmentations[video.video_id]
            seg.validate(3)
            assert seg.n_frames == video.n_frames

    def test_multi_activity_emits_per_activity_states(self, tmp_path):
        videos, ground_truth, _ = synth_generate(10, 3, 12, [12, 14, 12],
                                                 4.0, 0.0, 21, n_activities=2)
        cfg = RunConfig(n_actions=3, variant="asal", seed=21, multi_activity=True,
                        n_activities=2, max_epochs=4, ssl_warmup_epochs=15,
                        mlp_epochs=60, s1_epochs=15)
        result = run_pipeline(cfg, videos, ground_truth)
        assert len(result.states) == 2
        assert set(result.video_activities) == {v.video_id for v in videos}
        for video in videos:
            labels = result.frame_labels[video.video_id]
            activity = result.video_activities[video.video_id]
            assert labels.min() >= activity * 3 + 1
            assert labels.max() <= activity * 3 + 3
        # per-activity models land in separate subdirectories
        from actseg import persist
        persist.save_run(tmp_path / "models", result, cfg)
        assert (tmp_path / "models" / "activity_0" / "models.npz").exists()
        assert (tmp_path / "models" / "activity_1" / "models.npz").exists()


class TestResultContracts:
    def test_segmentations_satisfy_invariants(self, tiny_run):
        result, videos, _ = tiny_run
        for video in videos:
            seg = result.segmentations[video.video_id]
            seg.validate(3)
            assert seg.n_frames == video.n_frames

    def test_metrics_present_with_ground_truth(self, tiny_run):
        result, _, _ = tiny_run
        for key in ("mof", "precision", "recall", "f1"):
            assert key in result.metrics
            assert 0.0 <= result.metrics[key] <= 1.0


class TestReports:
    def test_emitted_files(self, tiny_run, tmp_path):
        result, _, ground_truth = tiny_run
        written = reports.emit_reports(result, tmp_path / "out", ground_truth)
        names = {p.name for p in written}
        assert {"segments.csv", "timelines.txt", "timelines.png",
                "metrics.kv", "q_curve.csv", "q_curve.png",
                "progress.csv"} <= names

    def test_q_curve_row_count(self, tiny_run, tmp_path):
        result, _, _ = tiny_run
        reports.write_q_curve(tmp_path / "q.csv", result.states[0].q_history)
        rows = (tmp_path / "q.csv").read_text().strip().splitlines()
        assert rows[0] == "epoch,mean_q"
        assert len(rows) - 1 == len(result.states[0].q_history)

    def test_segment_rows_sum_to_video_length(self, tiny_run, tmp_path):
        result, videos, _ = tiny_run
        path = tmp_path / "segments.csv"
        reports.write_segments_csv(path, result.segmentations, result.frame_labels)
        totals = {}
        for row in path.read_text().strip().splitlines()[1:]:
            video_id, _, _, length = row.split(",")
            totals[video_id] = totals.get(video_id, 0) + int(length)
        assert totals == {v.video_id: v.n_frames for v in videos}

    def test_metrics_kv_keys(self, tiny_run, tmp_path):
        result, _, _ = tiny_run
        path = tmp_path / "metrics.kv"
        reports.write_metrics_kv(path, result.metrics)
        keys = {line.split("=")[0] for line in path.read_text().strip().splitlines()}
        assert {"mof", "f1", "precision", "recall"} <= keys

    def test_timeline_strings(self):
        line = reports.timeline_string(np.array([1] * 50 + [2] * 50), width=10)
        assert line == "AAAAABBBBB"


class TestCli:
    def run(self, *argv):
        return cli.main(list(argv))

    def test_full_cli_cycle(self, tmp_path):
        data_dir = tmp_path / "data"
        run_dir = tmp_path / "run"
        assert self.run("synth", "--out", str(data_dir), "--videos", "6",
                        "--actions", "3", "--dim", "8",
                        "--mean-lengths", "10,12,10", "--seed", "4") == 0
        assert self.run("train", "--manifest", str(data_dir / "manifest.csv"),
                        "--out", str(run_dir), "--actions", "3",
                        "--seed", "4", "--epochs", "4") == 0
        assert (run_dir / "segments.csv").exists()
        assert (run_dir / "q_curve.png").exists()
        assert self.run("segment", "--manifest", str(data_dir / "manifest.csv"),
                        "--models", str(run_dir / "models"),
                        "--out", str(tmp_path / "seg")) == 0
        assert ((tmp_path / "seg" / "segments.csv").read_bytes()
                == (run_dir / "segments.csv").read_bytes())
        assert self.run("eval", "--segments", str(run_dir / "segments.csv"),
                        "--manifest", str(data_dir / "manifest.csv"),
                        "--out", str(tmp_path / "metrics.kv")) == 0
        assert (tmp_path / "metrics.kv").exists()
        assert self.run("report", "--run", str(run_dir),
                        "--manifest", str(data_dir / "manifest.csv"),
                        "--out", str(tmp_path / "report")) == 0
        assert (tmp_path / "report" / "timelines.png").exists()

    def test_failure_exits_nonzero(self, tmp_path, capsys):
        assert self.run("train", "--manifest", str(tmp_path / "nope.csv"),
                        "--out", str(tmp_path / "x")) == 1
        assert "error:" in capsys.readouterr().err

    def test_binary_and_csv_formats_agree(self, tmp_path):
        videos, ground_truth, _ = synth_generate(5, 3, 6, [10, 10, 10], 4.0, 0.0, 12)
        bin_manifest = write_dataset(tmp_path / "bin", videos, ground_truth, fmt="bin")
        csv_manifest = write_dataset(tmp_path / "csv", videos, ground_truth, fmt="csv")
        loaded_bin, _, _ = load_dataset(bin_manifest)
        loaded_csv, _, _ = load_dataset(csv_manifest)
        for a, b in zip(loaded_bin, loaded_csv):
            assert np.array_equal(a.features, b.features)
