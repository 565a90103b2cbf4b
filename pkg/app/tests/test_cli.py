import pandas as pd
import pytest

from app.commands import CommandContext
from app.main import INCOMPLETE_MARKER, dispatch, main
from app.models.experiment import ExperimentResult, SweepAxis, TrialRecord
from app.services.config_service import RESOLVED_NAME, config_service
from app.services.experiment_service import experiment_service
from app.tests.scenarios import small_config
from app.utils.errors import ConfigError


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(config_service.render(small_config()), encoding="utf-8")
    return path


def _tradeoff_result(secrecy_by_budget):
    records = [
        TrialRecord(
            experiment_id="gate",
            axis_name=SweepAxis.CRLB_BUDGET_DB.value,
            axis_value=budget,
            trial=trial,
            seed=trial,
            sum_secrecy=secrecy,
            worst_user_secrecy=secrecy / 2,
            bler_user_mean=0.0,
            bler_eve=1.0,
            crlb_theta_db=budget,
            crlb_phi_db=budget,
            feasible=1,
        )
        for budget, secrecy in secrecy_by_budget.items()
        for trial in range(2)
    ]
    return ExperimentResult(experiment_id="gate", axis=SweepAxis.CRLB_BUDGET_DB, records=records)


@pytest.fixture
def tradeoff_ini(tmp_path):
    cfg = small_config(sweep__experiment="tradeoff", sweep__axis="crlb_budget_db", sweep__points=(-40.0, -20.0))
    path = tmp_path / "tradeoff.ini"
    path.write_text(config_service.render(cfg), encoding="utf-8")
    return path


class TestCommandLine:
    def test_simulate_writes_results(self, tmp_path, small_ini):
        out = tmp_path / "sim"
        assert main(["simulate", "--config", str(small_ini), "--out", str(out), "--threads", "1"]) == 0
        assert (out / RESOLVED_NAME).is_file()
        assert not (out / INCOMPLETE_MARKER).exists()
        frame = pd.read_csv(out / "results.csv")
        assert len(frame) == 1
        assert config_service.parse_config(out / RESOLVED_NAME).output.directory == str(out)

    def test_seed_flag_overrides_config(self, tmp_path, small_ini):
        out = tmp_path / "seeded"
        assert main(["simulate", "--config", str(small_ini), "--out", str(out), "--seed", "99"]) == 0
        assert config_service.parse_config(out / RESOLVED_NAME).run.seed == 99

    def test_bad_config_fails_with_marker(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[geometry]\nn_txx = 4\n", encoding="utf-8")
        out = tmp_path / "bad"
        assert main(["simulate", "--config", str(bad), "--out", str(out)]) == 1
        marker = out / INCOMPLETE_MARKER
        assert marker.is_file()
        assert "n_txx" in marker.read_text(encoding="utf-8")

    def test_out_of_range_seed_fails(self, tmp_path, small_ini):
        out = tmp_path / "neg"
        assert main(["simulate", "--config", str(small_ini), "--out", str(out), "--seed", "-1"]) == 1
        assert (out / INCOMPLETE_MARKER).is_file()

    def test_report_after_simulate(self, tmp_path, small_ini):
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(small_ini), "--out", str(out)]) == 0
        assert main(["report", "--config", str(small_ini), "--out", str(out)]) == 0
        assert (out / "summary.csv").is_file()
        assert (out / "summary.xlsx").is_file()

    def test_report_without_results_fails(self, tmp_path, small_ini):
        assert main(["report", "--config", str(small_ini), "--out", str(tmp_path / "empty")]) == 1

    def test_unknown_command_exits(self):
        with pytest.raises(SystemExit):
            main(["launch"])

    @pytest.mark.slow
    def test_train_is_reproducible(self, tmp_path, small_ini):
        logs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train", "--config", str(small_ini), "--out", str(out), "--seed", "7"]) == 0
            assert (out / "encoder.pt").is_file()
            logs.append(pd.read_csv(out / "training_log.csv"))
        pd.testing.assert_frame_equal(logs[0], logs[1])

    def test_dispatch_rejects_unknown_command(self, tmp_path):
        ctx = CommandContext(cfg=small_config(), out_dir=tmp_path, threads=1)
        with pytest.raises(ConfigError):
            dispatch("launch", ctx)

    def test_failed_trend_gate_exits_nonzero(self, tmp_path, tradeoff_ini, monkeypatch):
        falling = _tradeoff_result({-40.0: 3.0, -20.0: 1.0})
        monkeypatch.setattr(experiment_service, "crlb_secrecy_tradeoff", lambda spec, cfg, threads=1: falling)
        out = tmp_path / "falling"
        assert main(["sweep", "--config", str(tradeoff_ini), "--out", str(out)]) == 1
        assert (out / "results_tradeoff.csv").is_file()
        assert not (out / INCOMPLETE_MARKER).exists()

    def test_held_trend_gate_exits_zero(self, tmp_path, tradeoff_ini, monkeypatch):
        rising = _tradeoff_result({-40.0: 1.0, -20.0: 3.0})
        monkeypatch.setattr(experiment_service, "crlb_secrecy_tradeoff", lambda spec, cfg, threads=1: rising)
        assert main(["sweep", "--config", str(tradeoff_ini), "--out", str(tmp_path / "rising")]) == 0
