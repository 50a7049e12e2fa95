import json

import numpy as np
import pytest

from dicert.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def ideal_run_config(n=2, rounds=40000, selftest=False, **model_extra):
    cfg = {
        "n": n,
        "target": {"kind": "haar", "seed": 3},
        "bell_noise": 0.0,
        "protocol": {
            "variant": "local",
            "epsilon": 0.4,
            "delta": 0.1,
            "N": rounds,
            "observable": {"kind": "state_fidelity"},
        },
    }
    if selftest:
        cfg["protocol"]["selftest"] = True
    cfg.update(model_extra)
    return cfg


class TestRunCommand:
    def test_ideal_run_certifies_and_writes_reports(self, tmp_path, capsys):
        cfg = write_config(tmp_path, ideal_run_config())
        code, out, err = run_cli(
            capsys, "--seed", "7", "--out", str(tmp_path / "res"), "run", "--config", cfg
        )
        assert code == 0, err
        report = json.loads((tmp_path / "res" / "report.json").read_text())
        assert report["verdict"] == "CERTIFIED"
        counters = (tmp_path / "res" / "counters.csv").read_text().splitlines()
        assert counters[0] == "index,l,k,i,j,n,e"

    def test_identical_bytes_across_runs(self, tmp_path, capsys):
        cfg = write_config(tmp_path, ideal_run_config(rounds=20000))
        outputs = []
        for sub in ("a", "b"):
            outdir = tmp_path / sub
            code, out, _ = run_cli(
                capsys, "--seed", "11", "--out", str(outdir), "run", "--config", cfg
            )
            assert code == 0
            outputs.append(
                (
                    (outdir / "report.json").read_bytes(),
                    (outdir / "counters.csv").read_bytes(),
                )
            )
        assert outputs[0] == outputs[1]

    def test_transposed_adversary_exits_two(self, tmp_path, capsys):
        cfg_dict = ideal_run_config(
            rounds=400000,
            strategies=[{"kind": "transposed"}, {"kind": "ideal"}],
        )
        cfg = write_config(tmp_path, cfg_dict)
        code, out, err = run_cli(
            capsys, "--seed", "3", "--out", str(tmp_path / "res"), "run", "--config", cfg
        )
        assert code == 2
        report = json.loads((tmp_path / "res" / "report.json").read_text())
        assert report["verdict"] == "FAILED"
        assert report["v_II_per_link"][0] > 2 / 3 - 0.05

    def test_missing_n_exits_one(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"target": {"kind": "zero"}, "protocol": {}})
        code, out, err = run_cli(capsys, "run", "--config", cfg)
        assert code == 1
        assert "'n'" in err

    def test_unknown_key_exits_one(self, tmp_path, capsys):
        payload = ideal_run_config()
        payload["bogus"] = 1
        cfg = write_config(tmp_path, payload)
        code, _, err = run_cli(capsys, "run", "--config", cfg)
        assert code == 1
        assert "'bogus'" in err

    def test_selftest_run(self, tmp_path, capsys):
        cfg = write_config(tmp_path, ideal_run_config(rounds=150000, selftest=True))
        code, out, _ = run_cli(
            capsys, "--seed", "5", "--out", str(tmp_path / "res"), "run", "--config", cfg
        )
        assert code == 0
        report = json.loads((tmp_path / "res" / "report.json").read_text())
        assert "omega_hat" in report and report["verdict"] == "CERTIFIED"

    def test_braiding_observable(self, tmp_path, capsys):
        payload = ideal_run_config(rounds=30000)
        payload["protocol"]["observable"] = {"kind": "braiding_pair"}
        payload["protocol"]["variant"] = "shared"
        cfg = write_config(tmp_path, payload)
        code, out, _ = run_cli(
            capsys, "--seed", "9", "--out", str(tmp_path / "res"), "run", "--config", cfg
        )
        assert code == 0


class TestPlanCommand:
    def test_outputs_json(self, capsys):
        code, out, _ = run_cli(
            capsys, "plan", "--variant", "local", "--W", "2", "--n", "3",
            "--eps", "0.2", "--delta", "0.01",
        )
        assert code == 0
        data = json.loads(out)
        assert data["variant"] == "local"
        assert data["N"] == int(np.ceil(16 * 243 * np.log(300) / 0.0016))

    def test_variant_factor_n(self, capsys):
        _, out_local, _ = run_cli(
            capsys, "plan", "--variant", "local", "--W", "2", "--n", "4",
            "--eps", "0.1", "--delta", "0.01",
        )
        _, out_shared, _ = run_cli(
            capsys, "plan", "--variant", "shared", "--W", "2", "--n", "4",
            "--eps", "0.1", "--delta", "0.01",
        )
        ratio = json.loads(out_local)["N"] / json.loads(out_shared)["N"]
        assert ratio == pytest.approx(4.0, rel=1e-6)

    def test_eps_scaling(self, capsys):
        _, out1, _ = run_cli(
            capsys, "plan", "--variant", "shared", "--W", "1", "--n", "2",
            "--eps", "0.1", "--delta", "0.01",
        )
        _, out2, _ = run_cli(
            capsys, "plan", "--variant", "shared", "--W", "1", "--n", "2",
            "--eps", "0.2", "--delta", "0.01",
        )
        ratio = json.loads(out1)["N"] / json.loads(out2)["N"]
        assert ratio == pytest.approx(16.0, rel=1e-4)

    def test_delta_one_allowed(self, capsys):
        code, out, _ = run_cli(
            capsys, "plan", "--variant", "local", "--W", "2", "--n", "3",
            "--eps", "0.2", "--delta", "1.0",
        )
        assert code == 0
        assert json.loads(out)["N"] == int(np.ceil(16 * 243 * np.log(3) / 0.0016))

    def test_invalid_inputs_exit_one(self, capsys):
        code, _, err = run_cli(
            capsys, "plan", "--variant", "local", "--W", "-1", "--n", "3",
            "--eps", "0.2", "--delta", "0.1",
        )
        assert code == 1


class TestGapCommand:
    def test_deterministic_csv(self, tmp_path, capsys):
        outputs = []
        for sub in ("a", "b"):
            code, out, _ = run_cli(
                capsys, "--seed", "7", "--out", str(tmp_path / sub),
                "gap", "--n", "2..4", "--trials", "5",
            )
            assert code == 0
            outputs.append((tmp_path / sub / "gap.csv").read_bytes())
        assert outputs[0] == outputs[1]
        lines = outputs[0].decode().splitlines()
        assert len(lines) == 1 + 3 * 5


class TestAttackCommand:
    def test_flip_zero_detected(self, tmp_path, capsys):
        code, out, _ = run_cli(
            capsys, "--seed", "3", "--out", str(tmp_path), "attack", "--n", "3", "--flip", "0"
        )
        assert code == 0
        rows = (tmp_path / "attack.csv").read_text().splitlines()
        assert rows[0] == "link,v_II,samples,stderr"
        link0 = float(rows[1].split(",")[1])
        assert link0 >= 0.6167
        assert link0 >= 2 / 3 - 0.05

    def test_deterministic(self, tmp_path, capsys):
        blobs = []
        for sub in ("a", "b"):
            run_cli(
                capsys, "--seed", "5", "--out", str(tmp_path / sub),
                "attack", "--n", "3", "--flip", "1", "--rounds", "5000",
            )
            blobs.append((tmp_path / sub / "attack.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestSweepCommand:
    def test_completeness_sweep(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path,
            {
                "kind": "completeness",
                "n": 2,
                "psi_seed": 1,
                "grid": [0.0],
                "eps_prime": 0.45,
                "delta": 0.1,
                "repetitions": 3,
                "rounds": 60000,
            },
            name="sweep.json",
        )
        code, out, _ = run_cli(
            capsys, "--seed", "2", "--out", str(tmp_path), "sweep", "--config", cfg
        )
        assert code == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "param,rate,stderr,mean_vI,mean_vII,mean_vIII,N,seed"
        assert len(lines) == 2

    def test_bad_kind_exits_one(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"kind": "nope"}, name="sweep.json")
        code, _, err = run_cli(capsys, "sweep", "--config", cfg)
        assert code == 1
        assert "kind" in err


class TestVerifyIsometryCommand:
    def test_ideal(self, capsys):
        code, out, _ = run_cli(capsys, "verify-isometry", "--ideal")
        assert code == 0
        data = json.loads(out)
        assert data["fidelity"] >= 1 - 1e-9
        assert data["intertwining_residual"] < 1e-10

    def test_grid_slope(self, capsys):
        code, out, _ = run_cli(
            capsys, "verify-isometry", "--grid", "0.0001,0.001,0.01,0.05"
        )
        assert code == 0
        data = json.loads(out)
        assert 0.3 <= data["slope"] <= 0.7

    def test_deterministic_stdout(self, capsys):
        _, out1, _ = run_cli(capsys, "--seed", "1", "verify-isometry", "--noise", "0.01")
        _, out2, _ = run_cli(capsys, "--seed", "1", "verify-isometry", "--noise", "0.01")
        assert out1 == out2


class TestParser:
    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        out = capsys.readouterr().out
        for name in ("run", "plan", "gap", "attack", "sweep", "verify-isometry"):
            assert name in out

    def test_seed_range_validated(self, capsys):
        with pytest.raises(SystemExit):
            main(["--seed", str(2**64), "plan", "--variant", "local", "--W", "1",
                  "--n", "2", "--eps", "0.1", "--delta", "0.1"])
