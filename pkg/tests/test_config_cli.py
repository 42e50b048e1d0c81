import json

import pytest

from cascadeforge.cli import main
from cascadeforge.config import ConfigError, format_config, parse_config, parse_detectors, parse_lines
from cascadeforge.scores import load_table

FIVE = "A:0.95:2:0.3, B:0.9:1:0.3, C:0.8:0.2:0.3, D:0.7:0.05:0.3, E:0.6:0.01"


def test_scheme_selection(tmp_path):
    cfg = tmp_path / "a.conf"
    cfg.write_text("reward.scheme = 3  # constant reward\n\n# comment line\n")
    assert parse_config(cfg).scheme().scheme_id == 3
    cfg.write_text("reward.scheme = 9\n")
    with pytest.raises(ConfigError, match="scheme out of 1..5"):
        parse_config(cfg)


def test_precedence(tmp_path):
    a, b = tmp_path / "a.conf", tmp_path / "b.conf"
    a.write_text("train.seed = 1\ntrain.epochs = 3\n")
    b.write_text("train.seed = 2\n")
    cfg = parse_config([a, b], env={})
    assert cfg["train.seed"] == 2 and cfg["train.epochs"] == 3
    cfg = parse_config([a, b], ["train.seed=42"], env={})
    assert cfg["train.seed"] == 42
    cfg = parse_config([a, b], ["train.seed=42"], env={"CASCADEFORGE_SEED": "7"})
    assert cfg["train.seed"] == 7


@pytest.mark.parametrize("line, msg", [
    ("bogus.key = 1", "unknown key"),
    ("train.epochs = many", "bad value"),
    ("no equals sign", "expected"),
    ("train.lr = -1", "learning rate"),
    ("goal.metric = auc", "metric"),
    ("data.split = 0.5, 0.5", "three positive"),
    ("attack.schedule = spiral", "schedule"),
])
def test_rejections(tmp_path, line, msg):
    cfg = tmp_path / "c.conf"
    cfg.write_text(line + "\n")
    with pytest.raises(ConfigError, match=msg):
        parse_config(cfg, env={})


def test_builders():
    cfg = parse_config(None, ["goal.metric = recall", "goal.credit = share", "attack.schedule = geometric",
                              "attack.q = 0.25"], env={})
    assert cfg.goal().credit == "share"
    assert cfg.attack_config().schedule.q == 0.25
    assert cfg.train_config().entropy_start == 1.0
    assert parse_config(None, env={}).goal() is None
    dets = parse_detectors("A:0.9:2, B:0.8:1:0.3:0.1")
    assert dets[0].cost_law.value == 2.0 and dets[1].noise == 0.1
    with pytest.raises(ConfigError):
        parse_detectors("A:0.9")


def test_format_round_trip():
    text = format_config({"reward.d": 0.529167128233763, "reward.t_cap": 18.0})
    raw = parse_lines(text.splitlines())
    assert float(raw["reward.d"]) == 0.529167128233763 and raw["reward.t_cap"] == "18"


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_end_to_end(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text(f"data.detectors = {FIVE}\ndata.n_samples = 400\ndata.table = {tmp_path / 'table.csv'}\n"
                    "train.epochs = 2\nreward.scheme = 3\nattack.n_samples = 20\nattack.rounds = 1\n")
    base = ["--config", str(conf), "--out", str(tmp_path)]
    assert run(["gen", *base], capsys)[0] == 0
    assert load_table(tmp_path / "table.csv").n_detectors == 5
    assert run(["train", *base], capsys)[0] == 0
    assert (tmp_path / "agent.json").exists() and (tmp_path / "agent_log.json").exists()
    code, out, _ = run(["eval", *base], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "eval.json").read_text())
    assert len(doc["rows"]) == 63
    assert doc["rows"][0]["combination"] == "agent"
    assert doc["pareto_front"]
    first = (tmp_path / "eval.json").read_bytes()
    run(["eval", *base], capsys)
    assert (tmp_path / "eval.json").read_bytes() == first

    assert run(["attack", *base], capsys)[0] == 0
    assert run(["attack", *base, "--set", "attack.target=or-best", "--set", "attack.kind=black",
                "--set", "attack.out=attack_or.json"], capsys)[0] == 0
    assert run(["transfer", *base, "--set", "transfer.target_end=18"], capsys)[0] == 0
    code, out, _ = run(["report", *base], capsys)
    assert code == 0
    for name in ("report.json", "report.txt", "report_eval_pareto.png", "report_attacks.png"):
        assert (tmp_path / name).exists()
    merged = json.loads((tmp_path / "report.json").read_text())
    assert merged["sources"]["attack"] == ["attack.json", "attack_or.json"]


def test_eval_rejects_other_pool(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text(f"data.n_samples = 300\ndata.table = {tmp_path / 'table.csv'}\ntrain.epochs = 1\n")
    base = ["--config", str(conf), "--out", str(tmp_path)]
    run(["gen", *base], capsys)
    run(["train", *base], capsys)
    other = tmp_path / "other.csv"
    run(["gen", *base, "--set", "data.detectors=W:0.9:1, X:0.8:1, Y:0.7:1, Z:0.6:1",
         "--set", f"data.out={other}"], capsys)
    code, _, err = run(["eval", *base, "--test-table", str(other)], capsys)
    assert code == 2
    assert err.startswith("cascadeforge eval: error: detector pools differ")
    assert err.count("\n") == 1


def test_transfer_then_train(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text(f"data.n_samples = 300\ndata.table = {tmp_path / 'table.csv'}\ntrain.epochs = 1\n")
    base = ["--config", str(conf), "--out", str(tmp_path)]
    run(["gen", *base], capsys)
    code, out, _ = run(["transfer", *base, "--set", f"transfer.target_table={tmp_path / 'table.csv'}"], capsys)
    assert code == 0
    report = json.loads((tmp_path / "curve.json").read_text())
    assert 0 < report["sym_kl"] < 1e-8
    code, _, _ = run(["train", "--config", str(conf), "--config", str(tmp_path / "curve.conf"),
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    extra = json.loads((tmp_path / "agent.json").read_text())["extra"]
    assert extra["reward.d"] == report["curve"]["reward.d"]
    assert extra["reward.t_cap"] == report["curve"]["reward.t_cap"]


def test_missing_table_is_one_line_error(tmp_path, capsys):
    code, _, err = run(["train", "--out", str(tmp_path)], capsys)
    assert code == 2 and "data.table" in err and err.count("\n") == 1
