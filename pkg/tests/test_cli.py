import json
from collections import Counter

import numpy as np
import pytest

from r3net import cli, datagen, training

SMALL_GEN = ["--height", "4", "--width", "4", "--channels", "8", "--min-objects", "3", "--max-objects", "4"]
SMALL_MODEL = ["--c", "8", "--hidden", "8", "--skel-dim", "4", "--word-dim", "4", "--batch-size", "8"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["generate", "--pairs", "24", "--seed", "3", "--out", str(root / "train"), *SMALL_GEN]) == 0
    assert cli.main(["generate", "--pairs", "12", "--seed", "4", "--out", str(root / "test"), *SMALL_GEN]) == 0
    ckpt = root / "model.ckpt"
    assert cli.main(["train", "--data", str(root / "train"), "--held-out", str(root / "test"), "--out", str(ckpt),
                     "--epochs", "2", "--eval-every", "1", *SMALL_MODEL]) == 0
    return root, ckpt


def test_generate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "generate", "--pairs", "30", "--seed", "7", "--out", a, *SMALL_GEN)[0] == 0
    assert run(capsys, "generate", "--pairs", "30", "--seed", "7", "--out", b, *SMALL_GEN)[0] == 0
    for name in ("pairs.jsonl", "grids.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    assert ma["corpus_hash"] == json.loads((b / "manifest.json").read_text())["corpus_hash"]
    assert ma["seed"] == 7 and ma["command"] == "generate"


def test_generate_stats_match_recount(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "--pairs", "60", "--seed", "1", "--out", tmp_path, *SMALL_GEN)
    assert code == 0
    stats = json.loads(out)
    lines = (tmp_path / "pairs.jsonl").read_text().splitlines()[1:]
    recount = Counter(json.loads(line)["change"]["kind"] for line in lines)
    assert {k: v for k, v in stats["kinds"].items() if v} == dict(recount)
    assert stats["pairs"] == 60
    assert stats["vocab_size"] == len(datagen.VOCAB)


def test_generate_without_distractors(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "--pairs", "50", "--seed", "2", "--distractor-prob", "0",
                       "--out", tmp_path, *SMALL_GEN)
    assert code == 0
    assert json.loads(out)["kinds"].get("Distractor", 0) == 0


def test_data_dir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.DATA_ENV, str(tmp_path / "envdata"))
    assert run(capsys, "generate", "--pairs", "5", *SMALL_GEN)[0] == 0
    assert len(datagen.load_corpus(tmp_path / "envdata")) == 5


def test_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pairs": 9, "seed": 5, "noise-sigma": 0.0}))
    out = tmp_path / "c"
    assert run(capsys, "generate", "--config", cfg, "--seed", "6", "--out", out, *SMALL_GEN)[0] == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["pairs"] == 9  # from file
    assert manifest["config"]["seed"] == 6  # flag wins
    assert manifest["config"]["noise_sigma"] == 0.0
    assert manifest["config"]["jitter_prob"] == datagen.GenConfig.jitter_prob  # default


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pairz": 9}))
    code, _, err = run(capsys, "generate", "--config", cfg, "--out", tmp_path / "x")
    assert code == cli.EXIT_USAGE and "pairz" in err


def test_usage_errors(capsys, tmp_path):
    assert run(capsys, "train")[0] == cli.EXIT_USAGE
    assert run(capsys, "nonsense")[0] == cli.EXIT_USAGE
    assert run(capsys, "generate", "--pairs", "0", "--out", tmp_path)[0] == cli.EXIT_USAGE
    assert run(capsys, "generate", "--height", "2", "--out", tmp_path)[0] == cli.EXIT_USAGE


def test_train_defaults():
    d = cli.DEFAULTS["train"]
    assert d["lam"] == 0.1 and d["lr"] == 1e-3 and d["variant"] == "r3net-ssp"


def test_train_writes_checkpoint_log_and_manifest(workspace):
    root, ckpt = workspace
    state = training.load_checkpoint(ckpt)
    assert state.epoch == 2 and state.dims.c_in == 8
    records = [json.loads(line) for line in open(f"{ckpt}.log.jsonl")]
    assert [r["epoch"] for r in records] == [1, 2]
    assert all("held_out" in r for r in records)
    manifest = json.loads(open(f"{ckpt}.manifest.json").read())
    assert manifest["checkpoint"] == str(ckpt)
    assert manifest["corpus_hash"] == datagen.corpus_hash(root / "train")


def test_eval_report(workspace, capsys, tmp_path):
    root, ckpt = workspace
    code, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--data", root / "test")
    assert code == 0
    report = json.loads(out)
    assert report["count"] == 12
    assert 0.0 <= report["change_type_accuracy"] <= 1.0
    path = tmp_path / "report.json"
    assert run(capsys, "eval", "--checkpoint", ckpt, "--data", root / "test", "--out", path)[0] == 0
    assert json.loads(path.read_text()) == report
    assert (tmp_path / "report.json.manifest.json").exists()


def test_caption_seed_is_deterministic(workspace, capsys):
    _, ckpt = workspace
    first = run(capsys, "caption", "--checkpoint", ckpt, "--seed", "42")
    second = run(capsys, "caption", "--checkpoint", ckpt, "--seed", "42")
    assert first[0] == 0 and first[1] == second[1]
    lines = first[1].splitlines()
    assert len(lines) == 1 + 10  # caption, then the top-10 skeletons
    scores = [float(line.split()[-1]) for line in lines[1:]]
    assert scores == sorted(scores, reverse=True)


def test_caption_pair_with_attention(workspace, capsys, tmp_path):
    root, ckpt = workspace
    dump = tmp_path / "attn.json"
    code, out, _ = run(capsys, "caption", "--checkpoint", ckpt, "--data", root / "test", "--pair", "3",
                       "--top-k", "2", "--attention", dump)
    assert code == 0 and len(out.splitlines()) == 3
    payload = json.loads(dump.read_text())
    assert payload["pair"] == 3
    assert payload["caption"] == out.splitlines()[0]


def test_dump_attention_matrices(workspace, capsys, tmp_path):
    root, ckpt = workspace
    path = tmp_path / "a.json"
    assert run(capsys, "dump-attention", "--checkpoint", ckpt, "--data", root / "test", "--pair", "0",
               "--out", path)[0] == 0
    d = json.loads(path.read_text())
    for key in ("alpha_bef", "alpha_aft", "a_bef", "a_aft"):
        grid = np.array(d[key])
        assert grid.shape == (4, 4)
        assert np.all((grid > 0) & (grid < 1))
    beta = np.array(d["beta"])
    assert beta.shape[1] == 3
    np.testing.assert_allclose(beta.sum(axis=1), 1.0, atol=1e-12)


def test_data_errors(workspace, capsys, tmp_path):
    root, ckpt = workspace
    assert run(capsys, "eval", "--checkpoint", tmp_path / "missing.ckpt", "--data", root / "test")[0] == cli.EXIT_DATA
    assert run(capsys, "eval", "--checkpoint", ckpt, "--data", tmp_path / "nowhere")[0] == cli.EXIT_DATA
    garbage = tmp_path / "garbage.ckpt"
    garbage.write_bytes(b"not a checkpoint")
    assert run(capsys, "eval", "--checkpoint", garbage, "--data", root / "test")[0] == cli.EXIT_DATA
    assert run(capsys, "caption", "--checkpoint", ckpt, "--data", root / "test", "--pair", "99")[0] == cli.EXIT_DATA


def test_dimension_mismatch_names_both(workspace, capsys, tmp_path):
    _, ckpt = workspace
    wide = tmp_path / "wide"
    assert run(capsys, "generate", "--pairs", "4", "--out", wide, "--channels", "16",
               "--height", "4", "--width", "4", "--min-objects", "3", "--max-objects", "4")[0] == 0
    code, _, err = run(capsys, "eval", "--checkpoint", ckpt, "--data", wide)
    assert code == cli.EXIT_DATA
    assert "16" in err and "8" in err


def test_numeric_abort_exit_code(workspace, capsys, tmp_path):
    root, _ = workspace
    code, _, err = run(capsys, "train", "--data", root / "train", "--out", tmp_path / "m.ckpt", "--lr", "nan",
                       "--epochs", "2", *SMALL_MODEL)
    assert code == cli.EXIT_NUMERIC, err


def test_version(capsys):
    assert run(capsys, "--version")[0] == 0
