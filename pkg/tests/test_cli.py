import json

import numpy as np
import pytest

from partcom import cli
from partcom import experiment as ex

CONFIG = """seed = 0
n_known = 2
n_unknown = 2
n_train_per_class = 6
n_test_per_class = 3
n_points = 64
feature_dim = 16
parts_per_class = 2
reduced_dim = 4
embed_dim = 8
batch_size = 8
epochs = 1
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG)
    return path


def test_gen_train_eval(tmp_path, config, capsys):
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--task", "single", "--config", str(config), "--out", str(data)]) == 0
    assert (data / "train.json").exists() and (data / "test.json").exists()
    ckpt = tmp_path / "m.ckpt"
    assert cli.main(["train", "--config", str(config), "--out", str(ckpt)]) == 0
    assert ckpt.exists()
    out = tmp_path / "eval"
    assert cli.main(["eval", "--ckpt", str(ckpt), "--split", str(data / "test.json"), "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed == json.loads((out / "metrics.json").read_text())
    assert (out / "records.csv").exists() and (out / "curve.csv").exists()


def test_ablate_subset(tmp_path, config, capsys):
    code = cli.main(["ablate", "--config", str(config), "--seeds", "1", "--rows", "baseline,full",
                     "--out", str(tmp_path / "abl")])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [l.split()[0] for l in lines[1:]] == ["baseline", "full"]


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("epochs = 1\n")
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "m.ckpt")]) == 2
    assert "seed" in capsys.readouterr().err


def test_missing_split_exits_2(tmp_path, config):
    ckpt = tmp_path / "m.ckpt"
    cli.main(["train", "--config", str(config), "--out", str(ckpt)])
    assert cli.main(["eval", "--ckpt", str(ckpt), "--split", str(tmp_path / "none.json"),
                     "--out", str(tmp_path)]) == 2


def test_divergence_exits_3(tmp_path, config, monkeypatch, capsys):
    from partcom import autodiff as ad
    monkeypatch.setattr(ex, "total_loss", lambda comps, w: ad.Tensor(np.nan))
    assert cli.main(["train", "--config", str(config), "--out", str(tmp_path / "m.ckpt")]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_usage_error_from_argparse():
    with pytest.raises(SystemExit) as err:
        cli.main(["train"])
    assert err.value.code == 2
