import subprocess
import sys

import pytest

from sasvkit.cli import GEN_FILES, main
from sasvkit.metrics import all_eers
from sasvkit.scoring import parse_scores

SMALL = ["--n-speakers", "4", "--utts-per-speaker", "3", "--d-spk", "8", "--d-cm", "6"]


@pytest.fixture
def cohort(tmp_path):
    out = tmp_path / "data"
    assert main(["gen", "--out", str(out), "--seed", "1", *SMALL]) == 0
    return out


def paths(d):
    return ["--protocol", str(d / GEN_FILES["protocol"]), "--spk-emb", str(d / GEN_FILES["spk"]),
            "--cm-emb", str(d / GEN_FILES["cm"]), "--cm-logits", str(d / GEN_FILES["cm_logits"])]


def test_gen_writes_four_files(tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "g"), *SMALL]) == 0
    printed = capsys.readouterr().out.split()
    assert len(printed) == 4
    assert sorted(p.name for p in (tmp_path / "g").iterdir()) == sorted(GEN_FILES.values())


def test_gen_default_cohort(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "g")]) == 0
    assert len(list((tmp_path / "g").iterdir())) == 4


def test_gen_repeatable(tmp_path):
    for name in ("a", "b"):
        assert main(["gen", "--out", str(tmp_path / name), "--seed", "7", *SMALL]) == 0
    for f in GEN_FILES.values():
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--out", str(tmp_path), "--n-speakers", "0"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--out", str(tmp_path), "--n-speakers", "1"])
    assert exc.value.code == 2
    assert "n_speakers" in capsys.readouterr().err


def test_gen_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen", "--out", str(blocker / "sub"), *SMALL]) == 1
    assert "cannot write" in capsys.readouterr().err


@pytest.mark.parametrize("backend", ["asv-only", "b1", "b1v2"])
def test_score_and_reread(cohort, tmp_path, capsys, backend):
    out = tmp_path / f"{backend}.txt"
    assert main(["score", *paths(cohort), "--backend", backend, "--out", str(out)]) == 0
    report = capsys.readouterr().out.strip().splitlines()[-1]
    assert report.startswith("SV-EER: ")
    lines = out.read_text().splitlines()
    proto = (cohort / GEN_FILES["protocol"]).read_text().splitlines()
    assert [ln.rsplit(" ", 1)[0] for ln in lines] == proto
    assert main(["eval", str(out)]) == 0
    assert capsys.readouterr().out.strip() == report


def test_score_to_stdout(cohort, capsys):
    assert main(["score", *paths(cohort), "--backend", "b1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 4 * 4 * 3 + 4 * 15 + 1


def test_score_missing_id(cohort, tmp_path, capsys):
    proto = tmp_path / "p.txt"
    proto.write_text("spk0000 nobody target\n")
    args = paths(cohort)
    args[1] = str(proto)
    assert main(["score", *args, "--backend", "asv-only"]) == 1
    assert "nobody" in capsys.readouterr().err


def test_score_b2_needs_model(cohort, capsys):
    assert main(["score", *paths(cohort), "--backend", "b2"]) == 1
    assert "--model" in capsys.readouterr().err


def test_train_and_score_b2(cohort, tmp_path, capsys):
    model = tmp_path / "m.bin"
    args = ["train", *paths(cohort), "--model", str(model), "--epochs", "3", "--hidden", "8", "6", "4", "--seed", "2"]
    assert main(args) == 0
    first = model.read_bytes()
    loss_csv = (tmp_path / "m.bin.loss.csv").read_text().splitlines()
    assert loss_csv[0] == "epoch,loss" and len(loss_csv) == 4
    assert main(args) == 0
    assert model.read_bytes() == first
    assert main(["score", *paths(cohort), "--backend", "b2", "--model", str(model)]) == 0

    other = tmp_path / "data2"
    main(["gen", "--out", str(other), "--seed", "1", "--n-speakers", "4", "--utts-per-speaker", "3",
          "--d-spk", "5", "--d-cm", "6"])
    capsys.readouterr()
    assert main(["score", *paths(other), "--backend", "b2", "--model", str(model)]) == 1
    assert "does not match" in capsys.readouterr().err


def test_train_zero_epochs(cohort, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", *paths(cohort), "--model", str(tmp_path / "m"), "--epochs", "0"])
    assert exc.value.code == 2


def test_train_single_class(cohort, tmp_path, capsys):
    proto = tmp_path / "p.txt"
    proto.write_text("spk0000 spk0001-bf0000 nontarget\n")
    args = paths(cohort)
    args[1] = str(proto)
    assert main(["train", *args, "--model", str(tmp_path / "m"), "--epochs", "1"]) == 1
    assert "both" in capsys.readouterr().err


def test_config_file_and_precedence(cohort, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# training run\nepochs = 2\nlr=0.05\nhidden = 4,4,4\nseed=3\n")
    m1, m2 = tmp_path / "m1", tmp_path / "m2"
    assert main(["train", "--config", str(cfg), *paths(cohort), "--model", str(m1)]) == 0
    assert len((tmp_path / "m1.loss.csv").read_text().splitlines()) == 3
    assert main(["train", "--config", str(cfg), *paths(cohort), "--model", str(m2), "--epochs", "4"]) == 0
    assert len((tmp_path / "m2.loss.csv").read_text().splitlines()) == 5


def test_config_unknown_key(cohort, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_speed=1\n")
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", str(cfg), *paths(cohort), "--model", str(tmp_path / "m")])
    assert exc.value.code == 2


def test_det_one_and_two_systems(cohort, tmp_path, capsys):
    for backend in ("b1", "b1v2"):
        main(["score", *paths(cohort), "--backend", backend, "--out", str(tmp_path / f"{backend}.txt")])
    out = tmp_path / "det"
    assert main(["det", str(tmp_path / "b1.txt"), "--out", str(out / "one")]) == 0
    assert sorted(p.name for p in (out / "one").iterdir()) == ["b1.det.csv", "b1.det.svg"]
    assert main(["det", str(tmp_path / "b1.txt"), str(tmp_path / "b1v2.txt"), "--out", str(out / "two")]) == 0
    overlay = (out / "two" / "det_overlay.svg").read_text()
    assert overlay.count('id="det-') == 2
    csv = (out / "one" / "b1.det.csv").read_text().splitlines()
    assert csv[0] == "threshold,far,frr" and csv[-1].startswith("inf,0,1")


def test_det_errors(tmp_path, capsys):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert main(["det", str(empty), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.txt"
    bad.write_text("m u target 0.5\nm u target\n")
    assert main(["det", str(bad), "--out", str(tmp_path)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_score_reread_eer_consistency(cohort, tmp_path):
    from sasvkit.embedding import load_cm_logits, load_store
    from sasvkit.metrics import scored_from_protocol
    from sasvkit.protocol import parse_protocol
    from sasvkit.scoring import score_protocol

    out = tmp_path / "s.txt"
    main(["score", *paths(cohort), "--backend", "b1", "--out", str(out)])
    proto = parse_protocol((cohort / GEN_FILES["protocol"]).read_bytes())
    scores = score_protocol(proto, "b1", load_store((cohort / GEN_FILES["spk"]).read_bytes()),
                            cm_logits=load_cm_logits((cohort / GEN_FILES["cm_logits"]).read_bytes()))
    direct = all_eers(scored_from_protocol(proto, scores))
    reread = all_eers(parse_scores(out.read_bytes()))
    for a, b in zip(direct, reread):
        assert abs(a.eer - b.eer) <= 1e-8


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "sasvkit.cli", "eval", str(tmp_path / "missing")],
                         capture_output=True, text=True)
    assert res.returncode == 1
    assert res.stdout == ""
    assert "error" in res.stderr
