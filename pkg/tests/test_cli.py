import pytest

from rntraj.cli import main, read_config_file, resolve_train_config
from rntraj.errors import ConfigError
from rntraj.trajsim import load_corpus
from rntraj.utgraph import load_embeddings


def test_netgen_writes_network_and_resolved_config(tmp_path):
    out = tmp_path / "net"
    assert main(["netgen", "--rows", "3", "--cols", "3", "--spacing", "100", "-o", str(out)]) == 0
    assert (out / "nodes.csv").exists()
    assert (out / "edges.csv").exists()
    resolved = (out / "config.resolved").read_text()
    assert "rows = 3" in resolved


def test_missing_required_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["netgen", "--rows", "3", "-o", "x"])
    assert exc.value.code != 0


def test_error_reports_machine_parseable_class(tmp_path, capsys):
    code = main(
        ["simulate", "--net", str(tmp_path / "missing"), "--n", "1", "--tmin", "5",
         "--tmax", "8", "-o", str(tmp_path / "c.txt")]
    )
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("error class=ParseError")


def test_bad_worker_count(tmp_path, capsys):
    code = main(["--workers", "0", "netgen", "--rows", "2", "--cols", "2",
                 "--spacing", "10", "-o", str(tmp_path / "n")])
    assert code == 2
    assert "ConfigError" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg_path = tmp_path / "train.cfg"
    cfg_path.write_text("epochs = 7\nbatch_size = 32  # inline comment\n\n")
    cfg = resolve_train_config(str(cfg_path), {"epochs": 2, "batch_size": None})
    assert cfg.epochs == 2  # flag wins
    assert cfg.batch_size == 32  # file wins over default


def test_config_file_rejects_unknown_key(tmp_path):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text("bogus = 1\n")
    with pytest.raises(ConfigError, match="unknown"):
        resolve_train_config(str(cfg_path), {})


def test_config_file_rejects_malformed_line(tmp_path):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text("epochs 7\n")
    with pytest.raises(ConfigError, match="key = value"):
        read_config_file(str(cfg_path))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """netgen -> simulate -> pretrain -> train -> sample on a small setup."""
    root = tmp_path_factory.mktemp("pipeline")
    net = root / "net"
    corpus = root / "corpus.txt"
    emb = root / "table.emb"
    ckpts = root / "ckpts"
    assert main(["netgen", "--rows", "4", "--cols", "4", "--spacing", "100", "-o", str(net)]) == 0
    assert main(
        ["simulate", "--net", str(net), "--n", "30", "--tmin", "5", "--tmax", "8",
         "--seed", "1", "-o", str(corpus)]
    ) == 0
    assert main(
        ["pretrain", "--corpus", str(corpus), "--dim", "8", "--walks", "10",
         "--walk-len", "12", "--window", "3", "--iters", "60", "--seed", "2", "-o", str(emb)]
    ) == 0
    assert main(
        ["train", "--corpus", str(corpus), "--net", str(net), "--emb", str(emb),
         "--epochs", "2", "--batch-size", "16", "--steps", "8", "--seed", "3",
         "--channels", "8", "--pe-dim", "8", "--layers", "2", "--layers-per-block", "2",
         "--topk", "4", "-o", str(ckpts)]
    ) == 0
    return {"net": net, "corpus": corpus, "emb": emb, "ckpts": ckpts, "root": root}


def test_pipeline_outputs(pipeline):
    corpus = load_corpus(pipeline["corpus"])
    assert len(corpus) == 30
    table = load_embeddings(pipeline["emb"])
    assert table.dim == 8
    assert (pipeline["ckpts"] / "epoch_002.ckpt").exists()
    log = (pipeline["ckpts"] / "log.csv").read_text().splitlines()
    assert log[0] == "epoch,l1,l2,l3_soft,l3_hard,lr"
    assert len(log) == 3
    assert (pipeline["ckpts"] / "config.resolved").exists()


def test_sample_matches_reference_counts(pipeline):
    out = pipeline["root"] / "generated.txt"
    assert main(
        ["sample", "--ckpt", str(pipeline["ckpts"] / "epoch_002.ckpt"),
         "--emb", str(pipeline["emb"]), "--net", str(pipeline["net"]),
         "--counts-from", str(pipeline["corpus"]), "--seed", "4", "-o", str(out)]
    ) == 0
    gen = load_corpus(out)
    ref = load_corpus(pipeline["corpus"])
    assert gen.length_counts() == ref.length_counts()


def test_evaluate_self_comparison_is_zero(pipeline, capsys):
    report = pipeline["root"] / "report.csv"
    assert main(
        ["evaluate", "--gen", str(pipeline["corpus"]), "--ref", str(pipeline["corpus"]),
         "--net", str(pipeline["net"]), "-o", str(report)]
    ) == 0
    rows = dict(line.split(",") for line in report.read_text().splitlines()[1:])
    assert set(rows) == {"jsd_td", "jsd_sd", "jsd_gpd", "jsd_rs", "rsc"}
    for name in ("jsd_td", "jsd_sd", "jsd_gpd", "jsd_rs"):
        assert abs(float(rows[name])) < 1e-9
    assert float(rows["rsc"]) == 100.0


def test_workers_flag_accepted(tmp_path):
    out = tmp_path / "net"
    assert main(["--workers", "1", "netgen", "--rows", "2", "--cols", "2",
                 "--spacing", "50", "-o", str(out)]) == 0


def test_sample_cli_deterministic(pipeline):
    outs = []
    for name in ("g1.txt", "g2.txt"):
        out = pipeline["root"] / name
        assert main(
            ["sample", "--ckpt", str(pipeline["ckpts"] / "epoch_002.ckpt"),
             "--emb", str(pipeline["emb"]), "--net", str(pipeline["net"]),
             "--counts-from", str(pipeline["corpus"]), "--seed", "7", "-o", str(out)]
        ) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("kind", ["rwrn", "markov"])
def test_baseline_subcommand(pipeline, kind):
    out = pipeline["root"] / f"{kind}.txt"
    assert main(
        ["baseline", "--kind", kind, "--ref", str(pipeline["corpus"]), "--seed", "5",
         "-o", str(out)]
    ) == 0
    gen = load_corpus(out)
    ref = load_corpus(pipeline["corpus"])
    assert gen.length_counts() == ref.length_counts()
