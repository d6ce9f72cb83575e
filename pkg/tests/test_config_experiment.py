import csv
import math

import numpy as np
import pytest

from conftest import small_cfg, with_
from prismnet import experiment as X
from prismnet.cli import main
from prismnet.config import ABLATION_FLAGS, ExperimentConfig, from_ini_text, load_config, save_config, to_ini
from prismnet.data import ConfigError
from prismnet.experiment import (EMBEDDING_TAGS, HorizonMetrics, MetricsReport, TrainingDivergence,
                                 TriModalDataset, dump_embeddings, error_metrics, evaluate, load_models,
                                 run, run_ablation_suite, run_few_shot_suite, train, window_embeddings)


# -- configuration -------------------------------------------------------------

def test_defaults_follow_the_training_protocol():
    c = ExperimentConfig()
    assert (c.batch_size, c.lr, c.epochs, c.patience, c.dropout) == (32, 1e-4, 10, 5, 0.1)
    assert (c.embed_dim, c.window, c.horizons) == (128, 480, (24, 96, 192, 336))
    assert c.lambda_syn / c.lambda_rdn == pytest.approx(3.0)
    c.validate()


def test_ini_round_trip(tmp_path):
    cfg = small_cfg(seed=4, no_image=True, alpha=(0.5, 2.0))
    save_config(cfg, tmp_path / "c.ini")
    back = load_config(tmp_path / "c.ini")
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert from_ini_text("[train]\nseed = 9\n").seed == 9


@pytest.mark.parametrize("text,match", [
    ("[train]\nbogus = 1\n", "unknown key"),
    ("[model]\nseed = 1\n", "belongs in section"),
    ("[train]\nepochs = many\n", "epochs"),
    ("[ablation]\nno_cl = perhaps\n", "no_cl"),
    ("[loss]\ntau = 0\n", "temperature"),
    ("[model]\nembed_dim = 30\n", "divisible"),
    ("[train]\ntrain_fraction = 0\n", "train_fraction"),
    ("no section header\n", "parse"),
])
def test_ini_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        from_ini_text(text)


def test_config_helpers(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        ExperimentConfig().with_flag("no_everything")
    cl = ExperimentConfig().with_flag("no_cl").contrastive()
    assert cl.lambda_rdn == cl.lambda_syn == 0.0
    assert ExperimentConfig(no_text=True, no_cl=True).enabled_ablations() == ["no_text", "no_cl"]
    assert "[ablation]" in to_ini(ExperimentConfig())
    mc = ExperimentConfig(gru_to_transformer=True, word2vec_text=True).model_config(24)
    assert (mc.image_encoder, mc.text_encoder) == ("transformer", "bag")


# -- metrics -------------------------------------------------------------------

def test_error_metrics_examples():
    t = np.random.default_rng(0).normal(size=(400, 8, 2))
    assert error_metrics(t, t) == (0.0, 0.0)
    mse, mae = error_metrics(np.zeros_like(t), t)
    assert mse == pytest.approx(np.mean(t ** 2), abs=1e-12)
    assert abs(mse - 1.0) < 0.1
    assert mae ** 2 <= mse


def test_report_averages():
    rep = MetricsReport([HorizonMetrics(24, 0.3, 0.4, 10), HorizonMetrics(96, 0.5, 0.6, 10)])
    assert rep.avg_mse == pytest.approx(0.4, abs=1e-12) and rep.avg_mae == pytest.approx(0.5, abs=1e-12)
    rows = rep.csv_rows()
    assert rows[-1]["horizon"] == "avg" and len(rows) == 3


# -- training ------------------------------------------------------------------

@pytest.fixture(scope="module")
def data():
    cfg = small_cfg()
    return cfg, TriModalDataset(cfg, 8)


@pytest.fixture(scope="module")
def trained(data):
    cfg, ds = data
    return train(cfg, 8, ds)


def test_smoke_training_reduces_loss(trained):
    log = trained.loss_log
    epochs = {r["epoch"] for r in log}
    first = np.mean([r["l_total"] for r in log if r["epoch"] == min(epochs)][:5])
    last = np.mean([r["l_total"] for r in log if r["epoch"] == max(epochs)][-5:])
    assert last < first
    assert trained.epoch_log[0]["epoch"] == 0


def test_loss_log_identity_on_every_step(trained):
    for r in trained.loss_log:
        assert abs(r["l_total"] - (r["l_prediction"] + r["lambda_rdn"] * r["l_rdn"]
                                   + r["lambda_syn"] * r["l_syn"])) <= 1e-12
        assert r["rdn_series_text"] > 0 and r["syn_fused_image"] > 0


def test_best_epoch_is_never_worse(trained):
    seen = [e["val_mse"] for e in trained.epoch_log]
    assert trained.best_val_mse == min(seen)
    assert trained.epoch_log[trained.best_epoch]["val_mse"] == trained.best_val_mse


def test_training_is_deterministic(data, trained):
    cfg, ds = data
    again = train(cfg, 8, ds)
    assert again.loss_log == trained.loss_log
    assert all(np.array_equal(v, again.model.state_dict()[k]) for k, v in trained.model.state_dict().items())


def test_patience_zero_stops_at_first_stall(data):
    cfg, ds = data
    res = train(with_(cfg, lr=1e-300, epochs=4, patience=0), 8, ds)
    assert [e["epoch"] for e in res.epoch_log] == [0, 1]
    assert res.stopped_early and res.best_epoch == 0


def test_no_cl_logs_zero_contrastive_terms(data):
    cfg, ds = data
    res = train(with_(cfg.with_flag("no_cl"), epochs=1), 8, ds)
    assert all(r["l_rdn"] == 0 and r["l_syn"] == 0 and r["lambda_rdn"] == 0 for r in res.loss_log)
    assert all(r["l_total"] == r["l_prediction"] for r in res.loss_log)


def test_divergence_names_the_step(data, monkeypatch):
    cfg, ds = data
    real = X.compute_losses
    calls = {"n": 0}

    def poisoned(out, batch, c):
        bd = real(out, batch, c)
        calls["n"] += 1
        if calls["n"] == 3:
            bd.l_total = math.nan
        return bd

    monkeypatch.setattr(X, "compute_losses", poisoned)
    with pytest.raises(TrainingDivergence, match="step 2"):
        train(with_(cfg, epochs=1), 8, ds)


def test_every_ablation_trains(data):
    cfg, ds = data
    rows = run_ablation_suite(with_(cfg, epochs=1), horizon=8, with_test=False)
    assert [r.label for r in rows] == ["full", *ABLATION_FLAGS]
    assert len({r.test_hash for r in rows}) == 1
    assert all(np.isfinite(r.val_mae) for r in rows)


def test_few_shot_suite_shares_test_set(data):
    cfg, _ = data
    rows = run_few_shot_suite(with_(cfg, epochs=1), fractions=(0.1, 1.0), horizon=8)
    assert len({r.test_hash for r in rows}) == 1
    plain = train(with_(cfg, epochs=1), 8)
    assert rows[1].val_mae == plain.final_val_mae


# -- outputs -------------------------------------------------------------------

@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_cfg(epochs=1)
    res = run(cfg, out)
    return cfg, out, res


def test_run_writes_outputs(run_dir):
    cfg, out, res = run_dir
    for name in ("config.ini", "checkpoint.prsm", "loss_log.csv", "metrics.csv", "timing.csv"):
        assert (out / name).exists()
    assert load_config(out / "config.ini") == cfg
    with (out / "loss_log.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == len(res.results[8].loss_log)


def test_identical_config_gives_identical_metrics_csv(run_dir, tmp_path):
    cfg, out, _ = run_dir
    run(cfg, tmp_path)
    assert (tmp_path / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_checkpoint_resume_reproduces_metrics(run_dir):
    cfg, out, res = run_dir
    models = load_models(out / "checkpoint.prsm", cfg)
    rep = evaluate(models, cfg, "test", [8], res.datasets)
    assert rep.rows[0].mse == res.report.rows[0].mse and rep.rows[0].mae == res.report.rows[0].mae
    with pytest.raises(ConfigError):
        evaluate(models, cfg, "test", [24])


def test_dump_embeddings(run_dir, tmp_path):
    cfg, out, res = run_dir
    model, ds = res.results[8].model, res.datasets[8]
    n = dump_embeddings(model, ds, cfg, "val", tmp_path / "a.csv")
    assert n == 4 * len(ds.split("val"))
    dump_embeddings(model, ds, cfg, "val", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with (tmp_path / "a.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows[0]) == 2 + cfg.embed_dim
    first = ds.split("val")[:1]
    emb = window_embeddings(model, ds.batch(first, model, cfg, with_negatives=False))
    by_tag = {r[0]: np.array(r[2:], dtype=float) for r in rows[1:] if int(r[1]) == first[0].window_start_index}
    assert set(by_tag) == set(EMBEDDING_TAGS)
    for tag in EMBEDDING_TAGS:
        assert np.max(np.abs(by_tag[tag] - emb[tag][0])) <= 1e-12


# -- command line ----------------------------------------------------------

def test_cli_train_eval_preview(tmp_path, capsys):
    ini = tmp_path / "small.ini"
    save_config(small_cfg(epochs=1), ini)
    out = tmp_path / "out"
    assert main(["train", "--config", str(ini), "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    assert main(["eval", "--config", str(ini), "--out", str(out), "--split", "val"]) == 0
    assert (out / "metrics_val.csv").exists()
    assert main(["dump-embeddings", "--config", str(ini), "--out", str(out), "--split", "val"]) == 0
    assert main(["render-preview", "--config", str(ini), "--out", str(tmp_path / "pv"), "--window", "3"]) == 0
    files = sorted(p.name for p in (tmp_path / "pv").iterdir())
    assert "window3_text_none.txt" in files and "window3_image_patch_swap_0.pgm" in files
    assert len(files) == 3 + 3 * small_cfg().group_size
    capsys.readouterr()


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlr = -1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "learning rate" in capsys.readouterr().err
    ini = tmp_path / "ok.ini"
    save_config(small_cfg(), ini)
    assert main(["eval", "--config", str(ini), "--out", str(tmp_path / "nothing")]) == 2
    assert main(["train", "--config", str(ini), "--horizon", "24", "--out", str(tmp_path)]) == 2


def test_negatives_leave_the_anchor_path_untouched(data):
    # same dropout masks on the anchor path, so full and no_cl differ only through the loss
    cfg, ds = data
    windows = ds.split("train")[:4]
    preds = []
    for with_neg in (False, True):
        model = X.PrismNet(cfg.model_config(8, ds.n_channels, len(ds.tokenizer)), seed=cfg.seed)
        batch = ds.batch(windows, model, cfg, with_negatives=with_neg)
        preds.append(X.forward(model, batch, training=True, with_negatives=with_neg).pred.data)
    assert np.array_equal(preds[0], preds[1])
