from pathlib import Path

import pytest

from hhattrib.cli import main

SYNTH_CFG = """\
households_size2 = 5
households_size3 = 1
households_size4 = 1
events_per_user = 40
overlap = 0.1
rank = 2
noise_sigma = 8.0
seed = 6
"""


@pytest.fixture
def workspace(tmp_path):
    config = tmp_path / "synth.cfg"
    config.write_text(SYNTH_CFG)
    data = tmp_path / "data"
    assert main(["synth", "--config", str(config), "--out", str(data)]) == 0
    return tmp_path


def data_args(workspace):
    data = workspace / "data"
    return ["--train", str(data / "train.tsv"),
            "--households", str(data / "households.tsv"),
            "--test", str(data / "test.tsv")]


def fit_model(workspace, bins=4, extra=()):
    model = workspace / "model.txt"
    code = main(["fit", "--train", str(workspace / "data" / "train.tsv"),
                 "--out", str(model), "--rank", "2", "--bins", str(bins),
                 "--iterations", "4", *extra])
    assert code == 0
    return model


def test_synth_writes_three_files(workspace):
    data = workspace / "data"
    for name in ("train.tsv", "households.tsv", "test.tsv"):
        assert (data / name).is_file()
        assert (data / name).read_text().strip()


def test_synth_missing_config(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "nope.cfg"),
                 "--out", str(tmp_path / "d")]) == 2


def test_synth_same_seed_identical(workspace, tmp_path):
    config = workspace / "synth.cfg"
    assert main(["synth", "--config", str(config), "--out", str(tmp_path / "b")]) == 0
    for name in ("train.tsv", "households.tsv", "test.tsv"):
        assert (workspace / "data" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_fit_prints_cost_per_iteration(workspace, capsys):
    model = fit_model(workspace)
    lines = [ln for ln in capsys.readouterr().out.splitlines()
             if ln.startswith("iteration ")]
    assert len(lines) == 4
    costs = [float(ln.split()[-1]) for ln in lines]
    assert costs == sorted(costs, reverse=True)
    assert model.is_file()


def test_fit_zero_iterations_is_usage_error(workspace):
    code = main(["fit", "--train", str(workspace / "data" / "train.tsv"),
                 "--out", str(workspace / "m.txt"), "--iterations", "0"])
    assert code == 2


def test_fit_rerun_identical(workspace, tmp_path):
    a = fit_model(workspace)
    b = tmp_path / "model_b.txt"
    main(["fit", "--train", str(workspace / "data" / "train.tsv"),
          "--out", str(b), "--rank", "2", "--bins", "4", "--iterations", "4"])
    assert a.read_bytes() == b.read_bytes()


def test_unknown_subcommand_exits_2():
    assert main(["transmogrify"]) == 2


@pytest.mark.parametrize("classifier", ["prior-uniform", "prior-bin", "prior-day"])
def test_classify_prior_families(workspace, classifier):
    out = workspace / f"{classifier}.tsv"
    code = main(["classify", *data_args(workspace), "--classifier", classifier,
                 "--bins", "4", "--out", str(out)])
    assert code == 0
    rows = out.read_text().splitlines()
    test_lines = (workspace / "data" / "test.tsv").read_text().splitlines()
    assert len(rows) - 1 == len(test_lines)


def test_classify_residual_alpha_grid(workspace):
    model = fit_model(workspace)
    out = workspace / "preds.tsv"
    code = main(["classify", *data_args(workspace), "--classifier", "residual",
                 "--model", str(model), "--alpha-grid", "0.5,1,2",
                 "--out", str(out)])
    assert code == 0
    produced = sorted(p.name for p in workspace.glob("preds.alpha*.tsv"))
    assert produced == ["preds.alpha0.tsv", "preds.alpha1.tsv", "preds.alpha2.tsv"]


def test_classify_residual_requires_model(workspace):
    code = main(["classify", *data_args(workspace), "--classifier", "residual",
                 "--out", str(workspace / "p.tsv")])
    assert code == 2


def test_classify_unified_without_model_errors(workspace):
    code = main(["classify", *data_args(workspace), "--classifier", "unified",
                 "--features", "abc", "--out", str(workspace / "p.tsv")])
    assert code == 2


def test_classify_unified_without_movie_feature(workspace):
    out = workspace / "unified.tsv"
    code = main(["classify", *data_args(workspace), "--classifier", "unified",
                 "--features", "ab", "--lambda1", "0.2", "--bins", "4",
                 "--out", str(out), "--dump-logit", str(workspace / "logit.txt")])
    assert code == 0
    assert out.is_file() and (workspace / "logit.txt").is_file()


def test_classify_gen_day_with_posterior_dump(workspace):
    model = fit_model(workspace)
    out = workspace / "gen.tsv"
    post = workspace / "posteriors.tsv"
    code = main(["classify", *data_args(workspace), "--classifier", "gen-day",
                 "--model", str(model), "--out", str(out),
                 "--dump-posteriors", str(post)])
    assert code == 0
    lines = post.read_text().splitlines()
    assert lines[0] == "household\tmovie\ttimestamp\tmember\tposterior"
    assert len(lines) > 1


def test_evaluate_predictions_report(workspace, capsys):
    out = workspace / "preds.tsv"
    main(["classify", *data_args(workspace), "--classifier", "prior-day",
          "--bins", "4", "--out", str(out)])
    report = workspace / "report.tsv"
    code = main(["evaluate", "--households",
                 str(workspace / "data" / "households.tsv"),
                 "--test", str(workspace / "data" / "test.tsv"),
                 "--predictions", str(out), "--out", str(report),
                 "--annotate", "reference_P=0.0406"])
    assert code == 0
    summary = capsys.readouterr().out.strip().splitlines()[-1]
    assert summary.startswith("P=")
    text = report.read_text()
    assert "# per-household" in text and "reference_P\t0.0406" in text


def test_evaluate_cv_mode(workspace, capsys):
    data = workspace / "data"
    code = main(["evaluate", "--cv", "--train", str(data / "train.tsv"),
                 "--households", str(data / "households.tsv"),
                 "--classifier", "prior-day", "--bins", "4",
                 "--seeds", "1,2,3", "--fraction", "0.08",
                 "--out", str(workspace / "cv.tsv")])
    assert code == 0
    text = capsys.readouterr().out
    assert "P = " in text and "+/-" in text
    assert (workspace / "cv.tsv").read_text() == text.rstrip("\n") + "\n" \
        or (workspace / "cv.tsv").read_text() in text


def test_evaluate_export_histograms(workspace):
    model = fit_model(workspace)
    out_dir = workspace / "hist"
    code = main(["evaluate", "--export-histograms",
                 "--train", str(workspace / "data" / "train.tsv"),
                 "--households", str(workspace / "data" / "households.tsv"),
                 "--model", str(model), "--out-dir", str(out_dir)])
    assert code == 0
    for name in ("weekday_histogram.tsv", "tv_histogram.tsv",
                 "residual_histogram.tsv"):
        assert (out_dir / name).is_file()


def test_roc_residual(workspace):
    model = fit_model(workspace)
    out = workspace / "roc.tsv"
    code = main(["roc", "--households", str(workspace / "data" / "households.tsv"),
                 "--test", str(workspace / "data" / "test.tsv"),
                 "--classifier", "residual", "--model", str(model),
                 "--grid-size", "12", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "parameter\ttpr_first\ttpr_rest"
    assert len(lines) == 13


def test_roc_posterior_family(workspace):
    data = workspace / "data"
    out = workspace / "roc_prior.tsv"
    code = main(["roc", "--households", str(data / "households.tsv"),
                 "--test", str(data / "test.tsv"), "--train", str(data / "train.tsv"),
                 "--classifier", "prior-day", "--bins", "4",
                 "--grid-size", "8", "--out", str(out)])
    assert code == 0
    assert len(out.read_text().splitlines()) == 9


def test_baseline_value(capsys):
    assert main(["baseline", "--size2", "272", "--size3", "14",
                 "--size4", "4"]) == 0
    value = float(capsys.readouterr().out.strip())
    assert value == pytest.approx(0.51149, abs=5e-4)


def test_evaluate_requires_flag_combination(workspace):
    code = main(["evaluate", "--households",
                 str(workspace / "data" / "households.tsv")])
    assert code == 2


def test_evaluate_with_posterior_dump_reports_auc(workspace, capsys):
    model = fit_model(workspace)
    preds = workspace / "gen_preds.tsv"
    post = workspace / "gen_post.tsv"
    main(["classify", *data_args(workspace), "--classifier", "gen-day",
          "--model", str(model), "--out", str(preds),
          "--dump-posteriors", str(post)])
    report = workspace / "gen_report.tsv"
    code = main(["evaluate", "--households",
                 str(workspace / "data" / "households.tsv"),
                 "--test", str(workspace / "data" / "test.tsv"),
                 "--predictions", str(preds), "--posteriors", str(post),
                 "--out", str(report)])
    assert code == 0
    summary = capsys.readouterr().out.strip().splitlines()[-1]
    assert "AUC=NA" not in summary and "AUC=" in summary
    assert "# auc" in report.read_text()


def test_roc_posterior_requires_train(workspace):
    data = workspace / "data"
    code = main(["roc", "--households", str(data / "households.tsv"),
                 "--test", str(data / "test.tsv"),
                 "--classifier", "prior-day",
                 "--out", str(workspace / "r.tsv")])
    assert code == 2
