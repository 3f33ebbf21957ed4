use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{RunConfig, SYNTHETIC_INSTRUMENT};
use super::manifest::RunManifest;
use crate::backtest::{backtest, write_summary_csv, BacktestResult, Forecasts};
use crate::dataset::{fit_normalizer, make_walk_forward_windows, split, WindowedDataset};
use crate::error::{Error, Result};
use crate::grad_suite::{run_suite, SuiteConfig};
use crate::gradcheck::GradCheckReport;
use crate::metrics::{evaluate, MetricsReport};
use crate::models::{self, ModelSpec, TrainedModel};
use crate::plot::{LineChart, Series};
use crate::series::{ingest_csv, DateRange, PriceField, PriceSeries};
use crate::synthetic::{sine_series, SyntheticConfig};
use crate::training::{train, LossCurve};

const FIELD: PriceField = PriceField::Close;
/// Train-range days shown before the test range in prediction overlays.
const OVERLAY_TAIL: usize = 60;

/// Every configured series, or the synthetic one when none is configured.
pub fn load_series(cfg: &RunConfig) -> Result<Vec<PriceSeries>> {
    if cfg.data.is_empty() {
        let mut s = sine_series(&SyntheticConfig::default())?;
        if s.instrument() != SYNTHETIC_INSTRUMENT {
            s = PriceSeries::from_bars(SYNTHETIC_INSTRUMENT, s.bars().to_vec())?;
        }
        return Ok(vec![s]);
    }
    cfg.data.iter().map(|(name, path)| ingest_csv(path, name)).collect()
}

fn stem(spec: &ModelSpec) -> String {
    format!("{}-{}", spec.architecture, spec.window_n)
}

fn instrument_dir(cfg: &RunConfig, instrument: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir.join(instrument);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Where `train` puts the model for this config and instrument.
pub fn model_path(cfg: &RunConfig, instrument: &str) -> PathBuf {
    cfg.out_dir
        .join(instrument)
        .join(format!("{}.model", stem(&cfg.model_spec())))
}

fn write_file(manifest: &mut RunManifest, path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    manifest.add_artifact(path)
}

fn write_text(manifest: &mut RunManifest, path: &Path, text: &str) -> Result<()> {
    write_file(manifest, path, |w| w.write_all(text.as_bytes()))
}

fn loss_chart(title: &str, curve: &LossCurve) -> String {
    let xs = |v: &[f64]| -> Vec<(f64, f64)> {
        v.iter().enumerate().map(|(i, y)| ((i + 1) as f64, *y)).collect()
    };
    LineChart::new(title, "epoch", "MSE (normalized)")
        .with(Series::new("train", xs(&curve.train_mse)))
        .with(Series::new("test", xs(&curve.test_mse)))
        .to_svg()
}

fn write_loss(manifest: &mut RunManifest, dir: &Path, name: &str, curve: &LossCurve) -> Result<()> {
    write_file(manifest, &dir.join(format!("{name}_loss.csv")), |w| curve.write_csv(w))?;
    write_text(manifest, &dir.join(format!("{name}_loss.svg")), &loss_chart(name, curve))
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn finish(manifest: RunManifest, cfg: &RunConfig) -> Result<RunManifest> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    manifest.write(&cfg.out_dir)?;
    Ok(manifest)
}

/// Ingest, split, window, build, train; writes the model file and the loss
/// curve as CSV and SVG.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("train", cfg);
    let (train_range, test_range) = (cfg.train_range()?, cfg.test_range()?);
    for series in load_series(cfg)? {
        let inst = series.instrument().to_string();
        let dir = instrument_dir(cfg, &inst)?;
        let data = split(&series, FIELD, train_range, test_range, cfg.window_n)?;
        let t = Instant::now();
        let model = TrainedModel::build(cfg.model_spec())?;
        let (model, curve) = train(model, &data.train, &data.test, &cfg.train_config())?;
        manifest.timing(format!("{inst}.train"), secs(t));

        let path = model_path(cfg, &inst);
        models::save(&model, &path)?;
        manifest.add_artifact(&path)?;
        write_loss(&mut manifest, &dir, &stem(&model.spec), &curve)?;
        manifest.metric(format!("{inst}.initial_test_mse"), curve.initial_test_mse);
        manifest.metric(format!("{inst}.final_train_mse"), curve.train_mse.last());
        manifest.metric(format!("{inst}.final_test_mse"), curve.test_mse.last());
    }
    manifest.timing("total", secs(start));
    finish(manifest, cfg)
}

/// Loads a model and checks that its normalizer is the one this config's
/// train range produces for `series`.
fn load_compatible(cfg: &RunConfig, series: &PriceSeries, path: &Path) -> Result<TrainedModel> {
    let model = models::load(path)?;
    let train_range = cfg.train_range()?;
    let Some(norm) = model.normalizer else {
        return Err(Error::Incompatible(format!("{} carries no normalizer", path.display())));
    };
    if norm.fitted_on != train_range {
        return Err(Error::Incompatible(format!(
            "model normalizer was fitted on {}, config train range is {train_range}",
            norm.fitted_on
        )));
    }
    let refit = fit_normalizer(series, FIELD, train_range)?;
    if refit.min != norm.min || refit.max != norm.max {
        return Err(Error::Incompatible(format!(
            "model normalizer [{}, {}] does not match {} data [{}, {}]",
            norm.min,
            norm.max,
            series.instrument(),
            refit.min,
            refit.max
        )));
    }
    Ok(model)
}

fn test_windows(series: &PriceSeries, model: &TrainedModel, range: DateRange) -> Result<WindowedDataset> {
    let norm = model.normalizer.expect("checked by load_compatible");
    make_walk_forward_windows(series, FIELD, &norm, model.spec.window_n, range)
}

fn model_for(cfg: &RunConfig, series: &PriceSeries, explicit: Option<&Path>) -> Result<TrainedModel> {
    let path = explicit.map_or_else(|| model_path(cfg, series.instrument()), Path::to_path_buf);
    load_compatible(cfg, series, &path)
}

fn check_single(cfg: &RunConfig, series: &[PriceSeries], explicit: Option<&Path>) -> Result<()> {
    if explicit.is_some() && series.len() > 1 {
        return Err(Error::config(
            "model",
            format!("an explicit model path needs exactly one instrument, {} configured", cfg.data.len()),
        ));
    }
    Ok(())
}

fn overlay_chart(title: &str, series: &PriceSeries, report: &MetricsReport, train_range: DateRange) -> String {
    let pos = |d| series.position(d).expect("date from series") as f64;
    let idx = series.index_range(&train_range);
    let tail = idx.start.max(idx.end.saturating_sub(OVERLAY_TAIL))..idx.end;
    let bars = series.bars();
    LineChart::new(title, "trading day", "close")
        .with(Series::new("train", tail.map(|i| (i as f64, bars[i].close)).collect()))
        .with(Series::new(
            "actual",
            report.residuals.iter().map(|r| (pos(r.date), r.actual)).collect(),
        ))
        .with(Series::new(
            "predicted",
            report.residuals.iter().map(|r| (pos(r.date), r.predicted)).collect(),
        ))
        .to_svg()
}

/// Scores a trained model on the test range; writes dated predictions,
/// the metrics row and an overlay plot.
pub fn cmd_evaluate(cfg: &RunConfig, model: Option<&Path>) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("evaluate", cfg);
    let all = load_series(cfg)?;
    check_single(cfg, &all, model)?;
    for series in &all {
        let inst = series.instrument();
        let dir = instrument_dir(cfg, inst)?;
        let m = model_for(cfg, series, model)?;
        let name = stem(&m.spec);
        let report = evaluate(&m, &test_windows(series, &m, cfg.test_range()?)?)?;

        write_file(&mut manifest, &dir.join(format!("{name}_predictions.csv")), |w| {
            writeln!(w, "date,actual,predicted")?;
            for r in &report.residuals {
                writeln!(w, "{},{},{}", r.date, r.actual, r.predicted)?;
            }
            Ok(())
        })?;
        write_file(&mut manifest, &dir.join(format!("{name}_metrics.csv")), |w| {
            writeln!(w, "model,mae,mse,rmse,n_test")?;
            writeln!(w, "{name},{},{},{},{}", report.mae, report.mse, report.rmse, report.n_test)
        })?;
        let svg = overlay_chart(&format!("{inst} {name}"), series, &report, cfg.train_range()?);
        write_text(&mut manifest, &dir.join(format!("{name}_overlay.svg")), &svg)?;
        manifest.metric(format!("{inst}.mae"), report.mae);
        manifest.metric(format!("{inst}.mse"), report.mse);
        manifest.metric(format!("{inst}.rmse"), report.rmse);
        manifest.metric(format!("{inst}.n_test"), report.n_test);
    }
    manifest.timing("total", secs(start));
    finish(manifest, cfg)
}

/// One line of the window-length sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub instrument: String,
    pub window_n: usize,
    pub outcome: std::result::Result<MetricsReport, String>,
}

fn sweep_one(cfg: &RunConfig, series: &PriceSeries, n: usize) -> Result<(MetricsReport, LossCurve)> {
    let seed = cfg.seed ^ n as u64;
    let run = RunConfig {
        window_n: n,
        seed,
        ..cfg.clone()
    };
    run.model_spec().validate()?;
    let data = split(series, FIELD, run.train_range()?, run.test_range()?, n)?;
    let model = TrainedModel::build(run.model_spec())?;
    let (model, curve) = train(model, &data.train, &data.test, &run.train_config())?;
    let report = evaluate(&model, &data.test)?;
    Ok((report, curve))
}

/// Trains and scores one model per window length, in parallel; results are
/// merged in ascending `n`. A failed length is flagged in the table and
/// the first failure is returned after everything is written.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<(RunManifest, Vec<SweepRow>)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("sweep", cfg);
    let mut windows = cfg.sweep_windows.clone();
    windows.sort_unstable();
    windows.dedup();
    let mut rows = Vec::new();
    let mut first_err = None;
    for series in load_series(cfg)? {
        let inst = series.instrument().to_string();
        let dir = instrument_dir(cfg, &inst)?.join("sweep");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let results: Vec<(usize, Result<(MetricsReport, LossCurve)>)> = windows
            .par_iter()
            .map(|&n| (n, sweep_one(cfg, &series, n)))
            .collect();
        for (n, res) in results {
            let outcome = match res {
                Ok((report, curve)) => {
                    write_loss(&mut manifest, &dir, &format!("{}-{n}", cfg.arch), &curve)?;
                    manifest.metric(format!("{inst}.n{n}.rmse"), report.rmse);
                    Ok(report)
                }
                Err(e) => {
                    let msg = e.to_string();
                    first_err.get_or_insert(e);
                    Err(msg)
                }
            };
            rows.push(SweepRow {
                instrument: inst.clone(),
                window_n: n,
                outcome,
            });
        }
        let table = cfg.out_dir.join(&inst).join(format!("{}_sweep.csv", cfg.arch));
        let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.instrument == inst).collect();
        write_file(&mut manifest, &table, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["n", "mae", "mse", "rmse", "status"])?;
            for r in &mine {
                let rec = match &r.outcome {
                    Ok(m) => [r.window_n.to_string(), m.mae.to_string(), m.mse.to_string(), m.rmse.to_string(), "ok".into()],
                    Err(msg) => [r.window_n.to_string(), String::new(), String::new(), String::new(), format!("failed: {msg}")],
                };
                out.write_record(&rec)?;
            }
            out.flush()
        })?;
    }
    manifest.timing("total", secs(start));
    let manifest = finish(manifest, cfg)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok((manifest, rows)),
    }
}

fn arr_chart(title: &str, series: &PriceSeries, result: &BacktestResult) -> String {
    let curve = |run: &crate::backtest::StrategyRun| -> Vec<(f64, f64)> {
        run.days
            .iter()
            .map(|d| (series.position(d.date).expect("date from series") as f64, d.arr))
            .collect()
    };
    LineChart::new(title, "trading day", "ARR (%)")
        .with(Series::new("prediction", curve(&result.prediction)))
        .with(Series::new("benchmark", curve(&result.benchmark)))
        .to_svg()
}

/// Replays the threshold strategy on walk-forward forecasts against
/// buy-and-hold over the test range.
pub fn cmd_backtest(cfg: &RunConfig, model: Option<&Path>) -> Result<(RunManifest, Vec<BacktestResult>)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("backtest", cfg);
    let all = load_series(cfg)?;
    check_single(cfg, &all, model)?;
    let test_range = cfg.test_range()?;
    let mut results = Vec::new();
    for series in &all {
        let inst = series.instrument();
        let dir = instrument_dir(cfg, inst)?;
        let m = model_for(cfg, series, model)?;
        let name = stem(&m.spec);
        let windows = test_windows(series, &m, test_range)?;
        let preds = crate::metrics::predict_prices(&m, &windows)?;
        let forecasts: Forecasts = windows.target_dates.iter().copied().zip(preds).collect();
        let result = backtest(&series.slice(&test_range), &forecasts, &cfg.strategy_config())?;

        write_file(&mut manifest, &dir.join(format!("{name}_backtest.csv")), |w| result.write_daily_csv(w))?;
        write_file(&mut manifest, &dir.join(format!("{name}_trades.csv")), |w| result.write_trades_csv(w))?;
        let svg = arr_chart(&format!("{inst} {name}"), series, &result);
        write_text(&mut manifest, &dir.join(format!("{name}_arr.svg")), &svg)?;
        manifest.metric(format!("{inst}.arr_prediction"), result.prediction.final_arr);
        manifest.metric(format!("{inst}.arr_benchmark"), result.benchmark.final_arr);
        manifest.metric(format!("{inst}.trades"), result.prediction.trades.len());
        results.push(result);
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let summary = cfg.out_dir.join("backtest_summary.csv");
    write_file(&mut manifest, &summary, |w| write_summary_csv(&results, w))?;
    manifest.timing("total", secs(start));
    Ok((finish(manifest, cfg)?, results))
}

/// Runs the full gradient suite at `n = 5`, batch 3.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<(RunManifest, GradCheckReport)> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("gradcheck", cfg);
    let suite = SuiteConfig {
        seed: cfg.seed,
        ..SuiteConfig::default()
    };
    let report = run_suite(&suite)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_file(&mut manifest, &cfg.out_dir.join("gradcheck.csv"), |w| report.write_csv(w))?;
    manifest.metric("max_rel_err", report.max_rel_err());
    manifest.metric("passed", report.passed());
    manifest.timing("total", secs(start));
    Ok((finish(manifest, cfg)?, report))
}
