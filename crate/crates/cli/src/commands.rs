use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mcem_anomaly::data::{self, generate_sinusoid, inject_point_outliers, load_csv, SplitSpec};
use mcem_anomaly::em::{run_em, train_conventional, EmConfig, TrainedDetector};
use mcem_anomaly::evaluation::{best_f1_sweep, mae, MetricReport, SeriesMetrics};
use mcem_anomaly::experiment::{forecast_eval as run_forecast_eval, with_context, Contamination, ForecastEvalConfig};
use mcem_anomaly::TimeSeries;

use crate::output::{Report, Staged};
use crate::settings::Settings;
use crate::{CommonArgs, DetectArgs, ForecastEvalArgs, ModelArgs, SplitArgs, SynthArgs, TrainArgs};

type Outcome = Result<(Staged, String)>;

fn settings(common: &CommonArgs) -> Result<Settings> {
    Settings::load(common.config.as_deref())
}

fn output_dir(s: &mut Settings, common: &CommonArgs) -> Result<String> {
    s.required("output-dir", common.output_dir.clone())
}

fn parse_hidden(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<usize>().with_context(|| format!("bad hidden layer size {p:?}")))
        .collect()
}

fn em_config(s: &mut Settings, m: &ModelArgs, seed: u64) -> Result<EmConfig> {
    let d = EmConfig::default();
    let hidden_default = d.hidden_sizes.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    let mut config = EmConfig {
        n_epochs: s.get("epochs", m.epochs, d.n_epochs)?,
        n_samples: s.get("samples", m.samples, d.n_samples)?,
        warmup_epochs: s.get("warmup-epochs", m.warmup_epochs, d.warmup_epochs)?,
        context_length: s.get("context-length", m.context_length, d.context_length)?,
        hidden_sizes: parse_hidden(&s.get("hidden", m.hidden.clone(), hidden_default)?)?,
        p01_init: s.get("p01", m.p01, d.p01_init)?,
        p11_init: s.get("p11", m.p11, d.p11_init)?,
        detection_threshold: s.get("threshold", m.threshold, d.detection_threshold)?,
        freeze_initial: s.get("freeze-initial", m.freeze_initial, d.freeze_initial)?,
        seed,
        ..d
    };
    config.train.learning_rate = s.get("learning-rate", m.learning_rate, config.train.learning_rate)?;
    config.validate()?;
    Ok(config)
}

fn split_spec(s: &mut Settings, a: &SplitArgs) -> Result<SplitSpec> {
    let d = SplitSpec::default();
    Ok(SplitSpec::new(
        s.get("train-frac", a.train_frac, d.train_frac)?,
        s.get("val-frac", a.val_frac, d.val_frac)?,
    )?)
}

fn load(path: &str) -> Result<TimeSeries> {
    load_csv(path).with_context(|| format!("cannot load series from {path}"))
}

fn check_rate(rate: f64, length: usize) -> Result<()> {
    ensure!(rate > 0.0 && rate < 1.0, "--rate must lie in (0,1), got {rate}");
    ensure!(
        (rate * length as f64).floor() >= 1.0,
        "--rate {rate} on {length} points injects no spikes"
    );
    Ok(())
}

fn check_magnitude(magnitude: f64) -> Result<()> {
    ensure!(
        magnitude > 0.0 && magnitude.is_finite(),
        "--magnitude must be finite and > 0, got {magnitude}"
    );
    Ok(())
}

pub fn synth(a: SynthArgs) -> Outcome {
    let mut s = settings(&a.common)?;
    let out = output_dir(&mut s, &a.common)?;
    let seed = s.get("seed", a.common.seed, 0u64)?;
    let length = s.get("length", a.length, 1000usize)?;
    let period = s.get("period", a.period, 50.0)?;
    let amplitude = s.get("amplitude", a.amplitude, 1.0)?;
    let noise = s.get("noise", a.noise, 0.05)?;
    let rate = s.get("rate", a.rate, 0.01)?;
    let magnitude = s.get("magnitude", a.magnitude, 5.0)?;
    s.finish()?;
    ensure!(length >= 2, "--length must be >= 2");
    ensure!(period > 0.0 && period.is_finite(), "--period must be > 0");
    ensure!(amplitude.is_finite(), "--amplitude must be finite");
    ensure!(noise >= 0.0 && noise.is_finite(), "--noise must be >= 0");
    check_rate(rate, length)?;
    check_magnitude(magnitude)?;

    let clean = generate_sinusoid(length, period, amplitude, noise, seed)?;
    let series = inject_point_outliers(&clean, rate, magnitude, seed.wrapping_add(1))?;
    let n_anomalies = series.labels().map_or(0, |l| l.iter().filter(|&&x| x == 1).count());

    let mut report = Report::new("synth", s.resolved());
    report.push("series.length", series.len());
    report.push("series.anomalies", n_anomalies);
    let mut staged = Staged::new(out);
    staged.add("series.csv", series.to_csv_string());
    staged.add("synth_report.txt", report.render());
    Ok((staged, format!("{} points, {n_anomalies} spikes\n", series.len())))
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut s = settings(&a.common)?;
    let input = s.required("input", a.input.clone())?;
    let out = output_dir(&mut s, &a.common)?;
    let seed = s.get("seed", a.common.seed, 0u64)?;
    let config = em_config(&mut s, &a.model, seed)?;
    let spec = split_spec(&mut s, &a.split)?;
    let no_lai = s.switch("no-lai", a.no_lai)?;
    s.finish()?;

    let series = load(&input)?;
    let parts = data::split(&series, spec)?;
    let detector = if no_lai {
        train_conventional(&parts.train, &config)?
    } else {
        run_em(&parts.train, &config)?
    };

    let train = &parts.train;
    let posterior: Vec<f64> = match &detector.train_posterior {
        Some(p) => p.marginals.clone(),
        None => vec![0.0; train.len()],
    };
    let mut trace = String::from("index,value,posterior\n");
    for (i, (v, p)) in train.values().iter().zip(&posterior).enumerate() {
        writeln!(trace, "{},{v},{p}", train.index_at(i))?;
    }

    let mut report = Report::new("train", s.resolved());
    report.push("model", if no_lai { "conventional" } else { "lai" });
    report.push("split.train", parts.train.len());
    report.push("split.val", parts.val.as_ref().map_or(0, TimeSeries::len));
    report.push("split.test", parts.test.len());
    let hmm = detector.hmm;
    report.push("hmm.initial_anomalous", hmm.initial()[1]);
    report.push("hmm.p01", hmm.transition()[0][1]);
    report.push("hmm.p11", hmm.transition()[1][1]);
    let flagged = posterior.iter().filter(|&&p| p > config.detection_threshold).count();
    report.push("posterior.expected_anomalies", posterior.iter().sum::<f64>());
    report.push("posterior.flagged", flagged);
    for (e, h) in detector.history.iter().enumerate() {
        report.push(format!("history.{e}.log_evidence"), h.log_evidence);
        report.push(format!("history.{e}.mean_train_nll"), h.mean_train_nll);
        report.push(format!("history.{e}.expected_anomaly_fraction"), h.expected_anomaly_fraction);
    }
    match (train.labels(), no_lai) {
        (Some(labels), false) => {
            let sweep = best_f1_sweep(&posterior, labels)?;
            report.extend(MetricReport::from_series(vec![SeriesMetrics::from_sweep("train", sweep, None)])?.to_kv_lines("train_metrics"));
        }
        _ => report.push("train_metrics", "absent"),
    }

    let mut staged = Staged::new(out);
    staged.add("detector.json", detector.to_json()?);
    staged.add("posterior.csv", trace);
    staged.add("train_report.txt", report.render());
    Ok((
        staged,
        format!("trained on {} points, {flagged} flagged in training\n", train.len()),
    ))
}

/// Report-safe series name from the file stem.
fn series_name(path: &str, taken: &mut Vec<String>) -> String {
    let stem = Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    let mut name: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if taken.contains(&name) {
        name = format!("{name}_{}", taken.len());
    }
    taken.push(name.clone());
    name
}

pub fn detect(a: DetectArgs) -> Outcome {
    let mut s = settings(&a.common)?;
    let inputs = s.list("input", a.input.clone())?;
    let detectors = s.list("detector", a.detector.clone())?;
    let out = output_dir(&mut s, &a.common)?;
    let threshold = s.opt("threshold", a.threshold)?;
    let test_split = s.switch("test-split", a.test_split)?;
    let spec = split_spec(&mut s, &a.split)?;
    s.finish()?;
    ensure!(!inputs.is_empty(), "--input is required (flag or config key)");
    ensure!(!detectors.is_empty(), "--detector is required (flag or config key)");
    ensure!(
        detectors.len() == 1 || detectors.len() == inputs.len(),
        "give one --detector for all inputs or one per input ({} inputs, {} detectors)",
        inputs.len(),
        detectors.len()
    );
    if let Some(th) = threshold {
        ensure!(th > 0.0 && th < 1.0, "--threshold must lie in (0,1), got {th}");
    }

    let detectors: Vec<TrainedDetector> = detectors
        .iter()
        .map(|p| TrainedDetector::load(p).with_context(|| format!("cannot load detector {p}")))
        .collect::<Result<_>>()?;
    let series: Vec<TimeSeries> = inputs.iter().map(|p| load(p)).collect::<Result<_>>()?;

    let mut report = Report::new("detect", s.resolved());
    let mut staged = Staged::new(out);
    let mut metrics = Vec::new();
    let mut taken = Vec::new();
    let mut summary = String::new();
    for (k, (path, full)) in inputs.iter().zip(&series).enumerate() {
        let det = &detectors[if detectors.len() == 1 { 0 } else { k }];
        let name = series_name(path, &mut taken);
        let (stream, offset) = if test_split {
            let parts = data::split(full, spec)?;
            let history = match &parts.val {
                Some(v) => parts.train.concat(v)?,
                None => parts.train.clone(),
            };
            let stream = with_context(&history, &parts.test, det.context_length())?;
            let offset = stream.len() - parts.test.len();
            (stream, offset)
        } else {
            (full.clone(), 0)
        };
        let res = det.detect_online_at(&stream, threshold.unwrap_or(det.detection_threshold))?;
        let scores = &res.scores[offset..];
        let values = &stream.values()[offset..];
        let flags = &res.flags[offset..];

        let mut trace = String::from("index,value,score,flag\n");
        for (i, ((v, sc), f)) in values.iter().zip(scores).zip(flags).enumerate() {
            writeln!(trace, "{},{v},{sc},{}", stream.index_at(offset + i), u8::from(*f))?;
        }
        let trace_name = if inputs.len() == 1 { "scores.csv".to_string() } else { format!("scores_{name}.csv") };
        staged.add(trace_name, trace);

        let n_flagged = flags.iter().filter(|&&f| f).count();
        let max_score = scores.iter().cloned().fold(0.0, f64::max);
        report.push(format!("series.{name}.input"), path);
        report.push(format!("series.{name}.n_scored"), scores.len());
        report.push(format!("series.{name}.n_flagged"), n_flagged);
        report.push(format!("series.{name}.max_score"), max_score);
        writeln!(summary, "{name}: {} points scored, {n_flagged} flagged", scores.len())?;

        if let Some(labels) = stream.labels() {
            let (pred, actual): (Vec<f64>, Vec<f64>) = res.predictions[offset..]
                .iter()
                .zip(values)
                .filter_map(|(p, &v)| p.map(|p| (p.mean, v)))
                .unzip();
            let forecast_mae = (!pred.is_empty()).then(|| mae(&pred, &actual)).transpose()?;
            let sweep = best_f1_sweep(scores, &labels[offset..])?;
            metrics.push(SeriesMetrics::from_sweep(name, sweep, forecast_mae));
        }
    }
    if metrics.is_empty() {
        report.push("metrics", "absent");
    } else {
        let agg = MetricReport::from_series(metrics)?;
        writeln!(summary, "best F1 (mean over {} labeled series): {:.4}", agg.per_series.len(), agg.best_f1)?;
        report.extend(agg.to_kv_lines("metrics"));
    }
    staged.add("detect_report.txt", report.render());
    Ok((staged, summary))
}

pub fn forecast_eval(a: ForecastEvalArgs) -> Outcome {
    let mut s = settings(&a.common)?;
    let input = s.required("input", a.input.clone())?;
    let out = output_dir(&mut s, &a.common)?;
    let seed = s.get("seed", a.common.seed, 0u64)?;
    let em = em_config(&mut s, &a.model, seed)?;
    let split = split_spec(&mut s, &a.split)?;
    let factor = s.get("factor", a.factor, 1usize)?;
    let rate = s.opt("rate", a.rate)?;
    let magnitude = s.opt("magnitude", a.magnitude)?;
    s.finish()?;
    ensure!(factor >= 1, "--factor must be >= 1");
    let contamination = match (rate, magnitude) {
        (Some(rate), Some(magnitude)) => {
            ensure!(rate > 0.0 && rate < 1.0, "--rate must lie in (0,1), got {rate}");
            check_magnitude(magnitude)?;
            Some(Contamination {
                rate,
                magnitude,
                seed: seed.wrapping_add(1),
            })
        }
        (Some(_), None) => bail!("--magnitude is required when --rate is given"),
        (None, Some(_)) => bail!("--rate is required when --magnitude is given"),
        (None, None) => None,
    };

    let series = load(&input)?;
    let result = run_forecast_eval(
        &series,
        &ForecastEvalConfig {
            em,
            split,
            factor,
            contamination,
        },
    )?;

    let mut report = Report::new("forecast-eval", s.resolved());
    if let Some(c) = contamination {
        report.push("config.contamination-seed", c.seed);
    }
    report.push("mae.unit", "robust scale of the clean training split");
    report.push("mae.clean.baseline", result.clean.baseline);
    report.push("mae.clean.lai", result.clean.lai);
    report.push("mae.clean.lai_minus_baseline", result.clean.lai - result.clean.baseline);
    let mut table = String::from("                 clean-train  contaminated-train  degradation\n");
    match (result.contaminated, result.degradation()) {
        (Some(c), Some(d)) => {
            report.push("mae.contaminated.baseline", c.baseline);
            report.push("mae.contaminated.lai", c.lai);
            report.push("mae.contaminated.lai_minus_baseline", c.lai - c.baseline);
            report.push("degradation.baseline", d.baseline);
            report.push("degradation.lai", d.lai);
            writeln!(table, "MLP              {:<12.4} {:<19.4} {:+.4}", result.clean.baseline, c.baseline, d.baseline)?;
            writeln!(table, "MLP + LAI        {:<12.4} {:<19.4} {:+.4}", result.clean.lai, c.lai, d.lai)?;
        }
        _ => {
            report.push("mae.contaminated", "absent");
            writeln!(table, "MLP              {:<12.4} {:<19} -", result.clean.baseline, "-")?;
            writeln!(table, "MLP + LAI        {:<12.4} {:<19} -", result.clean.lai, "-")?;
        }
    }
    let mut staged = Staged::new(out);
    staged.add("forecast_report.txt", report.render());
    Ok((staged, table))
}
