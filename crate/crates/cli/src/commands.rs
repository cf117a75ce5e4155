use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use porkcast_core::analysis::{adf_test, pearson_matrix, select_markets, AdfResult, Significance};
use porkcast_core::domain::{IsoWeek, LagScenario, MarketId};
use porkcast_core::evaluation::{cell_seed, fixed_splits, rmse, scenario_report, EvaluationReport, ReportOptions, WindowChoice};
use porkcast_core::families::{family_by_key, Forecaster, NeuralScale, SeriesContext, TrainedModel};
use porkcast_core::tuning::{random_search, Params, SearchResult};
use porkcast_core::windowing::audit_leakage;
use porkcast_service::{Direction, Service, ServiceConfig, SystemClock};
use serde::Serialize;

use crate::data::{load, Loaded};
use crate::{
    report_paths, resolve_config, Cli, CliError, Command, DatasetArgs, EvaluateArgs, ForecastArgs, IngestArgs,
    ServeArgs, StoreArgs, TrainArgs, TuneArgs, WindowArg,
};

type Out<'a> = &'a mut (dyn Write + Send);

pub(crate) fn dispatch(cli: &Cli, out: Out, err: Out) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    let seed = cli.global.seed();
    let dest = cli.global.out.as_deref();
    match &cli.command {
        Command::Ingest(a) => ingest(&cfg, a, dest, out),
        Command::Analyze => analyze(&cfg, dest, out),
        Command::BuildDataset(a) => build_dataset(&cfg, a, dest, out, err),
        Command::Tune(a) => tune(&cfg, a, seed, dest, out),
        Command::Train(a) => train(&cfg, a, seed, dest, out),
        Command::Evaluate(a) => evaluate(&cfg, a, seed, dest, out),
        Command::Forecast(a) => forecast(&cfg, a, dest, out),
        Command::Serve(a) => serve(cfg, a, out),
        Command::Cycle(a) => cycle(cfg, a, dest, out),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn scenario_or_default(cfg: &ServiceConfig, s: Option<LagScenario>) -> LagScenario {
    s.unwrap_or(cfg.scenario)
}

fn family(key: &str) -> Box<dyn Forecaster> {
    family_by_key(key, NeuralScale::Desk).expect("validated by the argument parser")
}

fn ingest(cfg: &ServiceConfig, a: &IngestArgs, dest: Option<&Path>, out: Out) -> Result<(), CliError> {
    let d = load(cfg)?;
    let weeks = d.panel.weeks();
    writeln!(
        out,
        "panel: {} weeks x {} markets ({} to {})",
        d.panel.n_weeks(),
        d.panel.n_markets(),
        weeks[0],
        weeks[weeks.len() - 1]
    )?;
    writeln!(out, "markets: {}", d.panel.markets().iter().map(MarketId::as_str).collect::<Vec<_>>().join(", "))?;
    writeln!(out, "repairs: {}", d.repairs.len())?;
    writeln!(out, "gap fills: {}", d.gaps.len())?;
    if let Some(path) = &a.log {
        let mut text = String::new();
        for r in &d.repairs {
            text.push_str(&serde_json::json!({"kind": "repair", "entry": r}).to_string());
            text.push('\n');
        }
        for g in &d.gaps {
            text.push_str(&serde_json::json!({"kind": "gap_fill", "entry": g}).to_string());
            text.push('\n');
        }
        write_file(path, text.as_bytes())?;
    }
    if let Some(path) = dest {
        write_file(path, porkcast_core::ingest::write_price_csv(&d.series).as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AdfRow {
    market: MarketId,
    levels: Option<AdfResult>,
    differences: Option<AdfResult>,
}

#[derive(Serialize)]
struct Analysis {
    target: MarketId,
    threshold: f64,
    markets: Vec<MarketId>,
    correlations: Vec<Vec<f64>>,
    selected: Vec<MarketId>,
    adf: Vec<AdfRow>,
}

fn adf_cell(r: &Option<AdfResult>) -> String {
    match r {
        Some(r) => {
            let at = r.reject_at.first().map_or("-", Significance::label);
            format!("{:>8.3} {:>4} {:>6}", r.statistic, r.lags_used, at)
        }
        None => format!("{:>8} {:>4} {:>6}", "n/a", "", ""),
    }
}

fn analyze(cfg: &ServiceConfig, dest: Option<&Path>, out: Out) -> Result<(), CliError> {
    let d = load(cfg)?;
    let corr = pearson_matrix(&d.panel).map_err(|e| CliError::Data(e.to_string()))?;
    let target = &cfg.target_market;
    let selected = select_markets(&corr, target, cfg.correlation_threshold).map_err(|e| CliError::Data(e.to_string()))?;
    let markets = d.panel.markets();
    let n = markets.len();
    let matrix: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| corr.r[(i, j)]).collect()).collect();

    let width = markets.iter().map(|m| m.as_str().len()).max().unwrap_or(0);
    writeln!(out, "Pearson correlations")?;
    write!(out, "{:width$}", "")?;
    for j in 0..n {
        write!(out, " {:>6}", format!("#{}", j + 1))?;
    }
    writeln!(out)?;
    for (i, m) in markets.iter().enumerate() {
        write!(out, "{:width$}", m.as_str())?;
        for v in &matrix[i] {
            write!(out, " {v:>6.3}")?;
        }
        writeln!(out, "   #{}", i + 1)?;
    }
    writeln!(out)?;
    writeln!(out, "selected for {target} (r > {}): {}", cfg.correlation_threshold, selected.iter().map(MarketId::as_str).collect::<Vec<_>>().join(", "))?;
    writeln!(out)?;

    writeln!(out, "ADF unit-root test (constant, AIC lag order); `reject` is the smallest level rejecting a unit root")?;
    writeln!(out, "{:width$} {:>8} {:>4} {:>6} | {:>8} {:>4} {:>6}", "", "level", "lags", "reject", "diff", "lags", "reject")?;
    let mut adf = Vec::new();
    for (j, m) in markets.iter().enumerate() {
        let y: Vec<f64> = d.panel.column_as(j);
        let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
        let row = AdfRow { market: m.clone(), levels: adf_test(&y, None).ok(), differences: adf_test(&dy, None).ok() };
        writeln!(out, "{:width$} {} | {}", m.as_str(), adf_cell(&row.levels), adf_cell(&row.differences))?;
        adf.push(row);
    }
    if let Some(path) = dest {
        let a = Analysis {
            target: target.clone(),
            threshold: cfg.correlation_threshold,
            markets: markets.to_vec(),
            correlations: matrix,
            selected,
            adf,
        };
        write_file(path, json(&a).as_bytes())?;
    }
    Ok(())
}

fn build_dataset(cfg: &ServiceConfig, a: &DatasetArgs, dest: Option<&Path>, out: Out, err: Out) -> Result<(), CliError> {
    let d = load(cfg)?;
    let ctx = d.context(cfg)?;
    let scenario = scenario_or_default(cfg, a.scenario);
    let ds = ctx.dataset(scenario, a.window as usize).map_err(CliError::Data)?;
    let violations = audit_leakage(&ds, &ctx.panel, &ctx.calendar).map_err(|e| CliError::Runtime(e.to_string()))?;
    let summary = format!(
        "dataset: {} samples x {} features ({} markets, window {}, scenario {scenario})\nleakage audit: {} violations\n",
        ds.len(),
        ds.n_features(),
        ctx.panel.n_markets(),
        a.window,
        violations.len()
    );
    match dest {
        Some(path) => {
            write_file(path, ds.to_csv().as_bytes())?;
            write!(out, "{summary}")?;
        }
        None => {
            write!(out, "{}", ds.to_csv())?;
            write!(err, "{summary}")?;
        }
    }
    if let Some(v) = violations.first() {
        return Err(CliError::Runtime(format!("leakage in row {} feature {}: {}", v.row, v.feature, v.reason)));
    }
    Ok(())
}

#[derive(Serialize)]
struct TuneOutput<'a> {
    family: &'a str,
    scenario: String,
    seed: u64,
    validation_start: IsoWeek,
    best_params: &'a Params,
    best_rmse: f64,
    search: &'a SearchResult,
}

/// Random search on the validation weeks shared with `evaluate`, seeded the
/// same way as an evaluation cell.
fn tune(cfg: &ServiceConfig, a: &TuneArgs, seed: u64, dest: Option<&Path>, out: Out) -> Result<(), CliError> {
    let d = load(cfg)?;
    let ctx = context_for(&d, cfg, &a.model)?;
    let f = family(&a.model);
    let scenario = scenario_or_default(cfg, a.scenario);
    let splits = fixed_splits(&ctx).map_err(CliError::Data)?;
    let actual = ctx.actuals(&splits.validation).map_err(CliError::Data)?;
    let objective = |p: &Params, s: u64| {
        let pred = f.fit_predict(&ctx, scenario, p, splits.validation_start, &splits.validation, s)?;
        if pred.iter().any(|v| !v.is_finite()) {
            return Err("non-finite prediction".to_string());
        }
        rmse(&actual, &pred).map_err(|e| e.to_string())
    };
    let result = random_search(&f.search_space(), a.trials as usize, objective, cell_seed(seed, f.key()))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let failed = result.trials.iter().filter(|t| !t.is_ok()).count();
    writeln!(out, "{} ({scenario}): {} trials, {failed} failed", f.name(), result.trials.len())?;
    writeln!(out, "best trial {}: validation RMSE {:.6}", result.best_index, result.best_rmse)?;
    for (k, v) in &result.best_params {
        writeln!(out, "  {k} = {v}")?;
    }
    if let Some(path) = dest {
        let o = TuneOutput {
            family: f.key(),
            scenario: scenario.to_string(),
            seed,
            validation_start: splits.validation_start,
            best_params: &result.best_params,
            best_rmse: result.best_rmse,
            search: &result,
        };
        write_file(path, json(&o).as_bytes())?;
    }
    Ok(())
}

/// Single-series families see only the target; the others get the
/// correlation-selected markets.
fn context_for(d: &Loaded, cfg: &ServiceConfig, key: &str) -> Result<SeriesContext, CliError> {
    let ctx = d.context(cfg)?;
    if family(key).scenario_independent() {
        let panel = ctx.panel.select(std::slice::from_ref(&ctx.target)).map_err(|e| CliError::Data(e.to_string()))?;
        return SeriesContext::new(panel, ctx.target, ctx.calendar).map_err(CliError::Data);
    }
    Ok(ctx)
}

fn read_params(path: &Path) -> Result<Params, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let v = v.get("best_params").cloned().unwrap_or(v);
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("{}: not a parameter map: {e}", path.display())))
}

fn fit_all(d: &Loaded, cfg: &ServiceConfig, key: &str, scenario: LagScenario, params: &Params, seed: u64) -> Result<TrainedModel, CliError> {
    let ctx = context_for(d, cfg, key)?;
    let f = family(key);
    if !f.search_space().contains(params) {
        return Err(CliError::Usage(format!("parameters do not fit the {} search space: {params:?}", f.key())));
    }
    let end = *ctx.panel.weeks().last().expect("aligned panel is non-empty");
    let before = end.succ().map_err(|e| CliError::Data(e.to_string()))?;
    f.fit(&ctx, scenario, params, before, seed).map_err(CliError::Runtime)
}

fn train(cfg: &ServiceConfig, a: &TrainArgs, seed: u64, dest: Option<&Path>, out: Out) -> Result<(), CliError> {
    let d = load(cfg)?;
    let f = family(&a.model);
    let scenario = scenario_or_default(cfg, a.scenario);
    let params = match &a.params {
        Some(p) => read_params(p)?,
        None => f.reference_params(scenario),
    };
    let model = fit_all(&d, cfg, &a.model, scenario, &params, seed)?;
    let text = json(&model);
    match dest {
        Some(path) => {
            write_file(path, text.as_bytes())?;
            writeln!(
                out,
                "{} ({scenario}) trained on {} markets through {}; written to {}",
                f.name(),
                model.markets.len(),
                model.last_train_week,
                path.display()
            )?;
        }
        None => write!(out, "{text}")?,
    }
    Ok(())
}

#[derive(Serialize)]
struct ForecastOutput {
    target: MarketId,
    week: IsoWeek,
    predicted_price: f64,
    last_observed_week: IsoWeek,
    last_observed_price: f64,
    direction: Direction,
    model: String,
    scenario: String,
}

fn forecast(cfg: &ServiceConfig, a: &ForecastArgs, dest: Option<&Path>, out: Out) -> Result<(), CliError> {
    let d = load(cfg)?;
    let model: TrainedModel = match &a.model_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a trained model: {e}", p.display())))?
        }
        None => {
            let c = &cfg.champion;
            let f = c.forecaster().ok_or_else(|| CliError::Usage(format!("unknown champion {:?}", c.family)))?;
            let params = c.params(f.as_ref(), cfg.scenario);
            fit_all(&d, cfg, f.key(), cfg.scenario, &params, c.seed)?
        }
    };
    let j = d
        .panel
        .market_index(&model.target)
        .ok_or_else(|| CliError::Data(format!("target {} is not in the data", model.target)))?;
    let last_week = *d.panel.weeks().last().expect("aligned panel is non-empty");
    let last_price = d.panel.value(d.panel.n_weeks() - 1, j).to_f64();
    let week = last_week.succ().map_err(|e| CliError::Data(e.to_string()))?;
    let panel = if model.is_windowed() {
        d.panel.clone()
    } else {
        d.panel.select(std::slice::from_ref(&model.target)).map_err(|e| CliError::Data(e.to_string()))?
    };
    let predicted = model.predict_weeks(&panel, &d.calendar, &[week], true).map_err(CliError::Data)?[0];
    if !predicted.is_finite() {
        return Err(CliError::Runtime("non-finite forecast".into()));
    }
    let o = ForecastOutput {
        target: model.target.clone(),
        week,
        predicted_price: predicted,
        last_observed_week: last_week,
        last_observed_price: last_price,
        direction: Direction::of_change(predicted, last_price),
        model: model.family.clone(),
        scenario: model.scenario.to_string(),
    };
    let dir = serde_json::to_value(o.direction).expect("serializable");
    writeln!(
        out,
        "{} {}: {:.4} EUR/kg ({}, last {} at {:.4}; {}, {})",
        o.target,
        o.week,
        o.predicted_price,
        dir.as_str().unwrap_or_default(),
        o.last_observed_week,
        o.last_observed_price,
        o.model,
        o.scenario
    )?;
    if let Some(path) = dest {
        write_file(path, json(&o).as_bytes())?;
    }
    Ok(())
}

fn report_options(a: &EvaluateArgs, seed: u64, window: WindowChoice) -> ReportOptions {
    ReportOptions { trials: a.trials, seed, window, walk_forward: a.walk_forward }
}

fn run_report(ctx: &SeriesContext, families: &[Box<dyn Forecaster>], a: &EvaluateArgs, opts: &ReportOptions) -> Result<EvaluationReport, CliError> {
    scenario_report(ctx, families, &a.scenario.0, opts).map_err(CliError::Data)
}

fn evaluate(cfg: &ServiceConfig, a: &EvaluateArgs, seed: u64, dest: Option<&Path>, out: Out) -> Result<(), CliError> {
    if a.publish && a.window == Some(WindowArg::Sweep) {
        return Err(CliError::Usage("--publish stores a single report and cannot be combined with --window sweep".into()));
    }
    let d = load(cfg)?;
    let ctx = d.context(cfg)?;
    let families = a.models.families();
    let (text, json_text, report) = match a.window {
        Some(WindowArg::Sweep) => {
            let (text, value) = sweep(&ctx, &families, a, seed)?;
            (text, json(&value), None)
        }
        w => {
            let choice = match w {
                Some(WindowArg::Fixed(n)) => WindowChoice::Fixed(n),
                _ => WindowChoice::Tuned,
            };
            let report = run_report(&ctx, &families, a, &report_options(a, seed, choice))?;
            (report.to_text(), json(&report), Some(report))
        }
    };
    write!(out, "{text}")?;
    if let Some(path) = dest {
        let (t, j) = report_paths(path);
        write_file(&t, text.as_bytes())?;
        write_file(&j, json_text.as_bytes())?;
    }
    if a.publish {
        let mut cfg = cfg.clone();
        if let Some(dir) = &a.store {
            cfg.data_dir = dir.clone();
        }
        let svc = open_service(cfg)?;
        svc.store_report(report.expect("not a sweep")).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BestWindow {
    model: String,
    key: String,
    scenario: String,
    window: Option<usize>,
    criterion: &'static str,
    score: Option<f64>,
    rmse: Option<f64>,
    r2: Option<f64>,
}

/// One report per window 2..=12 and the best window for each model and
/// scenario: lowest validation RMSE when tuned, otherwise lowest test RMSE.
/// Single-series families ignore the window and run once.
fn sweep(ctx: &SeriesContext, families: &[Box<dyn Forecaster>], a: &EvaluateArgs, seed: u64) -> Result<(String, serde_json::Value), CliError> {
    let windowed: Vec<Box<dyn Forecaster>> =
        families.iter().filter(|f| !f.scenario_independent()).map(|f| family(f.key())).collect();
    let single: Vec<Box<dyn Forecaster>> =
        families.iter().filter(|f| f.scenario_independent()).map(|f| family(f.key())).collect();
    let criterion = if a.trials > 0 { "validation_rmse" } else { "test_rmse" };
    let mut text = String::new();
    let mut reports = Vec::new();
    let mut best: BTreeMap<(String, String), BestWindow> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for w in 2..=12usize {
        let fams: Vec<Box<dyn Forecaster>> = if w == 2 {
            windowed.iter().chain(single.iter()).map(|f| family(f.key())).collect()
        } else {
            windowed.iter().map(|f| family(f.key())).collect()
        };
        if fams.is_empty() {
            continue;
        }
        let r = run_report(ctx, &fams, a, &report_options(a, seed, WindowChoice::Fixed(w)))?;
        text.push_str(&format!("== window {w} ==\n"));
        text.push_str(&r.to_text());
        text.push('\n');
        for row in &r.rows {
            let score = if a.trials > 0 { row.validation_rmse } else { row.rmse };
            let key = (row.key.clone(), row.scenario.clone());
            let better = match best.get(&key) {
                None => true,
                Some(b) => matches!((score, b.score), (Some(s), Some(bs)) if s < bs) || (b.score.is_none() && score.is_some()),
            };
            if !best.contains_key(&key) {
                order.push(key.clone());
            }
            if better {
                best.insert(
                    key,
                    BestWindow {
                        model: row.model.clone(),
                        key: row.key.clone(),
                        scenario: row.scenario.clone(),
                        window: row.window,
                        criterion,
                        score,
                        rmse: row.rmse,
                        r2: row.r2,
                    },
                );
            }
        }
        reports.push(serde_json::json!({"window": w, "report": r}));
    }
    let summary: Vec<&BestWindow> = order.iter().map(|k| &best[k]).collect();
    text.push_str(&best_window_table(&summary, &a.scenario.0, criterion));
    let value = serde_json::json!({"windows": reports, "best": summary});
    Ok((text, value))
}

fn best_window_table(best: &[&BestWindow], scenarios: &[LagScenario], criterion: &str) -> String {
    let labels: Vec<String> = scenarios.iter().map(|s| s.to_string()).collect();
    let mut models: Vec<(&str, &str)> = Vec::new();
    for b in best {
        if !models.iter().any(|(k, _)| *k == b.key) {
            models.push((&b.key, &b.model));
        }
    }
    let mut table = vec![std::iter::once("Model".to_string()).chain(labels.iter().flat_map(|s| [format!("{s} week"), format!("{s} RMSE")])).collect::<Vec<_>>()];
    for (key, name) in models {
        let mut line = vec![name.to_string()];
        for s in &labels {
            match best.iter().find(|b| b.key == key && &b.scenario == s) {
                Some(b) => {
                    line.push(b.window.map_or("-".into(), |w| w.to_string()));
                    line.push(b.rmse.map_or("failed".into(), |e| format!("{e:.5}")));
                }
                None => line.extend(["-".to_string(), "-".to_string()]),
            }
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = format!("== best window per model (by {}) ==\n", criterion.replace('_', " "));
    for (i, line) in table.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-|-"));
            out.push('\n');
        }
    }
    out
}

fn open_service(cfg: ServiceConfig) -> Result<Service, CliError> {
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (svc, warnings) = Service::open(cfg, Arc::new(SystemClock)).map_err(|e| CliError::Data(e.to_string()))?;
    for w in warnings {
        eprintln!("warning: event log offset {}: {}", w.offset, w.message);
    }
    Ok(svc)
}

fn with_store(mut cfg: ServiceConfig, a: &StoreArgs) -> ServiceConfig {
    if let Some(dir) = &a.store {
        cfg.data_dir = dir.clone();
    }
    cfg
}

fn cycle(cfg: ServiceConfig, a: &StoreArgs, dest: Option<&Path>, out: Out) -> Result<(), CliError> {
    let svc = open_service(with_store(cfg, a))?;
    let summary = svc.run_cycle().map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out, "{}: {}", summary.week, summary.message)?;
    for e in &summary.fetch_errors {
        writeln!(out, "stale source: {e}")?;
    }
    if let Some(f) = svc.state().latest_forecast() {
        writeln!(out, "latest forecast: {} {} {:.4} EUR/kg ({})", f.target, f.week, f.predicted_price, f.model)?;
    }
    if let Some(path) = dest {
        write_file(path, json(&summary).as_bytes())?;
    }
    Ok(())
}

fn serve(cfg: ServiceConfig, a: &ServeArgs, out: Out) -> Result<(), CliError> {
    let mut cfg = with_store(cfg, &a.store);
    if let Some(addr) = &a.listen {
        cfg.listen_addr = addr.clone();
    }
    let svc = Arc::new(open_service(cfg)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let tick = (a.tick > 0).then(|| Duration::from_secs(a.tick));
        let handle = porkcast_service::serve_api(svc, tick)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen: {e}")))?;
        writeln!(out, "listening on http://{}", handle.addr)?;
        out.flush()?;
        tokio::signal::ctrl_c().await?;
        handle.shutdown().await?;
        Ok(())
    })
}
