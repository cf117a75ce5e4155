//! The eleven compared model families behind one [`Forecaster`] interface,
//! with their search spaces, reference hyperparameters and a serializable
//! trained-model envelope.

use serde::{Deserialize, Serialize};

use crate::domain::{IsoWeek, LagScenario, MarketId, PublicationCalendar};
use crate::ingest::PricePanel;
use crate::linalg::Matrix;
use crate::models::arima::{one_step_ahead, sarima_fit, sarima_forecast_from, SarimaModel, SarimaSpec};
use crate::models::neural::{net_fit, net_predict, Activation, Adam, InputMode, NetKind, NetSpec, NetworkModel, Sequences};
use crate::models::regression::{linear_predict, ridge_fit, svr_fit, LinearModel, SvrOptions};
use crate::models::trees::{
    ensemble_predict, forest_fit, gbdt_fit, EnsembleFamily, EnsembleModel, MaxFeatures, SplitMode, TreeParams,
};
use crate::models::ModelError;
use crate::tuning::{get_f64, get_text, get_usize, ParamDist, ParamValue, Params, SearchSpace};
use crate::windowing::{build_dataset, feature_row, offsets_for, SupervisedDataset};

/// Panel, target and calendar shared by every model of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesContext {
    pub panel: PricePanel,
    pub target: MarketId,
    pub calendar: PublicationCalendar,
}

impl SeriesContext {
    pub fn new(panel: PricePanel, target: MarketId, calendar: PublicationCalendar) -> Result<Self, String> {
        if panel.market_index(&target).is_none() {
            return Err(format!("target {target} is not in the panel"));
        }
        for m in panel.markets() {
            if !calendar.contains(m) {
                return Err(format!("market {m} has no publication weekday"));
            }
        }
        Ok(Self { panel, target, calendar })
    }

    pub fn dataset(&self, scenario: LagScenario, window: usize) -> Result<SupervisedDataset, String> {
        build_dataset(&self.panel, &self.target, window, scenario, &self.calendar).map_err(|e| e.to_string())
    }

    pub fn target_series(&self) -> Vec<f64> {
        let j = self.panel.market_index(&self.target).expect("checked in new");
        self.panel.column_as(j)
    }

    /// Target prices at `weeks`.
    pub fn actuals(&self, weeks: &[IsoWeek]) -> Result<Vec<f64>, String> {
        let j = self.panel.market_index(&self.target).expect("checked in new");
        weeks
            .iter()
            .map(|w| {
                self.panel.week_index(w).map(|i| self.panel.value(i, j).to_f64()).ok_or_else(|| format!("week {w} not in panel"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Linear(LinearModel),
    Ensemble(EnsembleModel),
    Network { net: NetworkModel, mode: InputMode },
    Sarima(SarimaModel),
}

/// A fitted model plus everything needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: String,
    pub hyperparams: Params,
    pub target: MarketId,
    pub markets: Vec<MarketId>,
    pub scenario: LagScenario,
    pub window: usize,
    pub feature_names: Vec<String>,
    pub seed: u64,
    /// Fingerprint of the data the model was fitted on.
    pub trained_on: String,
    pub last_train_week: IsoWeek,
    pub model: FittedModel,
}

impl TrainedModel {
    pub fn is_windowed(&self) -> bool {
        !matches!(self.model, FittedModel::Sarima(_))
    }

    /// Predictions for windowed feature rows laid out like the training
    /// dataset.
    pub fn predict_rows(&self, x: &Matrix<f64>) -> Result<Vec<f64>, ModelError> {
        match &self.model {
            FittedModel::Linear(m) => linear_predict(m, x),
            FittedModel::Ensemble(m) => ensemble_predict(m, x),
            FittedModel::Network { net, mode } => {
                let seqs = Sequences::from_windowed(x, self.markets.len(), self.window, *mode);
                net_predict(net, &seqs)
            }
            FittedModel::Sarima(_) => Err(ModelError::InvalidSpec("single-series model has no feature rows".into())),
        }
    }

    /// Feature row for `week` read from `panel`. With `forward_fill`, a
    /// value missing from the panel is replaced by the market's latest
    /// earlier value.
    pub fn feature_row(
        &self,
        panel: &PricePanel,
        calendar: &PublicationCalendar,
        week: IsoWeek,
        forward_fill: bool,
    ) -> Result<Vec<f64>, String> {
        let offsets = offsets_for(&self.markets, &self.target, self.scenario, calendar).map_err(|e| e.to_string())?;
        feature_row(&offsets, self.window, week, |m, w| lookup(panel, m, w, forward_fill))
            .map_err(|e| e.to_string())
    }

    /// Predicts the target at each of `weeks`. Windowed models read their
    /// features from `panel`; single-series models predict one step ahead
    /// from the target history before each week, or iterate forecasts past
    /// the end of the panel.
    pub fn predict_weeks(
        &self,
        panel: &PricePanel,
        calendar: &PublicationCalendar,
        weeks: &[IsoWeek],
        forward_fill: bool,
    ) -> Result<Vec<f64>, String> {
        match &self.model {
            FittedModel::Sarima(m) => {
                let j = panel.market_index(&self.target).ok_or("target missing from panel")?;
                let series: Vec<f64> = panel.column_as(j);
                let last = *panel.weeks().last().ok_or("empty panel")?;
                let in_panel = one_step_ahead(m, &series);
                let max_ahead = weeks.iter().map(|w| last.weeks_until(w)).max().unwrap_or(0);
                let ahead = if max_ahead > 0 { sarima_forecast_from(m, &series, max_ahead as usize) } else { Vec::new() };
                weeks
                    .iter()
                    .map(|w| {
                        let h = last.weeks_until(w);
                        if h > 0 {
                            Ok(ahead[h as usize - 1])
                        } else {
                            let i = panel.week_index(w).ok_or_else(|| format!("week {w} precedes the panel"))?;
                            in_panel[i].ok_or_else(|| format!("week {w} falls in the model start-up"))
                        }
                    })
                    .collect()
            }
            _ => {
                let mut rows = Vec::with_capacity(weeks.len());
                for &w in weeks {
                    rows.push(self.feature_row(panel, calendar, w, forward_fill)?);
                }
                let x = Matrix::from_rows(&rows);
                self.predict_rows(&x).map_err(|e| e.to_string())
            }
        }
    }
}

fn lookup(panel: &PricePanel, m: &MarketId, w: IsoWeek, forward_fill: bool) -> Option<f64> {
    let j = panel.market_index(m)?;
    match panel.week_index(&w) {
        Some(i) => Some(panel.value(i, j).to_f64()),
        None if forward_fill => {
            let first = *panel.weeks().first()?;
            if w < first {
                return None;
            }
            // latest panel week before w
            let i = panel.weeks().iter().rposition(|pw| *pw < w)?;
            Some(panel.value(i, j).to_f64())
        }
        None => None,
    }
}

/// Model sizes for the recurrent families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeuralScale {
    /// Small layers and short training for desk runs.
    #[default]
    Desk,
    /// The reference architectures and 500 epochs.
    Full,
}

pub trait Forecaster: Send + Sync {
    /// Display name used in reports.
    fn name(&self) -> &'static str;
    /// Stable identifier used on the command line and in seeds.
    fn key(&self) -> &'static str;
    fn search_space(&self) -> SearchSpace;
    /// Reference hyperparameters for `scenario`, drawn from the search space.
    fn reference_params(&self, scenario: LagScenario) -> Params;
    /// True when the family ignores the other markets, so the scenario
    /// cannot change its output.
    fn scenario_independent(&self) -> bool {
        false
    }
    /// Fits on every target week strictly before `fit_before`.
    fn fit(
        &self,
        ctx: &SeriesContext,
        scenario: LagScenario,
        params: &Params,
        fit_before: IsoWeek,
        seed: u64,
    ) -> Result<TrainedModel, String>;

    fn fit_predict(
        &self,
        ctx: &SeriesContext,
        scenario: LagScenario,
        params: &Params,
        fit_before: IsoWeek,
        predict: &[IsoWeek],
        seed: u64,
    ) -> Result<Vec<f64>, String> {
        let m = self.fit(ctx, scenario, params, fit_before, seed)?;
        m.predict_weeks(&ctx.panel, &ctx.calendar, predict, false)
    }
}

fn p_float(v: f64) -> ParamValue {
    ParamValue::Float(v)
}

fn p_int(v: i64) -> ParamValue {
    ParamValue::Int(v)
}

fn params(entries: &[(&str, ParamValue)]) -> Params {
    entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn window_dist() -> ParamDist {
    ParamDist::IntUniform { lo: 2, hi: 12 }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

/// Training rows for a windowed family.
fn training_rows(
    ctx: &SeriesContext,
    scenario: LagScenario,
    window: usize,
    fit_before: IsoWeek,
) -> Result<SupervisedDataset, String> {
    let ds = ctx.dataset(scenario, window)?.between(None, Some(fit_before));
    if ds.len() < 2 {
        return Err(format!("only {} training samples before {fit_before}", ds.len()));
    }
    Ok(ds)
}

fn envelope(
    family: &str,
    ctx: &SeriesContext,
    scenario: LagScenario,
    params: &Params,
    ds: Option<&SupervisedDataset>,
    window: usize,
    fit_before: IsoWeek,
    seed: u64,
    model: FittedModel,
) -> Result<TrainedModel, String> {
    let last_train_week = fit_before.pred().map_err(e)?;
    Ok(TrainedModel {
        family: family.to_string(),
        hyperparams: params.clone(),
        target: ctx.target.clone(),
        markets: ctx.panel.markets().to_vec(),
        scenario,
        window,
        feature_names: ds.map(|d| d.feature_names.iter().map(|f| f.label()).collect()).unwrap_or_default(),
        seed,
        trained_on: crate::evaluation::fingerprint_before(&ctx.panel, fit_before),
        last_train_week,
        model,
    })
}

pub struct Ridge;

impl Forecaster for Ridge {
    fn name(&self) -> &'static str {
        "Ridge"
    }
    fn key(&self) -> &'static str {
        "ridge"
    }
    fn search_space(&self) -> SearchSpace {
        SearchSpace::new(self.key())
            .with("alpha", ParamDist::LogUniform { lo: 1e-4, hi: 10.0 })
            .with("window", window_dist())
    }
    fn reference_params(&self, _: LagScenario) -> Params {
        params(&[("alpha", p_float(0.010034555)), ("window", p_int(2))])
    }
    fn fit(&self, ctx: &SeriesContext, sc: LagScenario, p: &Params, before: IsoWeek, seed: u64) -> Result<TrainedModel, String> {
        let window = get_usize(p, "window").map_err(e)?;
        let ds = training_rows(ctx, sc, window, before)?;
        let mut m = ridge_fit(&ds.features, &ds.targets, get_f64(p, "alpha").map_err(e)?).map_err(e)?;
        m.seed = seed;
        envelope(self.key(), ctx, sc, p, Some(&ds), window, before, seed, FittedModel::Linear(m))
    }
}

pub struct Svr;

impl Forecaster for Svr {
    fn name(&self) -> &'static str {
        "Support Vector Regressor"
    }
    fn key(&self) -> &'static str {
        "svr"
    }
    fn search_space(&self) -> SearchSpace {
        SearchSpace::new(self.key())
            .with("c", ParamDist::LogUniform { lo: 1e-3, hi: 10.0 })
            .with("epsilon", ParamDist::LogUniform { lo: 1e-4, hi: 0.1 })
            // has no effect with a linear kernel; kept so logged trials line up with the reference table
            .with("degree", ParamDist::IntUniform { lo: 1, hi: 6 })
            .with("window", window_dist())
    }
    fn reference_params(&self, scenario: LagScenario) -> Params {
        let (eps, window) = match scenario {
            LagScenario::SubscriptionSameWeek => (0.00220298, 2),
            LagScenario::PublicDelayed { .. } => (0.002203, 4),
        };
        params(&[("c", p_float(0.151861)), ("epsilon", p_float(eps)), ("degree", p_int(6)), ("window", p_int(window))])
    }
    fn fit(&self, ctx: &SeriesContext, sc: LagScenario, p: &Params, before: IsoWeek, seed: u64) -> Result<TrainedModel, String> {
        let window = get_usize(p, "window").map_err(e)?;
        let ds = training_rows(ctx, sc, window, before)?;
        let (m, _) = svr_fit(
            &ds.features,
            &ds.targets,
            get_f64(p, "c").map_err(e)?,
            get_f64(p, "epsilon").map_err(e)?,
            seed,
            SvrOptions::default(),
        )
        .map_err(e)?;
        envelope(self.key(), ctx, sc, p, Some(&ds), window, before, seed, FittedModel::Linear(m))
    }
}

fn max_features(p: &Params) -> Result<MaxFeatures, String> {
    match get_text(p, "max_features").map_err(e)? {
        "auto" | "all" => Ok(MaxFeatures::All),
        "sqrt" => Ok(MaxFeatures::Sqrt),
        other => Err(format!("unknown max_features {other}")),
    }
}

fn feature_choice() -> ParamDist {
    ParamDist::Choice { values: vec![ParamValue::Text("auto".into()), ParamValue::Text("sqrt".into())] }
}

pub struct RandomForest;

impl Forecaster for RandomForest {
    fn name(&self) -> &'static str {
        "Random Forest"
    }
    fn key(&self) -> &'static str {
        "random_forest"
    }
    fn search_space(&self) -> SearchSpace {
        SearchSpace::new(self.key())
            .with("n_estimators", ParamDist::IntUniform { lo: 10, hi: 150 })
            .with("min_samples_leaf", ParamDist::LogUniform { lo: 1e-3, hi: 0.05 })
            .with("min_samples_split", ParamDist::IntUniform { lo: 2, hi: 10 })
            .with("max_features", feature_choice())
            .with("window", window_dist())
    }
    fn reference_params(&self, scenario: LagScenario) -> Params {
        let window = if scenario == LagScenario::SubscriptionSameWeek { 2 } else { 6 };
        params(&[
            ("n_estimators", p_int(99)),
            ("min_samples_leaf", p_float(0.002446626)),
            ("min_samples_split", p_int(5)),
            ("max_features", ParamValue::Text("auto".into())),
            ("window", p_int(window)),
        ])
    }
    fn fit(&self, ctx: &SeriesContext, sc: LagScenario, p: &Params, before: IsoWeek, seed: u64) -> Result<TrainedModel, String> {
        let window = get_usize(p, "window").map_err(e)?;
        let ds = training_rows(ctx, sc, window, before)?;
        let tp = TreeParams {
            max_depth: None,
            min_samples_split: get_usize(p, "min_samples_split").map_err(e)?,
            min_samples_leaf: get_f64(p, "min_samples_leaf").map_err(e)?,
            max_features: max_features(p)?,
            split_mode: SplitMode::Exhaustive,
        };
        let n = get_usize(p, "n_estimators").map_err(e)?;
        let m = forest_fit(&ds.features, &ds.targets, EnsembleFamily::RandomForest, n, &tp, seed).map_err(e)?;
        envelope(self.key(), ctx, sc, p, Some(&ds), window, before, seed, FittedModel::Ensemble(m))
    }
}

pub struct ExtraTrees;

impl Forecaster for ExtraTrees {
    fn name(&self) -> &'static str {
        "Extremely Random trees"
    }
    fn key(&self) -> &'static str {
        "extra_trees"
    }
    fn search_space(&self) -> SearchSpace {
        SearchSpace::new(self.key())
            .with("n_estimators", ParamDist::IntUniform { lo: 10, hi: 150 })
            .with("max_depth", ParamDist::IntUniform { lo: 3, hi: 200 })
            .with("min_samples_leaf", ParamDist::LogUniform { lo: 1e-3, hi: 0.05 })
            .with("min_samples_split", ParamDist::IntUniform { lo: 2, hi: 10 })
            .with("max_features", feature_choice())
            .with("window", window_dist())
    }
    fn reference_params(&self, _: LagScenario) -> Params {
        params(&[
            ("n_estimators", p_int(115)),
            ("max_depth", p_int(198)),
            ("min_samples_leaf", p_float(0.012833897)),
            ("min_samples_split", p_int(2)),
            ("max_features", ParamValue::Text("auto".into())),
            ("window", p_int(5)),
        ])
    }
    fn fit(&self, ctx: &SeriesContext, sc: LagScenario, p: &Params, before: IsoWeek, seed: u64) -> Result<TrainedModel, String> {
        let window = get_usize(p, "window").map_err(e)?;
        let ds = training_rows(ctx, sc, window, before)?;
        let tp = TreeParams {
            max_depth: Some(get_usize(p, "max_depth").map_err(e)?),
            min_samples_split: get_usize(p, "min_samples_split").map_err(e)?,
            min_samples_leaf: get_f64(p, "min_samples_leaf").map_err(e)?,
            max_features: max_features(p)?,
            split_mode: SplitMode::RandomThreshold,
        };
        let n = get_usize(p, "n_estimators").map_err(e)?;
        let m = forest_fit(&ds.features, &ds.targets, EnsembleFamily::ExtraTrees, n, &tp, seed).map_err(e)?;
        envelope(self.key(), ctx, sc, p, Some(&ds), window, before, seed, FittedModel::Ensemble(m))
    }
}

/// Which boosting library's knobs and reference values a [`Boosted`]
/// family mirrors. All three share one gradient-boosting implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostingFlavor {
    Lgbm,
    XgBoost,
    CatBoost,
}

pub struct Boosted(pub BoostingFlavor);

impl Forecaster for Boosted {
    fn name(&self) -> &'static str {
        match self.0 {
            BoostingFlavor::Lgbm => "LGBM Regressor",
            BoostingFlavor::XgBoost => "XGBoost Regressor",
            BoostingFlavor::CatBoost => "CatBoost Regressor",
        }
    }
    fn key(&self) -> &'static str {
        match self.0 {
            BoostingFlavor::Lgbm => "lgbm",
            BoostingFlavor::XgBoost => "xgboost",
            BoostingFlavor::CatBoost => "catboost",
        }
    }
    fn search_space(&self) -> SearchSpace {
        let s = SearchSpace::new(self.key())
            .with("learning_rate", ParamDist::LogUniform { lo: 0.01, hi: 0.3 })
            .with("max_depth", ParamDist::IntUniform { lo: 2, hi: 8 })
            .with("n_estimators", ParamDist::IntUniform { lo: 20, hi: 200 });
        let s = if self.0 == BoostingFlavor::Lgbm {
            s.with("min_child_samples", ParamDist::IntUniform { lo: 1, hi: 20 })
        } else {
            s
        };
        s.with("window", window_dist())
    }
    fn reference_params(&self, scenario: LagScenario) -> Params {
        let public = scenario != LagScenario::SubscriptionSameWeek;
        match self.0 {
            BoostingFlavor::Lgbm => params(&[
                ("learning_rate", p_float(0.080865967)),
                ("max_depth", p_int(3)),
                ("n_estimators", p_int(185)),
                ("min_child_samples", p_int(5)),
                ("window", p_int(if public { 4 } else { 3 })),
            ]),
            BoostingFlavor::XgBoost => {
                let (lr, n, w) = if public { (0.111361130, 114, 7) } else { (0.086825338, 95, 3) };
                params(&[
                    ("learning_rate", p_float(lr)),
                    ("max_depth", p_int(5)),
                    ("n_estimators", p_int(n)),
                    ("window", p_int(w)),
                ])
            }
            BoostingFlavor::CatBoost => {
                let (lr, w) = if public { (0.218951837, 3) } else { (0.14997851, 4) };
                params(&[
                    ("learning_rate", p_float(lr)),
                    ("max_depth", p_int(5)),
                    ("n_estimators", p_int(148)),
                    ("window", p_int(w)),
                ])
            }
        }
    }
    fn fit(&self, ctx: &SeriesContext, sc: LagScenario, p: &Params, before: IsoWeek, seed: u64) -> Result<TrainedModel, String> {
        let window = get_usize(p, "window").map_err(e)?;
        let ds = training_rows(ctx, sc, window, before)?;
        let min_leaf = if self.0 == BoostingFlavor::Lgbm { get_usize(p, "min_child_samples").map_err(e)? } else { 1 };
        let tp = TreeParams {
            max_depth: Some(get_usize(p, "max_depth").map_err(e)?),
            min_samples_leaf: min_leaf as f64,
            ..TreeParams::default()
        };
        let m = gbdt_fit(
            &ds.features,
            &ds.targets,
            get_f64(p, "learning_rate").map_err(e)?,
            get_usize(p, "n_estimators").map_err(e)?,
            &tp,
            seed,
        )
        .map_err(e)?;
        envelope(self.key(), ctx, sc, p, Some(&ds), window, before, seed, FittedModel::Ensemble(m))
    }
}

pub struct Recurrent {
    pub kind: NetKind,
    pub scale: NeuralScale,
    pub mode: InputMode,
}

impl Recurrent {
    pub fn new(kind: NetKind, scale: NeuralScale) -> Self {
        Self { kind, scale, mode: InputMode::Sequence }
    }

    fn net_spec(&self, p: &Params) -> Result<NetSpec, String> {
        let base = match self.kind {
            NetKind::Rnn => NetSpec::rnn_default(),
            NetKind::Lstm => NetSpec::lstm_default(),
        };
        let mut spec = NetSpec { dropout: get_f64(p, "dropout").map_err(e)?, ..base };
        spec.activation = Activation::Relu;
        if self.scale == NeuralScale::Desk {
            let mut sizes = vec![get_usize(p, "units_1").map_err(e)?, get_usize(p, "units_2").map_err(e)?];
            if self.kind == NetKind::Lstm {
                sizes.push(get_usize(p, "units_3").map_err(e)?);
            }
            sizes.push(1);
            spec.layer_sizes = sizes;
            spec.epochs = get_usize(p, "epochs").map_err(e)?;
            spec.batch_size = get_usize(p, "batch_size").map_err(e)?;
            spec.optimizer = Adam { lr: get_f64(p, "learning_rate").map_err(e)?, ..Adam::default() };
        }
        Ok(spec)
    }
}

impl Forecaster for Recurrent {
    fn name(&self) -> &'static str {
        match self.kind {
            NetKind::Rnn => "RNN",
            NetKind::Lstm => "LSTM",
        }
    }
    fn key(&self) -> &'static str {
        match self.kind {
            NetKind::Rnn => "rnn",
            NetKind::Lstm => "lstm",
        }
    }
    fn search_space(&self) -> SearchSpace {
        let s = SearchSpace::new(self.key()).with("dropout", ParamDist::Uniform { lo: 0.0, hi: 0.1 });
        let s = match self.scale {
            NeuralScale::Full => s,
            NeuralScale::Desk => {
                let s = s
                    .with("units_1", ParamDist::IntUniform { lo: 4, hi: 16 })
                    .with("units_2", ParamDist::IntUniform { lo: 2, hi: 8 });
                let s = if self.kind == NetKind::Lstm {
                    s.with("units_3", ParamDist::IntUniform { lo: 2, hi: 8 })
                } else {
                    s
                };
                s.with("epochs", ParamDist::IntUniform { lo: 10, hi: 40 })
                    .with("batch_size", ParamDist::IntUniform { lo: 5, hi: 20 })
                    .with("learning_rate", ParamDist::LogUniform { lo: 1e-3, hi: 2e-2 })
            }
        };
        s.with("window", window_dist())
    }
    fn reference_params(&self, scenario: LagScenario) -> Params {
        let window = match (self.kind, scenario) {
            (NetKind::Rnn, LagScenario::SubscriptionSameWeek) => 6,
            (NetKind::Rnn, _) => 7,
            (NetKind::Lstm, _) => 6,
        };
        let mut p = params(&[("dropout", p_float(0.02)), ("window", p_int(window))]);
        if self.scale == NeuralScale::Desk {
            let (u1, u2) = if self.kind == NetKind::Lstm { (16, 8) } else { (16, 4) };
            p.insert("units_1".into(), p_int(u1));
            p.insert("units_2".into(), p_int(u2));
            if self.kind == NetKind::Lstm {
                p.insert("units_3".into(), p_int(4));
            }
            p.insert("epochs".into(), p_int(30));
            p.insert("batch_size".into(), p_int(10));
            p.insert("learning_rate".into(), p_float(5e-3));
        }
        p
    }
    fn fit(&self, ctx: &SeriesContext, sc: LagScenario, p: &Params, before: IsoWeek, seed: u64) -> Result<TrainedModel, String> {
        let window = get_usize(p, "window").map_err(e)?;
        let ds = training_rows(ctx, sc, window, before)?;
        let spec = self.net_spec(p)?;
        let seqs = Sequences::from_windowed(&ds.features, ds.markets.len(), window, self.mode);
        let net = net_fit(&seqs, &ds.targets, &spec, seed).map_err(e)?;
        let model = FittedModel::Network { net, mode: self.mode };
        envelope(self.key(), ctx, sc, p, Some(&ds), window, before, seed, model)
    }
}

pub struct Arima {
    pub seasonal: bool,
}

impl Arima {
    fn spec(&self, p: &Params) -> Result<SarimaSpec, String> {
        let g = |n: &str| get_usize(p, n).map_err(e);
        let s = SarimaSpec::arima(g("p")?, g("d")?, g("q")?);
        if self.seasonal {
            Ok(s.seasonal(g("P")?, g("D")?, g("Q")?, g("M")?))
        } else {
            Ok(s)
        }
    }
}

impl Forecaster for Arima {
    fn name(&self) -> &'static str {
        if self.seasonal { "Sarimax" } else { "Arima" }
    }
    fn key(&self) -> &'static str {
        if self.seasonal { "sarimax" } else { "arima" }
    }
    fn scenario_independent(&self) -> bool {
        true
    }
    fn search_space(&self) -> SearchSpace {
        let int = |lo, hi| ParamDist::IntUniform { lo, hi };
        let s = SearchSpace::new(self.key());
        let s = if self.seasonal {
            s.with("p", int(0, 2))
                .with("d", int(0, 1))
                .with("q", int(0, 2))
                .with("P", int(0, 1))
                .with("D", int(0, 1))
                .with("Q", int(0, 1))
                .with("M", ParamDist::Choice { values: vec![p_int(12)] })
        } else {
            s.with("p", int(0, 6)).with("d", int(0, 1)).with("q", int(0, 2))
        };
        // inert for a single-series model; recorded for parity with the other families
        s.with("window", window_dist())
    }
    fn reference_params(&self, _: LagScenario) -> Params {
        if self.seasonal {
            params(&[
                ("p", p_int(1)),
                ("d", p_int(1)),
                ("q", p_int(2)),
                ("P", p_int(0)),
                ("D", p_int(1)),
                ("Q", p_int(1)),
                ("M", p_int(12)),
                ("window", p_int(12)),
            ])
        } else {
            params(&[("p", p_int(4)), ("d", p_int(0)), ("q", p_int(0)), ("window", p_int(4))])
        }
    }
    fn fit(&self, ctx: &SeriesContext, sc: LagScenario, p: &Params, before: IsoWeek, seed: u64) -> Result<TrainedModel, String> {
        let spec = self.spec(p)?;
        let n = ctx.panel.weeks().iter().take_while(|w| **w < before).count();
        let series = ctx.target_series();
        let m = sarima_fit(&series[..n], spec, seed).map_err(e)?;
        let window = get_usize(p, "window").map_err(e)?;
        envelope(self.key(), ctx, sc, p, None, window, before, seed, FittedModel::Sarima(m))
    }
}

/// Every family in report order.
pub fn all_families(scale: NeuralScale) -> Vec<Box<dyn Forecaster>> {
    vec![
        Box::new(Ridge),
        Box::new(Arima { seasonal: false }),
        Box::new(Arima { seasonal: true }),
        Box::new(Svr),
        Box::new(Boosted(BoostingFlavor::XgBoost)),
        Box::new(Boosted(BoostingFlavor::Lgbm)),
        Box::new(RandomForest),
        Box::new(ExtraTrees),
        Box::new(Recurrent::new(NetKind::Rnn, scale)),
        Box::new(Recurrent::new(NetKind::Lstm, scale)),
        Box::new(Boosted(BoostingFlavor::CatBoost)),
    ]
}

pub fn family_keys() -> Vec<&'static str> {
    all_families(NeuralScale::Desk).iter().map(|f| f.key()).collect()
}

pub fn family_by_key(key: &str, scale: NeuralScale) -> Option<Box<dyn Forecaster>> {
    all_families(scale).into_iter().find(|f| f.key() == key)
}
