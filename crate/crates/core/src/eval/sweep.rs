use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    compute_modality_offset, image_captioning_eval, references_by_scene, text_reconstruction_eval, DecodeConfig, EvalError,
    MetricsReport, METRIC_NAMES,
};
use crate::encode::ImageEncoder;
use crate::model::{CaptionModel, ModelConfig};
use crate::train::{optimize, paired_examples, text_examples, Example, Start, TrainConfig};
use crate::world::{Caption, Corpus, Scene, Split};

/// Noise variances swept by default.
pub const DEFAULT_GRID: [f64; 6] = [0.0, 0.001, 0.004, 0.016, 0.064, 0.25];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Text-only model decoding raw image embeddings.
    ImageCaptioning,
    /// Text-only model decoding clean text embeddings of test captions.
    TextReconstruction,
    /// Text-only model decoding image embeddings shifted by the modality offset.
    OffsetCorrected,
    /// Model trained on paired image embeddings, decoding image embeddings.
    SupervisedPaired,
}

impl Method {
    pub const ALL: [Method; 4] =
        [Method::ImageCaptioning, Method::TextReconstruction, Method::OffsetCorrected, Method::SupervisedPaired];

    pub fn name(self) -> &'static str {
        match self {
            Method::ImageCaptioning => "image_captioning",
            Method::TextReconstruction => "text_reconstruction",
            Method::OffsetCorrected => "offset_corrected",
            Method::SupervisedPaired => "supervised_paired",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| EvalError::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Noise variances, ascending.
    pub grid: Vec<f64>,
    pub methods: Vec<Method>,
    /// Seeds model initialization and training streams for every grid point.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Step budget of the paired baseline; the rest of `train` is shared.
    pub supervised_steps: u64,
    pub decode: DecodeConfig,
    /// Text reconstruction scores every `recon_stride`-th test caption.
    pub recon_stride: usize,
    pub run_id: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: DEFAULT_GRID.to_vec(),
            methods: Method::ALL.to_vec(),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            supervised_steps: 6000,
            decode: DecodeConfig::greedy(),
            recon_stride: 5,
            run_id: "sweep".into(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.grid.is_empty() {
            return Err(EvalError::InvalidConfig("sweep grid is empty".into()));
        }
        if self.grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(EvalError::InvalidConfig("grid values must be finite and non-negative".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidConfig("grid must be strictly ascending".into()));
        }
        if self.methods.is_empty() {
            return Err(EvalError::InvalidConfig("no methods selected".into()));
        }
        if self.recon_stride == 0 {
            return Err(EvalError::InvalidConfig("recon_stride must be positive".into()));
        }
        Ok(())
    }
}

/// One CSV row: a metric value for one method at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon_sq: f64,
    pub method: Method,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub run_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPointFailure {
    pub epsilon_sq: f64,
    pub method: Method,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<GridPointFailure>,
}

impl SweepResult {
    pub fn value(&self, epsilon_sq: f64, method: Method, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.epsilon_sq == epsilon_sq && r.method == method && r.metric == metric)
            .map(|r| r.value)
    }

    /// `(epsilon_sq, value)` pairs of one series, in grid order.
    pub fn series(&self, method: Method, metric: &str) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.method == method && r.metric == metric).map(|r| (r.epsilon_sq, r.value)).collect()
    }

    /// Grid value with the highest metric; ties go to the smaller variance.
    pub fn argmax(&self, method: Method, metric: &str) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (e, v) in self.series(method, metric) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((e, v));
            }
        }
        best.map(|(e, _)| e)
    }
}

/// Everything a sweep reads; the text encoder is the image encoder's.
pub struct SweepInputs<'a> {
    pub corpus: &'a Corpus,
    pub scenes: &'a [Scene],
    pub image: &'a ImageEncoder,
}

/// Data shared by every grid point.
pub struct SweepContext<'a> {
    inputs: &'a SweepInputs<'a>,
    text_train: Vec<Example>,
    text_val: Vec<Example>,
    paired: Option<(Vec<Example>, Vec<Example>)>,
    test_scenes: Vec<&'a Scene>,
    recon: Vec<&'a Caption>,
    references: std::collections::BTreeMap<u64, Vec<Vec<String>>>,
    offset: Vec<f32>,
}

impl<'a> SweepContext<'a> {
    pub fn new(inputs: &'a SweepInputs<'a>, cfg: &SweepConfig) -> Result<Self, EvalError> {
        cfg.validate()?;
        let text = inputs.image.text_encoder();
        let corpus = inputs.corpus;
        let train: Vec<&Caption> = corpus.split(Split::Train).collect();
        let val: Vec<&Caption> = corpus.split(Split::Val).collect();
        let test: Vec<&Caption> = corpus.split(Split::Test).collect();
        let text_train = text_examples(train.iter().copied(), text)?;
        let text_val = text_examples(val.iter().copied(), text)?;
        let paired = if cfg.methods.contains(&Method::SupervisedPaired) {
            Some((
                paired_examples(train.iter().copied(), inputs.scenes, inputs.image)?,
                paired_examples(val.iter().copied(), inputs.scenes, inputs.image)?,
            ))
        } else {
            None
        };
        let split_of = |s: &Scene| corpus.scene_split(s.scene_id);
        let test_scenes: Vec<&Scene> = inputs.scenes.iter().filter(|s| split_of(s) == Some(Split::Test)).collect();
        if test_scenes.is_empty() {
            return Err(EvalError::InvalidConfig("corpus has no test scenes".into()));
        }
        let train_images = inputs
            .scenes
            .iter()
            .filter(|s| split_of(s) == Some(Split::Train))
            .map(|s| inputs.image.encode_image(s).map(|e| e.values))
            .collect::<Result<Vec<_>, _>>()?;
        let train_texts: Vec<Vec<f32>> = text_train.iter().map(|e| e.embedding.clone()).collect();
        let offset = compute_modality_offset(&train_texts, &train_images)?;
        Ok(SweepContext {
            inputs,
            text_train,
            text_val,
            paired,
            test_scenes,
            recon: test.iter().step_by(cfg.recon_stride).copied().collect(),
            references: references_by_scene(test.iter().copied(), text.vocab()),
            offset,
        })
    }

    /// Modality offset (text mean minus image mean) over the training split.
    pub fn offset(&self) -> &[f32] {
        &self.offset
    }

    fn model(&self, cfg: &SweepConfig) -> Result<CaptionModel, EvalError> {
        let vocab = self.inputs.image.text_encoder().vocab().len();
        let mut mc = cfg.model.clone();
        if mc.vocab_size == 0 {
            mc.vocab_size = vocab;
        }
        Ok(CaptionModel::new(mc, cfg.seed)?)
    }

    fn text_only(&self, cfg: &SweepConfig, eps_sq: f64) -> Result<Vec<(Method, MetricsReport)>, EvalError> {
        let tc = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
        let out = optimize(Start::Fresh(self.model(cfg)?), &self.text_train, &self.text_val, eps_sq.sqrt() as f32, &tc)?;
        let model = &out.model;
        let image = self.inputs.image;
        let mut reports = Vec::new();
        for &m in cfg.methods.iter().filter(|&&m| m != Method::SupervisedPaired) {
            let r = match m {
                Method::ImageCaptioning => {
                    image_captioning_eval(model, &self.test_scenes, &self.references, image, None, &cfg.decode)?
                }
                Method::OffsetCorrected => {
                    image_captioning_eval(model, &self.test_scenes, &self.references, image, Some(&self.offset), &cfg.decode)?
                }
                _ => text_reconstruction_eval(model, &self.recon, image.text_encoder(), &cfg.decode)?,
            };
            reports.push((m, r));
        }
        Ok(reports)
    }

    fn supervised(&self, cfg: &SweepConfig, eps_sq: f64) -> Result<MetricsReport, EvalError> {
        let (train, val) = self.paired.as_ref().ok_or_else(|| EvalError::InvalidConfig("paired data not prepared".into()))?;
        let tc = TrainConfig { seed: cfg.seed, steps: cfg.supervised_steps, ..cfg.train.clone() };
        let out = optimize(Start::Fresh(self.model(cfg)?), train, val, eps_sq.sqrt() as f32, &tc)?;
        image_captioning_eval(&out.model, &self.test_scenes, &self.references, self.inputs.image, None, &cfg.decode)
    }

    /// Runs every selected method at one variance. Failures are returned
    /// alongside whatever rows succeeded.
    pub fn point(&self, cfg: &SweepConfig, eps_sq: f64) -> SweepResult {
        let mut result = SweepResult::default();
        let mut push = |m: Method, r: &MetricsReport| {
            for (metric, value) in r.values() {
                result.rows.push(SweepRow {
                    epsilon_sq: eps_sq,
                    method: m,
                    metric: metric.to_string(),
                    value: round6(value),
                    seed: cfg.seed,
                    run_id: cfg.run_id.clone(),
                });
            }
        };
        let mut failures = Vec::new();
        if cfg.methods.iter().any(|&m| m != Method::SupervisedPaired) {
            match self.text_only(cfg, eps_sq) {
                Ok(reports) => reports.iter().for_each(|(m, r)| push(*m, r)),
                Err(e) => failures.extend(cfg.methods.iter().filter(|&&m| m != Method::SupervisedPaired).map(|&m| {
                    GridPointFailure { epsilon_sq: eps_sq, method: m, message: e.to_string() }
                })),
            }
        }
        if cfg.methods.contains(&Method::SupervisedPaired) {
            match self.supervised(cfg, eps_sq) {
                Ok(r) => push(Method::SupervisedPaired, &r),
                Err(e) => {
                    failures.push(GridPointFailure { epsilon_sq: eps_sq, method: Method::SupervisedPaired, message: e.to_string() })
                }
            }
        }
        result.rows.sort_by_key(|r| (r.method, METRIC_NAMES.iter().position(|m| *m == r.metric)));
        result.failures = failures;
        result
    }
}

/// Values are stored at the precision they are written with, so a rerun
/// compares equal to a parsed CSV.
fn round6(v: f64) -> f64 {
    format!("{v:.6}").parse().unwrap_or(v)
}

/// Trains and evaluates every method at every grid value. `progress` sees
/// each grid point's result as it completes.
pub fn noise_sweep(
    inputs: &SweepInputs<'_>,
    cfg: &SweepConfig,
    mut progress: impl FnMut(f64, &SweepResult),
) -> Result<SweepResult, EvalError> {
    let ctx = SweepContext::new(inputs, cfg)?;
    let mut all = SweepResult::default();
    for &e in &cfg.grid {
        let r = ctx.point(cfg, e);
        progress(e, &r);
        all.rows.extend(r.rows);
        all.failures.extend(r.failures);
    }
    Ok(all)
}

const CSV_HEADER: [&str; 6] = ["epsilon_sq", "method", "metric", "value", "seed", "run_id"];

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{}", r.epsilon_sq),
            r.method.name().to_string(),
            r.metric.clone(),
            format!("{:.6}", r.value),
            r.seed.to_string(),
            r.run_id.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(EvalError::InvalidConfig(format!("unexpected sweep header {header:?}")));
    }
    let bad = |field: &str, v: &str| EvalError::InvalidConfig(format!("bad {field} {v:?} in sweep csv"));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(SweepRow {
            epsilon_sq: f(0).parse().map_err(|_| bad("epsilon_sq", f(0)))?,
            method: f(1).parse()?,
            metric: f(2).to_string(),
            value: f(3).parse().map_err(|_| bad("value", f(3)))?,
            seed: f(4).parse().map_err(|_| bad("seed", f(4)))?,
            run_id: f(5).to_string(),
        });
    }
    Ok(rows)
}

/// Horizontal position of a variance on a log axis; zero sits one decade
/// below the smallest positive value.
fn log_position(e: f64, floor: f64) -> f64 {
    if e > 0.0 {
        e.log10()
    } else {
        floor
    }
}

fn series_color(m: Method) -> RGBColor {
    match m {
        Method::ImageCaptioning => RGBColor(31, 119, 180),
        Method::TextReconstruction => RGBColor(255, 127, 14),
        Method::OffsetCorrected => RGBColor(44, 160, 44),
        Method::SupervisedPaired => RGBColor(214, 39, 40),
    }
}

/// One SVG line chart per metric (series per method) in `dir`.
pub fn render_charts(rows: &[SweepRow], dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let chart_err = |e: &dyn fmt::Display| EvalError::Chart(e.to_string());
    let min_pos = rows.iter().map(|r| r.epsilon_sq).filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if min_pos.is_finite() { min_pos.log10() - 1.0 } else { -4.0 };
    let max_x = rows.iter().map(|r| log_position(r.epsilon_sq, floor)).fold(floor, f64::max);
    let mut paths = Vec::new();
    for metric in METRIC_NAMES {
        let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.metric == metric).collect();
        if mine.is_empty() {
            continue;
        }
        let path = dir.join(format!("{metric}.svg"));
        let top = mine.iter().map(|r| r.value).fold(0.0f64, f64::max);
        let y_max = if top > 0.0 { top * 1.1 } else { 1.0 };
        {
            let root = SVGBackend::new(&path, (720, 480)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| chart_err(&e))?;
            let mut chart = ChartBuilder::on(&root)
                .caption(metric, ("sans-serif", 22))
                .margin(16)
                .x_label_area_size(40)
                .y_label_area_size(56)
                .build_cartesian_2d((floor - 0.25)..(max_x + 0.25), 0.0..y_max)
                .map_err(|e| chart_err(&e))?;
            chart
                .configure_mesh()
                .x_desc("ε² (log scale; 0 drawn one decade below the smallest nonzero value)")
                .y_desc(metric)
                .x_label_formatter(&|x| if (*x - floor).abs() < 1e-9 { "0".into() } else { format!("{:.0e}", 10f64.powf(*x)) })
                .draw()
                .map_err(|e| chart_err(&e))?;
            for m in Method::ALL {
                let mut pts: Vec<(f64, f64)> =
                    mine.iter().filter(|r| r.method == m).map(|r| (log_position(r.epsilon_sq, floor), r.value)).collect();
                if pts.is_empty() {
                    continue;
                }
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                let color = series_color(m);
                chart
                    .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
                    .map_err(|e| chart_err(&e))?
                    .label(m.name())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
                chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled()))).map_err(|e| chart_err(&e))?;
            }
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(|e| chart_err(&e))?;
            root.present().map_err(|e| chart_err(&e))?;
        }
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(e: f64, m: Method, metric: &str, v: f64) -> SweepRow {
        SweepRow { epsilon_sq: e, method: m, metric: metric.into(), value: v, seed: 3, run_id: "t".into() }
    }

    #[test]
    fn argmax_prefers_smaller_variance_on_ties() {
        let r = SweepResult {
            rows: vec![
                row(0.0, Method::ImageCaptioning, "cider", 0.5),
                row(0.01, Method::ImageCaptioning, "cider", 0.7),
                row(0.1, Method::ImageCaptioning, "cider", 0.7),
            ],
            failures: vec![],
        };
        assert_eq!(r.argmax(Method::ImageCaptioning, "cider"), Some(0.01));
        assert_eq!(r.argmax(Method::SupervisedPaired, "cider"), None);
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![row(0.0, Method::OffsetCorrected, "bleu4", 0.123457), row(0.016, Method::SupervisedPaired, "cider", 2.5)];
        write_sweep_csv(&rows, &p).unwrap();
        assert_eq!(read_sweep_csv(&p).unwrap(), rows);
    }

    #[test]
    fn config_rejects_unsorted_grid() {
        let cfg = SweepConfig { grid: vec![0.1, 0.01], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(EvalError::InvalidConfig(_))));
    }

    #[test]
    fn charts_have_one_file_per_metric() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<SweepRow> = METRIC_NAMES
            .iter()
            .flat_map(|m| [row(0.0, Method::ImageCaptioning, m, 0.2), row(0.004, Method::ImageCaptioning, m, 0.4)])
            .collect();
        let paths = render_charts(&rows, dir.path()).unwrap();
        assert_eq!(paths.len(), METRIC_NAMES.len());
        let svg = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(svg.contains("<svg") && svg.contains("image_captioning"));
    }
}
